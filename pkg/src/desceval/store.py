"""Persistence and in-memory containers for embeddings, descriptor sets and corpora.

Embedding matrices live in EMB1 files: magic ``EMB1``, little-endian u32
dtype code (0 = IEEE-754 binary32), u64 rows, u64 cols, then the row-major
payload. The format is trivially memory-mappable, which is how corpora
larger than RAM are accessed (see :func:`open_corpus`).

All row normalization in the toolkit flows through one kernel
(:func:`normalize_rows`) so that eagerly normalized matrices and lazily
normalized memory-mapped chunks produce bit-identical rows.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import (
    BadMagicError,
    ConfigError,
    DataError,
    DescriptorFormatError,
    MatrixSizeError,
    ShapeMismatchError,
    TruncatedFileError,
    UnsupportedDtypeError,
    ZeroNormRowError,
)

EMB1_MAGIC = b"EMB1"
EMB1_DTYPE_F32 = 0
EMB1_HEADER = struct.Struct("<4sIQQ")  # magic, dtype code, rows, cols

# Norm tolerance for the `normalized` invariant; cutoff below which a row
# counts as zero and cannot be normalized.
NORM_TOLERANCE = 1e-4
ZERO_NORM_CUTOFF = 1e-12

# Default budget for materialized chunk copies when scanning memory-mapped
# matrices. Keeps peak RAM bounded regardless of file size.
DEFAULT_CHUNK_BYTES = 64 * 1024 * 1024

_MAX_ELEMENTS = 2**60  # rows*cols guard against header overflow


@dataclass
class EmbeddingMatrix:
    """Dense row-major float32 matrix of embeddings.

    ``data`` may be an in-RAM ndarray or a read-only ``np.memmap``; either
    way it is immutable after construction and safe for concurrent reads.
    ``normalized`` records that every row is unit-norm (within
    ``NORM_TOLERANCE``); it is set by :func:`l2_normalize_rows`, never
    guessed.
    """

    data: np.ndarray
    normalized: bool = False

    def __post_init__(self) -> None:
        if self.data.ndim != 2:
            raise ShapeMismatchError(f"embedding matrix must be 2-D, got {self.data.ndim}-D")
        if self.data.dtype != np.float32:
            raise UnsupportedDtypeError(f"embedding matrix must be float32, got {self.data.dtype}")
        rows, dims = self.data.shape
        if rows < 1 or dims < 1:
            raise MatrixSizeError(f"embedding matrix needs rows >= 1 and dims >= 1, got {rows}x{dims}")

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def dims(self) -> int:
        return self.data.shape[1]

    @property
    def is_memmap(self) -> bool:
        return isinstance(self.data, np.memmap)

    def validate_normalized(self, tolerance: float = NORM_TOLERANCE) -> None:
        """Check the unit-norm invariant row by row (scans the whole matrix)."""
        for start, block in self.iter_chunks():
            norms = np.sqrt(np.einsum("ij,ij->i", block, block, dtype=np.float64))
            bad = np.nonzero(np.abs(norms - 1.0) > tolerance)[0]
            if bad.size:
                raise ZeroNormRowError(
                    f"row {start + int(bad[0])} has norm {norms[bad[0]]:.6g}, expected 1 +- {tolerance}"
                )

    def chunk_rows_for_budget(self, max_chunk_bytes: int = DEFAULT_CHUNK_BYTES) -> int:
        """Rows per chunk so one float32 chunk copy stays within the byte budget."""
        per_row = self.dims * 4
        return max(1, min(self.rows, max_chunk_bytes // per_row))

    def iter_chunks(
        self,
        chunk_rows: int | None = None,
        max_chunk_bytes: int = DEFAULT_CHUNK_BYTES,
    ) -> Iterator[tuple[int, np.ndarray]]:
        """Yield ``(start_row, float32 chunk)`` copies in row order.

        Each yielded chunk is an in-RAM copy no larger than the byte budget,
        so scanning a memory-mapped file never materializes more than one
        chunk (per consumer) at a time.
        """
        if chunk_rows is None:
            chunk_rows = self.chunk_rows_for_budget(max_chunk_bytes)
        if chunk_rows < 1:
            raise ConfigError(f"chunk_rows must be >= 1, got {chunk_rows}")
        for start in range(0, self.rows, chunk_rows):
            yield start, np.asarray(self.data[start : start + chunk_rows], dtype=np.float32)


def normalize_rows(block: np.ndarray, row_offset: int = 0) -> np.ndarray:
    """L2-normalize a float32 block row-wise, returning float32.

    This is the single normalization kernel: norms are accumulated in
    float64 with numpy's fixed pairwise reduction, so the normalized value
    of a row depends only on that row, never on how rows were batched.
    ``row_offset`` only improves the error message for chunked callers.
    """
    block64 = np.asarray(block, dtype=np.float64)
    if block64.ndim == 1:
        block64 = block64[None, :]
    norms = np.sqrt(np.sum(block64 * block64, axis=1))
    bad = np.nonzero(norms < ZERO_NORM_CUTOFF)[0]
    if bad.size:
        raise ZeroNormRowError(f"row {row_offset + int(bad[0])} has zero norm and cannot be normalized")
    return (block64 / norms[:, None]).astype(np.float32)


def l2_normalize_rows(matrix: EmbeddingMatrix) -> EmbeddingMatrix:
    """Return a new in-RAM matrix with every row scaled to unit norm."""
    if matrix.normalized:
        return matrix
    out = np.empty((matrix.rows, matrix.dims), dtype=np.float32)
    for start, block in matrix.iter_chunks():
        out[start : start + block.shape[0]] = normalize_rows(block, row_offset=start)
    return EmbeddingMatrix(out, normalized=True)


def read_embedding_matrix(path: str | Path) -> EmbeddingMatrix:
    """Read an EMB1 file fully into RAM, bit-identical to the stored payload."""
    path = Path(path)
    rows, dims = _read_header(path)
    with path.open("rb") as fh:
        fh.seek(EMB1_HEADER.size)
        payload = fh.read(rows * dims * 4)
    if len(payload) != rows * dims * 4:
        raise TruncatedFileError(
            f"{path}: payload holds {len(payload)} bytes, header promises {rows * dims * 4}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(rows, dims)
    # frombuffer gives a read-only view; copy so callers own the memory
    return EmbeddingMatrix(np.ascontiguousarray(data, dtype=np.float32))


def open_embedding_matrix(path: str | Path) -> EmbeddingMatrix:
    """Open an EMB1 file as a read-only memory map (no materialization)."""
    path = Path(path)
    rows, dims = _read_header(path)
    if path.stat().st_size < EMB1_HEADER.size + rows * dims * 4:
        raise TruncatedFileError(f"{path}: file shorter than header promises")
    data = np.memmap(path, dtype="<f4", mode="r", offset=EMB1_HEADER.size, shape=(rows, dims))
    return EmbeddingMatrix(data)


def write_embedding_matrix(matrix: EmbeddingMatrix, path: str | Path) -> None:
    """Write an EMB1 file whose read-back equals ``matrix`` bit for bit."""
    path = Path(path)
    try:
        with path.open("wb") as fh:
            fh.write(EMB1_HEADER.pack(EMB1_MAGIC, EMB1_DTYPE_F32, matrix.rows, matrix.dims))
            for _, block in matrix.iter_chunks():
                fh.write(np.ascontiguousarray(block, dtype="<f4").tobytes())
    except OSError as exc:
        raise DataError(f"cannot write embedding matrix to {path}: {exc}") from exc


def _read_header(path: Path) -> tuple[int, int]:
    try:
        with path.open("rb") as fh:
            raw = fh.read(EMB1_HEADER.size)
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    if len(raw) < EMB1_HEADER.size:
        raise TruncatedFileError(f"{path}: file shorter than the {EMB1_HEADER.size}-byte header")
    magic, dtype_code, rows, cols = EMB1_HEADER.unpack(raw)
    if magic != EMB1_MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}, expected {EMB1_MAGIC!r}")
    if dtype_code != EMB1_DTYPE_F32:
        raise UnsupportedDtypeError(f"{path}: unsupported dtype code {dtype_code}")
    if rows < 1 or cols < 1:
        raise MatrixSizeError(f"{path}: header declares empty matrix {rows}x{cols}")
    if rows * cols > _MAX_ELEMENTS:
        raise MatrixSizeError(f"{path}: rows*cols = {rows}*{cols} overflows supported sizes")
    return rows, cols


@dataclass
class DescriptorSet:
    """Ordered mapping from class name to its list of descriptor phrases."""

    classes: list[str]
    descriptors_by_class: dict[str, list[str]]
    source_label: str = ""

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for cls in self.classes:
            if cls in seen:
                raise DescriptorFormatError(f"duplicate class name {cls!r}")
            seen.add(cls)
            descs = self.descriptors_by_class.get(cls)
            if not descs:
                raise DescriptorFormatError(f"class {cls!r} has no descriptors")
            for d in descs:
                if not isinstance(d, str) or not d.strip():
                    raise DescriptorFormatError(f"class {cls!r} has an empty or non-string descriptor")
        if set(self.descriptors_by_class) != seen:
            raise DescriptorFormatError("descriptors_by_class keys do not match the class list")

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def num_descriptors(self) -> int:
        return sum(len(self.descriptors_by_class[c]) for c in self.classes)

    def items(self) -> Iterator[tuple[str, list[str]]]:
        for cls in self.classes:
            yield cls, self.descriptors_by_class[cls]


def load_descriptor_set(path: str | Path, source_label: str | None = None) -> DescriptorSet:
    """Load descriptor JSON (``{"class": ["descriptor", ...], ...}``).

    Class and descriptor order follow the file. A top-level ``"_meta"``
    object (written by the generators) is ignored. Duplicate class keys,
    empty descriptor lists and non-string entries are rejected.
    """
    path = Path(path)

    def reject_dupes(pairs):
        keys = [k for k, _ in pairs]
        if len(keys) != len(set(keys)):
            dupe = next(k for k in keys if keys.count(k) > 1)
            raise DescriptorFormatError(f"{path}: duplicate class name {dupe!r}")
        return dict(pairs)

    try:
        with path.open("r", encoding="utf-8") as fh:
            raw = json.load(fh, object_pairs_hook=reject_dupes)
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DescriptorFormatError(f"{path}: malformed JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise DescriptorFormatError(f"{path}: top level must be an object")
    raw.pop("_meta", None)
    if not raw:
        raise DescriptorFormatError(f"{path}: no classes found")
    classes = list(raw.keys())
    by_class: dict[str, list[str]] = {}
    for cls, descs in raw.items():
        if not isinstance(descs, list):
            raise DescriptorFormatError(f"{path}: class {cls!r} must map to an array")
        by_class[cls] = list(descs)
    label = source_label if source_label is not None else path.stem
    return DescriptorSet(classes, by_class, source_label=label)


def save_descriptor_set(dset: DescriptorSet, path: str | Path, meta: dict | None = None) -> None:
    """Write descriptor JSON, optionally with a leading ``"_meta"`` object."""
    path = Path(path)
    doc: dict = {}
    if meta is not None:
        doc["_meta"] = meta
    for cls, descs in dset.items():
        doc[cls] = descs
    with path.open("w", encoding="utf-8") as fh:
        json.dump(doc, fh, ensure_ascii=False, indent=2)
        fh.write("\n")


@dataclass
class LabelVector:
    """Per-image class indices paired with an image matrix."""

    labels: np.ndarray
    num_classes: int

    def __post_init__(self) -> None:
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 1 or self.labels.size < 1:
            raise DataError("labels must be a nonempty 1-D sequence")
        if self.num_classes < 1:
            raise DataError("num_classes must be >= 1")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise DataError(
                f"labels must lie in [0, {self.num_classes}), got range "
                f"[{self.labels.min()}, {self.labels.max()}]"
            )

    @property
    def count(self) -> int:
        return int(self.labels.size)


def load_labels(path: str | Path) -> LabelVector:
    """Load labels JSON: ``{"num_classes": N, "labels": [i0, i1, ...]}``."""
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: malformed labels JSON ({exc})") from exc
    if not isinstance(raw, dict) or "num_classes" not in raw or "labels" not in raw:
        raise DataError(f"{path}: labels JSON needs 'num_classes' and 'labels' keys")
    return LabelVector(np.asarray(raw["labels"], dtype=np.int64), int(raw["num_classes"]))


@dataclass
class CaptionCorpus:
    """Paired caption/image embeddings approximating a VLM's pre-training data.

    Row ``i`` of the caption matrix is paired with row ``i`` of the image
    matrix. Matrices opened from disk stay memory-mapped; rows are
    normalized lazily, chunk by chunk, during scans.
    """

    caption_embeddings: EmbeddingMatrix
    image_embeddings: EmbeddingMatrix
    caption_texts: list[str] | None = None

    def __post_init__(self) -> None:
        if self.caption_embeddings.rows != self.image_embeddings.rows:
            raise ShapeMismatchError(
                f"caption rows ({self.caption_embeddings.rows}) != image rows "
                f"({self.image_embeddings.rows})"
            )
        if self.caption_embeddings.dims != self.image_embeddings.dims:
            raise ShapeMismatchError(
                f"caption dims ({self.caption_embeddings.dims}) != image dims "
                f"({self.image_embeddings.dims})"
            )
        if self.caption_texts is not None and len(self.caption_texts) != self.rows:
            raise ShapeMismatchError(
                f"{len(self.caption_texts)} caption texts for {self.rows} embedding rows"
            )

    @property
    def rows(self) -> int:
        return self.caption_embeddings.rows

    @property
    def dims(self) -> int:
        return self.caption_embeddings.dims

    def pair_similarities(self, indices: Sequence[int] | np.ndarray) -> np.ndarray:
        """Cosine of (caption_i, image_i) for the given rows, in float64.

        Rows are normalized through the shared kernel and reduced with the
        fixed-order product/pairwise-sum kernel, so values are independent
        of batching.
        """
        idx = np.asarray(indices, dtype=np.int64)
        if idx.size == 0:
            return np.zeros(0, dtype=np.float64)
        cap = self._gather_normalized(self.caption_embeddings, idx)
        img = self._gather_normalized(self.image_embeddings, idx)
        sims = np.sum(cap.astype(np.float64) * img.astype(np.float64), axis=1)
        return np.clip(sims, -1.0, 1.0)

    @staticmethod
    def _gather_normalized(matrix: EmbeddingMatrix, idx: np.ndarray) -> np.ndarray:
        rows = np.asarray(matrix.data[idx], dtype=np.float32)
        if matrix.normalized:
            return rows
        return normalize_rows(rows)


def open_corpus(
    caption_path: str | Path,
    image_path: str | Path,
    texts_path: str | Path | None = None,
) -> CaptionCorpus:
    """Open a caption/image pair of EMB1 files as a memory-mapped corpus."""
    captions = open_embedding_matrix(caption_path)
    images = open_embedding_matrix(image_path)
    texts: list[str] | None = None
    if texts_path is not None:
        try:
            texts = Path(texts_path).read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise DataError(f"cannot open {texts_path}: {exc}") from exc
    return CaptionCorpus(captions, images, caption_texts=texts)
