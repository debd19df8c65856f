"""Mutual-kNN alignment between a descriptor-induced space and a reference space.

Pipeline: strip class names from the descriptors, pool them into one global
list, embed them (outside this module), project images onto the pooled
concepts (S = X @ Y^T), then score how much the k-nearest-neighbor structure
of the projected rows overlaps with the reference embedding space.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, DescriptorFormatError, ShapeMismatchError
from .knn import knn_sets
from .store import (
    DEFAULT_CHUNK_BYTES,
    DescriptorSet,
    EmbeddingMatrix,
    LabelVector,
    l2_normalize_rows,
)


@dataclass
class AlignmentConfig:
    k: int
    strip_class_names: bool = True
    dedup_global: bool = True
    normalize_projection_rows: bool = True

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")


class GlobalPool(NamedTuple):
    """Pooled descriptor list plus, per pooled index, the (class, position)
    of its first occurrence."""

    descriptors: list[str]
    origins: list[tuple[str, int]]


@dataclass
class AlignmentResult:
    score: float
    details: dict


# Connector phrases orphaned at the front of a descriptor once the class
# name is gone ("laysan albatross, which is a large seabird" -> "large seabird").
_LEADING_CONNECTORS = (
    "which is a ",
    "which is an ",
    "which is ",
    "which are ",
    "which has ",
    "which have ",
    "that is a ",
    "that is an ",
    "that is ",
)


def _class_name_pattern(name: str) -> re.Pattern[str]:
    # space/underscore/hyphen are interchangeable inside the name, but an
    # occurrence glued to another word by a hyphen (cat-like) is left alone
    tokens = [t for t in re.split(r"[\s_\-]+", name.strip()) if t]
    if not tokens:
        raise DescriptorFormatError(f"class name {name!r} is blank")
    body = r"[\s_\-]+".join(re.escape(t) for t in tokens)
    return re.compile(rf"(?<![\w\-]){body}(?![\w\-])", re.IGNORECASE)


def _tidy_after_removal(text: str) -> str:
    text = re.sub(r"\s+", " ", text).strip()
    changed = True
    while changed:
        changed = False
        stripped = text.lstrip(" \t,;:")
        if stripped != text:
            text = stripped
            changed = True
        lowered = text.lower()
        for phrase in _LEADING_CONNECTORS:
            if lowered.startswith(phrase):
                text = text[len(phrase):]
                changed = True
                break
    return text.rstrip(" \t,;:")


def strip_class_names(dset: DescriptorSet) -> DescriptorSet:
    """Remove each class's name from its own descriptors.

    Matching is case-insensitive, treats spaces/underscores/hyphens inside
    the name as interchangeable, and only fires on standalone occurrences
    (never inside hyphenated compounds like "cat-like"). Descriptors that
    end up empty are dropped; a class losing all its descriptors is an error.
    """
    out: dict[str, list[str]] = {}
    for cls, descs in dset.items():
        pattern = _class_name_pattern(cls)
        kept: list[str] = []
        for desc in descs:
            replaced, n = pattern.subn(" ", desc)
            cleaned = _tidy_after_removal(replaced) if n else desc
            if cleaned:
                kept.append(cleaned)
        if not kept:
            raise DescriptorFormatError(
                f"class {cls!r}: every descriptor became empty after stripping the class name"
            )
        out[cls] = kept
    return DescriptorSet(list(dset.classes), out, source_label=dset.source_label)


def global_pool(dset: DescriptorSet, dedup: bool = True) -> GlobalPool:
    """Concatenate descriptors across classes in class order, then
    descriptor order; optionally drop exact duplicates keeping the first."""
    descriptors: list[str] = []
    origins: list[tuple[str, int]] = []
    seen: dict[str, int] = {}
    for cls, descs in dset.items():
        for pos, d in enumerate(descs):
            if dedup and d in seen:
                continue
            if dedup:
                seen[d] = len(descriptors)
            descriptors.append(d)
            origins.append((cls, pos))
    return GlobalPool(descriptors, origins)


def semantic_projection(images: EmbeddingMatrix, concepts: EmbeddingMatrix) -> EmbeddingMatrix:
    """Image-concept similarity matrix S with S[i, j] = cos(image i, concept j).

    Row i is image i's similarity profile over all concepts; these rows are
    the descriptor-induced representation. Inputs are normalized first if
    they are not already.
    """
    if images.dims != concepts.dims:
        raise ShapeMismatchError(f"image dims {images.dims} != concept dims {concepts.dims}")
    x = l2_normalize_rows(images)
    y = l2_normalize_rows(concepts)
    y64t = np.asarray(y.data, dtype=np.float64).T
    out = np.empty((x.rows, y.rows), dtype=np.float32)
    block_rows = max(1, DEFAULT_CHUNK_BYTES // max(1, y.rows * 8))
    for start in range(0, x.rows, block_rows):
        block = np.asarray(x.data[start : start + block_rows], dtype=np.float64)
        out[start : start + block.shape[0]] = np.clip(block @ y64t, -1.0, 1.0).astype(np.float32)
    return EmbeddingMatrix(out)


def mutual_knn_overlap(sets_a: Sequence[np.ndarray], sets_b: Sequence[np.ndarray], k: int) -> float:
    """Mean over items of |A-neighbors ∩ B-neighbors| / k."""
    if len(sets_a) != len(sets_b):
        raise ShapeMismatchError(f"{len(sets_a)} vs {len(sets_b)} neighbor sets")
    overlaps = [
        float(np.intersect1d(sa, sb, assume_unique=True).size) for sa, sb in zip(sets_a, sets_b)
    ]
    return math.fsum(overlaps) / (len(sets_a) * k)


def mutual_knn_alignment(
    a: EmbeddingMatrix,
    b: EmbeddingMatrix,
    k: int,
    *,
    chunk_rows: int | None = None,
    max_chunk_bytes: int = DEFAULT_CHUNK_BYTES,
    n_workers: int = 1,
) -> float:
    """Mutual k-nearest-neighbor alignment score in [0, 1].

    Rows of ``a`` and ``b`` represent the same items in two spaces; the
    score is the average fraction of shared cosine k-nearest neighbors.
    """
    if a.rows != b.rows:
        raise ShapeMismatchError(f"row-count mismatch: {a.rows} vs {b.rows}")
    if k < 1 or k > a.rows - 1:
        raise ConfigError(f"k must be in [1, {a.rows - 1}], got {k}")
    kw = dict(chunk_rows=chunk_rows, max_chunk_bytes=max_chunk_bytes, n_workers=n_workers)
    return mutual_knn_overlap(knn_sets(a, k, **kw), knn_sets(b, k, **kw), k)


def choose_k(labels: LabelVector) -> int:
    """Neighbor count heuristic: images per class on average, rounded half
    up, clamped to [1, rows - 1]."""
    n, c = labels.count, labels.num_classes
    k = (2 * n + c) // (2 * c)
    return max(1, min(k, n - 1))


def dino_align(
    images: EmbeddingMatrix,
    concepts: EmbeddingMatrix,
    reference: EmbeddingMatrix,
    cfg: AlignmentConfig,
    *,
    n_workers: int = 1,
) -> AlignmentResult:
    """Alignment of the descriptor-induced space against a reference space.

    ``concepts`` must hold one embedding per pooled (and, per config,
    stripped) descriptor. The projection rows are re-normalized before the
    kNN step by default; with ``normalize_projection_rows`` off, neighbor
    sets are built from raw inner products of the similarity rows instead.
    """
    if images.rows != reference.rows:
        raise ShapeMismatchError(
            f"image rows ({images.rows}) != reference rows ({reference.rows})"
        )
    if cfg.k > images.rows - 1:
        raise ConfigError(f"k must be <= rows - 1 = {images.rows - 1}, got {cfg.k}")
    s = semantic_projection(images, concepts)
    if cfg.normalize_projection_rows:
        sets_s = knn_sets(l2_normalize_rows(s), cfg.k, n_workers=n_workers)
    else:
        sets_s = knn_sets(s, cfg.k, n_workers=n_workers, metric="dot")
    sets_z = knn_sets(l2_normalize_rows(reference), cfg.k, n_workers=n_workers)
    score = mutual_knn_overlap(sets_s, sets_z, cfg.k)
    details = {
        "k": cfg.k,
        "strip_class_names": cfg.strip_class_names,
        "dedup_global": cfg.dedup_global,
        "normalize_projection_rows": cfg.normalize_projection_rows,
        "pool_size": concepts.rows,
        "items": images.rows,
    }
    return AlignmentResult(score=score, details=details)
