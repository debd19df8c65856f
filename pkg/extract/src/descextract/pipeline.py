"""Extraction operations: images/texts to EMB1, corpus sampling, manifests.

Output row order always equals manifest input order; a manifest JSON is
stored beside every output so runs are reproducible and auditable.
Embeddings are written unnormalized by default (the consumer owns
normalization); ``normalize`` is recorded either way.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .emb1 import Emb1Writer, open_rows
from .encoders import resolve
from .errors import InputError, UsageError


@dataclass
class ExtractionManifest:
    model: str
    inputs: list[str]
    output: str
    normalize: bool = False
    seed: int | None = None
    batch_size: int = 32
    extra: dict = field(default_factory=dict)

    def save(self) -> Path:
        path = manifest_path(self.output)
        path.write_text(json.dumps(asdict(self), sort_keys=True, indent=2) + "\n", encoding="utf-8")
        return path


def manifest_path(output: str | Path) -> Path:
    out = Path(output)
    return out.with_name(out.name + ".manifest.json")


def load_manifest(output: str | Path) -> ExtractionManifest:
    doc = json.loads(manifest_path(output).read_text(encoding="utf-8"))
    return ExtractionManifest(**doc)


def _maybe_normalize(block: np.ndarray, normalize: bool) -> np.ndarray:
    if not normalize:
        return block
    norms = np.sqrt(np.sum(block.astype(np.float64) ** 2, axis=1))
    if np.any(norms < 1e-12):
        raise InputError("cannot normalize a zero-norm embedding row")
    return (block.astype(np.float64) / norms[:, None]).astype(np.float32)


def extract_image_embeddings(manifest: ExtractionManifest) -> Path:
    """Encode the manifest's images, one EMB1 row per image in input order."""
    if not manifest.inputs:
        raise UsageError("no images to encode")
    encoder = resolve(manifest.model)
    writer: Emb1Writer | None = None
    batch: list = []
    batch_start = 0
    try:
        for i, path in enumerate(manifest.inputs):
            try:
                with Image.open(path) as img:
                    img.load()
                    batch.append(img.copy())
            except (OSError, UnidentifiedImageError) as exc:
                raise InputError(f"image {i} ({path}): {exc}") from exc
            if len(batch) >= manifest.batch_size:
                block = _maybe_normalize(encoder.encode_images(batch), manifest.normalize)
                if writer is None:
                    writer = Emb1Writer(manifest.output, block.shape[1])
                writer.append(block)
                batch_start += len(batch)
                batch = []
        if batch:
            block = _maybe_normalize(encoder.encode_images(batch), manifest.normalize)
            if writer is None:
                writer = Emb1Writer(manifest.output, block.shape[1])
            writer.append(block)
    finally:
        if writer is not None:
            writer.close()
    manifest.save()
    return Path(manifest.output)


def extract_text_embeddings(manifest: ExtractionManifest, texts: Sequence[str]) -> Path:
    """Encode texts, one EMB1 row per entry in input order."""
    texts = list(texts)
    if not texts:
        raise UsageError("no texts to encode")
    encoder = resolve(manifest.model)
    writer: Emb1Writer | None = None
    try:
        for start in range(0, len(texts), manifest.batch_size):
            chunk = texts[start : start + manifest.batch_size]
            block = _maybe_normalize(encoder.encode_texts(chunk), manifest.normalize)
            if writer is None:
                writer = Emb1Writer(manifest.output, block.shape[1])
            writer.append(block)
    finally:
        if writer is not None:
            writer.close()
    manifest.save()
    return Path(manifest.output)


def sample_corpus(
    captions_path: str | Path,
    images_path: str | Path,
    size: int,
    seed: int,
    out_captions: str | Path,
    out_images: str | Path,
    texts_path: str | Path | None = None,
    out_texts: str | Path | None = None,
) -> ExtractionManifest:
    """Seeded sample without replacement from a paired caption/image source.

    Row i of both outputs (and of the optional texts file) comes from the
    same source row, preserving the caption-image pairing. Sampled rows are
    written in ascending source order.
    """
    captions = open_rows(captions_path)
    images = open_rows(images_path)
    if captions.shape[0] != images.shape[0]:
        raise InputError(
            f"paired sources disagree: {captions.shape[0]} captions vs {images.shape[0]} images"
        )
    n = captions.shape[0]
    if size < 1:
        raise UsageError(f"sample size must be >= 1, got {size}")
    if size > n:
        raise UsageError(f"sample size {size} exceeds source rows {n}")

    rng = np.random.default_rng(seed)
    picked = np.sort(rng.choice(n, size=size, replace=False))

    for src, dst in ((captions, out_captions), (images, out_images)):
        with Emb1Writer(dst, src.shape[1]) as writer:
            for start in range(0, size, 65_536):
                idx = picked[start : start + 65_536]
                writer.append(np.asarray(src[idx], dtype=np.float32))

    if texts_path is not None and out_texts is not None:
        lines = Path(texts_path).read_text(encoding="utf-8").splitlines()
        if len(lines) != n:
            raise InputError(f"{texts_path}: {len(lines)} lines for {n} embedding rows")
        Path(out_texts).write_text(
            "\n".join(lines[i] for i in picked) + "\n", encoding="utf-8"
        )

    manifest = ExtractionManifest(
        model="",
        inputs=[str(captions_path), str(images_path)],
        output=str(out_captions),
        seed=seed,
        extra={
            "operation": "sample_corpus",
            "size": size,
            "source_rows": int(n),
            "out_images": str(out_images),
            "out_texts": str(out_texts) if out_texts else None,
            "order": "ascending source index",
        },
    )
    manifest.save()
    return manifest
