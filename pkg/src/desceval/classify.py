"""Zero-shot classification by description and checkpoint-series tracking.

A class's score for an image is the unweighted mean of the image's
similarities to that class's descriptors; the predicted class is the
argmax (ties to the lowest class index). Tracking evaluates a series of
descriptor checkpoints, pairing accuracy (class names kept, as the
evaluated frameworks do) with the corpus-similarity score (stripped
descriptors by default).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .alignment import global_pool, semantic_projection, strip_class_names
from .errors import DataError, ShapeMismatchError
from .pretrain import ClipSimConfig, clip_sim
from .store import (
    CaptionCorpus,
    DescriptorSet,
    EmbeddingMatrix,
    LabelVector,
    load_descriptor_set,
)


@dataclass
class IterationRecord:
    iteration: int
    accuracy: float
    clip_sim: float
    skipped_descriptors: int
    descriptor_file: str


@dataclass
class CheckpointInput:
    """One refinement checkpoint: its descriptor file plus embeddings for
    the flattened (names kept) list and, optionally, the stripped pool."""

    iteration: int
    descriptor_path: Path
    accuracy_embeddings: EmbeddingMatrix
    clipsim_embeddings: EmbeddingMatrix | None = None


def class_scores(
    projection: EmbeddingMatrix,
    column_classes: Sequence[int] | np.ndarray,
    num_classes: int,
) -> np.ndarray:
    """Per-image, per-class mean of descriptor similarities.

    ``column_classes[j]`` names the class owning projection column j; every
    class must own at least one column.
    """
    cols = np.asarray(column_classes, dtype=np.int64)
    if cols.size != projection.dims:
        raise ShapeMismatchError(
            f"{cols.size} column-class entries for {projection.dims} projection columns"
        )
    if num_classes < 1:
        raise DataError("num_classes must be >= 1")
    if cols.min() < 0 or cols.max() >= num_classes:
        raise DataError(f"column classes must lie in [0, {num_classes})")
    counts = np.bincount(cols, minlength=num_classes)
    empty = np.nonzero(counts == 0)[0]
    if empty.size:
        raise DataError(f"class {int(empty[0])} owns no descriptor columns")
    s64 = np.asarray(projection.data, dtype=np.float64)
    sums = np.zeros((projection.rows, num_classes), dtype=np.float64)
    for c in range(num_classes):
        sums[:, c] = np.sum(s64[:, cols == c], axis=1)
    return sums / counts[None, :]


def zero_shot_accuracy(scores: np.ndarray, labels: LabelVector) -> float:
    """Fraction of images whose argmax class (ties to the lowest index)
    equals the label."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2:
        raise ShapeMismatchError("score matrix must be 2-D")
    if scores.shape[0] != labels.count or scores.shape[1] != labels.num_classes:
        raise ShapeMismatchError(
            f"score matrix {scores.shape} does not match {labels.count} labels "
            f"over {labels.num_classes} classes"
        )
    if not np.isfinite(scores).all():
        raise DataError("score matrix contains non-finite values")
    predicted = np.argmax(scores, axis=1)  # first max = lowest class index
    return float(np.mean(predicted == labels.labels))


def accuracy_for_set(
    images: EmbeddingMatrix,
    dset: DescriptorSet,
    descriptor_embeddings: EmbeddingMatrix,
    labels: LabelVector,
    *,
    strip: bool = False,
) -> tuple[float, np.ndarray]:
    """Classification accuracy of one descriptor set.

    ``descriptor_embeddings`` rows must align with the flattened descriptor
    list (class order, then descriptor order; duplicates kept; names kept
    unless ``strip``). Returns overall accuracy and per-class accuracies.
    """
    working = strip_class_names(dset) if strip else dset
    if labels.num_classes != working.num_classes:
        raise ShapeMismatchError(
            f"labels cover {labels.num_classes} classes, descriptor set has {working.num_classes}"
        )
    flat = global_pool(working, dedup=False)
    if descriptor_embeddings.rows != len(flat.descriptors):
        raise ShapeMismatchError(
            f"{descriptor_embeddings.rows} embedding rows for "
            f"{len(flat.descriptors)} flattened descriptors"
        )
    class_index = {cls: i for i, cls in enumerate(working.classes)}
    cols = np.array([class_index[cls] for cls, _ in flat.origins], dtype=np.int64)
    projection = semantic_projection(images, descriptor_embeddings)
    scores = class_scores(projection, cols, working.num_classes)
    acc = zero_shot_accuracy(scores, labels)

    predicted = np.argmax(scores, axis=1)
    per_class = np.full(labels.num_classes, np.nan)
    for c in range(labels.num_classes):
        mask = labels.labels == c
        if mask.any():
            per_class[c] = float(np.mean(predicted[mask] == c))
    return acc, per_class


def track_iterations(
    checkpoints: Sequence[CheckpointInput],
    images: EmbeddingMatrix,
    labels: LabelVector,
    corpus: CaptionCorpus,
    clip_cfg: ClipSimConfig,
    *,
    strip_for_clipsim: bool = True,
    dedup_pool: bool = True,
    n_workers: int = 1,
) -> list[IterationRecord]:
    """Evaluate (accuracy, corpus similarity) across a checkpoint series.

    Accuracy keeps class names; the similarity score uses the stripped,
    deduplicated pool when stripped embeddings are supplied (falling back
    to the accuracy embeddings otherwise, with ``strip_for_clipsim`` off).
    Checkpoints must share one class list; iterations must be increasing.
    """
    if not checkpoints:
        raise DataError("no checkpoints to track")
    records: list[IterationRecord] = []
    base_classes: list[str] | None = None
    last_iter: int | None = None
    for cp in checkpoints:
        if last_iter is not None and cp.iteration <= last_iter:
            raise DataError(
                f"iterations must be strictly increasing, got {cp.iteration} after {last_iter}"
            )
        last_iter = cp.iteration
        dset = load_descriptor_set(cp.descriptor_path)
        if base_classes is None:
            base_classes = list(dset.classes)
        elif list(dset.classes) != base_classes:
            raise DataError(f"{cp.descriptor_path}: class list differs from earlier checkpoints")

        acc, _ = accuracy_for_set(images, dset, cp.accuracy_embeddings, labels)

        if cp.clipsim_embeddings is not None:
            pool_set = strip_class_names(dset) if strip_for_clipsim else dset
            pooled = global_pool(pool_set, dedup=dedup_pool)
            emb = cp.clipsim_embeddings
        else:
            # no dedicated embeddings: reuse the accuracy-aligned flattened rows
            pooled = global_pool(dset, dedup=False)
            emb = cp.accuracy_embeddings
        result = clip_sim(pooled.descriptors, emb, corpus, clip_cfg, n_workers=n_workers)

        records.append(
            IterationRecord(
                iteration=cp.iteration,
                accuracy=acc,
                clip_sim=result.aggregate,
                skipped_descriptors=result.skipped,
                descriptor_file=str(cp.descriptor_path),
            )
        )
    return records
