"""Shared fixtures-in-code: matrix builders, EMB1 writers and the naive
full-scan oracles the retrieval paths are checked against.

The oracles share no selection/chunking/merging logic with the library:
they compute every similarity with the per-pair kernel definition (float64
products of the float32 rows, numpy pairwise row sum, clip) over the full
corpus and sort the lot.
"""

from __future__ import annotations

import math
import struct
from pathlib import Path

import numpy as np

from desceval import EmbeddingMatrix, l2_normalize_rows

EMB1_HEADER = struct.Struct("<4sIQQ")


def random_unit_matrix(rng: np.random.Generator, rows: int, dims: int) -> EmbeddingMatrix:
    return l2_normalize_rows(
        EmbeddingMatrix(rng.standard_normal((rows, dims)).astype(np.float32))
    )


def matrix_from(rows, normalized: bool = False) -> EmbeddingMatrix:
    return EmbeddingMatrix(np.asarray(rows, dtype=np.float32), normalized=normalized)


def write_emb1(path: Path, array: np.ndarray) -> Path:
    array = np.asarray(array, dtype=np.float32)
    with path.open("wb") as fh:
        fh.write(EMB1_HEADER.pack(b"EMB1", 0, array.shape[0], array.shape[1]))
        fh.write(array.astype("<f4").tobytes())
    return path


def pair_scores(qrow32: np.ndarray, corpus32: np.ndarray) -> np.ndarray:
    """Per-pair similarity definition used throughout: float64 products of
    the float32 rows, pairwise row sum, clipped."""
    prods = qrow32.astype(np.float64) * corpus32.astype(np.float64)
    return np.clip(np.sum(prods, axis=1), -1.0, 1.0)


def oracle_top_k(queries32: np.ndarray, corpus32: np.ndarray, k: int):
    """Naive full scan: all scores, full deterministic sort, slice to k."""
    n = corpus32.shape[0]
    results = []
    for qi in range(queries32.shape[0]):
        sims = pair_scores(queries32[qi], corpus32)
        order = np.lexsort((np.arange(n), -sims))[:k]
        results.append((order.astype(np.int64), sims[order]))
    return results


def oracle_knn_sets(matrix32: np.ndarray, k: int) -> list[np.ndarray]:
    """Naive neighbor sets: full scan per row with self masked out."""
    n = matrix32.shape[0]
    sets = []
    for i in range(n):
        sims = pair_scores(matrix32[i], matrix32)
        sims[i] = -np.inf
        order = np.lexsort((np.arange(n), -sims))[:k]
        sets.append(np.sort(order.astype(np.int64)))
    return sets


def oracle_mutual_knn(a32: np.ndarray, b32: np.ndarray, k: int) -> float:
    """Quadratic brute force with python sets, independent of the library."""
    sets_a = [set(s.tolist()) for s in oracle_knn_sets(a32, k)]
    sets_b = [set(s.tolist()) for s in oracle_knn_sets(b32, k)]
    overlaps = [len(sa & sb) for sa, sb in zip(sets_a, sets_b)]
    return math.fsum(overlaps) / (len(sets_a) * k)


def oracle_matches(
    q32: np.ndarray, captions32: np.ndarray, tau: float, top_fraction: float
) -> np.ndarray:
    """Literal retrieval definition: top-k by text-text similarity, then
    keep the rows strictly above tau, in retrieval rank order."""
    n = captions32.shape[0]
    k = max(1, math.ceil(top_fraction * n))
    sims = pair_scores(q32, captions32)
    order = np.lexsort((np.arange(n), -sims))[:k]
    return order[sims[order] > tau].astype(np.int64)
