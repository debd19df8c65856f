"""Exact cosine top-k retrieval over chunked, memory-mapped matrices.

Reported scores come from a fixed-order kernel: rows are upcast to float64,
multiplied elementwise and reduced with numpy's pairwise row sum, so a
(query, corpus-row) score depends only on the two rows. The fast path --
a float64 BLAS product per chunk -- is used solely to nominate candidates
within a rigorous rounding margin of each query's running top-k threshold.
Candidates are then rescored with the fixed-order kernel and sorted by
(score desc, index asc). Results are therefore bit-identical across chunk
sizes and worker counts, and exactly equal to a naive full scan.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import dataclass

import numpy as np

try:  # keep BLAS single-threaded inside worker stripes to avoid oversubscription
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover - optional speedup only
    threadpool_limits = None

from .errors import ConfigError, ShapeMismatchError, ZeroNormRowError
from .store import DEFAULT_CHUNK_BYTES, EmbeddingMatrix, normalize_rows

_EPS64 = 2.0**-53


def blas_single_thread():
    return threadpool_limits(limits=1) if threadpool_limits is not None else nullcontext()


@dataclass
class NeighborList:
    """Top-k neighbors of one query: indices and scores sorted by descending
    similarity, ties broken by ascending corpus index."""

    query_index: int
    indices: np.ndarray
    scores: np.ndarray

    def __post_init__(self) -> None:
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.indices.shape != self.scores.shape:
            raise ShapeMismatchError("indices and scores must have equal length")

    def pairs(self) -> list[tuple[int, float]]:
        return [(int(i), float(s)) for i, s in zip(self.indices, self.scores)]

    def __len__(self) -> int:
        return int(self.indices.size)


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    """cos(u, v) = dot / (|u| |v|), clamped to [-1, 1]."""
    u64 = np.asarray(u, dtype=np.float64).ravel()
    v64 = np.asarray(v, dtype=np.float64).ravel()
    if u64.size != v64.size:
        raise ShapeMismatchError(f"dimension mismatch: {u64.size} vs {v64.size}")
    nu = np.sqrt(np.sum(u64 * u64))
    nv = np.sqrt(np.sum(v64 * v64))
    if nu < 1e-12 or nv < 1e-12:
        raise ZeroNormRowError("cosine similarity is undefined for a zero vector")
    return float(np.clip(np.sum(u64 * v64) / (nu * nv), -1.0, 1.0))


def top_k(
    queries: EmbeddingMatrix,
    corpus: EmbeddingMatrix,
    k: int,
    *,
    chunk_rows: int | None = None,
    max_chunk_bytes: int = DEFAULT_CHUNK_BYTES,
    n_workers: int = 1,
    exclude_self: bool = False,
    metric: str = "cosine",
) -> list[NeighborList]:
    """Exact k highest-similarity corpus rows for every query row.

    ``metric`` is "cosine" (rows normalized on the fly where needed, scores
    clamped to [-1, 1]) or "dot" (raw inner products of the rows as given).
    ``exclude_self`` treats query i and corpus row i as the same item and
    never returns it (used by :func:`knn_sets`; requires equal row counts).
    """
    if metric not in ("cosine", "dot"):
        raise ConfigError(f"metric must be 'cosine' or 'dot', got {metric!r}")
    if queries.dims != corpus.dims:
        raise ShapeMismatchError(f"query dims {queries.dims} != corpus dims {corpus.dims}")
    limit = corpus.rows - 1 if exclude_self else corpus.rows
    if exclude_self and queries.rows != corpus.rows:
        raise ShapeMismatchError("exclude_self requires queries and corpus with equal rows")
    if k < 1 or k > limit:
        raise ConfigError(f"k must be in [1, {limit}], got {k}")

    cosine = metric == "cosine"
    q32 = np.asarray(queries.data, dtype=np.float32)
    if cosine and not queries.normalized:
        q32 = normalize_rows(q32)
    q64 = q32.astype(np.float64)

    if chunk_rows is None:
        # keep both the chunk copy and the per-chunk score matrix in budget
        chunk_rows = min(
            corpus.chunk_rows_for_budget(max_chunk_bytes),
            max(1, max_chunk_bytes // (8 * queries.rows)),
        )
    if chunk_rows < 1:
        raise ConfigError(f"chunk_rows must be >= 1, got {chunk_rows}")

    # Rounding margin between the BLAS product and the fixed-order kernel:
    # both are within d*eps*|q||c| of the true dot, so 8x that is safe.
    qmax = float(np.sqrt(np.max(np.sum(q64 * q64, axis=1))))
    unit_delta = 8.0 * corpus.dims * _EPS64

    starts = list(range(0, corpus.rows, chunk_rows))
    n_workers = max(1, int(n_workers))
    if n_workers == 1 or len(starts) == 1:
        stripe_results = [_scan_stripe(q64, qmax, corpus, starts, chunk_rows, k, unit_delta, exclude_self, cosine)]
    else:
        bounds = np.linspace(0, len(starts), n_workers + 1, dtype=int)
        stripes = [starts[bounds[w] : bounds[w + 1]] for w in range(n_workers) if bounds[w] < bounds[w + 1]]
        with blas_single_thread(), ThreadPoolExecutor(max_workers=len(stripes)) as pool:
            futures = [
                pool.submit(_scan_stripe, q64, qmax, corpus, s, chunk_rows, k, unit_delta, exclude_self, cosine)
                for s in stripes
            ]
            stripe_results = [f.result() for f in futures]

    delta = unit_delta * qmax * max(r.cmax for r in stripe_results)
    out: list[NeighborList] = []
    for qi in range(queries.rows):
        idx = np.concatenate([r.pools[qi][0] for r in stripe_results])
        val = np.concatenate([r.pools[qi][1] for r in stripe_results])
        idx, val = _prune(idx, val, k, delta)
        scores = _rescore(q64[qi], corpus, idx, cosine)
        if cosine:
            scores = np.clip(scores, -1.0, 1.0)
        order = np.lexsort((idx, -scores))[:k]
        out.append(NeighborList(qi, idx[order], scores[order]))
    return out


def knn_sets(
    matrix: EmbeddingMatrix,
    k: int,
    *,
    chunk_rows: int | None = None,
    max_chunk_bytes: int = DEFAULT_CHUNK_BYTES,
    n_workers: int = 1,
    metric: str = "cosine",
) -> list[np.ndarray]:
    """For each row, the set of its k nearest other rows (self excluded).

    Returned as sorted index arrays with set semantics; ties at the k-th
    place go to the lower index.
    """
    neighbor_lists = top_k(
        matrix,
        matrix,
        k,
        chunk_rows=chunk_rows,
        max_chunk_bytes=max_chunk_bytes,
        n_workers=n_workers,
        exclude_self=True,
        metric=metric,
    )
    return [np.sort(nl.indices) for nl in neighbor_lists]


@dataclass
class _StripeResult:
    pools: list[tuple[np.ndarray, np.ndarray]]
    cmax: float


def _scan_stripe(
    q64: np.ndarray,
    qmax: float,
    corpus: EmbeddingMatrix,
    starts: list[int],
    chunk_rows: int,
    k: int,
    unit_delta: float,
    exclude_self: bool,
    cosine: bool,
) -> _StripeResult:
    """Scan a stripe of chunks, returning per-query margin-pruned candidates."""
    nq = q64.shape[0]
    pool_idx: list[list[np.ndarray]] = [[] for _ in range(nq)]
    pool_val: list[list[np.ndarray]] = [[] for _ in range(nq)]
    pool_size = np.zeros(nq, dtype=np.int64)
    prune_at = max(4 * k, k + 64)
    cmax = 1.0

    for start in starts:
        block = np.asarray(corpus.data[start : start + chunk_rows], dtype=np.float32)
        if cosine and not corpus.normalized:
            block = normalize_rows(block, row_offset=start)
        block64 = block.astype(np.float64)
        if not cosine:
            cmax = max(cmax, float(np.sqrt(np.max(np.sum(block64 * block64, axis=1)))))
        sims = q64 @ block64.T
        c = block.shape[0]
        if exclude_self:
            qs = np.arange(nq)
            local = qs - start
            hit = (local >= 0) & (local < c)
            if hit.any():
                sims[qs[hit], local[hit]] = -np.inf
        delta = unit_delta * qmax * cmax
        if c > k:
            thresh = np.partition(sims, c - k, axis=1)[:, c - k]
            keep = sims >= (thresh - delta)[:, None]
        else:
            keep = np.ones_like(sims, dtype=bool)
        if exclude_self:
            keep &= np.isfinite(sims)
        for qi in range(nq):
            cols = np.nonzero(keep[qi])[0]
            if cols.size == 0:
                continue
            pool_idx[qi].append(cols.astype(np.int64) + start)
            pool_val[qi].append(sims[qi, cols])
            pool_size[qi] += cols.size
            if pool_size[qi] > prune_at:
                idx = np.concatenate(pool_idx[qi])
                val = np.concatenate(pool_val[qi])
                idx, val = _prune(idx, val, k, delta)
                pool_idx[qi] = [idx]
                pool_val[qi] = [val]
                pool_size[qi] = idx.size

    pools = []
    for qi in range(nq):
        if pool_idx[qi]:
            pools.append((np.concatenate(pool_idx[qi]), np.concatenate(pool_val[qi])))
        else:
            pools.append((np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.float64)))
    return _StripeResult(pools, cmax)


def _prune(idx: np.ndarray, val: np.ndarray, k: int, delta: float) -> tuple[np.ndarray, np.ndarray]:
    """Drop candidates that provably cannot reach the top k.

    Keeps everything within ``delta`` of the k-th largest approximate value;
    safe because approximate and exact scores each sit within delta/2 of the
    true similarity.
    """
    if idx.size > k:
        thresh = np.partition(val, idx.size - k)[idx.size - k]
        keep = val >= thresh - delta
        idx, val = idx[keep], val[keep]
    return idx, val


def _rescore(q64_row: np.ndarray, corpus: EmbeddingMatrix, idx: np.ndarray, cosine: bool) -> np.ndarray:
    """Fixed-order exact scores of one query against the given corpus rows."""
    if idx.size == 0:
        return np.zeros(0, dtype=np.float64)
    rows = np.asarray(corpus.data[idx], dtype=np.float32)
    if cosine and not corpus.normalized:
        rows = normalize_rows(rows)
    return np.sum(q64_row * rows.astype(np.float64), axis=1)
