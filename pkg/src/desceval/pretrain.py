"""Descriptor statistics against a sampled pre-training caption corpus.

For each descriptor: retrieve its top-k nearest captions by text-text
cosine (k = ceil(top_fraction * corpus rows)), keep those above the
similarity threshold tau, and average the caption-to-paired-image cosine
over the kept rows. The corpus-level score is the mean over descriptors
with at least one match.

Selection uses the same margin-protected scan as the knn module: a fast
BLAS product nominates every caption within a rounding margin of tau, and
fixed-order rescoring decides membership, so results are independent of
chunking and worker count and equal to a naive full scan.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, MetricUndefinedError, ShapeMismatchError
from .knn import blas_single_thread
from .store import (
    DEFAULT_CHUNK_BYTES,
    CaptionCorpus,
    EmbeddingMatrix,
    normalize_rows,
)

_EPS64 = 2.0**-53


@dataclass
class ClipSimConfig:
    """Retrieval settings; defaults mirror the evaluated setup (tau 0.7,
    top 5% of the corpus, intended 5M-pair sample)."""

    tau: float = 0.7
    top_fraction: float = 0.05
    corpus_sample_size: int = 5_000_000  # documentation field, echoed in reports

    def __post_init__(self) -> None:
        if not 0.0 < self.tau < 1.0:
            raise ConfigError(f"tau must lie in (0, 1), got {self.tau}")
        if not 0.0 < self.top_fraction <= 1.0:
            raise ConfigError(f"top_fraction must lie in (0, 1], got {self.top_fraction}")

    def retrieval_k(self, corpus_rows: int) -> int:
        return max(1, math.ceil(self.top_fraction * corpus_rows))


@dataclass
class DescriptorStats:
    """Match set of one descriptor: corpus rows among its top-k nearest
    captions whose text-text similarity strictly exceeds tau."""

    descriptor: str
    matched_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    sim: float | None = None

    def __post_init__(self) -> None:
        self.matched_indices = np.asarray(self.matched_indices, dtype=np.int64)

    @property
    def freq(self) -> int:
        return int(self.matched_indices.size)


@dataclass
class ClipSimResult:
    aggregate: float
    stats: list[DescriptorStats]
    skipped: int  # descriptors with freq == 0, excluded from the aggregate
    retrieval_k: int


def retrieve_matches(
    d_embedding: np.ndarray,
    corpus: CaptionCorpus,
    cfg: ClipSimConfig,
    *,
    chunk_rows: int | None = None,
    max_chunk_bytes: int = DEFAULT_CHUNK_BYTES,
    n_workers: int = 1,
) -> DescriptorStats:
    """Match set for a single descriptor embedding (``sim`` left unset)."""
    q = np.asarray(d_embedding, dtype=np.float32).reshape(1, -1)
    if q.shape[1] != corpus.dims:
        raise ShapeMismatchError(f"descriptor dims {q.shape[1]} != corpus dims {corpus.dims}")
    matches = _match_scan(
        normalize_rows(q),
        corpus.caption_embeddings,
        cfg,
        chunk_rows=chunk_rows,
        max_chunk_bytes=max_chunk_bytes,
        n_workers=n_workers,
    )
    return DescriptorStats(descriptor="", matched_indices=matches[0])


def mean_similarity(values) -> float:
    """Exactly-rounded mean (fsum), the aggregation used for both the
    per-descriptor similarity and the corpus-level score; order-invariant."""
    values = list(values)
    if not values:
        raise MetricUndefinedError("mean of an empty similarity set is undefined")
    return math.fsum(values) / len(values)


def descriptor_similarity(stats: DescriptorStats, corpus: CaptionCorpus) -> float:
    """Mean cosine between each matched caption and its paired image."""
    if stats.freq == 0:
        raise MetricUndefinedError(
            f"descriptor {stats.descriptor!r} matched no captions; its similarity is undefined"
        )
    return mean_similarity(corpus.pair_similarities(stats.matched_indices))


def clip_sim(
    descriptors: list[str],
    embeddings: EmbeddingMatrix,
    corpus: CaptionCorpus,
    cfg: ClipSimConfig,
    *,
    chunk_rows: int | None = None,
    max_chunk_bytes: int = DEFAULT_CHUNK_BYTES,
    n_workers: int = 1,
) -> ClipSimResult:
    """Corpus-similarity score of a pooled descriptor list.

    ``embeddings`` must hold one row per descriptor, in order. Descriptors
    with an empty match set are excluded from the mean and counted in
    ``skipped``; the aggregate is undefined (an error) if every descriptor
    is skipped.
    """
    if embeddings.rows != len(descriptors):
        raise ShapeMismatchError(
            f"{embeddings.rows} embedding rows for {len(descriptors)} pooled descriptors"
        )
    if embeddings.dims != corpus.dims:
        raise ShapeMismatchError(f"descriptor dims {embeddings.dims} != corpus dims {corpus.dims}")
    q32 = np.asarray(embeddings.data, dtype=np.float32)
    if not embeddings.normalized:
        q32 = normalize_rows(q32)
    match_lists = _match_scan(
        q32,
        corpus.caption_embeddings,
        cfg,
        chunk_rows=chunk_rows,
        max_chunk_bytes=max_chunk_bytes,
        n_workers=n_workers,
    )
    stats: list[DescriptorStats] = []
    defined: list[float] = []
    skipped = 0
    for text, matches in zip(descriptors, match_lists):
        st = DescriptorStats(descriptor=text, matched_indices=matches)
        if st.freq > 0:
            st.sim = descriptor_similarity(st, corpus)
            defined.append(st.sim)
        else:
            skipped += 1
        stats.append(st)
    if not defined:
        raise MetricUndefinedError("every descriptor matched zero captions; aggregate is undefined")
    aggregate = mean_similarity(defined)
    return ClipSimResult(
        aggregate=aggregate,
        stats=stats,
        skipped=skipped,
        retrieval_k=cfg.retrieval_k(corpus.rows),
    )


@dataclass
class ProfileBin:
    lo: float
    hi: float
    count: int
    mean_sim: float | None


@dataclass
class FrequencyProfile:
    """Log-spaced frequency bins (plus a freq-0 bucket at index 0) and the
    Pearson correlation between freq and sim over defined-sim descriptors."""

    bins: list[ProfileBin]
    pearson_r: float


def frequency_similarity_profile(stats: list[DescriptorStats], num_bins: int = 10) -> FrequencyProfile:
    """Bin descriptors by match frequency and average similarity per bin."""
    if num_bins < 1:
        raise ConfigError(f"num_bins must be >= 1, got {num_bins}")
    defined = [s for s in stats if s.sim is not None]
    if not defined:
        raise MetricUndefinedError("profile undefined: no descriptor has a defined similarity")
    zero_count = sum(1 for s in stats if s.freq == 0)
    freqs = np.array([s.freq for s in defined], dtype=np.float64)
    sims = np.array([s.sim for s in defined], dtype=np.float64)

    max_freq = float(freqs.max())
    if max_freq <= 1.0:
        edges = np.array([1.0, 1.0])
    else:
        edges = np.logspace(0.0, math.log10(max_freq), num_bins + 1)
        edges[0], edges[-1] = 1.0, max_freq  # pin endpoints against log rounding
    n_real = len(edges) - 1

    bins = [ProfileBin(0.0, 0.0, zero_count, None)]
    which = np.clip(np.searchsorted(edges, freqs, side="right") - 1, 0, n_real - 1)
    for b in range(n_real):
        mask = which == b
        count = int(mask.sum())
        mean = math.fsum(sims[mask]) / count if count else None
        bins.append(ProfileBin(float(edges[b]), float(edges[b + 1]), count, mean))

    if len(defined) >= 2 and freqs.std() > 0 and sims.std() > 0:
        r = float(np.corrcoef(freqs, sims)[0, 1])
    else:
        r = float("nan")
    return FrequencyProfile(bins=bins, pearson_r=r)


def _match_scan(
    q32: np.ndarray,
    captions: EmbeddingMatrix,
    cfg: ClipSimConfig,
    *,
    chunk_rows: int | None,
    max_chunk_bytes: int,
    n_workers: int,
) -> list[np.ndarray]:
    """Per query: indices with exact similarity > tau, ranked by (sim desc,
    index asc), truncated to the retrieval budget k."""
    if captions.rows < 1:
        raise ShapeMismatchError("empty corpus")
    k = cfg.retrieval_k(captions.rows)
    q64 = q32.astype(np.float64)
    delta = 8.0 * captions.dims * _EPS64

    if chunk_rows is None:
        # keep both the chunk copy and the per-chunk score matrix in budget
        chunk_rows = min(
            captions.chunk_rows_for_budget(max_chunk_bytes),
            max(1, max_chunk_bytes // (8 * q32.shape[0])),
        )
    if chunk_rows < 1:
        raise ConfigError(f"chunk_rows must be >= 1, got {chunk_rows}")
    starts = list(range(0, captions.rows, chunk_rows))
    n_workers = max(1, int(n_workers))
    if n_workers == 1 or len(starts) == 1:
        candidate_sets = [_tau_stripe(q64, captions, starts, chunk_rows, cfg.tau, delta)]
    else:
        bounds = np.linspace(0, len(starts), n_workers + 1, dtype=int)
        stripes = [starts[bounds[w] : bounds[w + 1]] for w in range(n_workers) if bounds[w] < bounds[w + 1]]
        with blas_single_thread(), ThreadPoolExecutor(max_workers=len(stripes)) as pool:
            futures = [
                pool.submit(_tau_stripe, q64, captions, s, chunk_rows, cfg.tau, delta)
                for s in stripes
            ]
            candidate_sets = [f.result() for f in futures]

    out: list[np.ndarray] = []
    for qi in range(q64.shape[0]):
        idx = np.concatenate([cs[qi] for cs in candidate_sets])
        if idx.size == 0:
            out.append(idx)
            continue
        rows = np.asarray(captions.data[idx], dtype=np.float32)
        if not captions.normalized:
            rows = normalize_rows(rows)
        exact = np.clip(np.sum(q64[qi] * rows.astype(np.float64), axis=1), -1.0, 1.0)
        above = exact > cfg.tau
        idx, exact = idx[above], exact[above]
        order = np.lexsort((idx, -exact))[:k]
        out.append(idx[order])
    return out


def _tau_stripe(
    q64: np.ndarray,
    captions: EmbeddingMatrix,
    starts: list[int],
    chunk_rows: int,
    tau: float,
    delta: float,
) -> list[np.ndarray]:
    nq = q64.shape[0]
    found: list[list[np.ndarray]] = [[] for _ in range(nq)]
    for start in starts:
        block = np.asarray(captions.data[start : start + chunk_rows], dtype=np.float32)
        if not captions.normalized:
            block = normalize_rows(block, row_offset=start)
        sims = q64 @ block.astype(np.float64).T
        hits = sims > (tau - delta)
        for qi in range(nq):
            cols = np.nonzero(hits[qi])[0]
            if cols.size:
                found[qi].append(cols.astype(np.int64) + start)
    return [
        np.concatenate(lst) if lst else np.zeros(0, dtype=np.int64)
        for lst in found
    ]
