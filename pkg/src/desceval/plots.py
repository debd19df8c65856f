"""Figure rendering for the CLI report paths.

Figures are written next to the delimited outputs (SVG by default) with
matplotlib's Agg backend; the SVG date metadata is suppressed so repeated
runs produce identical files.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .classify import IterationRecord
from .pretrain import FrequencyProfile

_SAVE_KW = {"metadata": {"Date": None}, "bbox_inches": "tight"}


def track_series_figure(records: Sequence[IterationRecord], path: str | Path) -> None:
    """Accuracy and corpus-similarity curves over refinement iterations."""
    iterations = [r.iteration for r in records]
    fig, ax_acc = plt.subplots(figsize=(6.0, 3.6))
    ax_sim = ax_acc.twinx()
    ax_acc.plot(iterations, [r.accuracy for r in records], "o-", color="tab:blue", label="accuracy")
    ax_sim.plot(iterations, [r.clip_sim for r in records], "s--", color="tab:orange", label="corpus similarity")
    ax_acc.set_xlabel("iteration")
    ax_acc.set_ylabel("accuracy", color="tab:blue")
    ax_sim.set_ylabel("corpus similarity", color="tab:orange")
    ax_acc.grid(True, alpha=0.3)
    lines = ax_acc.get_lines() + ax_sim.get_lines()
    ax_acc.legend(lines, [ln.get_label() for ln in lines], loc="best", fontsize=8)
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def profile_figure(profile: FrequencyProfile, path: str | Path) -> None:
    """Descriptor counts per frequency bin with the per-bin mean similarity."""
    occupied = [(i, b) for i, b in enumerate(profile.bins) if b.count > 0]
    positions = [i for i, _ in occupied]
    counts = [b.count for _, b in occupied]
    labels = ["0" if b.hi == 0 else f"{b.lo:.3g}-{b.hi:.3g}" for _, b in occupied]

    fig, ax_count = plt.subplots(figsize=(6.0, 3.6))
    ax_count.bar(positions, counts, color="tab:gray", alpha=0.6, label="descriptors")
    ax_count.set_xticks(positions)
    ax_count.set_xticklabels(labels, rotation=30, ha="right", fontsize=7)
    ax_count.set_xlabel("match frequency bin")
    ax_count.set_ylabel("descriptor count")

    with_mean = [(i, b.mean_sim) for i, b in occupied if b.mean_sim is not None]
    if with_mean:
        ax_sim = ax_count.twinx()
        ax_sim.plot([i for i, _ in with_mean], [m for _, m in with_mean], "o-", color="tab:red",
                    label="mean pair similarity")
        ax_sim.set_ylabel("mean caption-image similarity", color="tab:red")
    ax_count.set_title(f"frequency vs similarity (Pearson r = {profile.pearson_r:.3f})", fontsize=9)
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
