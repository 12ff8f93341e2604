"""Figure rendering for the report paths.

Each report command writes its delimited tables and, next to them, PNG
figures of the same numbers: the unsupported-claims distribution, the
latency and token histograms, the data-type usage breakdown, and the task
breakdowns. Rendering is deterministic (fixed metadata, no timestamps).
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .claims import EvalReport
from .metrics import HistogramSpec

_PNG_METADATA = {"Software": "chartbridge"}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, metadata=_PNG_METADATA)
    plt.close(fig)
    return path


def claims_histogram(report: EvalReport, path: str | Path, title: str = "Unsupported claims per generation") -> Path:
    counts = sorted(report.histogram)
    fractions = [report.histogram[c] for c in counts]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.bar([str(c) for c in counts], fractions, color="#4878a8")
    ax.set_xlabel("Unsupported claims per generation")
    ax.set_ylabel("Proportion of generations")
    ax.set_title(title)
    ax.set_ylim(0, 1)
    for x, frac in enumerate(fractions):
        ax.annotate(f"{frac:.0%}", (x, frac), ha="center", va="bottom", fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def metric_histogram(hist: HistogramSpec, path: str | Path, xlabel: str, title: str) -> Path:
    lows = sorted(hist.bins)
    counts = [hist.bins[low] for low in lows]
    labels = [f"{low:g}" for low in lows]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.bar(labels, counts, color="#4878a8", align="edge", width=0.9)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("Count")
    ax.set_title(title)
    if len(labels) > 20:
        for i, tick in enumerate(ax.get_xticklabels()):
            if i % max(1, len(labels) // 20):
                tick.set_visible(False)
    fig.tight_layout()
    return _save(fig, path)


def fraction_bars(
    fractions: dict[str, float], path: str | Path, title: str, xlabel: str = "Fraction of sessions"
) -> Path:
    items = sorted(fractions.items(), key=lambda kv: (-kv[1], kv[0]))
    names = [k for k, _ in items]
    values = [v for _, v in items]
    fig, ax = plt.subplots(figsize=(7, max(3.0, 0.4 * len(items) + 1.5)))
    ax.barh(range(len(items)), values, color="#4878a8")
    ax.set_yticks(range(len(items)))
    ax.set_yticklabels(names, fontsize=8)
    ax.invert_yaxis()
    ax.set_xlabel(xlabel)
    ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def count_bars(counts: dict[str, int], path: str | Path, title: str, xlabel: str = "Count") -> Path:
    return fraction_bars({k: float(v) for k, v in counts.items()}, path, title, xlabel)
