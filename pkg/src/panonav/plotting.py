"""Figures for the evaluation reports, written next to their CSV tables."""

from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .evaluation import AdherenceRow  # noqa: E402

PathLike = Union[str, Path]


def _figure(width: float = 6.0, height: float = 4.0):
    fig, ax = plt.subplots(figsize=(width, height), dpi=100)
    ax.grid(True, alpha=0.3)
    for side in ("top", "right"):
        ax.spines[side].set_visible(False)
    return fig, ax


def _save(fig, path: PathLike) -> None:
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_cdf(path: PathLike, thresholds: Sequence[float],
             series: Dict[str, Tuple[List[float], int]], xlabel: str, title: str) -> None:
    fig, ax = _figure()
    for name, (fr, n) in series.items():
        ax.step(thresholds, fr, where="post", label=f"{name} (n={n})")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("fraction")
    ax.set_ylim(0, 1.02)
    ax.set_title(title)
    ax.legend(loc="lower right", fontsize=8)
    _save(fig, path)


def plot_adherence(path: PathLike, rows: Sequence[AdherenceRow]) -> None:
    fig, ax = _figure()
    w = [r.width_m for r in rows]
    ax.plot(w, [r.all_pct for r in rows], marker="o", label="all actions")
    ax.plot(w, [r.nonzero_pct for r in rows], marker="s", label="nonzero move")
    ax.set_xlabel("lane width (m)")
    ax.set_ylabel("valid %")
    ax.set_ylim(0, 102)
    ax.set_title("Road adherence by lane width")
    ax.legend(loc="lower right", fontsize=8)
    _save(fig, path)


def plot_perplexity(path: PathLike, names: Sequence[str],
                    table: Dict[Tuple, Tuple[float, int]]) -> None:
    fig, ax = _figure(7.0, 4.0)
    labels = ["/".join(str(x) for x in k) for k in table]
    ax.plot(range(len(labels)), [p for p, _ in table.values()], marker="o")
    step = max(1, len(labels) // 20)
    ax.set_xticks(range(0, len(labels), step))
    ax.set_xticklabels(labels[::step], rotation=45, ha="right", fontsize=7)
    ax.set_xlabel("/".join(names))
    ax.set_ylabel("perplexity")
    ax.set_title(f"Perplexity by {'/'.join(names)}")
    _save(fig, path)
