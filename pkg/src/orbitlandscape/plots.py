"""PNG renderings of the reproduction outputs (matplotlib, headless backend)."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import numpy as np


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def contour_png(path: Path, xs: np.ndarray, ys: np.ndarray, values: np.ndarray, samples: np.ndarray, title: str) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 5))
    shown = samples[: min(len(samples), 3000)]
    ax.scatter(shown[:, 0], shown[:, 1], s=1, color="0.6", alpha=0.4)
    # quantile levels resolve the shallow wells that linear spacing flattens
    levels = np.unique(np.quantile(values, np.linspace(0, 1, 27)[1:-1]))
    cs = ax.contour(xs, ys, values.T, levels=levels, cmap="viridis")
    fig.colorbar(cs, ax=ax, shrink=0.8)
    ax.set_xlim(xs[0], xs[-1])
    ax.set_ylim(ys[0], ys[-1])
    ax.set_aspect("equal")
    ax.set_title(title)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def distance_png(path: Path, traces: Mapping[str, tuple[Sequence[int], Sequence[float]]], title: str) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, (it, dist) in traces.items():
        ax.semilogy(it, np.maximum(dist, 1e-16), label=name)
    ax.set_xlabel("iteration")
    ax.set_ylabel("distance to orbit")
    ax.set_title(title)
    ax.legend()
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def basin_png(path: Path, sigmas: Sequence[float], fractions: Sequence[float], scatter: Mapping[float, np.ndarray]) -> Path:
    plt = _pyplot()
    fig, (left, right) = plt.subplots(1, 2, figsize=(10, 4))
    left.plot(sigmas, fractions, "o-")
    left.set_xlabel("noise level")
    left.set_ylabel("spurious fraction")
    left.set_ylim(0, 1)
    for sigma, dist in scatter.items():
        right.scatter(dist[:, 0], dist[:, 1], s=8, label=f"{sigma:g}")
    right.set_xlabel("distance to true-signal orbit")
    right.set_ylabel("distance to spurious orbit")
    right.legend(title="noise level")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path
