"""Matplotlib figure rendering for the CLI report paths.

Figures are convenience renderings written next to the delimited outputs;
the numeric files remain the authoritative artifacts.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .core import AbundanceField, ChangeMap
from .metrics import MetricsReport


def abundance_figure(field: AbundanceField, geometry: tuple[int, int], path) -> Path:
    """Grid of per-frame, per-material abundance maps."""
    width, height = geometry
    frames, mats = field.frames, field.materials
    fig, axes = plt.subplots(frames, mats, figsize=(1.9 * mats, 1.4 * frames),
                             squeeze=False, constrained_layout=True)
    for t in range(frames):
        for p in range(mats):
            ax = axes[t][p]
            ax.imshow(field.abundances[t, :, p].reshape(height, width),
                      vmin=0.0, vmax=1.0, cmap="gray", aspect="auto", interpolation="nearest")
            ax.set_xticks([])
            ax.set_yticks([])
            if t == 0:
                ax.set_title(f"m{p + 1}", fontsize=8)
            if p == 0:
                ax.set_ylabel(f"t{t + 1}", fontsize=8)
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def change_figure(changes: ChangeMap, geometry: tuple[int, int], path) -> Path:
    """One binary panel per frame of detected abrupt changes."""
    width, height = geometry
    frames = changes.frames
    fig, axes = plt.subplots(1, frames, figsize=(1.9 * frames, 1.6),
                             squeeze=False, constrained_layout=True)
    for t in range(frames):
        ax = axes[0][t]
        ax.imshow(changes.flags[t].reshape(height, width), vmin=0, vmax=1,
                  cmap="gray", aspect="auto", interpolation="nearest")
        ax.set_xticks([])
        ax.set_yticks([])
        ax.set_title(f"t{t + 1}", fontsize=8)
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def metrics_figure(report: MetricsReport, path) -> Path:
    """Bar chart of the defined metric values."""
    items = [(k, v) for k, v in report.as_dict().items()
             if v is not None and not math.isnan(v)]
    fig, ax = plt.subplots(figsize=(1.2 * max(3, len(items)), 3.0), constrained_layout=True)
    if items:
        names, values = zip(*items)
        ax.bar(names, values, color="#4878b0")
        ax.tick_params(axis="x", rotation=30)
    ax.set_ylabel("value")
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def bench_figure(rows: list[dict], path) -> Path:
    """Wall time against library size, one line per (algorithm, P)."""
    fig, ax = plt.subplots(figsize=(5.5, 3.6), constrained_layout=True)
    series: dict[tuple[str, int], list[tuple[int, float]]] = {}
    for row in rows:
        wall = row["wall_time_s"]
        if not isinstance(wall, float) or math.isinf(wall):
            continue
        series.setdefault((row["algorithm"], row["P"]), []).append((row["C_p"], wall))
    for (algo, p), points in sorted(series.items()):
        points.sort()
        ax.plot([c for c, _ in points], [w for _, w in points],
                marker="o", label=f"{algo} P={p}")
    ax.set_xlabel("signatures per material")
    ax.set_ylabel("wall time [s]")
    ax.set_yscale("log")
    if series:
        ax.legend(fontsize=8)
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
