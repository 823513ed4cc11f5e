"""Figure rendering for run and eval outputs.

Figures are written as PNGs with pinned metadata and dpi, so repeated
runs with the same inputs produce byte-identical files.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
from matplotlib.patches import Rectangle

import numpy as np

from .fusion import FUSION_CELL, DetBox, FusedScene
from .synthetic import class_color

__all__ = ["render_run_figures", "render_eval_figures"]

_DPI = 110
_METADATA = {"Software": "scenestream"}


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=_DPI, metadata=_METADATA)
    plt.close(fig)
    return path


def _semantic_map(fused: FusedScene, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 6))
    if len(fused.cell_indices):
        xy = (fused.cell_indices[:, :2].astype(np.float64) + 0.5) * FUSION_CELL
        colors = np.stack([class_color(int(c)) for c in fused.cell_labels])
        ax.scatter(xy[:, 0], xy[:, 1], c=colors, s=2, marker="s", linewidths=0)
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title("fused semantic cells (top-down)")
    return _save(fig, path)


def _box_map(boxes: Sequence[DetBox], path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 6))
    for box in boxes:
        lo = box.low
        color = class_color(box.label)
        ax.add_patch(
            Rectangle(
                (lo[0], lo[1]), box.size[0], box.size[1],
                fill=False, edgecolor=color, linewidth=1.5,
            )
        )
        ax.annotate(
            f"{box.label}:{box.score:.2f}", (box.center[0], box.center[1]),
            ha="center", va="center", fontsize=7, color=color,
        )
    if boxes:
        lows = np.stack([b.low for b in boxes])
        highs = np.stack([b.high for b in boxes])
        ax.set_xlim(lows[:, 0].min() - 0.5, highs[:, 0].max() + 0.5)
        ax.set_ylim(lows[:, 1].min() - 0.5, highs[:, 1].max() + 0.5)
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title("kept boxes (top-down)")
    return _save(fig, path)


def _memory_timeline(frame_stats: Sequence[Mapping[str, int]], path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.2))
    t = np.arange(1, len(frame_stats) + 1)
    ax.plot(t, [s["cells"] for s in frame_stats], marker="o", markersize=3)
    ax.set_xlabel("frame")
    ax.set_ylabel("memory cells")
    ax.set_title("point memory growth")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def render_run_figures(result, out_dir: str | Path, task: str) -> list[Path]:
    """Write the run's figures into ``out_dir/figures``; returns the paths."""
    fig_dir = Path(out_dir) / "figures"
    paths = []
    if task == "semseg":
        paths.append(_semantic_map(result.fused, fig_dir / "semantic_map.png"))
    else:
        paths.append(_box_map(result.fused.boxes, fig_dir / "boxes.png"))
    paths.append(_memory_timeline(result.frame_stats, fig_dir / "memory_timeline.png"))
    return paths


def render_eval_figures(
    per_class: Mapping[str, Mapping[int, float]],
    out_dir: str | Path,
) -> list[Path]:
    """Bar chart per metric family: {'iou': {class: value}, ...}."""
    fig_dir = Path(out_dir) / "figures"
    paths = []
    for name, values in per_class.items():
        if not values:
            continue
        fig, ax = plt.subplots(figsize=(5, 3.2))
        classes = sorted(values)
        heights = [values[c] for c in classes]
        colors = [class_color(c) for c in classes]
        ax.bar([str(c) for c in classes], heights, color=colors)
        ax.set_ylim(0, 1.05)
        ax.set_xlabel("class")
        ax.set_ylabel(name)
        ax.set_title(f"per-class {name}")
        fig.tight_layout()
        paths.append(_save(fig, fig_dir / f"{name}.png"))
    return paths
