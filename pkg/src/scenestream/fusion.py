"""Fuse per-frame predictions into scene-level outputs.

Semantic labels: all frames' points are binned into a fixed 2 cm grid,
per-cell class scores are max-pooled channel-wise across frames, and each
point takes the argmax of its own cell.

Boxes: greedy per-class non-maximum suppression where, during each
pairwise comparison only, the box from the newer frame gets a small
score bump. Survivors keep their original scores.

Instances: each surviving box crops the cells of the voxel memory whose
centers fall inside it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .point_memory import VoxelMemory
from .sequence_io import atomic_write_text

__all__ = [
    "FUSION_CELL",
    "SemanticPrediction",
    "DetBox",
    "FusedScene",
    "fuse_semantic",
    "aabb_iou",
    "fuse_boxes",
    "extract_instances",
    "write_semantic_records",
    "read_semantic_records",
    "write_box_records",
    "read_box_records",
    "write_instance_records",
    "read_instance_records",
    "DEFAULT_DELTA",
    "DEFAULT_IOU_THRESHOLD",
]

# The fusion grid is intentionally finer than the memory voxels and fixed.
FUSION_CELL = 0.02

DEFAULT_DELTA = 0.03
DEFAULT_IOU_THRESHOLD = 0.5


@dataclass
class SemanticPrediction:
    """One frame's per-point class scores: (N, 3) points, (N, K) logits."""

    points: np.ndarray
    logits: np.ndarray
    timestamp: int

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.logits = np.asarray(self.logits, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ValueError(f"points must be (N, 3), got {self.points.shape}")
        if self.logits.ndim != 2 or len(self.logits) != len(self.points):
            raise ValueError(f"logits must be (N, K) matching points, got {self.logits.shape}")

    def __len__(self) -> int:
        return int(len(self.points))


@dataclass(frozen=True)
class DetBox:
    """Axis-aligned box: center, size, class, confidence, source frame."""

    center: tuple[float, float, float]
    size: tuple[float, float, float]
    label: int
    score: float
    timestamp: int

    def __post_init__(self):
        if len(self.center) != 3 or len(self.size) != 3:
            raise ValueError("center and size must be 3-vectors")
        if any(s <= 0 for s in self.size):
            raise ValueError(f"box size must be positive, got {self.size}")

    @property
    def low(self) -> np.ndarray:
        return np.asarray(self.center) - np.asarray(self.size) / 2.0

    @property
    def high(self) -> np.ndarray:
        return np.asarray(self.center) + np.asarray(self.size) / 2.0

    @property
    def volume(self) -> float:
        return float(np.prod(self.size))


@dataclass
class FusedScene:
    """Scene-level outputs: labeled fusion cells, kept boxes, instance cells."""

    cell_indices: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))
    cell_labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    point_labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    boxes: list[DetBox] = field(default_factory=list)
    instances: list[np.ndarray] = field(default_factory=list)


def fuse_semantic(predictions: Sequence[SemanticPrediction]) -> FusedScene:
    """Max-pool per-frame class scores on a 2 cm grid and label every point.

    Returns cell indices with their argmax labels plus one label per input
    point (frames concatenated in order). Ties take the lower class index,
    matching ``np.argmax``.
    """
    frames = [p for p in predictions if len(p)]
    if not frames:
        return FusedScene()
    k = frames[0].logits.shape[1]
    if any(p.logits.shape[1] != k for p in frames):
        raise ValueError("frames disagree on class count")

    points = np.concatenate([p.points for p in frames])
    logits = np.concatenate([p.logits for p in frames])
    cells = np.floor(points / FUSION_CELL).astype(np.int64)
    uniq, inverse = np.unique(cells, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    pooled = np.full((len(uniq), k), -np.inf)
    np.maximum.at(pooled, inverse, logits)
    cell_labels = pooled.argmax(axis=1)
    return FusedScene(
        cell_indices=uniq,
        cell_labels=cell_labels,
        point_labels=cell_labels[inverse],
    )


def aabb_iou(a: DetBox, b: DetBox) -> float:
    """Intersection over union of two axis-aligned boxes."""
    lo = np.maximum(a.low, b.low)
    hi = np.minimum(a.high, b.high)
    edges = np.clip(hi - lo, 0.0, None)
    inter = float(np.prod(edges))
    union = a.volume + b.volume - inter
    return inter / union if union > 0 else 0.0


def _effective(box: DetBox, other: DetBox, delta: float) -> float:
    """Score of ``box`` when dueling ``other``: newer frame gets the bump."""
    return box.score + (delta if box.timestamp > other.timestamp else 0.0)


def fuse_boxes(
    boxes: Iterable[DetBox],
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
    delta: float = DEFAULT_DELTA,
) -> list[DetBox]:
    """Greedy per-class NMS favoring recent frames on overlap duels.

    Per class, boxes are visited by (score desc, timestamp desc, index).
    The front box duels every active box it overlaps beyond the IoU
    threshold; in each duel the newer box's score counts as score + delta.
    If the front box wins every duel it is kept and its colliders are
    suppressed; otherwise only the front box is dropped (a collider that
    out-scored it gets its own turn later). Duel ties go to the newer box,
    then the earlier list position. Survivors keep their original scores.

    With delta = 0 this reduces to classic greedy NMS under the same
    visiting order.
    """
    if not 0 <= iou_threshold <= 1:
        raise ValueError(f"IoU threshold must be in [0, 1], got {iou_threshold}")
    if delta < 0:
        raise ValueError(f"delta must be >= 0, got {delta}")

    boxes = list(boxes)
    kept: list[tuple[int, DetBox]] = []
    for label in sorted({b.label for b in boxes}):
        active = [
            (i, b) for i, b in enumerate(boxes) if b.label == label
        ]
        active.sort(key=lambda ib: (-ib[1].score, -ib[1].timestamp, ib[0]))
        while active:
            front_pos, front = active[0]
            colliders = [
                (pos, cand) for pos, cand in active[1:]
                if aabb_iou(front, cand) > iou_threshold
            ]
            wins = True
            for pos, cand in colliders:
                fe = _effective(front, cand, delta)
                ce = _effective(cand, front, delta)
                if ce > fe or (
                    ce == fe
                    and (cand.timestamp, -pos) > (front.timestamp, -front_pos)
                ):
                    wins = False
                    break
            if wins:
                kept.append((front_pos, front))
                dead = {front_pos} | {pos for pos, _ in colliders}
            else:
                dead = {front_pos}
            active = [(pos, b) for pos, b in active if pos not in dead]
    kept.sort(key=lambda ib: ib[0])
    return [b for _, b in kept]


def extract_instances(boxes: Sequence[DetBox], memory: VoxelMemory) -> list[np.ndarray]:
    """Per box, the memory cell indices whose centers fall inside it (closed)."""
    indices, _, _ = memory.arrays()
    out: list[np.ndarray] = []
    if len(indices) == 0:
        return [np.zeros((0, 3), dtype=np.int64) for _ in boxes]
    centers = (indices.astype(np.float64) + 0.5) * memory.voxel_size
    for box in boxes:
        inside = (
            (np.abs(centers - np.asarray(box.center)) <= np.asarray(box.size) / 2.0)
        ).all(axis=1)
        out.append(indices[inside])
    return out


# --------------------------------------------------------------------------
# Delimited record formats. Floats are written with repr-grade precision
# (%.17g) so a write/read round trip is exact.
# --------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_semantic_records(path: str | Path, indices: np.ndarray, labels: np.ndarray) -> None:
    """One line per fusion cell: ``ix iy iz label``."""
    if len(indices) != len(labels):
        raise ValueError(f"indices and labels disagree: {len(indices)} vs {len(labels)}")
    lines = [
        f"{int(ix)} {int(iy)} {int(iz)} {int(lab)}"
        for (ix, iy, iz), lab in zip(np.asarray(indices).tolist(), np.asarray(labels).tolist())
    ]
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def read_semantic_records(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    indices, labels = [], []
    for ln, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ValueError(f"{path}:{ln}: expected 4 fields, got {len(parts)}")
        indices.append([int(parts[0]), int(parts[1]), int(parts[2])])
        labels.append(int(parts[3]))
    return (
        np.asarray(indices, dtype=np.int64).reshape(-1, 3),
        np.asarray(labels, dtype=np.int64),
    )


def write_box_records(path: str | Path, boxes: Sequence[DetBox]) -> None:
    """One line per box: ``cx cy cz sx sy sz class score timestamp``."""
    lines = [
        " ".join(
            [_fmt(c) for c in b.center]
            + [_fmt(s) for s in b.size]
            + [str(b.label), _fmt(b.score), str(b.timestamp)]
        )
        for b in boxes
    ]
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def read_box_records(path: str | Path) -> list[DetBox]:
    boxes = []
    for ln, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 9:
            raise ValueError(f"{path}:{ln}: expected 9 fields, got {len(parts)}")
        boxes.append(
            DetBox(
                center=(float(parts[0]), float(parts[1]), float(parts[2])),
                size=(float(parts[3]), float(parts[4]), float(parts[5])),
                label=int(parts[6]),
                score=float(parts[7]),
                timestamp=int(parts[8]),
            )
        )
    return boxes


def write_instance_records(path: str | Path, instances: Sequence[np.ndarray]) -> None:
    """One line per member cell: ``box_index ix iy iz``."""
    lines = []
    for bi, cells in enumerate(instances):
        for ix, iy, iz in np.asarray(cells, dtype=np.int64).reshape(-1, 3).tolist():
            lines.append(f"{bi} {ix} {iy} {iz}")
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def read_instance_records(path: str | Path) -> list[np.ndarray]:
    rows: list[tuple[int, int, int, int]] = []
    for ln, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ValueError(f"{path}:{ln}: expected 4 fields, got {len(parts)}")
        rows.append((int(parts[0]), int(parts[1]), int(parts[2]), int(parts[3])))
    count = max((r[0] for r in rows), default=-1) + 1
    out = [np.zeros((0, 3), dtype=np.int64) for _ in range(count)]
    for bi in range(count):
        members = [r[1:] for r in rows if r[0] == bi]
        if members:
            out[bi] = np.asarray(members, dtype=np.int64)
    return out
