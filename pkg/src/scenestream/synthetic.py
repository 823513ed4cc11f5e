"""Seeded synthetic RGB-D fixtures: box-furnished rooms, orbiting camera.

Scenes are axis-aligned: a rectangular room (label 0 walls/ceiling,
label 1 floor) containing a few solid boxes with class labels >= 2.
Frames are rendered by ray/box intersection, so depth, color, and label
images are exact and fully deterministic for a given seed.

World frame: z up, room interior [0, sx] x [0, sy] x [0, sz].
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fusion import DetBox, write_box_records
from .geometry import Intrinsics, Pose
from .sequence_io import save_frame, save_intrinsics

__all__ = [
    "RoomSpec",
    "DEFAULT_NUM_CLASSES",
    "default_intrinsics",
    "class_color",
    "generate_room",
    "look_at",
    "orbit_poses",
    "render_frame",
    "generate_sequence",
]

DEFAULT_NUM_CLASSES = 6
WALL_LABEL = 0
FLOOR_LABEL = 1
FIRST_OBJECT_CLASS = 2

_EPS = 1e-9


@dataclass(frozen=True)
class RoomSpec:
    """Room extents plus solid object boxes as (center, size, label)."""

    size: tuple[float, float, float]
    objects: tuple[tuple[tuple[float, float, float], tuple[float, float, float], int], ...]

    def gt_boxes(self) -> list[DetBox]:
        return [
            DetBox(center=c, size=s, label=lab, score=1.0, timestamp=0)
            for c, s, lab in self.objects
        ]


def default_intrinsics(width: int = 64, height: int = 48) -> Intrinsics:
    """A mild wide-angle pinhole camera centered on the image."""
    focal = 0.82 * width
    return Intrinsics(focal, focal, (width - 1) / 2.0, (height - 1) / 2.0, width, height)


def class_color(label: int) -> np.ndarray:
    """Deterministic base color per class, inside [0.15, 0.95] per channel."""
    phase = np.array([0.0, 2.1, 4.2])
    return 0.55 + 0.4 * np.sin(0.9 * label + phase)


def generate_room(rng: np.random.Generator, num_classes: int = DEFAULT_NUM_CLASSES) -> RoomSpec:
    """Sample a room with 3 to 6 non-overlapping floor-standing boxes.

    Objects live in the central half of the floor plan so the orbiting
    camera ring stays outside them.
    """
    if num_classes < FIRST_OBJECT_CLASS + 1:
        raise ValueError(f"need at least {FIRST_OBJECT_CLASS + 1} classes, got {num_classes}")
    sx = float(rng.uniform(3.5, 5.0))
    sy = float(rng.uniform(3.5, 5.0))
    sz = float(rng.uniform(2.4, 3.0))

    objects: list[tuple[tuple[float, float, float], tuple[float, float, float], int]] = []
    placed: list[tuple[np.ndarray, np.ndarray]] = []
    count = int(rng.integers(3, 7))
    for _ in range(count):
        label = int(rng.integers(FIRST_OBJECT_CLASS, num_classes))
        for _attempt in range(40):
            size = rng.uniform(0.35, 0.9, 3)
            cx = rng.uniform(0.3 * sx, 0.7 * sx)
            cy = rng.uniform(0.3 * sy, 0.7 * sy)
            center = np.array([cx, cy, size[2] / 2.0])
            lo, hi = center - size / 2.0, center + size / 2.0
            if any(((lo < phi) & (hi > plo)).all() for plo, phi in placed):
                continue
            placed.append((lo, hi))
            objects.append((tuple(center.tolist()), tuple(size.tolist()), label))
            break
    return RoomSpec((sx, sy, sz), tuple(objects))


def look_at(eye: np.ndarray, target: np.ndarray, up=(0.0, 0.0, 1.0)) -> Pose:
    """Camera-to-world pose looking from ``eye`` toward ``target``.

    Camera axes: x right, y down, z forward; ``up`` is the world up.
    """
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    norm = np.linalg.norm(forward)
    if norm < _EPS:
        raise ValueError("eye and target coincide")
    forward = forward / norm
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    rnorm = np.linalg.norm(right)
    if rnorm < _EPS:  # looking straight along up: fall back to another axis
        right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
        rnorm = np.linalg.norm(right)
    right = right / rnorm
    down = np.cross(forward, right)
    rotation = np.stack([right, down, forward], axis=1)
    return Pose(rotation, eye)


def orbit_poses(spec: RoomSpec, num_frames: int, rng: np.random.Generator) -> list[Pose]:
    """Poses on a partial circular arc inside the room, looking inward.

    The arc spans 90 to 150 degrees so consecutive frames overlap heavily,
    which keeps the memory useful across the stream.
    """
    if num_frames < 1:
        raise ValueError(f"need at least one frame, got {num_frames}")
    sx, sy, _ = spec.size
    center = np.array([sx / 2.0, sy / 2.0, 0.0])
    radius = 0.42 * min(sx, sy)
    eye_height = float(rng.uniform(1.5, 1.9))
    target = center + np.array([0.0, 0.0, float(rng.uniform(0.4, 0.7))])
    start = float(rng.uniform(0.0, 2.0 * np.pi))
    span = float(np.deg2rad(rng.uniform(90.0, 150.0)))
    angles = start + span * np.linspace(0.0, 1.0, num_frames)
    poses = []
    for a in angles:
        eye = center + np.array([radius * np.cos(a), radius * np.sin(a), eye_height])
        poses.append(look_at(eye, target))
    return poses


def _slab(origin: np.ndarray, dirs: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    """Ray/box entry and exit parameters per pixel: (t_near, t_far)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - origin) / dirs
        t2 = (hi - origin) / dirs
    # a zero direction component inside the slab gives -inf/inf, outside nan;
    # nan means "parallel and outside", which must kill the hit
    tmin = np.minimum(t1, t2)
    tmax = np.maximum(t1, t2)
    tmin = np.where(np.isnan(tmin), np.inf, tmin)
    tmax = np.where(np.isnan(tmax), -np.inf, tmax)
    return tmin.max(axis=-1), tmax.min(axis=-1)


def render_frame(
    spec: RoomSpec, pose: Pose, intr: Intrinsics
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact ray-cast depth, color, and label images for one pose.

    Ray directions have camera-frame z = 1, so the ray parameter at a hit
    IS the stored z-depth.
    """
    u = np.arange(intr.width, dtype=np.float64)
    v = np.arange(intr.height, dtype=np.float64)
    uu, vv = np.meshgrid(u, v)
    dirs_cam = np.stack(
        [(uu - intr.cx) / intr.fx, (vv - intr.cy) / intr.fy, np.ones_like(uu)], axis=-1
    )
    dirs = dirs_cam @ pose.rotation.T
    origin = pose.translation

    room_lo = np.zeros(3)
    room_hi = np.asarray(spec.size, dtype=np.float64)
    _, t_exit = _slab(origin, dirs, room_lo, room_hi)
    depth = t_exit.copy()
    hit = origin + dirs * depth[..., None]
    labels = np.where(np.abs(hit[..., 2]) < 1e-6, FLOOR_LABEL, WALL_LABEL)

    for center, size, label in spec.objects:
        lo = np.asarray(center) - np.asarray(size) / 2.0
        hi = np.asarray(center) + np.asarray(size) / 2.0
        t_near, t_far = _slab(origin, dirs, lo, hi)
        front = (t_far >= t_near) & (t_near > _EPS) & (t_near < depth)
        depth = np.where(front, t_near, depth)
        labels = np.where(front, label, labels)

    shade = 0.55 + 0.45 * np.exp(-depth / 8.0)
    palette = np.stack([class_color(lab) for lab in range(labels.max() + 1)])
    color = palette[labels] * shade[..., None]
    return depth, color, labels.astype(np.int64)


def generate_sequence(
    out_dir: str | Path,
    num_frames: int,
    seed: int,
    intr: Intrinsics | None = None,
    num_classes: int = DEFAULT_NUM_CLASSES,
) -> RoomSpec:
    """Render one seeded room to a sequence directory, with ground truth.

    Writes ``intrinsics.txt``, per-frame depth/color/pose/label files, and
    ``gt_boxes.txt`` with the object boxes (score 1, timestamp 0).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    intr = intr or default_intrinsics()
    rng = np.random.default_rng(seed)
    spec = generate_room(rng, num_classes)
    poses = orbit_poses(spec, num_frames, rng)
    save_intrinsics(out_dir / "intrinsics.txt", intr)
    for i, pose in enumerate(poses, start=1):
        depth, color, labels = render_frame(spec, pose, intr)
        save_frame(out_dir, i, depth, color, pose, labels)
    write_box_records(out_dir / "gt_boxes.txt", spec.gt_boxes())
    return spec
