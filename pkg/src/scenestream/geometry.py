"""Camera geometry: depth lifting, feature sampling, memory projection.

Conventions used throughout the package:
  * pixel coordinates are (u, v) with u = column, v = row; arrays index [v, u]
  * camera frame is x right, y down, z forward; a point is visible iff z > 0
  * poses map camera coordinates to world coordinates
  * depth images store the z coordinate in meters, 0 marks invalid pixels
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional

import numpy as np

if TYPE_CHECKING:  # import only for annotations, the module does not depend on memory
    from .point_memory import VoxelMemory

__all__ = [
    "Intrinsics",
    "Pose",
    "Frame",
    "PointFeatureSet",
    "lift_depth",
    "sample_image_features",
    "project_memory_to_image",
]

ROTATION_TOL = 1e-6


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole camera parameters for a width x height image."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")

    def matrix(self) -> np.ndarray:
        return np.array([
            [self.fx, 0.0, self.cx],
            [0.0, self.fy, self.cy],
            [0.0, 0.0, 1.0],
        ])


@dataclass(frozen=True)
class Pose:
    """Camera-to-world rigid transform."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64)
        trans = np.asarray(self.translation, dtype=np.float64)
        if rot.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {rot.shape}")
        if trans.shape != (3,):
            raise ValueError(f"translation must be a 3-vector, got {trans.shape}")
        if not np.allclose(rot @ rot.T, np.eye(3), atol=ROTATION_TOL):
            raise ValueError("rotation is not orthonormal")
        if np.linalg.det(rot) < 0:
            raise ValueError("rotation has negative determinant (reflection)")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    def camera_to_world(self, pts: np.ndarray) -> np.ndarray:
        return pts @ self.rotation.T + self.translation

    def world_to_camera(self, pts: np.ndarray) -> np.ndarray:
        return (pts - self.translation) @ self.rotation


@dataclass
class Frame:
    """One RGB-D observation: depth and color images plus camera parameters.

    ``depth`` is (H, W) float meters with 0 = invalid, ``color`` is (H, W, 3)
    float, ``labels`` is an optional (H, W) integer map used by synthetic
    sequences and evaluation.
    """

    depth: np.ndarray
    color: np.ndarray
    intrinsics: Intrinsics
    pose: Pose
    timestamp: int
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float64)
        self.color = np.asarray(self.color, dtype=np.float64)
        hw = (self.intrinsics.height, self.intrinsics.width)
        if self.depth.shape != hw:
            raise ValueError(f"depth shape {self.depth.shape} does not match intrinsics {hw}")
        if self.color.shape != (*hw, 3):
            raise ValueError(f"color shape {self.color.shape} does not match intrinsics {hw}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels)
            if self.labels.shape != hw:
                raise ValueError(f"labels shape {self.labels.shape} does not match intrinsics {hw}")
        if self.timestamp < 1:
            raise ValueError(f"timestamps start at 1, got {self.timestamp}")


@dataclass
class PointFeatureSet:
    """N world-space points with per-point feature rows and pixel provenance.

    ``pixels`` holds the integer (u, v) each point was lifted from, which
    lets image features be re-sampled for the same points exactly.
    """

    points: np.ndarray
    feats: np.ndarray
    pixels: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.feats = np.asarray(self.feats, dtype=np.float64)
        self.pixels = np.asarray(self.pixels, dtype=np.int64)
        n = len(self.points)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ValueError(f"points must be (N, 3), got {self.points.shape}")
        if self.feats.ndim != 2 or len(self.feats) != n:
            raise ValueError(f"feats must be (N, C), got {self.feats.shape} for N={n}")
        if self.pixels.shape != (n, 2):
            raise ValueError(f"pixels must be (N, 2), got {self.pixels.shape}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels)
            if self.labels.shape != (n,):
                raise ValueError(f"labels must be (N,), got {self.labels.shape}")

    def __len__(self) -> int:
        return int(len(self.points))


def lift_depth(frame: Frame, max_depth: float | None = None) -> PointFeatureSet:
    """Back-project valid depth pixels to world points carrying their color.

    Pixels with depth 0 (or beyond ``max_depth``) are skipped. Points come
    out in row-major pixel order. Per-point features are the 3 color
    channels of the source pixel; labels are carried along when present.
    """
    intr = frame.intrinsics
    valid = frame.depth > 0
    if max_depth is not None:
        valid &= frame.depth <= max_depth
    v, u = np.nonzero(valid)
    z = frame.depth[v, u]
    x = (u - intr.cx) / intr.fx * z
    y = (v - intr.cy) / intr.fy * z
    cam = np.stack([x, y, z], axis=1)
    world = frame.pose.camera_to_world(cam)
    feats = frame.color[v, u]
    pixels = np.stack([u, v], axis=1)
    labels = frame.labels[v, u] if frame.labels is not None else None
    return PointFeatureSet(world, feats, pixels, labels)


def sample_image_features(
    points: np.ndarray,
    image_feats: np.ndarray,
    intrinsics: Intrinsics,
    pose: Pose,
) -> np.ndarray:
    """Sample an (H, W, C) feature map at the nearest pixel of each world point.

    Points behind the camera or projecting outside the image get a zero
    feature row. Points lifted by :func:`lift_depth` land back on their
    source pixel exactly.
    """
    points = np.asarray(points, dtype=np.float64)
    image_feats = np.asarray(image_feats, dtype=np.float64)
    if image_feats.ndim != 3:
        raise ValueError(f"expected (H, W, C) feature map, got shape {image_feats.shape}")
    h, w, c = image_feats.shape
    if (h, w) != (intrinsics.height, intrinsics.width):
        raise ValueError(
            f"feature map {h}x{w} does not match intrinsics {intrinsics.height}x{intrinsics.width}"
        )

    cam = pose.world_to_camera(points)
    out = np.zeros((len(points), c))
    front = cam[:, 2] > 0
    if not front.any():
        return out
    z = cam[front, 2]
    u = np.rint(cam[front, 0] / z * intrinsics.fx + intrinsics.cx).astype(np.int64)
    v = np.rint(cam[front, 1] / z * intrinsics.fy + intrinsics.cy).astype(np.int64)
    inside = (u >= 0) & (u < w) & (v >= 0) & (v < h)
    rows = np.nonzero(front)[0][inside]
    out[rows] = image_feats[v[inside], u[inside]]
    return out


def project_memory_to_image(
    memory: "VoxelMemory",
    intrinsics: Intrinsics,
    pose: Pose,
) -> tuple[np.ndarray, np.ndarray]:
    """Project voxel cell centers into the image plane.

    Returns unique (u, v) pixel coordinates and one feature row per pixel.
    Cells landing on the same pixel are merged channel-wise by max. Cells
    behind the camera or outside the image are dropped. No occlusion
    reasoning: every cell that projects inside the frustum contributes.
    """
    indices, feats, _ = memory.arrays()
    if len(indices) == 0:
        return np.zeros((0, 2), dtype=np.int64), np.zeros((0, feats.shape[1]))

    centers = (indices.astype(np.float64) + 0.5) * memory.voxel_size
    cam = pose.world_to_camera(centers)
    front = cam[:, 2] > 0
    cam = cam[front]
    feats = feats[front]
    if len(cam) == 0:
        return np.zeros((0, 2), dtype=np.int64), np.zeros((0, feats.shape[1]))

    z = cam[:, 2]
    u = np.rint(cam[:, 0] / z * intrinsics.fx + intrinsics.cx).astype(np.int64)
    v = np.rint(cam[:, 1] / z * intrinsics.fy + intrinsics.cy).astype(np.int64)
    inside = (u >= 0) & (u < intrinsics.width) & (v >= 0) & (v < intrinsics.height)
    if not inside.any():
        return np.zeros((0, 2), dtype=np.int64), np.zeros((0, feats.shape[1]))

    pix = np.stack([u[inside], v[inside]], axis=1)
    feats = feats[inside]
    uniq, inverse = np.unique(pix, axis=0, return_inverse=True)
    merged = np.full((len(uniq), feats.shape[1]), -np.inf)
    np.maximum.at(merged, inverse, feats)
    return uniq, merged
