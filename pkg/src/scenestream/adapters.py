"""Residual adapters that refine per-frame features against the memories.

Both adapters are residual branches ending in parameters that start at
zero, so an untrained adapter leaves its input bit-for-bit unchanged
while the memories still update underneath.

Point path: voxelize the frame, merge it into the voxel memory, query
the memory in a scaled box around the frame, run a sparse 3D convolution
over the queried cells evaluated at the frame's own cells, scatter the
per-cell result back to the points, add.

Image path: embed with R1 and swap the leading channel slice with the
previous frame's (channel shift), project the point memory into the
frame to bridge 3D context into 2D, refine with a dense convolution,
map back with R2, add.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Intrinsics, Pose, project_memory_to_image
from .image_memory import DEFAULT_TAU, ImageMemory, embed_and_shift, recombine
from .numerics import (
    ConvWeights,
    LinearMap,
    SparseTensor,
    apply_linear,
    dense_conv2d,
    sparse_conv2d,
    sparse_conv3d,
)
from .point_memory import VoxelMemory, bucket_points, voxelize

__all__ = [
    "PointAdapter",
    "ImageAdapter",
    "adapt_points",
    "adapt_image",
    "densify",
    "DEFAULT_SCALE",
]

DEFAULT_SCALE = 2.5


@dataclass
class PointAdapter:
    """Sparse 3D convolution applied residually to voxel-pooled point features."""

    conv: ConvWeights
    scale: float = DEFAULT_SCALE

    def __post_init__(self):
        if len(self.conv.window) != 3:
            raise ValueError(f"point adapter needs a 3D window, got {self.conv.window}")
        if self.conv.c_in != self.conv.c_out:
            raise ValueError(
                f"point adapter must preserve width, got {self.conv.c_in} -> {self.conv.c_out}"
            )
        if self.scale <= 0:
            raise ValueError(f"scale must be positive, got {self.scale}")

    @classmethod
    def zero_init(cls, channels: int, window: tuple[int, int, int] = (3, 3, 3),
                  scale: float = DEFAULT_SCALE) -> "PointAdapter":
        return cls(ConvWeights.zeros(window, channels, channels), scale)

    @classmethod
    def seeded(cls, channels: int, seed: int, window: tuple[int, int, int] = (3, 3, 3),
               scale: float = DEFAULT_SCALE) -> "PointAdapter":
        return cls(ConvWeights.seeded(window, channels, channels, seed), scale)


@dataclass
class ImageAdapter:
    """Channel-shift plus memory-bridged 2D refinement, applied residually.

    ``r1`` embeds C -> C', ``conv`` refines C' -> C' densely, ``bridge``
    is a sparse 2D convolution over projected memory pixels (C' -> C'),
    ``r2`` maps C' -> C back onto the input width.
    """

    r1: LinearMap
    r2: LinearMap
    conv: ConvWeights
    bridge: ConvWeights
    tau: int = DEFAULT_TAU

    def __post_init__(self):
        if self.tau < 1:
            raise ValueError(f"tau must be >= 1, got {self.tau}")
        cp = self.r1.c_out
        if cp % self.tau != 0:
            raise ValueError(f"embed dim {cp} not divisible by tau {self.tau}")
        if self.r2.c_in != cp:
            raise ValueError(f"r2 must map from embed dim {cp}, got {self.r2.c_in}")
        if self.r2.c_out != self.r1.c_in:
            raise ValueError(
                f"r2 must map back to input width {self.r1.c_in}, got {self.r2.c_out}"
            )
        if len(self.conv.window) != 2 or self.conv.c_in != cp or self.conv.c_out != cp:
            raise ValueError("dense refinement must be a 2D conv preserving the embed dim")
        if len(self.bridge.window) != 2 or self.bridge.c_in != cp or self.bridge.c_out != cp:
            raise ValueError("memory bridge must be a 2D conv preserving the embed dim")

    @property
    def embed_dim(self) -> int:
        return self.r1.c_out

    @classmethod
    def zero_init(cls, channels: int, embed_dim: int | None = None, tau: int = DEFAULT_TAU,
                  window: tuple[int, int] = (3, 3)) -> "ImageAdapter":
        """Adapter whose output path (r2) starts at zero: exact identity.

        R1 and the inner convolutions start at zero too; only R2 being
        zero is required for the identity, the rest keeps the memory
        content itself zero until weights are loaded or seeded.
        """
        cp = channels if embed_dim is None else embed_dim
        return cls(
            r1=LinearMap.zeros(channels, cp),
            r2=LinearMap.zeros(cp, channels),
            conv=ConvWeights.zeros(window, cp, cp),
            bridge=ConvWeights.zeros(window, cp, cp),
            tau=tau,
        )

    @classmethod
    def seeded(cls, channels: int, seed: int, embed_dim: int | None = None,
               tau: int = DEFAULT_TAU, window: tuple[int, int] = (3, 3)) -> "ImageAdapter":
        cp = channels if embed_dim is None else embed_dim
        return cls(
            r1=LinearMap.seeded(channels, cp, seed),
            r2=LinearMap.seeded(cp, channels, seed + 1),
            conv=ConvWeights.seeded(window, cp, cp, seed + 2),
            bridge=ConvWeights.seeded(window, cp, cp, seed + 3),
            tau=tau,
        )


def adapt_points(
    points: np.ndarray,
    feats: np.ndarray,
    memory: VoxelMemory,
    adapter: PointAdapter,
    timestamp: int,
) -> np.ndarray:
    """Merge the frame into the voxel memory and refine its point features.

    The frame is voxelized and merged first, so the convolution sees the
    frame's own cells at the new timestamp alongside surviving history.
    The sparse convolution runs over the neighbor-query cells but is
    evaluated only at the frame's cells; each point receives its cell's
    output as a residual.
    """
    feats = np.asarray(feats, dtype=np.float64)
    if feats.shape[1] != adapter.conv.c_in:
        raise ValueError(
            f"feature width {feats.shape[1]} does not match adapter width {adapter.conv.c_in}"
        )
    uniq, inverse = bucket_points(points, memory.voxel_size)
    vox = voxelize(points, feats, memory.voxel_size, timestamp)
    memory.merge(vox)
    view = memory.neighbor_query(vox.indices, adapter.scale)
    context = SparseTensor(view.indices, view.feats)
    per_cell = sparse_conv3d(context, adapter.conv, uniq)
    return feats + per_cell[inverse]


def densify(
    pixels: np.ndarray,
    feats: np.ndarray,
    height: int,
    width: int,
) -> np.ndarray:
    """Scatter (K, C) rows at (u, v) pixels into a zero (H, W, C) grid."""
    pixels = np.asarray(pixels, dtype=np.int64)
    feats = np.asarray(feats, dtype=np.float64)
    if pixels.ndim != 2 or pixels.shape[1] != 2:
        raise ValueError(f"pixels must be (K, 2), got {pixels.shape}")
    if len(pixels) != len(feats):
        raise ValueError(f"pixels and feats disagree: {len(pixels)} vs {len(feats)}")
    grid = np.zeros((height, width, feats.shape[1] if feats.ndim == 2 else 0))
    if len(pixels) == 0:
        return grid
    u, v = pixels[:, 0], pixels[:, 1]
    if (u < 0).any() or (u >= width).any() or (v < 0).any() or (v >= height).any():
        raise ValueError("pixel coordinates outside the image")
    grid[v, u] = feats
    return grid


def _fit_channels(feats: np.ndarray, width: int) -> np.ndarray:
    """Zero-pad or truncate feature rows to ``width`` channels."""
    have = feats.shape[1]
    if have == width:
        return feats
    if have > width:
        return feats[:, :width]
    out = np.zeros((len(feats), width))
    out[:, :have] = feats
    return out


def adapt_image(
    image_feats: np.ndarray,
    image_memory: ImageMemory,
    point_memory: VoxelMemory,
    adapter: ImageAdapter,
    intrinsics: Intrinsics,
    pose: Pose,
    timestamp: int,
) -> tuple[np.ndarray, ImageMemory]:
    """Refine an (H, W, C) feature map against both memories.

    Returns the refined map and the new image memory. The point memory is
    only read (project it before merging the current frame). Pipeline:
    embed and channel-shift, recombine with the previous slice, add the
    bridged 3D context at projected memory pixels, dense-convolve, map
    back through R2, add to the input.
    """
    image_feats = np.asarray(image_feats, dtype=np.float64)
    if image_feats.ndim != 3:
        raise ValueError(f"expected (H, W, C) features, got shape {image_feats.shape}")
    h, w, c = image_feats.shape
    if c != adapter.r1.c_in:
        raise ValueError(f"feature width {c} does not match adapter width {adapter.r1.c_in}")
    if image_memory.tau != adapter.tau or image_memory.embed_dim != adapter.embed_dim:
        raise ValueError(
            "image memory shape does not match adapter: "
            f"tau {image_memory.tau} vs {adapter.tau}, "
            f"embed {image_memory.embed_dim} vs {adapter.embed_dim}"
        )
    if timestamp <= image_memory.timestamp:
        raise ValueError(
            f"timestamps must increase: memory at {image_memory.timestamp}, frame at {timestamp}"
        )

    retained, new_memory = embed_and_shift(image_feats, adapter.r1, adapter.tau, timestamp)
    mixed = recombine(retained, image_memory)

    pixels, cell_feats = project_memory_to_image(point_memory, intrinsics, pose)
    if len(pixels):
        bridged = sparse_conv2d(
            SparseTensor(pixels, _fit_channels(cell_feats, adapter.embed_dim)),
            adapter.bridge,
            pixels,
        )
        mixed = mixed + densify(pixels, bridged, h, w)

    refined = dense_conv2d(mixed, adapter.conv)
    residual = apply_linear(refined, adapter.r2)
    return image_feats + residual, new_memory
