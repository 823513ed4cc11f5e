"""Timestamped sparse voxel memory for streamed point features.

Points are binned by ``floor(coord / voxel_size)`` with per-cell feature
means. The memory merges each new frame by channel-wise max, stamps every
touched cell with the frame's timestamp, and evicts cells older than the
sliding window only when the cell count exceeds capacity.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

__all__ = [
    "VoxelizedFrame",
    "VoxelMemory",
    "voxelize",
    "bucket_points",
    "DEFAULT_VOXEL_SIZE",
    "DEFAULT_QUEUE_LENGTH",
    "DEFAULT_CAPACITY",
]

DEFAULT_VOXEL_SIZE = 0.08
DEFAULT_QUEUE_LENGTH = 50
DEFAULT_CAPACITY = 200_000


def bucket_points(
    points: np.ndarray, voxel_size: float
) -> tuple[np.ndarray, np.ndarray]:
    """Assign each point its voxel index; return (unique indices, inverse).

    Unique indices come out lexicographically sorted, matching
    ``np.unique`` order, so repeated calls on the same cloud agree.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ValueError(f"points must be (N, 3), got {points.shape}")
    if voxel_size <= 0:
        raise ValueError(f"voxel size must be positive, got {voxel_size}")
    cells = np.floor(points / voxel_size).astype(np.int64)
    uniq, inverse = np.unique(cells, axis=0, return_inverse=True)
    return uniq, inverse.reshape(-1)


@dataclass
class VoxelizedFrame:
    """One frame reduced to unique voxel cells with mean features."""

    indices: np.ndarray
    feats: np.ndarray
    timestamp: int

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.feats = np.asarray(self.feats, dtype=np.float64)
        if self.indices.ndim != 2 or self.indices.shape[1] != 3:
            raise ValueError(f"indices must be (K, 3), got {self.indices.shape}")
        if self.feats.ndim != 2 or len(self.feats) != len(self.indices):
            raise ValueError(
                f"feats must be (K, C) matching indices, got {self.feats.shape}"
            )
        if self.timestamp < 1:
            raise ValueError(f"timestamps start at 1, got {self.timestamp}")

    def __len__(self) -> int:
        return int(len(self.indices))


def voxelize(points: np.ndarray, feats: np.ndarray, voxel_size: float, timestamp: int) -> VoxelizedFrame:
    """Bin points into voxels, averaging the features of co-located points."""
    feats = np.asarray(feats, dtype=np.float64)
    uniq, inverse = bucket_points(points, voxel_size)
    if feats.ndim != 2 or len(feats) != len(np.asarray(points)):
        raise ValueError(f"feats must be (N, C) matching points, got {feats.shape}")
    mean = np.zeros((len(uniq), feats.shape[1]))
    np.add.at(mean, inverse, feats)
    counts = np.bincount(inverse, minlength=len(uniq)).astype(np.float64)
    mean /= counts[:, None]
    return VoxelizedFrame(uniq, mean, timestamp)


class VoxelMemory:
    """Sliding-window sparse voxel memory with channel-max merging.

    Cells live in a dict keyed by integer (ix, iy, iz). Merging a frame:

      * new cells are inserted with the frame's features and timestamp
      * existing cells take the channel-wise max of old and new features,
        and their timestamp advances to the frame's
      * afterwards, if the cell count exceeds ``capacity``, cells with
        timestamp < t - queue_length + 1 are evicted (never touched cells)

    Timestamps must be strictly increasing across merges; gaps are fine.
    """

    def __init__(
        self,
        voxel_size: float = DEFAULT_VOXEL_SIZE,
        queue_length: int = DEFAULT_QUEUE_LENGTH,
        capacity: int = DEFAULT_CAPACITY,
    ):
        if voxel_size <= 0:
            raise ValueError(f"voxel size must be positive, got {voxel_size}")
        if queue_length < 1:
            raise ValueError(f"queue length must be >= 1, got {queue_length}")
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.voxel_size = float(voxel_size)
        self.queue_length = int(queue_length)
        self.capacity = int(capacity)
        self.time = 0
        self._cells: dict[tuple[int, int, int], tuple[np.ndarray, int]] = {}

    def __len__(self) -> int:
        return len(self._cells)

    @property
    def feat_dim(self) -> Optional[int]:
        for feat, _ in self._cells.values():
            return int(len(feat))
        return None

    def merge(self, frame: VoxelizedFrame) -> None:
        """Fold one voxelized frame into the memory (see class docstring)."""
        if frame.timestamp <= self.time:
            raise ValueError(
                f"timestamps must increase: memory at {self.time}, frame at {frame.timestamp}"
            )
        dim = self.feat_dim
        if dim is not None and frame.feats.shape[1] != dim:
            raise ValueError(
                f"feature width changed: memory holds {dim}, frame brings {frame.feats.shape[1]}"
            )

        for idx, feat in zip(map(tuple, frame.indices.tolist()), frame.feats):
            held = self._cells.get(idx)
            if held is None:
                self._cells[idx] = (feat.copy(), frame.timestamp)
            else:
                self._cells[idx] = (np.maximum(held[0], feat), frame.timestamp)
        self.time = int(frame.timestamp)

        if len(self._cells) > self.capacity:
            horizon = self.time - self.queue_length + 1
            stale = [k for k, (_, ts) in self._cells.items() if ts < horizon]
            for k in stale:
                del self._cells[k]

    def neighbor_query(self, frame_indices: np.ndarray, scale: float) -> "VoxelMemoryView":
        """Cells inside the frame's bounding box scaled about its center.

        The box of the frame's indices is scaled by ``scale`` around its
        center; the low corner is floored and the high corner is ceiled,
        both inclusive. Returns indices sorted lexicographically with their
        features and timestamps.
        """
        frame_indices = np.asarray(frame_indices, dtype=np.int64)
        if frame_indices.ndim != 2 or frame_indices.shape[1] != 3:
            raise ValueError(f"indices must be (K, 3), got {frame_indices.shape}")
        if scale < 1:
            raise ValueError(f"scale must be >= 1, got {scale}")
        if len(frame_indices) == 0 or not self._cells:
            return VoxelMemoryView.empty(self.feat_dim or 0)

        lo = frame_indices.min(axis=0).astype(np.float64)
        hi = frame_indices.max(axis=0).astype(np.float64)
        center = (lo + hi) / 2.0
        half = (hi - lo) / 2.0
        qlo = np.floor(center - scale * half).astype(np.int64)
        qhi = np.ceil(center + scale * half).astype(np.int64)

        keys = np.array(list(self._cells.keys()), dtype=np.int64)
        inside = ((keys >= qlo) & (keys <= qhi)).all(axis=1)
        if not inside.any():
            return VoxelMemoryView.empty(self.feat_dim or 0)
        sel = keys[inside]
        order = np.lexsort((sel[:, 2], sel[:, 1], sel[:, 0]))
        sel = sel[order]
        feats = np.stack([self._cells[tuple(k)][0] for k in sel.tolist()])
        stamps = np.array([self._cells[tuple(k)][1] for k in sel.tolist()], dtype=np.int64)
        return VoxelMemoryView(sel, feats, stamps)

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """All cells as (indices (K,3), feats (K,C), timestamps (K,)), sorted."""
        if not self._cells:
            return (
                np.zeros((0, 3), dtype=np.int64),
                np.zeros((0, self.feat_dim or 0)),
                np.zeros(0, dtype=np.int64),
            )
        keys = np.array(list(self._cells.keys()), dtype=np.int64)
        order = np.lexsort((keys[:, 2], keys[:, 1], keys[:, 0]))
        keys = keys[order]
        feats = np.stack([self._cells[tuple(k)][0] for k in keys.tolist()])
        stamps = np.array([self._cells[tuple(k)][1] for k in keys.tolist()], dtype=np.int64)
        return keys, feats, stamps

    def stats(self) -> dict[str, Optional[int]]:
        """Cell count plus oldest and newest held timestamps (None when empty)."""
        stamps = [ts for _, ts in self._cells.values()]
        return {
            "cells": len(self._cells),
            "oldest": min(stamps) if stamps else None,
            "newest": max(stamps) if stamps else None,
        }

    # ------------------------------------------------------------------
    # Snapshots: little-endian binary, magic "SSM1".
    #   magic 4s, voxel_size f64, queue_length u32, capacity u64, time i64,
    #   feat_dim u32, cell_count u64, then per cell 3 x i64 index,
    #   i64 timestamp, feat_dim x f64 features.
    # ------------------------------------------------------------------

    _MAGIC = b"SSM1"
    _HEADER = struct.Struct("<4sdIQqIQ")

    def save(self, path: str | Path) -> None:
        indices, feats, stamps = self.arrays()
        dim = feats.shape[1]
        header = self._HEADER.pack(
            self._MAGIC, self.voxel_size, self.queue_length, self.capacity,
            self.time, dim, len(indices),
        )
        body = np.concatenate(
            [
                indices.astype("<i8").view(np.uint8).reshape(len(indices), -1),
                stamps.astype("<i8")[:, None].view(np.uint8).reshape(len(indices), -1),
                feats.astype("<f8").view(np.uint8).reshape(len(indices), -1),
            ],
            axis=1,
        ).tobytes() if len(indices) else b""
        Path(path).write_bytes(header + body)

    @classmethod
    def load(cls, path: str | Path) -> "VoxelMemory":
        data = Path(path).read_bytes()
        if len(data) < cls._HEADER.size:
            raise ValueError(f"{path}: truncated memory snapshot")
        magic, voxel_size, queue_length, capacity, time, dim, count = cls._HEADER.unpack_from(data)
        if magic != cls._MAGIC:
            raise ValueError(f"{path}: not a memory snapshot (bad magic)")
        row = 8 * (3 + 1 + dim)
        expect = cls._HEADER.size + row * count
        if len(data) != expect:
            raise ValueError(f"{path}: snapshot size {len(data)} != expected {expect}")
        mem = cls(voxel_size=voxel_size, queue_length=queue_length, capacity=capacity)
        mem.time = int(time)
        if count:
            body = np.frombuffer(data, dtype=np.uint8, offset=cls._HEADER.size).reshape(count, row)
            indices = body[:, : 8 * 3].copy().view("<i8").reshape(count, 3)
            stamps = body[:, 8 * 3: 8 * 4].copy().view("<i8").reshape(count)
            feats = body[:, 8 * 4:].copy().view("<f8").reshape(count, dim)
            for idx, ts, feat in zip(map(tuple, indices.tolist()), stamps.tolist(), feats):
                mem._cells[idx] = (feat.astype(np.float64), int(ts))
        return mem


@dataclass
class VoxelMemoryView:
    """A read-only slice of memory cells: indices, features, timestamps."""

    indices: np.ndarray
    feats: np.ndarray
    timestamps: np.ndarray

    def __len__(self) -> int:
        return int(len(self.indices))

    @classmethod
    def empty(cls, channels: int) -> "VoxelMemoryView":
        return cls(
            np.zeros((0, 3), dtype=np.int64),
            np.zeros((0, channels)),
            np.zeros(0, dtype=np.int64),
        )
