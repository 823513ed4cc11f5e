"""On-disk sequence format: load RGB-D frame streams, write outputs atomically.

A sequence directory holds ``intrinsics.txt`` (fx fy cx cy width height)
plus per frame:

  * ``frame_%05d.depth``  binary: u32 H, u32 W, then H*W little-endian f32 meters
  * ``frame_%05d.color``  same header, then H*W*3 f32 in [0, 1]
  * ``frame_%05d.pose``   text: 12 floats, row-major 3x4 camera-to-world
  * ``frame_%05d.label``  optional, H*W little-endian u32, no header

Frames are ordered by their numeric index; timestamps are assigned
1..T in that order regardless of gaps in the indices.
"""

from __future__ import annotations

import os
import re
import struct
import tempfile
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .geometry import Frame, Intrinsics, Pose

__all__ = [
    "SequenceError",
    "load_intrinsics",
    "save_intrinsics",
    "load_sequence",
    "save_frame",
    "atomic_write_text",
    "atomic_write_bytes",
]


class SequenceError(Exception):
    """Malformed sequence input (missing or corrupt files)."""


_FRAME_RE = re.compile(r"^frame_(\d+)\.depth$")


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def load_intrinsics(path: str | Path) -> Intrinsics:
    """Parse ``fx fy cx cy width height`` from a text file."""
    path = Path(path)
    if not path.is_file():
        raise SequenceError(f"missing intrinsics file {path}")
    parts = path.read_text().split()
    if len(parts) != 6:
        raise SequenceError(f"{path}: expected 6 fields, got {len(parts)}")
    try:
        fx, fy, cx, cy = (float(p) for p in parts[:4])
        width, height = int(parts[4]), int(parts[5])
        return Intrinsics(fx, fy, cx, cy, width, height)
    except ValueError as exc:
        raise SequenceError(f"{path}: {exc}") from exc


def save_intrinsics(path: str | Path, intr: Intrinsics) -> None:
    atomic_write_text(
        path,
        f"{intr.fx:.17g} {intr.fy:.17g} {intr.cx:.17g} {intr.cy:.17g} "
        f"{intr.width} {intr.height}\n",
    )


def _read_grid(path: Path, channels: int, intr: Intrinsics) -> np.ndarray:
    if not path.is_file():
        raise SequenceError(f"missing file {path}")
    data = path.read_bytes()
    if len(data) < 8:
        raise SequenceError(f"{path}: truncated header")
    h, w = struct.unpack_from("<II", data)
    if (h, w) != (intr.height, intr.width):
        raise SequenceError(
            f"{path}: grid is {h}x{w} but intrinsics say {intr.height}x{intr.width}"
        )
    expect = 8 + 4 * h * w * channels
    if len(data) != expect:
        raise SequenceError(f"{path}: size {len(data)} != expected {expect}")
    grid = np.frombuffer(data, dtype="<f4", offset=8).astype(np.float64)
    shape = (h, w) if channels == 1 else (h, w, channels)
    return grid.reshape(shape)


def _write_grid(path: Path, grid: np.ndarray) -> None:
    h, w = grid.shape[:2]
    atomic_write_bytes(
        path,
        struct.pack("<II", h, w) + np.ascontiguousarray(grid, dtype="<f4").tobytes(),
    )


def _read_pose(path: Path) -> Pose:
    if not path.is_file():
        raise SequenceError(f"missing pose file {path}")
    parts = path.read_text().split()
    if len(parts) != 12:
        raise SequenceError(f"{path}: expected 12 floats, got {len(parts)}")
    try:
        mat = np.array([float(p) for p in parts]).reshape(3, 4)
        return Pose(mat[:, :3], mat[:, 3])
    except ValueError as exc:
        raise SequenceError(f"{path}: {exc}") from exc


def _write_pose(path: Path, pose: Pose) -> None:
    mat = np.concatenate([pose.rotation, pose.translation[:, None]], axis=1)
    atomic_write_text(path, " ".join(f"{x:.17g}" for x in mat.reshape(-1)) + "\n")


def _read_labels(path: Path, intr: Intrinsics) -> np.ndarray:
    data = path.read_bytes()
    expect = 4 * intr.height * intr.width
    if len(data) != expect:
        raise SequenceError(f"{path}: size {len(data)} != expected {expect}")
    return (
        np.frombuffer(data, dtype="<u4")
        .reshape(intr.height, intr.width)
        .astype(np.int64)
    )


def load_sequence(
    seq_dir: str | Path,
    max_depth: float | None = None,
) -> tuple[Intrinsics, list[Frame]]:
    """Load all frames of a sequence directory, sorted by frame index.

    Timestamps are assigned 1..T in index order. Duplicate indices
    (``frame_1`` vs ``frame_00001``) and empty directories are rejected.
    """
    seq_dir = Path(seq_dir)
    if not seq_dir.is_dir():
        raise SequenceError(f"not a directory: {seq_dir}")
    intr = load_intrinsics(seq_dir / "intrinsics.txt")

    found: dict[int, Path] = {}
    for entry in sorted(seq_dir.iterdir()):
        m = _FRAME_RE.match(entry.name)
        if not m:
            continue
        idx = int(m.group(1))
        if idx in found:
            raise SequenceError(
                f"duplicate frame index {idx}: {found[idx].name} and {entry.name}"
            )
        found[idx] = entry
    if not found:
        raise SequenceError(f"no frames in {seq_dir}")

    frames = []
    for t, idx in enumerate(sorted(found), start=1):
        stem = found[idx].with_suffix("")
        depth = _read_grid(stem.with_suffix(".depth"), 1, intr)
        color = _read_grid(stem.with_suffix(".color"), 3, intr)
        pose = _read_pose(stem.with_suffix(".pose"))
        label_path = stem.with_suffix(".label")
        labels = _read_labels(label_path, intr) if label_path.is_file() else None
        try:
            frames.append(Frame(depth, color, intr, pose, t, labels))
        except ValueError as exc:
            raise SequenceError(f"frame {idx}: {exc}") from exc
    _ = max_depth  # reserved for future range clipping at load time
    return intr, frames


def save_frame(
    seq_dir: str | Path,
    index: int,
    depth: np.ndarray,
    color: np.ndarray,
    pose: Pose,
    labels: Optional[np.ndarray] = None,
) -> None:
    """Write one frame's files with the standard names."""
    seq_dir = Path(seq_dir)
    stem = seq_dir / f"frame_{index:05d}"
    _write_grid(stem.with_suffix(".depth"), np.asarray(depth))
    _write_grid(stem.with_suffix(".color"), np.asarray(color))
    _write_pose(stem.with_suffix(".pose"), pose)
    if labels is not None:
        atomic_write_bytes(
            stem.with_suffix(".label"),
            np.ascontiguousarray(labels, dtype="<u4").tobytes(),
        )
