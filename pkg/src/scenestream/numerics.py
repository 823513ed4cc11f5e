"""Minimal forward-only tensor kernels for the adapters.

Dense 2D convolution, sparse 2D/3D convolution over coordinate lists,
linear maps, and deterministic parameter initializers. Everything is
float64 numpy, single-threaded, no autodiff. Convolutions use the
correlation convention

    out[p] = sum_offset input[p + offset] @ W[offset] + bias

with zero padding at borders (a missing coordinate contributes zero).

Window axes pair with data axes positionally: dense 2D kernels are
(rows, cols, C_in, C_out) over [v, u]-indexed grids, while sparse
kernels pair window axis i with coordinate component i, so a sparse
tensor over (u, v) pixel coords uses a (wu, wv, C_in, C_out) kernel.
Swapping the first two kernel axes converts one convention to the other.

Weight files are little-endian binary with named records; see
:func:`save_weights` for the exact layout.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Union

import numpy as np

__all__ = [
    "SparseTensor",
    "ConvWeights",
    "LinearMap",
    "dense_conv2d",
    "sparse_conv",
    "sparse_conv2d",
    "sparse_conv3d",
    "apply_linear",
    "save_weights",
    "load_weights",
]

# Seeded initializers draw uniformly from this symmetric range.
INIT_RANGE = 0.1


@dataclass(eq=False)
class SparseTensor:
    """Coordinate-list tensor: K unique integer coordinates with K feature rows.

    ``coords`` is (K, D) int64 with D in {2, 3}; ``feats`` is (K, C) float64.
    Coordinate rows must be unique.
    """

    coords: np.ndarray
    feats: np.ndarray

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.int64)
        self.feats = np.asarray(self.feats, dtype=np.float64)
        if self.coords.ndim != 2 or self.coords.shape[1] not in (2, 3):
            raise ValueError(f"coords must be (K, 2) or (K, 3), got {self.coords.shape}")
        if self.feats.ndim != 2:
            raise ValueError(f"feats must be (K, C), got {self.feats.shape}")
        if self.coords.shape[0] != self.feats.shape[0]:
            raise ValueError(
                f"coords and feats disagree on K: {self.coords.shape[0]} vs {self.feats.shape[0]}"
            )
        if len(self.coords) and len(np.unique(self.coords, axis=0)) != len(self.coords):
            raise ValueError("duplicate coordinate rows in sparse tensor")

    @property
    def dims(self) -> int:
        return int(self.coords.shape[1])

    @property
    def channels(self) -> int:
        return int(self.feats.shape[1])

    def __len__(self) -> int:
        return int(self.coords.shape[0])

    @classmethod
    def empty(cls, dims: int, channels: int) -> "SparseTensor":
        return cls(np.zeros((0, dims), dtype=np.int64), np.zeros((0, channels)))


@dataclass(eq=False)
class ConvWeights:
    """Convolution parameters: one C_in x C_out matrix per window offset plus a bias.

    ``kernel`` has shape (*window, C_in, C_out) with every window extent odd,
    so offsets run symmetrically around zero.
    """

    kernel: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.kernel = np.asarray(self.kernel, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.kernel.ndim not in (4, 5):
            raise ValueError(f"kernel must be (*window, C_in, C_out), got shape {self.kernel.shape}")
        window = self.kernel.shape[:-2]
        if any(w < 1 or w % 2 == 0 for w in window):
            raise ValueError(f"window extents must be odd and positive, got {window}")
        if self.bias.shape != (self.kernel.shape[-1],):
            raise ValueError(
                f"bias shape {self.bias.shape} does not match C_out {self.kernel.shape[-1]}"
            )
        if not (np.isfinite(self.kernel).all() and np.isfinite(self.bias).all()):
            raise ValueError("non-finite convolution parameters")

    @property
    def window(self) -> tuple[int, ...]:
        return tuple(int(w) for w in self.kernel.shape[:-2])

    @property
    def c_in(self) -> int:
        return int(self.kernel.shape[-2])

    @property
    def c_out(self) -> int:
        return int(self.kernel.shape[-1])

    @classmethod
    def zeros(cls, window: tuple[int, ...], c_in: int, c_out: int) -> "ConvWeights":
        """All-zero parameters, the identity point for a residual branch."""
        return cls(np.zeros((*window, c_in, c_out)), np.zeros(c_out))

    @classmethod
    def seeded(cls, window: tuple[int, ...], c_in: int, c_out: int, seed: int) -> "ConvWeights":
        """Reproducible pseudorandom parameters, uniform in [-0.1, 0.1].

        Draws come from numpy's default generator seeded with ``seed``;
        the kernel is drawn first, then the bias.
        """
        rng = np.random.default_rng(seed)
        kernel = rng.uniform(-INIT_RANGE, INIT_RANGE, (*window, c_in, c_out))
        bias = rng.uniform(-INIT_RANGE, INIT_RANGE, c_out)
        return cls(kernel, bias)


@dataclass(eq=False)
class LinearMap:
    """A plain C_in x C_out matrix applied pixelwise or rowwise."""

    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2:
            raise ValueError(f"matrix must be 2D, got shape {self.matrix.shape}")
        if not np.isfinite(self.matrix).all():
            raise ValueError("non-finite linear map")

    @property
    def c_in(self) -> int:
        return int(self.matrix.shape[0])

    @property
    def c_out(self) -> int:
        return int(self.matrix.shape[1])

    @classmethod
    def zeros(cls, c_in: int, c_out: int) -> "LinearMap":
        return cls(np.zeros((c_in, c_out)))

    @classmethod
    def seeded(cls, c_in: int, c_out: int, seed: int) -> "LinearMap":
        """Uniform [-0.1, 0.1] entries from numpy's default generator."""
        rng = np.random.default_rng(seed)
        return cls(rng.uniform(-INIT_RANGE, INIT_RANGE, (c_in, c_out)))


def dense_conv2d(grid: np.ndarray, weights: ConvWeights) -> np.ndarray:
    """Same-size 2D convolution of an (H, W, C_in) grid with zero padding."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 3:
        raise ValueError(f"expected (H, W, C_in) grid, got shape {grid.shape}")
    if len(weights.window) != 2:
        raise ValueError(f"dense_conv2d needs a 2D window, got {weights.window}")
    if grid.shape[2] != weights.c_in:
        raise ValueError(f"channel mismatch: grid has {grid.shape[2]}, weights expect {weights.c_in}")

    h, w = grid.shape[:2]
    kh, kw = weights.window
    rh, rw = kh // 2, kw // 2
    out = np.empty((h, w, weights.c_out))
    out[:] = weights.bias
    for iy in range(kh):
        dy = iy - rh
        ys, ye = max(0, -dy), min(h, h - dy)
        if ys >= ye:
            continue
        for ix in range(kw):
            dx = ix - rw
            xs, xe = max(0, -dx), min(w, w - dx)
            if xs >= xe:
                continue
            out[ys:ye, xs:xe] += grid[ys + dy:ye + dy, xs + dx:xe + dx] @ weights.kernel[iy, ix]
    return out


def sparse_conv(tensor: SparseTensor, weights: ConvWeights, query_coords: np.ndarray) -> np.ndarray:
    """Convolve a sparse tensor at arbitrary query coordinates.

    Returns a (Q, C_out) matrix in query order. Query coordinates need not
    be occupied; unoccupied neighbors contribute zero.
    """
    query_coords = np.asarray(query_coords, dtype=np.int64)
    if query_coords.ndim != 2 or query_coords.shape[1] != tensor.dims:
        raise ValueError(
            f"query coords must be (Q, {tensor.dims}), got shape {query_coords.shape}"
        )
    if len(weights.window) != tensor.dims:
        raise ValueError(
            f"window dimensionality {len(weights.window)} does not match tensor dims {tensor.dims}"
        )
    if len(tensor) and tensor.channels != weights.c_in:
        raise ValueError(
            f"channel mismatch: tensor has {tensor.channels}, weights expect {weights.c_in}"
        )

    nq = len(query_coords)
    out = np.empty((nq, weights.c_out))
    out[:] = weights.bias
    if nq == 0 or len(tensor) == 0:
        return out

    index = {coord: i for i, coord in enumerate(map(tuple, tensor.coords.tolist()))}
    radii = np.array([w // 2 for w in weights.window], dtype=np.int64)
    for win_idx in np.ndindex(*weights.window):
        offset = np.asarray(win_idx, dtype=np.int64) - radii
        targets = query_coords + offset
        rows = np.fromiter(
            (index.get(t, -1) for t in map(tuple, targets.tolist())),
            dtype=np.int64,
            count=nq,
        )
        hit = rows >= 0
        if hit.any():
            out[hit] += tensor.feats[rows[hit]] @ weights.kernel[win_idx]
    return out


def sparse_conv3d(tensor: SparseTensor, weights: ConvWeights, query_coords: np.ndarray) -> np.ndarray:
    if tensor.dims != 3:
        raise ValueError("sparse_conv3d needs a 3D sparse tensor")
    return sparse_conv(tensor, weights, query_coords)


def sparse_conv2d(tensor: SparseTensor, weights: ConvWeights, query_coords: np.ndarray) -> np.ndarray:
    if tensor.dims != 2:
        raise ValueError("sparse_conv2d needs a 2D sparse tensor")
    return sparse_conv(tensor, weights, query_coords)


def apply_linear(x: np.ndarray, lm: LinearMap) -> np.ndarray:
    """Matrix product along the last axis; accepts (K, C_in) or (H, W, C_in)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != lm.c_in:
        raise ValueError(f"shape mismatch: input has {x.shape[-1]} channels, map expects {lm.c_in}")
    return x @ lm.matrix


# --------------------------------------------------------------------------
# Weight files
#
# Layout (all little-endian):
#   magic   4 bytes  b"SSW1"
#   count   u32      number of records
#   record, repeated:
#     name_len u16, name utf-8 bytes
#     kind u8: 1 = conv, 2 = linear
#     conv:   ndim u8 (2 or 3), window ndim x u32, c_in u32, c_out u32,
#             kernel f64 row-major (*window, c_in, c_out), bias f64 (c_out)
#     linear: c_in u32, c_out u32, matrix f64 row-major (c_in, c_out)
# --------------------------------------------------------------------------

_MAGIC = b"SSW1"

WeightRecord = Union[ConvWeights, LinearMap]


def save_weights(path: str | Path, records: Mapping[str, WeightRecord]) -> None:
    """Write named parameter records to a binary weight file."""
    chunks = [_MAGIC, struct.pack("<I", len(records))]
    for name, rec in records.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        if isinstance(rec, ConvWeights):
            window = rec.window
            chunks.append(struct.pack("<BB", 1, len(window)))
            chunks.append(struct.pack(f"<{len(window)}I", *window))
            chunks.append(struct.pack("<II", rec.c_in, rec.c_out))
            chunks.append(np.ascontiguousarray(rec.kernel, dtype="<f8").tobytes())
            chunks.append(np.ascontiguousarray(rec.bias, dtype="<f8").tobytes())
        elif isinstance(rec, LinearMap):
            chunks.append(struct.pack("<B", 2))
            chunks.append(struct.pack("<II", rec.c_in, rec.c_out))
            chunks.append(np.ascontiguousarray(rec.matrix, dtype="<f8").tobytes())
        else:
            raise TypeError(f"unsupported record type {type(rec).__name__} for {name!r}")
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, data: bytes, label: str):
        self.data = data
        self.pos = 0
        self.label = label

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ValueError(f"truncated weight file {self.label}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, shape: tuple[int, ...]) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        flat = np.frombuffer(self.take(8 * n), dtype="<f8")
        return flat.reshape(shape).astype(np.float64)


def load_weights(path: str | Path) -> dict[str, WeightRecord]:
    """Read a weight file written by :func:`save_weights`."""
    r = _Reader(Path(path).read_bytes(), str(path))
    if r.take(4) != _MAGIC:
        raise ValueError(f"{path}: not a weight file (bad magic)")
    (count,) = r.unpack("<I")
    records: dict[str, WeightRecord] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (kind,) = r.unpack("<B")
        if kind == 1:
            (ndim,) = r.unpack("<B")
            if ndim not in (2, 3):
                raise ValueError(f"{path}: record {name!r} has unsupported ndim {ndim}")
            window = r.unpack(f"<{ndim}I")
            c_in, c_out = r.unpack("<II")
            kernel = r.floats((*window, c_in, c_out))
            bias = r.floats((c_out,))
            records[name] = ConvWeights(kernel, bias)
        elif kind == 2:
            c_in, c_out = r.unpack("<II")
            records[name] = LinearMap(r.floats((c_in, c_out)))
        else:
            raise ValueError(f"{path}: record {name!r} has unknown kind {kind}")
    if r.pos != len(r.data):
        raise ValueError(f"{path}: trailing bytes after last record")
    return records
