"""Channel-shift memory for dense image features.

Per frame, image features are embedded to C' channels; the leading
C'/tau channels become the new memory and the remaining channels are
retained. The next frame recombines by concatenating the previous
memory in front of its own retained channels, so a fixed fraction of
the feature volume carries one-frame-old information forward.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import LinearMap, apply_linear

__all__ = ["ImageMemory", "embed_and_shift", "recombine", "DEFAULT_TAU"]

DEFAULT_TAU = 8


@dataclass
class ImageMemory:
    """The shifted-out slice of one frame's embedding: (H, W, C'/tau)."""

    buffer: np.ndarray
    timestamp: int
    tau: int
    embed_dim: int

    def __post_init__(self):
        self.buffer = np.asarray(self.buffer, dtype=np.float64)
        if self.tau < 1:
            raise ValueError(f"tau must be >= 1, got {self.tau}")
        if self.embed_dim % self.tau != 0:
            raise ValueError(f"embed dim {self.embed_dim} not divisible by tau {self.tau}")
        slice_dim = self.embed_dim // self.tau
        if self.buffer.ndim != 3 or self.buffer.shape[2] != slice_dim:
            raise ValueError(
                f"buffer must be (H, W, {slice_dim}), got {self.buffer.shape}"
            )
        if self.timestamp < 0:
            raise ValueError(f"timestamp must be >= 0, got {self.timestamp}")

    @classmethod
    def zeros(cls, height: int, width: int, embed_dim: int, tau: int) -> "ImageMemory":
        """Empty memory for the stream start; timestamp 0 = before any frame."""
        if tau < 1:
            raise ValueError(f"tau must be >= 1, got {tau}")
        if embed_dim % tau != 0:
            raise ValueError(f"embed dim {embed_dim} not divisible by tau {tau}")
        return cls(np.zeros((height, width, embed_dim // tau)), 0, tau, embed_dim)


def embed_and_shift(
    image_feats: np.ndarray,
    r1: LinearMap,
    tau: int,
    timestamp: int,
) -> tuple[np.ndarray, ImageMemory]:
    """Embed (H, W, C) features to C' channels and split off the memory slice.

    Returns ``(retained, memory)`` where ``retained`` is the trailing
    C' - C'/tau channels of the embedding and ``memory`` holds the leading
    C'/tau channels stamped with ``timestamp``.
    """
    image_feats = np.asarray(image_feats, dtype=np.float64)
    if image_feats.ndim != 3:
        raise ValueError(f"expected (H, W, C) features, got shape {image_feats.shape}")
    if tau < 1:
        raise ValueError(f"tau must be >= 1, got {tau}")
    if r1.c_out % tau != 0:
        raise ValueError(f"embed dim {r1.c_out} not divisible by tau {tau}")
    embedded = apply_linear(image_feats, r1)
    split = r1.c_out // tau
    retained = embedded[:, :, split:]
    memory = ImageMemory(embedded[:, :, :split], timestamp, tau, r1.c_out)
    return retained, memory


def recombine(retained: np.ndarray, previous: ImageMemory) -> np.ndarray:
    """Concatenate the previous frame's memory slice in front of ``retained``.

    The result has the full embedding width C' again: the first C'/tau
    channels are one frame old, the rest are current.
    """
    retained = np.asarray(retained, dtype=np.float64)
    split = previous.embed_dim // previous.tau
    if retained.ndim != 3 or retained.shape[2] != previous.embed_dim - split:
        raise ValueError(
            f"retained must be (H, W, {previous.embed_dim - split}), got {retained.shape}"
        )
    if retained.shape[:2] != previous.buffer.shape[:2]:
        raise ValueError(
            f"image size changed: memory is {previous.buffer.shape[:2]}, "
            f"retained is {retained.shape[:2]}"
        )
    return np.concatenate([previous.buffer, retained], axis=2)
