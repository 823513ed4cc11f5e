"""Shared builders for randomized frames, poses, and rooms."""

import numpy as np
import pytest

from scenestream.geometry import Frame, Intrinsics, Pose


def make_intrinsics(width=16, height=12, focal=10.0):
    return Intrinsics(focal, focal, (width - 1) / 2.0, (height - 1) / 2.0, width, height)


def random_rotation(rng):
    # QR of a Gaussian matrix, sign-fixed to det +1
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_pose(rng, translation_scale=2.0):
    return Pose(random_rotation(rng), rng.uniform(-translation_scale, translation_scale, 3))


def random_frame(rng, timestamp, intr=None, with_labels=False, num_classes=6,
                 invalid_fraction=0.1):
    """A frame with positive random depth, random color, random valid pose."""
    intr = intr or make_intrinsics()
    depth = rng.uniform(0.5, 4.0, (intr.height, intr.width))
    depth[rng.random(depth.shape) < invalid_fraction] = 0.0
    color = rng.random((intr.height, intr.width, 3))
    labels = (
        rng.integers(0, num_classes, (intr.height, intr.width)) if with_labels else None
    )
    return Frame(depth, color, intr, random_pose(rng), timestamp, labels)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
