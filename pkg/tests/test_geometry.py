"""Depth lifting, feature sampling, and memory projection."""

import numpy as np
import pytest

from conftest import make_intrinsics, random_frame, random_pose
from scenestream.geometry import (
    Frame,
    Intrinsics,
    Pose,
    lift_depth,
    project_memory_to_image,
    sample_image_features,
)
from scenestream.point_memory import VoxelMemory, voxelize


def identity_pose(translation=(0.0, 0.0, 0.0)):
    return Pose(np.eye(3), np.asarray(translation, dtype=np.float64))


# ---------------------------------------------------------------- validation

def test_intrinsics_rejects_nonpositive():
    with pytest.raises(ValueError):
        Intrinsics(0.0, 10.0, 5.0, 5.0, 10, 10)
    with pytest.raises(ValueError):
        Intrinsics(10.0, 10.0, 5.0, 5.0, 0, 10)


def test_pose_rejects_non_orthonormal_and_reflection():
    with pytest.raises(ValueError, match="orthonormal"):
        Pose(2.0 * np.eye(3), np.zeros(3))
    with pytest.raises(ValueError, match="determinant"):
        Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))


def test_frame_rejects_shape_mismatch():
    intr = make_intrinsics(4, 3)
    with pytest.raises(ValueError, match="depth"):
        Frame(np.zeros((4, 4)), np.zeros((3, 4, 3)), intr, identity_pose(), 1)
    with pytest.raises(ValueError, match="timestamps"):
        Frame(np.zeros((3, 4)), np.zeros((3, 4, 3)), intr, identity_pose(), 0)


def test_pose_round_trip(rng):
    pose = random_pose(rng)
    pts = rng.standard_normal((40, 3))
    np.testing.assert_allclose(
        pose.world_to_camera(pose.camera_to_world(pts)), pts, atol=1e-12
    )


# ---------------------------------------------------------------- lift_depth

def test_lift_single_pixel_hand_case():
    # fx=fy=10, c=(25,25): pixel (u=30, v=35) at depth 2 -> cam (1, 2, 2)
    intr = Intrinsics(10.0, 10.0, 25.0, 25.0, 50, 50)
    depth = np.zeros((50, 50))
    depth[35, 30] = 2.0
    color = np.zeros((50, 50, 3))
    color[35, 30] = [0.1, 0.2, 0.3]
    frame = Frame(depth, color, intr, identity_pose((0.0, 0.0, 3.0)), 1)
    lifted = lift_depth(frame)
    assert len(lifted) == 1
    np.testing.assert_allclose(lifted.points[0], [1.0, 2.0, 5.0], atol=1e-12)
    assert np.array_equal(lifted.feats[0], [0.1, 0.2, 0.3])
    assert np.array_equal(lifted.pixels[0], [30, 35])


def test_lift_skips_invalid_and_clips_range():
    intr = make_intrinsics(4, 3)
    depth = np.array([
        [0.0, 1.0, -2.0, 3.0],
        [0.5, 0.0, 2.0, 9.0],
        [0.0, 0.0, 0.0, 0.0],
    ])
    frame = Frame(depth, np.zeros((3, 4, 3)), intr, identity_pose(), 1)
    assert len(lift_depth(frame)) == 5  # zeros and negatives dropped
    assert len(lift_depth(frame, max_depth=3.0)) == 4


def test_lift_row_major_order():
    intr = make_intrinsics(3, 2)
    depth = np.ones((2, 3))
    frame = Frame(depth, np.zeros((2, 3, 3)), intr, identity_pose(), 1)
    pix = lift_depth(frame).pixels
    want = [[0, 0], [1, 0], [2, 0], [0, 1], [1, 1], [2, 1]]
    assert np.array_equal(pix, want)


def test_lift_carries_labels(rng):
    frame = random_frame(rng, 1, with_labels=True)
    lifted = lift_depth(frame)
    v, u = lifted.pixels[:, 1], lifted.pixels[:, 0]
    assert np.array_equal(lifted.labels, frame.labels[v, u])


# ------------------------------------------------------------------ sampling

def test_sampling_inverts_lifting(rng):
    # every lifted point must land back on its source pixel
    for _ in range(10):
        frame = random_frame(rng, 1)
        lifted = lift_depth(frame)
        feats = rng.random((frame.intrinsics.height, frame.intrinsics.width, 4))
        sampled = sample_image_features(lifted.points, feats, frame.intrinsics, frame.pose)
        v, u = lifted.pixels[:, 1], lifted.pixels[:, 0]
        assert np.array_equal(sampled, feats[v, u])


def test_sampling_zeroes_behind_and_outside():
    intr = make_intrinsics(4, 4, focal=2.0)
    feats = np.ones((4, 4, 2))
    pts = np.array([
        [0.0, 0.0, -1.0],   # behind the camera
        [100.0, 0.0, 1.0],  # projects far outside
        [0.0, 0.0, 1.0],    # center pixel
    ])
    out = sample_image_features(pts, feats, intr, identity_pose())
    assert np.array_equal(out[0], [0.0, 0.0])
    assert np.array_equal(out[1], [0.0, 0.0])
    assert np.array_equal(out[2], [1.0, 1.0])


def test_sampling_rejects_wrong_feature_size():
    intr = make_intrinsics(4, 4)
    with pytest.raises(ValueError, match="match"):
        sample_image_features(np.zeros((1, 3)), np.ones((5, 5, 2)), intr, identity_pose())


# ---------------------------------------------------------------- projection

def test_project_memory_merges_pixel_collisions():
    # two cells along one ray -> same pixel, channel-wise max survives
    intr = Intrinsics(10.0, 10.0, 5.0, 5.0, 11, 11)
    mem = VoxelMemory(voxel_size=1.0)
    pts = np.array([[0.5, 0.5, 4.5], [0.5, 0.5, 9.5]])
    mem.merge(voxelize(pts, np.array([[1.0, 5.0], [3.0, 2.0]]), 1.0, timestamp=1))
    pixels, feats = project_memory_to_image(mem, intr, identity_pose())
    assert np.array_equal(pixels, [[6, 6]])
    assert np.array_equal(feats, [[3.0, 5.0]])


def test_project_memory_drops_behind_camera():
    intr = make_intrinsics(8, 8)
    mem = VoxelMemory(voxel_size=1.0)
    mem.merge(voxelize(np.array([[0.5, 0.5, -3.5]]), np.ones((1, 2)), 1.0, 1))
    pixels, feats = project_memory_to_image(mem, intr, identity_pose())
    assert len(pixels) == 0 and feats.shape == (0, 2)


def test_project_empty_memory():
    pixels, feats = project_memory_to_image(
        VoxelMemory(), make_intrinsics(), identity_pose()
    )
    assert len(pixels) == 0 and len(feats) == 0
