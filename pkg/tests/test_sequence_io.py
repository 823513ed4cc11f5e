"""On-disk sequence format: round trips and rejection of malformed input."""

import struct

import numpy as np
import pytest

from conftest import make_intrinsics, random_pose
from scenestream.sequence_io import (
    SequenceError,
    load_intrinsics,
    load_sequence,
    save_frame,
    save_intrinsics,
)


def write_sequence(seq_dir, rng, count=3, intr=None, with_labels=True):
    intr = intr or make_intrinsics(6, 4)
    seq_dir.mkdir(parents=True, exist_ok=True)
    save_intrinsics(seq_dir / "intrinsics.txt", intr)
    frames = []
    for i in range(1, count + 1):
        depth = rng.uniform(0.5, 3.0, (intr.height, intr.width))
        color = rng.random((intr.height, intr.width, 3)).astype("<f4").astype(np.float64)
        depth = depth.astype("<f4").astype(np.float64)  # survive the f32 format
        pose = random_pose(rng)
        labels = rng.integers(0, 6, (intr.height, intr.width)) if with_labels else None
        save_frame(seq_dir, i, depth, color, pose, labels)
        frames.append((depth, color, pose, labels))
    return intr, frames


def test_intrinsics_round_trip(tmp_path):
    intr = make_intrinsics(17, 13, focal=21.5)
    save_intrinsics(tmp_path / "intrinsics.txt", intr)
    assert load_intrinsics(tmp_path / "intrinsics.txt") == intr


def test_sequence_round_trip(tmp_path, rng):
    intr, written = write_sequence(tmp_path / "seq", rng)
    got_intr, frames = load_sequence(tmp_path / "seq")
    assert got_intr == intr
    assert [f.timestamp for f in frames] == [1, 2, 3]
    for frame, (depth, color, pose, labels) in zip(frames, written):
        assert np.array_equal(frame.depth, depth)
        assert np.array_equal(frame.color, color)
        np.testing.assert_allclose(frame.pose.rotation, pose.rotation, atol=1e-15)
        np.testing.assert_allclose(frame.pose.translation, pose.translation, atol=1e-15)
        assert np.array_equal(frame.labels, labels)


def test_nonconsecutive_indices_get_dense_timestamps(tmp_path, rng):
    intr = make_intrinsics(4, 3)
    seq = tmp_path / "seq"
    seq.mkdir()
    save_intrinsics(seq / "intrinsics.txt", intr)
    for idx in (2, 7, 40):
        save_frame(seq, idx, np.ones((3, 4)), np.zeros((3, 4, 3)), random_pose(rng))
    _, frames = load_sequence(seq)
    assert [f.timestamp for f in frames] == [1, 2, 3]


def test_duplicate_frame_index_rejected(tmp_path, rng):
    intr = make_intrinsics(4, 3)
    seq = tmp_path / "seq"
    seq.mkdir()
    save_intrinsics(seq / "intrinsics.txt", intr)
    save_frame(seq, 1, np.ones((3, 4)), np.zeros((3, 4, 3)), random_pose(rng))
    # same numeric index, different zero padding
    (seq / "frame_001.depth").write_bytes((seq / "frame_00001.depth").read_bytes())
    (seq / "frame_001.color").write_bytes((seq / "frame_00001.color").read_bytes())
    (seq / "frame_001.pose").write_bytes((seq / "frame_00001.pose").read_bytes())
    with pytest.raises(SequenceError, match="duplicate"):
        load_sequence(seq)


def test_missing_and_corrupt_files_rejected(tmp_path, rng):
    seq = tmp_path / "seq"
    write_sequence(seq, rng, count=1)

    (seq / "frame_00001.pose").unlink()
    with pytest.raises(SequenceError, match="pose"):
        load_sequence(seq)
    (seq / "frame_00001.pose").write_text("1 0 0\n")  # 3 floats, not 12
    with pytest.raises(SequenceError, match="12"):
        load_sequence(seq)

    seq2 = tmp_path / "seq2"
    write_sequence(seq2, rng, count=1)
    data = (seq2 / "frame_00001.depth").read_bytes()
    (seq2 / "frame_00001.depth").write_bytes(data[:-4])
    with pytest.raises(SequenceError, match="size"):
        load_sequence(seq2)

    seq3 = tmp_path / "seq3"
    write_sequence(seq3, rng, count=1)
    h, w = struct.unpack_from("<II", (seq3 / "frame_00001.depth").read_bytes())
    (seq3 / "frame_00001.depth").write_bytes(
        struct.pack("<II", h + 1, w) + data[8:]
    )
    with pytest.raises(SequenceError, match="intrinsics"):
        load_sequence(seq3)


def test_empty_or_missing_directory_rejected(tmp_path):
    with pytest.raises(SequenceError, match="directory"):
        load_sequence(tmp_path / "nope")
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(SequenceError, match="intrinsics"):
        load_sequence(empty)
    save_intrinsics(empty / "intrinsics.txt", make_intrinsics(4, 3))
    with pytest.raises(SequenceError, match="no frames"):
        load_sequence(empty)


def test_bad_intrinsics_rejected(tmp_path):
    path = tmp_path / "intrinsics.txt"
    path.write_text("10 10 5 5\n")
    with pytest.raises(SequenceError, match="6 fields"):
        load_intrinsics(path)
    path.write_text("10 x 5 5 8 8\n")
    with pytest.raises(SequenceError):
        load_intrinsics(path)


def test_invalid_pose_matrix_rejected(tmp_path, rng):
    seq = tmp_path / "seq"
    write_sequence(seq, rng, count=1)
    vals = [2.0, 0, 0, 0, 2.0, 0, 0, 0, 2.0, 0, 0, 0]  # scaled, not a rotation
    (seq / "frame_00001.pose").write_text(" ".join(str(v) for v in vals))
    with pytest.raises(SequenceError, match="orthonormal"):
        load_sequence(seq)
