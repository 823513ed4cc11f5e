"""Acceptance gate.

Each test covers one release criterion and prints a single verdict line
(run with ``pytest -s`` to see them on success). Tolerances are pinned
here and nowhere else: bit-exact where the design guarantees identity,
1e-9 for sparse/dense convolution agreement, wall-clock budgets where
the criterion includes one.
"""

import time

import numpy as np

from conftest import make_intrinsics, random_frame
from scenestream.cli import main
from scenestream.fusion import (
    DetBox,
    SemanticPrediction,
    aabb_iou,
    fuse_boxes,
    fuse_semantic,
)
from scenestream.image_memory import ImageMemory, embed_and_shift, recombine
from scenestream.metrics import semantic_metrics
from scenestream.numerics import (
    ConvWeights,
    LinearMap,
    SparseTensor,
    apply_linear,
    dense_conv2d,
    sparse_conv2d,
    sparse_conv3d,
)
from scenestream.pipeline import OnlinePipeline, StreamConfig, run_stream, single_view_frame
from scenestream.point_memory import VoxelMemory, voxelize
from scenestream.synthetic import generate_sequence


def verdict(num: int, name: str, ok: bool) -> None:
    print(f"acceptance {num:02d} {name}: {'PASS' if ok else 'FAIL'}")
    assert ok, f"acceptance {num:02d} {name} failed"


def same_prediction(a, b) -> bool:
    if isinstance(a, SemanticPrediction):
        return (
            a.points.tobytes() == b.points.tobytes()
            and a.logits.tobytes() == b.logits.tobytes()
            and a.timestamp == b.timestamp
        )
    return a == b


# 1 -------------------------------------------------------------------------

def test_01_zero_init_identity_over_randomized_streams():
    # per-frame online output must be bit-identical to the memory-free
    # single-view path while all adapters are at zero
    rng = np.random.default_rng(910001)
    intr = make_intrinsics()
    start = time.perf_counter()
    streams = 0
    ok = True
    while streams < 100:
        backbone = ("identity", "labeled-onehot", "seeded-random")[streams % 3]
        task = ("semseg", "detection", "instance")[streams % 2 if streams % 5 else 2]
        config = StreamConfig(
            task=task,
            backbone=backbone,
            noise=float(rng.uniform(0.0, 0.5)),
            seed=int(rng.integers(0, 10_000)),
        )
        pipeline = OnlinePipeline(config, intr.height, intr.width)
        for t in range(1, int(rng.integers(1, 4)) + 1):
            frame = random_frame(rng, t, intr=intr, with_labels=True)
            online, _ = pipeline.process_frame(frame)
            single, _ = single_view_frame(frame, config)
            ok = ok and same_prediction(online, single)
        streams += 1
    elapsed = time.perf_counter() - start
    verdict(1, "zero-init online equals single-view, 100 streams", ok and elapsed < 10.0)


# 2 -------------------------------------------------------------------------

def test_02_merge_equals_bruteforce_max():
    rng = np.random.default_rng(910002)
    ok = True
    for _ in range(500):
        dim = int(rng.integers(1, 4))
        voxel = float(rng.uniform(0.04, 0.15))
        memory = VoxelMemory(voxel_size=voxel, queue_length=100, capacity=10**9)
        oracle: dict[tuple, np.ndarray] = {}
        t = 0
        for _ in range(int(rng.integers(1, 21))):
            t += int(rng.integers(1, 3))
            pts = rng.uniform(-0.4, 0.4, size=(int(rng.integers(1, 15)), 3))
            feats = rng.normal(size=(len(pts), dim))
            frame = voxelize(pts, feats, voxel, t)
            memory.merge(frame)
            for idx, feat in zip(map(tuple, frame.indices.tolist()), frame.feats):
                held = oracle.get(idx)
                oracle[idx] = feat.copy() if held is None else np.maximum(held, feat)
        indices, feats, _ = memory.arrays()
        if len(oracle) != len(memory):
            ok = False
            break
        for idx, feat in zip(map(tuple, indices.tolist()), feats):
            if idx not in oracle or not np.array_equal(oracle[idx], feat):
                ok = False
    verdict(2, "merge is exact channel-max over 500 randomized histories", ok)


# 3 -------------------------------------------------------------------------

def test_03_eviction_age_and_count_bounds():
    # cells per frame are capped so the window can never outgrow capacity
    # by more than one frame's worth of cells
    rng = np.random.default_rng(910003)
    ok = True
    for _ in range(500):
        queue = int(rng.integers(2, 5))
        capacity = int(rng.integers(3, 11))
        frame_cap = max(1, capacity // (queue - 1))
        memory = VoxelMemory(voxel_size=1.0, queue_length=queue, capacity=capacity)
        t = 0
        for _ in range(int(rng.integers(5, 16))):
            t += int(rng.integers(1, 3))
            count = int(rng.integers(1, frame_cap + 1))
            cells = rng.integers(-3, 4, size=(count, 3))
            frame = voxelize(cells * 1.0 + 0.5, rng.normal(size=(count, 1)), 1.0, t)
            held = {tuple(i) for i in memory.arrays()[0].tolist()}
            union = held | {tuple(i) for i in frame.indices.tolist()}
            memory.merge(frame)
            _, _, stamps = memory.arrays()
            if len(union) > capacity and stamps.min() < t - queue + 1:
                ok = False  # a triggered eviction left a stale cell behind
            if len(memory) > capacity + len(frame):
                ok = False
    verdict(3, "eviction honors the age horizon and the count bound (500 runs)", ok)


# 4 -------------------------------------------------------------------------

def test_04_neighbor_query_box_and_monotonicity():
    memory = VoxelMemory(voxel_size=1.0, queue_length=10, capacity=10**9)
    occupied = [(x, y, z) for x in range(2, 5) for y in range(2, 5) for z in range(2, 5)]
    corners = [(a, b, c) for a in (0, 6) for b in (0, 6) for c in (0, 6)]
    outside = [(7, 3, 3), (-1, 3, 3), (3, 7, 3), (3, -1, 3), (3, 3, 7), (3, 3, -1)]
    cells = np.array(occupied + corners + outside)
    frame = voxelize(cells + 0.5, np.ones((len(cells), 1)), 1.0, 1)
    memory.merge(frame)

    view = memory.neighbor_query(np.array(occupied), 2.5)
    got = {tuple(i) for i in view.indices.tolist()}
    ok = got == set(occupied) | set(corners)

    rng = np.random.default_rng(910004)
    for _ in range(100):
        mem = VoxelMemory(voxel_size=1.0, queue_length=10, capacity=10**9)
        pts = rng.integers(-6, 7, size=(int(rng.integers(3, 30)), 3))
        mem.merge(voxelize(pts + 0.5, np.ones((len(pts), 1)), 1.0, 1))
        query = pts[: int(rng.integers(1, len(pts)))]
        scales = np.sort(rng.uniform(1.0, 4.0, size=2))
        small = {tuple(i) for i in mem.neighbor_query(query, scales[0]).indices.tolist()}
        large = {tuple(i) for i in mem.neighbor_query(query, scales[1]).indices.tolist()}
        ok = ok and small <= large
    verdict(4, "query box is exact on the 2.5x example and grows with scale", ok)


# 5 -------------------------------------------------------------------------

def dense_reference(grid: np.ndarray, weights: ConvWeights) -> np.ndarray:
    """Zero-padded correlation over a dense grid, any dimensionality."""
    dims = grid.shape[:-1]
    window = weights.kernel.shape[:-2]
    pad = [(k // 2, k // 2) for k in window] + [(0, 0)]
    padded = np.pad(grid, pad)
    out = np.zeros(dims + (weights.kernel.shape[-1],))
    out[:] = weights.bias
    for offset in np.ndindex(*window):
        block = padded[tuple(slice(o, o + d) for o, d in zip(offset, dims))]
        out += block @ weights.kernel[offset]
    return out


def test_05_sparse_conv_matches_dense_on_full_boxes():
    rng = np.random.default_rng(910005)
    worst = 0.0
    for draw in range(240):
        c_in = int(rng.integers(1, 4))
        c_out = int(rng.integers(1, 4))
        if draw % 2 == 0:
            dims = tuple(int(d) for d in rng.integers(1, 6, size=3))
            weights = ConvWeights.seeded((3, 3, 3), c_in, c_out, int(rng.integers(1e6)))
            grid = rng.normal(size=dims + (c_in,))
            coords = np.array(list(np.ndindex(*dims)), dtype=np.int64)
            sparse = SparseTensor(coords, grid[tuple(coords.T)])
            got = sparse_conv3d(sparse, weights, coords)
            want = dense_reference(grid, weights)[tuple(coords.T)]
        else:
            h, w = (int(d) for d in rng.integers(1, 6, size=2))
            weights = ConvWeights.seeded((3, 3), c_in, c_out, int(rng.integers(1e6)))
            grid = rng.normal(size=(h, w, c_in))
            # sparse 2D coords are (u, v); the window axis follows suit
            coords = np.array([(u, v) for v in range(h) for u in range(w)], dtype=np.int64)
            sparse = SparseTensor(coords, grid[coords[:, 1], coords[:, 0]])
            flipped = ConvWeights(weights.kernel.transpose(1, 0, 2, 3), weights.bias)
            got = sparse_conv2d(sparse, flipped, coords)
            want = dense_conv2d(grid, weights)[coords[:, 1], coords[:, 0]]
        worst = max(worst, float(np.abs(got - want).max()))
    verdict(5, f"sparse conv equals dense on 240 full boxes (max err {worst:.2e})", worst <= 1e-9)


# 6 -------------------------------------------------------------------------

def test_06_channel_shift_carries_previous_frame():
    rng = np.random.default_rng(910006)
    ok = True
    for _ in range(50):
        h, w = int(rng.integers(2, 7)), int(rng.integers(2, 7))
        tau = int(rng.integers(1, 5))
        embed = tau * int(rng.integers(1, 4))
        c = int(rng.integers(1, 6))
        r1 = LinearMap.seeded(c, embed, int(rng.integers(1e6)))
        split = embed // tau
        memory = ImageMemory.zeros(h, w, embed, tau)
        previous_lead = memory.buffer
        for t in range(1, 11):
            frame = rng.normal(size=(h, w, c))
            retained, new_memory = embed_and_shift(frame, r1, tau, t)
            x = recombine(retained, memory)
            ok = ok and x[:, :, :split].tobytes() == previous_lead.tobytes()
            embedded = apply_linear(frame, r1)
            ok = ok and new_memory.buffer.tobytes() == embedded[:, :, :split].tobytes()
            previous_lead = new_memory.buffer
            memory = new_memory
    verdict(6, "recombined input leads with frame t-1's embedded slice, 10-frame streams", ok)


# 7 -------------------------------------------------------------------------

def greedy_keep_first(boxes: list[DetBox], threshold: float) -> list[int]:
    order = sorted(range(len(boxes)), key=lambda i: (-boxes[i].score, -boxes[i].timestamp, i))
    removed: set[int] = set()
    kept = []
    for i in order:
        if i in removed:
            continue
        kept.append(i)
        for j in order:
            if (
                j not in removed
                and j != i
                and boxes[j].label == boxes[i].label
                and aabb_iou(boxes[i], boxes[j]) > threshold
            ):
                removed.add(j)
    return sorted(kept)


def random_boxes(rng, count: int) -> list[DetBox]:
    boxes = []
    for i in range(count):
        center = tuple(float(c) for c in rng.integers(0, 3, size=3) * 0.5)
        size = tuple(float(s) for s in rng.integers(1, 3, size=3) * 0.5)
        boxes.append(
            DetBox(
                center,
                size,
                label=int(rng.integers(0, 3)),
                score=float(rng.integers(1, 10)) / 10.0,  # coarse, ties are common
                timestamp=int(rng.integers(1, 6)),
            )
        )
    return boxes


def test_07_nms_recency_bump_and_delta_zero_reduction():
    old = DetBox((0.0, 0.0, 0.0), (1.0, 1.0, 1.0), label=1, score=0.80, timestamp=1)
    new = DetBox((0.1, 0.0, 0.0), (1.0, 1.0, 1.0), label=1, score=0.78, timestamp=2)
    kept = fuse_boxes([old, new], iou_threshold=0.5, delta=0.03)
    ok = kept == [new] and kept[0].score == 0.78

    rng = np.random.default_rng(910007)
    for _ in range(500):
        boxes = random_boxes(rng, int(rng.integers(0, 13)))
        threshold = float(rng.choice([0.1, 0.25, 0.5]))
        kept = fuse_boxes(boxes, iou_threshold=threshold, delta=0.0)
        by_id = {id(b): i for i, b in enumerate(boxes)}
        ok = ok and [by_id[id(b)] for b in kept] == greedy_keep_first(boxes, threshold)
    verdict(7, "recency bump picks the newer duelist; delta=0 is plain greedy (500 sets)", ok)


# 8 -------------------------------------------------------------------------

def semantic_oracle(predictions):
    cells: dict[tuple, np.ndarray] = {}
    for pred in predictions:
        ids = np.floor(pred.points / 0.02).astype(np.int64)
        for idx, logit in zip(map(tuple, ids.tolist()), pred.logits):
            held = cells.get(idx)
            cells[idx] = logit.copy() if held is None else np.maximum(held, logit)
    return {idx: int(np.argmax(v)) for idx, v in cells.items()}


def test_08_semantic_fusion_oracle_and_order_invariance():
    rng = np.random.default_rng(910008)
    ok = True
    for _ in range(200):
        preds = []
        for t in range(int(rng.integers(1, 5))):
            points = rng.uniform(-0.1, 0.1, size=(int(rng.integers(1, 25)), 3))
            preds.append(SemanticPrediction(points, rng.normal(size=(len(points), 4)), t + 1))
        fused = fuse_semantic(preds)
        want = semantic_oracle(preds)
        got = dict(zip(map(tuple, fused.cell_indices.tolist()), fused.cell_labels.tolist()))
        ok = ok and got == want
        shuffled = [preds[i] for i in rng.permutation(len(preds))]
        again = fuse_semantic(shuffled)
        ok = ok and np.array_equal(again.cell_indices, fused.cell_indices)
        ok = ok and np.array_equal(again.cell_labels, fused.cell_labels)
    verdict(8, "fused cells equal the 2cm max oracle, order invariant (200 cases)", ok)


# 9 -------------------------------------------------------------------------

def test_09_online_fusion_beats_single_frames(tmp_path):
    start = time.perf_counter()
    wins = 0
    prefix_ok = True
    for seed in (101, 102, 103, 104, 105):
        seq = tmp_path / f"room_{seed}"
        generate_sequence(seq, num_frames=16, seed=seed)
        config = StreamConfig(task="semseg", backbone="labeled-onehot", noise=0.3, seed=seed)
        result = run_stream(config, seq)
        fused_16 = float(result.report["fused_miou"])
        mean_frame = float(result.report["mean_frame_miou"])
        half = fuse_semantic(result.predictions[:8])
        gt_half = np.concatenate([l.labels for l in result.lifted[:8]])
        fused_8 = semantic_metrics(half.point_labels, gt_half, config.num_classes).miou
        wins += fused_16 > mean_frame
        prefix_ok = prefix_ok and fused_16 >= fused_8 - 0.01
    elapsed = time.perf_counter() - start
    verdict(
        9,
        f"fused beats mean per-frame mIoU in {wins}/5 seeds, 16 >= 8 frames - 0.01, {elapsed:.1f}s",
        wins >= 4 and prefix_ok and elapsed < 60.0,
    )


# 10 ------------------------------------------------------------------------

def test_10_two_runs_are_byte_identical(tmp_path):
    seq = tmp_path / "seq"
    generate_sequence(seq, num_frames=4, seed=7)
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        code = main([
            "run", "--task", "semseg", "--seq", str(seq), "--out", str(out),
            "--noise", "0.25", "--seed", "7",
        ])
        code |= main(["eval", "--pred", str(out), "--gt", str(seq)])
        assert code == 0
        outs.append(out)
    files_a = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(outs[1]) for p in outs[1].rglob("*") if p.is_file())
    ok = files_a == files_b and len(files_a) > 0
    for rel in files_a:
        ok = ok and (outs[0] / rel).read_bytes() == (outs[1] / rel).read_bytes()
    verdict(10, f"two seeded runs byte-identical across {len(files_a)} files", ok)
