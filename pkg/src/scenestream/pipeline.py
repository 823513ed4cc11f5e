"""End-to-end streaming pipeline: backbone stubs, adapters, heads, fusion.

The backbone and head are deterministic stubs; the system under test is
the memory and adapter math around them. Three backbone modes:

  * ``identity``        image features are the color planes, point
                        features are the fused lift (color + sampled)
  * ``labeled-onehot``  image features are one-hot ground-truth labels
                        plus seeded Gaussian noise; point features are
                        the sampled image channels
  * ``seeded-random``   image features and a point projection matrix are
                        drawn from seeded generators

All stub outputs are pure functions of (seed, frame content), never of
the frame's position in the stream, so duplicated frames get identical
features and online/single-view comparisons are exact.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .adapters import (
    DEFAULT_SCALE,
    ImageAdapter,
    PointAdapter,
    adapt_image,
    adapt_points,
)
from .fusion import (
    DEFAULT_DELTA,
    DEFAULT_IOU_THRESHOLD,
    DetBox,
    FusedScene,
    SemanticPrediction,
    extract_instances,
    fuse_boxes,
    fuse_semantic,
    write_box_records,
    write_instance_records,
    write_semantic_records,
)
from .geometry import Frame, PointFeatureSet, lift_depth, sample_image_features
from .image_memory import DEFAULT_TAU, ImageMemory
from .metrics import detection_ap, semantic_metrics
from .numerics import LinearMap, load_weights
from .point_memory import (
    DEFAULT_CAPACITY,
    DEFAULT_QUEUE_LENGTH,
    DEFAULT_VOXEL_SIZE,
    VoxelMemory,
)
from .sequence_io import SequenceError, atomic_write_text, load_sequence
from .synthetic import DEFAULT_NUM_CLASSES, FIRST_OBJECT_CLASS

__all__ = [
    "ConfigError",
    "StreamConfig",
    "MockBackbone",
    "OnlinePipeline",
    "single_view_frame",
    "StreamResult",
    "run_stream",
    "write_outputs",
    "TASKS",
    "BACKBONE_MODES",
    "WEIGHT_RECORD_NAMES",
]

TASKS = ("semseg", "detection", "instance")
BACKBONE_MODES = ("identity", "labeled-onehot", "seeded-random")

# Detection head: connected blobs on this grid, at least this many points.
DETECTION_CELL = 0.1
DETECTION_MIN_POINTS = 5

WEIGHT_RECORD_NAMES = ("point.conv", "image.r1", "image.r2", "image.conv", "image.bridge")

Prediction = Union[SemanticPrediction, list]


class ConfigError(Exception):
    """Invalid run configuration (bad hyperparameters, weights, modes)."""


@dataclass(frozen=True)
class StreamConfig:
    """Everything a run needs besides the sequence itself."""

    task: str = "semseg"
    voxel_size: float = DEFAULT_VOXEL_SIZE
    queue_length: int = DEFAULT_QUEUE_LENGTH
    capacity: int = DEFAULT_CAPACITY
    scale: float = DEFAULT_SCALE
    tau: int = DEFAULT_TAU
    delta: float = DEFAULT_DELTA
    iou_threshold: float = DEFAULT_IOU_THRESHOLD
    seed: int = 0
    backbone: str = "labeled-onehot"
    noise: float = 0.0
    num_classes: int = DEFAULT_NUM_CLASSES
    embed_dim: Optional[int] = None
    weights_path: Optional[str] = None
    dump_memory: Optional[str] = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}, expected one of {TASKS}")
        if self.backbone not in BACKBONE_MODES:
            raise ConfigError(
                f"unknown backbone {self.backbone!r}, expected one of {BACKBONE_MODES}"
            )
        if self.voxel_size <= 0:
            raise ConfigError(f"voxel size must be positive, got {self.voxel_size}")
        if self.queue_length < 1:
            raise ConfigError(f"queue length must be >= 1, got {self.queue_length}")
        if self.capacity < 1:
            raise ConfigError(f"capacity must be >= 1, got {self.capacity}")
        if self.scale < 1:
            raise ConfigError(f"scale must be >= 1, got {self.scale}")
        if self.tau < 1:
            raise ConfigError(f"tau must be >= 1, got {self.tau}")
        if self.delta < 0:
            raise ConfigError(f"delta must be >= 0, got {self.delta}")
        if not 0 <= self.iou_threshold <= 1:
            raise ConfigError(f"IoU threshold must be in [0, 1], got {self.iou_threshold}")
        if self.noise < 0:
            raise ConfigError(f"noise must be >= 0, got {self.noise}")
        if self.num_classes < FIRST_OBJECT_CLASS + 1:
            raise ConfigError(
                f"need at least {FIRST_OBJECT_CLASS + 1} classes, got {self.num_classes}"
            )
        if self.embed_dim is not None:
            if self.embed_dim < 1:
                raise ConfigError(f"embed dim must be >= 1, got {self.embed_dim}")
            if self.embed_dim % self.tau != 0:
                raise ConfigError(
                    f"embed dim {self.embed_dim} not divisible by tau {self.tau}"
                )

    def resolved_embed_dim(self, image_channels: int) -> int:
        """Configured C', or the smallest multiple of tau covering the input."""
        if self.embed_dim is not None:
            return self.embed_dim
        return max(1, -(-image_channels // self.tau)) * self.tau


class MockBackbone:
    """Deterministic stand-in for frozen image and point backbones.

    Outputs depend only on the seed and the frame's pixel content (keyed
    by checksums), never on stream position, so re-fed frames reproduce
    their features exactly.
    """

    def __init__(self, config: StreamConfig):
        self.mode = config.backbone
        self.num_classes = config.num_classes
        self.noise = config.noise
        self.seed = config.seed
        self._point_map: Optional[LinearMap] = None

    @property
    def image_channels(self) -> int:
        return 3 if self.mode == "identity" else self.num_classes

    @property
    def point_channels(self) -> int:
        # fused input is 3 color channels + sampled image channels
        return 3 + self.image_channels if self.mode == "identity" else self.num_classes

    def _rng(self, frame: Frame, salt: int) -> np.random.Generator:
        key = [
            self.seed,
            salt,
            zlib.crc32(frame.depth.tobytes()),
            zlib.crc32(frame.color.tobytes()),
        ]
        if frame.labels is not None:
            key.append(zlib.crc32(np.ascontiguousarray(frame.labels).tobytes()))
        return np.random.default_rng(key)

    def image_features(self, frame: Frame) -> np.ndarray:
        if self.mode == "identity":
            return frame.color.copy()
        if self.mode == "labeled-onehot":
            if frame.labels is None:
                raise SequenceError(
                    f"frame {frame.timestamp}: labeled-onehot backbone needs label images"
                )
            if frame.labels.min() < 0 or frame.labels.max() >= self.num_classes:
                raise SequenceError(
                    f"frame {frame.timestamp}: labels outside [0, {self.num_classes})"
                )
            feats = np.zeros((*frame.labels.shape, self.num_classes))
            h, w = frame.labels.shape
            feats[np.arange(h)[:, None], np.arange(w)[None, :], frame.labels] = 1.0
            if self.noise > 0:
                feats = feats + self.noise * self._rng(frame, 1).standard_normal(feats.shape)
            return feats
        rng = self._rng(frame, 2)
        return rng.standard_normal(
            (frame.intrinsics.height, frame.intrinsics.width, self.num_classes)
        )

    def point_features(self, fused: np.ndarray) -> np.ndarray:
        """Map fused per-point features (color + sampled) to head inputs."""
        if self.mode == "identity":
            return fused
        if self.mode == "labeled-onehot":
            return fused[:, 3:]
        if self._point_map is None:
            self._point_map = LinearMap.seeded(3 + self.num_classes, self.num_classes, self.seed)
        return fused @ self._point_map.matrix


def _connected_groups(cells: np.ndarray) -> list[np.ndarray]:
    """Group rows of unique integer cells into 26-connected components."""
    index = {tuple(c): i for i, c in enumerate(cells.tolist())}
    parent = list(range(len(cells)))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    offsets = [
        (dx, dy, dz)
        for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)
        if (dx, dy, dz) != (0, 0, 0)
    ]
    for i, cell in enumerate(cells.tolist()):
        for off in offsets:
            j = index.get((cell[0] + off[0], cell[1] + off[1], cell[2] + off[2]))
            if j is not None:
                ra, rb = find(i), find(j)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
    groups: dict[int, list[int]] = {}
    for i in range(len(cells)):
        groups.setdefault(find(i), []).append(i)
    return [np.asarray(groups[r], dtype=np.int64) for r in sorted(groups)]


def _detect_boxes(points: np.ndarray, logits: np.ndarray, timestamp: int) -> list[DetBox]:
    """One box per connected same-class blob of confidently labeled points.

    Points take their argmax class; object classes (>= 2) are clustered
    into 26-connected blobs on a coarse grid; each blob of at least
    ``DETECTION_MIN_POINTS`` points becomes its AABB. The score is the
    blob's mean argmax margin, clipped to [0, 1].
    """
    if len(points) == 0:
        return []
    labels = logits.argmax(axis=1)
    boxes: list[DetBox] = []
    top = np.sort(logits, axis=1)
    margins = top[:, -1] - top[:, -2] if logits.shape[1] > 1 else top[:, -1]
    for label in sorted(int(c) for c in np.unique(labels) if c >= FIRST_OBJECT_CLASS):
        mask = labels == label
        pts = points[mask]
        cells = np.floor(pts / DETECTION_CELL).astype(np.int64)
        uniq, inverse = np.unique(cells, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        for group in _connected_groups(uniq):
            members = np.isin(inverse, group)
            if members.sum() < DETECTION_MIN_POINTS:
                continue
            sub = pts[members]
            lo, hi = sub.min(axis=0), sub.max(axis=0)
            size = np.maximum(hi - lo, 1e-3)
            score = float(np.clip(margins[mask][members].mean(), 0.0, 1.0))
            boxes.append(
                DetBox(
                    center=tuple(((lo + hi) / 2.0).tolist()),
                    size=tuple(size.tolist()),
                    label=label,
                    score=score,
                    timestamp=timestamp,
                )
            )
    return boxes


def _head(task: str, points: np.ndarray, logits: np.ndarray, timestamp: int) -> Prediction:
    if task == "semseg":
        return SemanticPrediction(points, logits, timestamp)
    return _detect_boxes(points, logits, timestamp)


def _build_adapters(
    config: StreamConfig, point_channels: int, image_channels: int
) -> tuple[PointAdapter, ImageAdapter]:
    embed = config.resolved_embed_dim(image_channels)
    if config.weights_path is None:
        return (
            PointAdapter.zero_init(point_channels, scale=config.scale),
            ImageAdapter.zero_init(image_channels, embed, config.tau),
        )
    try:
        records = load_weights(config.weights_path)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot load weights: {exc}") from exc
    missing = [n for n in WEIGHT_RECORD_NAMES if n not in records]
    if missing:
        raise ConfigError(f"weight file lacks records: {', '.join(missing)}")
    try:
        point = PointAdapter(records["point.conv"], config.scale)
        image = ImageAdapter(
            r1=records["image.r1"],
            r2=records["image.r2"],
            conv=records["image.conv"],
            bridge=records["image.bridge"],
            tau=config.tau,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"weights do not fit this configuration: {exc}") from exc
    if point.conv.c_in != point_channels:
        raise ConfigError(
            f"point adapter width {point.conv.c_in} != backbone width {point_channels}"
        )
    if image.r1.c_in != image_channels:
        raise ConfigError(
            f"image adapter width {image.r1.c_in} != backbone width {image_channels}"
        )
    return point, image


class OnlinePipeline:
    """Sequential per-frame state machine owning both memories."""

    def __init__(self, config: StreamConfig, height: int, width: int):
        self.config = config
        self.backbone = MockBackbone(config)
        self.point_adapter, self.image_adapter = _build_adapters(
            config, self.backbone.point_channels, self.backbone.image_channels
        )
        self.point_memory = VoxelMemory(
            voxel_size=config.voxel_size,
            queue_length=config.queue_length,
            capacity=config.capacity,
        )
        self.image_memory = ImageMemory.zeros(
            height, width, self.image_adapter.embed_dim, config.tau
        )
        self.time = 0

    def process_frame(self, frame: Frame) -> tuple[Prediction, PointFeatureSet]:
        """Advance one frame; returns the prediction and the lifted points.

        Order matters: the image adapter reads the point memory as left
        by the previous frame, then the point adapter merges this frame.
        """
        if frame.timestamp <= self.time:
            raise ValueError(
                f"out-of-order frame: pipeline at {self.time}, frame at {frame.timestamp}"
            )
        image_feats = self.backbone.image_features(frame)
        refined_image, self.image_memory = adapt_image(
            image_feats,
            self.image_memory,
            self.point_memory,
            self.image_adapter,
            frame.intrinsics,
            frame.pose,
            frame.timestamp,
        )
        lifted = lift_depth(frame)
        sampled = sample_image_features(
            lifted.points, refined_image, frame.intrinsics, frame.pose
        )
        fused = np.concatenate([lifted.feats, sampled], axis=1)
        point_feats = self.backbone.point_features(fused)
        refined_points = adapt_points(
            lifted.points,
            point_feats,
            self.point_memory,
            self.point_adapter,
            frame.timestamp,
        )
        self.time = frame.timestamp
        return _head(self.config.task, lifted.points, refined_points, frame.timestamp), lifted


def single_view_frame(
    frame: Frame, config: StreamConfig, backbone: Optional[MockBackbone] = None
) -> tuple[Prediction, PointFeatureSet]:
    """The memory-free reference path: backbone, sampling, head, no adapters."""
    backbone = backbone or MockBackbone(config)
    image_feats = backbone.image_features(frame)
    lifted = lift_depth(frame)
    sampled = sample_image_features(lifted.points, image_feats, frame.intrinsics, frame.pose)
    fused = np.concatenate([lifted.feats, sampled], axis=1)
    point_feats = backbone.point_features(fused)
    return _head(config.task, lifted.points, point_feats, frame.timestamp), lifted


@dataclass
class StreamResult:
    """Everything a run produces before files are written."""

    fused: FusedScene
    predictions: list
    lifted: list
    memory: VoxelMemory
    report: dict[str, str] = field(default_factory=dict)
    frame_stats: list = field(default_factory=list)


def _fuse(task: str, predictions: Sequence[Prediction], memory: VoxelMemory,
          config: StreamConfig) -> FusedScene:
    if task == "semseg":
        return fuse_semantic(predictions)
    boxes = [b for frame_boxes in predictions for b in frame_boxes]
    kept = fuse_boxes(boxes, config.iou_threshold, config.delta)
    scene = FusedScene(boxes=kept)
    if task == "instance":
        scene.instances = extract_instances(kept, memory)
    return scene


def _semantic_report(result: StreamResult, config: StreamConfig) -> None:
    """Fused and mean per-frame scores against lifted GT labels, if present."""
    if any(l.labels is None for l in result.lifted):
        return
    preds = result.predictions
    if not preds or preds[0].logits.shape[1] != config.num_classes:
        return
    gt = np.concatenate([l.labels for l in result.lifted])
    fused = semantic_metrics(result.fused.point_labels, gt, config.num_classes)
    frame_scores = [
        semantic_metrics(p.logits.argmax(axis=1), l.labels, config.num_classes).miou
        for p, l in zip(preds, result.lifted)
        if len(p)
    ]
    result.report["fused_miou"] = f"{fused.miou:.6f}"
    result.report["fused_macc"] = f"{fused.macc:.6f}"
    result.report["mean_frame_miou"] = f"{float(np.mean(frame_scores)):.6f}"


def _detection_report(result: StreamResult, gt_boxes_path: Path) -> None:
    from .fusion import read_box_records

    if not gt_boxes_path.is_file():
        return
    gts = read_box_records(gt_boxes_path)
    for thr, key in ((0.25, "map_25"), (0.5, "map_50")):
        _, mean_ap = detection_ap(result.fused.boxes, gts, thr)
        result.report[key] = f"{mean_ap:.6f}"


def run_stream(config: StreamConfig, seq_dir: str | Path) -> StreamResult:
    """Fold the online pipeline over a sequence and fuse per the task."""
    seq_dir = Path(seq_dir)
    intr, frames = load_sequence(seq_dir)
    pipeline = OnlinePipeline(config, intr.height, intr.width)
    predictions, lifted, frame_stats = [], [], []
    for frame in frames:
        pred, lift = pipeline.process_frame(frame)
        predictions.append(pred)
        lifted.append(lift)
        frame_stats.append(pipeline.point_memory.stats())
    fused = _fuse(config.task, predictions, pipeline.point_memory, config)
    result = StreamResult(
        fused, predictions, lifted, pipeline.point_memory, frame_stats=frame_stats
    )

    stats = pipeline.point_memory.stats()
    r = result.report
    r["task"] = config.task
    r["backbone"] = config.backbone
    r["frames"] = str(len(frames))
    r["num_classes"] = str(config.num_classes)
    r["noise"] = f"{config.noise:.6g}"
    r["seed"] = str(config.seed)
    r["voxel_size"] = f"{config.voxel_size:.6g}"
    r["queue_length"] = str(config.queue_length)
    r["capacity"] = str(config.capacity)
    r["scale"] = f"{config.scale:.6g}"
    r["tau"] = str(config.tau)
    r["delta"] = f"{config.delta:.6g}"
    r["iou_threshold"] = f"{config.iou_threshold:.6g}"
    r["points_total"] = str(sum(len(l) for l in lifted))
    r["memory_cells"] = str(stats["cells"])
    r["memory_oldest"] = "none" if stats["oldest"] is None else str(stats["oldest"])
    r["memory_newest"] = "none" if stats["newest"] is None else str(stats["newest"])
    if config.task == "semseg":
        r["fused_cells"] = str(len(fused.cell_indices))
        _semantic_report(result, config)
    else:
        r["boxes_kept"] = str(len(fused.boxes))
        if config.task == "instance":
            r["instance_cells"] = str(sum(len(i) for i in fused.instances))
        _detection_report(result, seq_dir / "gt_boxes.txt")

    if config.dump_memory:
        dump = Path(config.dump_memory)
        dump.parent.mkdir(parents=True, exist_ok=True)
        pipeline.point_memory.save(dump)
    return result


def write_outputs(result: StreamResult, out_dir: str | Path, config: StreamConfig) -> None:
    """Write the task's records and the run report (atomically, per file)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if config.task == "semseg":
        write_semantic_records(
            out_dir / "semantic.txt", result.fused.cell_indices, result.fused.cell_labels
        )
    else:
        write_box_records(out_dir / "boxes.txt", result.fused.boxes)
        if config.task == "instance":
            write_instance_records(out_dir / "instances.txt", result.fused.instances)
    atomic_write_text(
        out_dir / "report.txt",
        "".join(f"{k} {v}\n" for k, v in result.report.items()),
    )
