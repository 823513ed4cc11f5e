"""Streaming memory engine for online RGB-D scene perception.

Maintains a timestamped sparse voxel memory and a channel-shift image
memory across a posed RGB-D stream, refines per-frame features through
zero-initialized residual adapters, and fuses per-frame predictions
into scene-level semantics, boxes, or instances.
"""

from .adapters import ImageAdapter, PointAdapter, adapt_image, adapt_points
from .fusion import (
    DetBox,
    FusedScene,
    SemanticPrediction,
    aabb_iou,
    extract_instances,
    fuse_boxes,
    fuse_semantic,
)
from .geometry import (
    Frame,
    Intrinsics,
    PointFeatureSet,
    Pose,
    lift_depth,
    project_memory_to_image,
    sample_image_features,
)
from .image_memory import ImageMemory, embed_and_shift, recombine
from .metrics import detection_ap, semantic_metrics
from .numerics import (
    ConvWeights,
    LinearMap,
    SparseTensor,
    apply_linear,
    dense_conv2d,
    load_weights,
    save_weights,
    sparse_conv2d,
    sparse_conv3d,
)
from .pipeline import (
    ConfigError,
    MockBackbone,
    OnlinePipeline,
    StreamConfig,
    StreamResult,
    run_stream,
    single_view_frame,
    write_outputs,
)
from .point_memory import VoxelizedFrame, VoxelMemory, bucket_points, voxelize
from .sequence_io import SequenceError, load_sequence, save_frame, save_intrinsics
from .synthetic import RoomSpec, default_intrinsics, generate_sequence, render_frame

__version__ = "0.1.0"

__all__ = [
    "ImageAdapter", "PointAdapter", "adapt_image", "adapt_points",
    "DetBox", "FusedScene", "SemanticPrediction", "aabb_iou",
    "extract_instances", "fuse_boxes", "fuse_semantic",
    "Frame", "Intrinsics", "PointFeatureSet", "Pose",
    "lift_depth", "project_memory_to_image", "sample_image_features",
    "ImageMemory", "embed_and_shift", "recombine",
    "detection_ap", "semantic_metrics",
    "ConvWeights", "LinearMap", "SparseTensor", "apply_linear",
    "dense_conv2d", "load_weights", "save_weights", "sparse_conv2d", "sparse_conv3d",
    "ConfigError", "MockBackbone", "OnlinePipeline", "StreamConfig",
    "StreamResult", "run_stream", "single_view_frame", "write_outputs",
    "VoxelizedFrame", "VoxelMemory", "bucket_points", "voxelize",
    "SequenceError", "load_sequence", "save_frame", "save_intrinsics",
    "RoomSpec", "default_intrinsics", "generate_sequence", "render_frame",
    "__version__",
]
