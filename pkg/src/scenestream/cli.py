"""Command line interface.

Subcommands:
  run   process a sequence directory, write fused records + figures
  gen   render seeded synthetic room sequences
  eval  score prediction records against ground truth

Exit codes: 0 success, 2 malformed input, 3 configuration error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .fusion import read_box_records, read_semantic_records
from .geometry import lift_depth
from .metrics import detection_ap, semantic_metrics
from .pipeline import ConfigError, StreamConfig, run_stream, write_outputs
from .report import render_eval_figures, render_run_figures
from .sequence_io import SequenceError, atomic_write_text, load_sequence
from .synthetic import DEFAULT_NUM_CLASSES, generate_sequence

__all__ = ["main"]

EXIT_OK = 0
EXIT_BAD_INPUT = 2
EXIT_BAD_CONFIG = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scenestream",
        description="Streaming RGB-D scene perception with temporal memories.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="process a sequence and write fused outputs")
    run.add_argument("--task", required=True, help="semseg, detection, or instance")
    run.add_argument("--seq", required=True, help="sequence directory")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--voxel-size", type=float, default=0.08)
    run.add_argument("--queue-len", type=int, default=50)
    run.add_argument("--scale", type=float, default=2.5)
    run.add_argument("--tau", type=int, default=8)
    run.add_argument("--delta", type=float, default=0.03)
    run.add_argument("--iou-thr", type=float, default=0.5)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--weights", default=None, help="adapter weight file")
    run.add_argument("--dump-memory", default=None, help="write the final voxel memory here")
    run.add_argument("--capacity", type=int, default=200_000, help="memory cell budget")
    run.add_argument(
        "--backbone", default="labeled-onehot",
        help="stub mode: identity, labeled-onehot, or seeded-random",
    )
    run.add_argument("--noise", type=float, default=0.0, help="label-onehot noise level")
    run.add_argument("--num-classes", type=int, default=DEFAULT_NUM_CLASSES)
    run.add_argument("--embed-dim", type=int, default=None, help="image embed width C'")

    gen = sub.add_parser("gen", help="render synthetic room sequences")
    gen.add_argument("--rooms", type=int, required=True)
    gen.add_argument("--frames", type=int, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)

    ev = sub.add_parser("eval", help="score predictions against ground truth")
    ev.add_argument("--pred", required=True, help="directory holding run outputs")
    ev.add_argument("--gt", required=True, help="sequence directory with ground truth")
    ev.add_argument("--num-classes", type=int, default=DEFAULT_NUM_CLASSES)
    return parser


def _cmd_run(args) -> int:
    config = StreamConfig(
        task=args.task,
        voxel_size=args.voxel_size,
        queue_length=args.queue_len,
        capacity=args.capacity,
        scale=args.scale,
        tau=args.tau,
        delta=args.delta,
        iou_threshold=args.iou_thr,
        seed=args.seed,
        backbone=args.backbone,
        noise=args.noise,
        num_classes=args.num_classes,
        embed_dim=args.embed_dim,
        weights_path=args.weights,
        dump_memory=args.dump_memory,
    )
    result = run_stream(config, args.seq)
    write_outputs(result, args.out, config)
    render_run_figures(result, args.out, config.task)
    for key, value in result.report.items():
        print(f"{key} {value}")
    return EXIT_OK


def _gt_semantic_cells(gt_dir: Path, num_classes: int) -> tuple[np.ndarray, np.ndarray]:
    """Majority ground-truth label per 2 cm cell (ties take the lower label)."""
    from .fusion import FUSION_CELL

    _, frames = load_sequence(gt_dir)
    points, labels = [], []
    for frame in frames:
        if frame.labels is None:
            raise SequenceError(f"{gt_dir}: frame {frame.timestamp} has no label image")
        lifted = lift_depth(frame)
        points.append(lifted.points)
        labels.append(lifted.labels)
    pts = np.concatenate(points)
    labs = np.concatenate(labels)
    cells = np.floor(pts / FUSION_CELL).astype(np.int64)
    uniq, inverse = np.unique(cells, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    votes = np.zeros((len(uniq), num_classes), dtype=np.int64)
    np.add.at(votes, (inverse, labs), 1)
    return uniq, votes.argmax(axis=1)


def _cmd_eval(args) -> int:
    pred_dir = Path(args.pred)
    gt_dir = Path(args.gt)
    if not pred_dir.is_dir():
        raise SequenceError(f"not a directory: {pred_dir}")
    lines: dict[str, str] = {}
    per_class: dict[str, dict[int, float]] = {}

    sem_path = pred_dir / "semantic.txt"
    if sem_path.is_file():
        pred_cells, pred_labels = read_semantic_records(sem_path)
        if pred_labels.size and pred_labels.max() >= args.num_classes:
            raise SequenceError(
                f"{sem_path}: labels exceed --num-classes {args.num_classes}"
            )
        gt_cells, gt_labels = _gt_semantic_cells(gt_dir, args.num_classes)
        pred_map = {tuple(c): l for c, l in zip(pred_cells.tolist(), pred_labels.tolist())}
        paired_pred, paired_gt = [], []
        for cell, lab in zip(gt_cells.tolist(), gt_labels.tolist()):
            hit = pred_map.get(tuple(cell))
            if hit is not None:
                paired_pred.append(hit)
                paired_gt.append(lab)
        if not paired_pred:
            raise SequenceError("no overlapping cells between prediction and ground truth")
        scores = semantic_metrics(paired_pred, paired_gt, args.num_classes)
        lines["miou"] = f"{scores.miou:.6f}"
        lines["macc"] = f"{scores.macc:.6f}"
        lines["cells_scored"] = str(len(paired_pred))
        lines["gt_cells"] = str(len(gt_cells))
        for c in sorted(scores.iou):
            lines[f"iou_{c}"] = f"{scores.iou[c]:.6f}"
        per_class["iou"] = scores.iou

    box_path = pred_dir / "boxes.txt"
    if box_path.is_file():
        gt_box_path = gt_dir / "gt_boxes.txt"
        if not gt_box_path.is_file():
            raise SequenceError(f"missing ground truth boxes: {gt_box_path}")
        preds = read_box_records(box_path)
        gts = read_box_records(gt_box_path)
        for thr, tag in ((0.25, "25"), (0.5, "50")):
            ap, mean_ap = detection_ap(preds, gts, thr)
            lines[f"map_{tag}"] = f"{mean_ap:.6f}"
            for c in sorted(ap):
                lines[f"ap{tag}_{c}"] = f"{ap[c]:.6f}"
            per_class[f"ap{tag}"] = ap

    if not lines:
        raise SequenceError(f"{pred_dir}: no semantic.txt or boxes.txt to evaluate")
    atomic_write_text(pred_dir / "metrics.txt", "".join(f"{k} {v}\n" for k, v in lines.items()))
    render_eval_figures(per_class, pred_dir)
    for key, value in lines.items():
        print(f"{key} {value}")
    return EXIT_OK


def _cmd_gen(args) -> int:
    if args.rooms < 1:
        raise ConfigError(f"--rooms must be >= 1, got {args.rooms}")
    if args.frames < 1:
        raise ConfigError(f"--frames must be >= 1, got {args.frames}")
    out = Path(args.out)
    for i in range(args.rooms):
        room_dir = out / f"room_{i:03d}"
        spec = generate_sequence(room_dir, args.frames, args.seed + i)
        print(f"{room_dir} frames={args.frames} objects={len(spec.objects)}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "gen":
            return _cmd_gen(args)
        return _cmd_eval(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except (SequenceError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
