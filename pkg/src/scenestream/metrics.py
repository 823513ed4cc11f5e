"""Evaluation metrics: semantic IoU/accuracy and detection average precision."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .fusion import DetBox, aabb_iou

__all__ = ["SemanticScores", "semantic_metrics", "detection_ap"]


@dataclass(frozen=True)
class SemanticScores:
    """Per-class IoU and accuracy plus their means over GT-present classes."""

    iou: dict[int, float]
    acc: dict[int, float]
    miou: float
    macc: float


def semantic_metrics(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> SemanticScores:
    """Confusion-count metrics over paired label vectors.

    Per class c: IoU = TP / (TP + FP + FN) and accuracy = TP / (TP + FN).
    Means run over classes that appear in the ground truth; classes the
    model predicts but GT lacks affect other classes' FP counts only.
    """
    pred = np.asarray(pred, dtype=np.int64).reshape(-1)
    gt = np.asarray(gt, dtype=np.int64).reshape(-1)
    if pred.shape != gt.shape:
        raise ValueError(f"pred and gt disagree: {pred.shape} vs {gt.shape}")
    if len(pred) == 0:
        raise ValueError("empty label vectors")
    if pred.min() < 0 or gt.min() < 0 or pred.max() >= num_classes or gt.max() >= num_classes:
        raise ValueError(f"labels outside [0, {num_classes})")

    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (gt, pred), 1)

    iou: dict[int, float] = {}
    acc: dict[int, float] = {}
    present = []
    for c in range(num_classes):
        tp = confusion[c, c]
        fn = confusion[c].sum() - tp
        fp = confusion[:, c].sum() - tp
        if tp + fn == 0:
            continue
        present.append(c)
        iou[c] = float(tp / (tp + fp + fn))
        acc[c] = float(tp / (tp + fn))
    if not present:
        raise ValueError("no class present in ground truth")
    miou = float(np.mean([iou[c] for c in present]))
    macc = float(np.mean([acc[c] for c in present]))
    return SemanticScores(iou, acc, miou, macc)


def _class_ap(preds: Sequence[DetBox], gts: Sequence[DetBox], iou_threshold: float) -> float:
    """All-point interpolated average precision for one class."""
    if not gts:
        return 0.0
    order = sorted(range(len(preds)), key=lambda i: (-preds[i].score, i))
    matched = [False] * len(gts)
    tp = np.zeros(len(order))
    fp = np.zeros(len(order))
    for rank, i in enumerate(order):
        best_iou, best_j = 0.0, -1
        for j, gt in enumerate(gts):
            if matched[j]:
                continue
            iou = aabb_iou(preds[i], gt)
            if iou > best_iou:
                best_iou, best_j = iou, j
        if best_j >= 0 and best_iou >= iou_threshold:
            matched[best_j] = True
            tp[rank] = 1
        else:
            fp[rank] = 1
    if not len(order):
        return 0.0
    ctp = np.cumsum(tp)
    cfp = np.cumsum(fp)
    recall = ctp / len(gts)
    precision = ctp / np.maximum(ctp + cfp, 1)
    # all-point interpolation: precision envelope integrated over recall steps
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    for k in range(len(mpre) - 2, -1, -1):
        mpre[k] = max(mpre[k], mpre[k + 1])
    steps = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def detection_ap(
    preds: Sequence[DetBox],
    gts: Sequence[DetBox],
    iou_threshold: float,
) -> tuple[dict[int, float], float]:
    """Per-class AP and its mean.

    Predictions are ranked by descending score (earlier index breaks
    ties) and greedily matched to the highest-IoU unmatched GT box of the
    same class when that IoU reaches the threshold. Classes present in GT
    or predictions count toward the mean; a class with predictions but no
    GT scores 0.
    """
    if not 0 <= iou_threshold <= 1:
        raise ValueError(f"IoU threshold must be in [0, 1], got {iou_threshold}")
    labels = sorted({b.label for b in preds} | {b.label for b in gts})
    if not labels:
        return {}, 0.0
    ap = {
        label: _class_ap(
            [b for b in preds if b.label == label],
            [b for b in gts if b.label == label],
            iou_threshold,
        )
        for label in labels
    }
    return ap, float(np.mean(list(ap.values())))
