"""Region-split segmentation metrics: per-class IoU, mIoU, and F-score.

All metrics accept a boolean region mask and only count pixels inside it.
The F-score weighting constant is interpreted as beta^2 = 0.3, following the
convention of the audio-visual segmentation evaluation line this bench
mirrors; report headers state the convention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene import VEHICLE_CLASSES

F_BETA_SQUARED = 0.3
K_CLASSES = 4
REGIONS = ("FPV", "OOV", "All")


@dataclass
class RegionMetrics:
    region: str
    class_iou: dict  # class id -> IoU or None when undefined in the region
    miou: float | None
    f_score: float


def confusion_counts(pred: np.ndarray, gt: np.ndarray, region: np.ndarray,
                     k: int = K_CLASSES) -> np.ndarray:
    """K x K integer matrix, rows ground truth, columns prediction."""
    if pred.shape != gt.shape or pred.shape != region.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape}, gt {gt.shape}, "
                         f"region {region.shape}")
    sel = region.astype(bool)
    idx = gt[sel].astype(np.int64) * k + pred[sel].astype(np.int64)
    return np.bincount(idx, minlength=k * k).reshape(k, k)


def iou_from_confusion(conf: np.ndarray) -> dict:
    """Per-vehicle-class IoU; None where the class never occurs in pred or gt."""
    out = {}
    for c in VEHICLE_CLASSES:
        tp = conf[c, c]
        fp = conf[:, c].sum() - tp
        fn = conf[c, :].sum() - tp
        denom = tp + fp + fn
        out[c] = None if denom == 0 else float(tp) / float(denom)
    return out


def mean_iou(class_iou: dict) -> float | None:
    defined = [v for v in class_iou.values() if v is not None]
    if not defined:
        return None
    return float(np.mean(defined))


def miou(pred: np.ndarray, gt: np.ndarray, region: np.ndarray):
    """(per-class IoU dict, mIoU) over region pixels; undefined classes excluded."""
    conf = confusion_counts(pred, gt, region)
    class_iou = iou_from_confusion(conf)
    return class_iou, mean_iou(class_iou)


def fscore_from_confusion(conf: np.ndarray, beta_squared: float = F_BETA_SQUARED) -> float:
    """Binary any-vehicle F-score from a K x K confusion matrix."""
    fg_gt = conf[1:, :].sum()
    fg_pred = conf[:, 1:].sum()
    tp = conf[1:, 1:].sum()
    if fg_gt == 0:
        return 1.0 if fg_pred == 0 else 0.0
    if fg_pred == 0 or tp == 0:
        return 0.0
    precision = tp / fg_pred
    recall = tp / fg_gt
    return float((1.0 + beta_squared) * precision * recall
                 / (beta_squared * precision + recall))


def f_score(pred: np.ndarray, gt: np.ndarray, region: np.ndarray,
            beta_squared: float = F_BETA_SQUARED) -> float:
    return fscore_from_confusion(confusion_counts(pred, gt, region), beta_squared)


def region_metrics(conf: np.ndarray, region: str) -> RegionMetrics:
    class_iou = iou_from_confusion(conf)
    return RegionMetrics(region=region, class_iou=class_iou, miou=mean_iou(class_iou),
                         f_score=fscore_from_confusion(conf))
