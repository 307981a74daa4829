import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oovseg.metrics import (F_BETA_SQUARED, confusion_counts, f_score, fscore_from_confusion,
                            iou_from_confusion, mean_iou, miou, region_metrics)

FULL = np.ones((8, 8), dtype=bool)


def brute_force_counts(pred, gt, region, k=4):
    conf = np.zeros((k, k), dtype=np.int64)
    for h in range(pred.shape[0]):
        for w in range(pred.shape[1]):
            if region[h, w]:
                conf[gt[h, w], pred[h, w]] += 1
    return conf


def brute_force_iou(pred, gt, region):
    out = {}
    for c in (1, 2, 3):
        tp = fp = fn = 0
        for h in range(pred.shape[0]):
            for w in range(pred.shape[1]):
                if not region[h, w]:
                    continue
                if pred[h, w] == c and gt[h, w] == c:
                    tp += 1
                elif pred[h, w] == c:
                    fp += 1
                elif gt[h, w] == c:
                    fn += 1
        out[c] = None if tp + fp + fn == 0 else tp / (tp + fp + fn)
    return out


def brute_force_fscore(pred, gt, region, beta_sq=F_BETA_SQUARED):
    tp = fp = fn = tn = 0
    for h in range(pred.shape[0]):
        for w in range(pred.shape[1]):
            if not region[h, w]:
                continue
            p, g = pred[h, w] > 0, gt[h, w] > 0
            tp += p and g
            fp += p and not g
            fn += g and not p
            tn += not p and not g
    if tp + fn == 0:
        return 1.0 if tp + fp == 0 else 0.0
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return (1 + beta_sq) * precision * recall / (beta_sq * precision + recall)


def test_perfect_prediction():
    gt = np.random.default_rng(0).integers(0, 4, (8, 8)).astype(np.uint8)
    class_iou, m = miou(gt, gt, FULL)
    for c, v in class_iou.items():
        if (gt == c).any():
            assert v == 1.0
    assert m == 1.0
    assert f_score(gt, gt, FULL) == 1.0


def test_disjoint_vehicles_zero():
    gt = np.zeros((8, 8), dtype=np.uint8)
    gt[0, :4] = 1
    pred = np.zeros((8, 8), dtype=np.uint8)
    pred[1, :4] = 2
    _, m = miou(pred, gt, FULL)
    assert m == 0.0


def test_undefined_classes_excluded():
    gt = np.zeros((4, 4), dtype=np.uint8)
    gt[0, 0] = 1
    pred = gt.copy()
    class_iou, m = miou(pred, gt, FULL[:4, :4])
    assert class_iou[2] is None and class_iou[3] is None
    assert m == 1.0


def test_all_undefined_is_absent():
    empty = np.zeros((4, 4), dtype=np.uint8)
    class_iou, m = miou(empty, empty, FULL[:4, :4])
    assert m is None
    assert all(v is None for v in class_iou.values())
    assert f_score(empty, empty, FULL[:4, :4]) == 1.0


def test_empty_gt_with_prediction_scores_zero():
    gt = np.zeros((4, 4), dtype=np.uint8)
    pred = gt.copy()
    pred[0, 0] = 1
    assert f_score(pred, gt, FULL[:4, :4]) == 0.0


def test_fscore_hand_case():
    # P=1, R=0.5 with beta^2=0.3 -> (1.3 * 0.5) / (0.3 + 0.5) = 0.8125
    gt = np.zeros((2, 4), dtype=np.uint8)
    gt[0] = 1
    pred = np.zeros_like(gt)
    pred[0, :2] = 1
    assert f_score(pred, gt, np.ones_like(gt, dtype=bool)) == pytest.approx(0.8125)


def test_fscore_symmetric_point():
    # P = R = 0.5 is weight independent
    gt = np.zeros((2, 4), dtype=np.uint8)
    gt[0, :2] = 1
    pred = np.zeros_like(gt)
    pred[0, 1:3] = 1
    for beta_sq in (0.3, 1.0, 2.0):
        assert f_score(pred, gt, np.ones_like(gt, dtype=bool), beta_sq) \
            == pytest.approx(0.5)


def test_shape_mismatch():
    with pytest.raises(ValueError):
        confusion_counts(np.zeros((2, 2), dtype=np.uint8), np.zeros((2, 3), dtype=np.uint8),
                         np.ones((2, 2), dtype=bool))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_counting_oracle(seed):
    rng = np.random.default_rng(seed)
    pred = rng.integers(0, 4, (8, 8)).astype(np.uint8)
    gt = rng.integers(0, 4, (8, 8)).astype(np.uint8)
    region = rng.integers(0, 2, (8, 8)).astype(bool)
    conf = confusion_counts(pred, gt, region)
    assert np.array_equal(conf, brute_force_counts(pred, gt, region))
    assert iou_from_confusion(conf) == brute_force_iou(pred, gt, region)
    assert fscore_from_confusion(conf) == pytest.approx(
        brute_force_fscore(pred, gt, region))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_region_consistency(seed):
    rng = np.random.default_rng(seed)
    pred = rng.integers(0, 4, (8, 8)).astype(np.uint8)
    gt = rng.integers(0, 4, (8, 8)).astype(np.uint8)
    fpv = rng.integers(0, 2, (8, 8)).astype(bool)
    total = confusion_counts(pred, gt, fpv) + confusion_counts(pred, gt, ~fpv)
    assert np.array_equal(total, confusion_counts(pred, gt, FULL))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.1, 100.0))
def test_argmax_scale_invariance(seed, scale):
    rng = np.random.default_rng(seed)
    logits = rng.standard_normal((6, 6, 4))
    assert np.array_equal(logits.argmax(-1), (scale * logits).argmax(-1))


def test_metric_bounds():
    rng = np.random.default_rng(9)
    for _ in range(20):
        pred = rng.integers(0, 4, (8, 8)).astype(np.uint8)
        gt = rng.integers(0, 4, (8, 8)).astype(np.uint8)
        rm = region_metrics(confusion_counts(pred, gt, FULL), "All")
        assert 0.0 <= rm.f_score <= 1.0
        if rm.miou is not None:
            assert 0.0 <= rm.miou <= 1.0
        for v in rm.class_iou.values():
            if v is not None:
                assert 0.0 <= v <= 1.0


def test_mean_iou_empty():
    assert mean_iou({1: None, 2: None, 3: None}) is None
