import numpy as np
import pytest

from linkseg import metrics
from linkseg.metrics import (ConfusionMatrix, InstanceIouAccumulator, average_instance_sizes,
                             class_weights, iiou, pixel_frequencies)
from linkseg.tensor import Prng
from linkseg.train import Sample

import oracles


# --------------------------------------------------------- confusion matrix

def test_hand_counted_confusion():
    cm = ConfusionMatrix(2)
    cm.accumulate(np.array([0, 0, 1, 1]), np.array([0, 1, 1, 1]))
    np.testing.assert_array_equal(cm.counts, [[1, 1], [0, 2]])
    np.testing.assert_allclose(cm.class_iou(), [0.5, 2.0 / 3.0])
    assert cm.mean_iou() == pytest.approx(7.0 / 12.0)


def test_perfect_prediction():
    labels = Prng(0).randint(0, 3, 100).reshape(10, 10)
    cm = ConfusionMatrix(3).accumulate(labels, labels)
    assert np.all(cm.counts == np.diag(np.diag(cm.counts)))
    np.testing.assert_allclose(cm.class_iou(), [1.0, 1.0, 1.0])
    assert cm.mean_iou() == 1.0


def test_disjoint_prediction_is_zero():
    cm = ConfusionMatrix(2)
    cm.accumulate(np.zeros(10, dtype=int), np.ones(10, dtype=int))
    assert cm.class_iou()[0] == 0.0


def test_ignore_label_skipped():
    cm = ConfusionMatrix(2)
    labels = np.array([0, 1, 255, 255])
    preds = np.array([0, 1, 0, 1])
    cm.accumulate(labels, preds)
    assert cm.counts.sum() == 2

    all_ignored = ConfusionMatrix(2).accumulate(np.full(5, 255), np.zeros(5, dtype=int))
    assert not all_ignored.counts.any()


def test_out_of_range_rejected():
    with pytest.raises(ValueError):
        ConfusionMatrix(2).accumulate(np.array([0, 3]), np.array([0, 0]))
    with pytest.raises(ValueError):
        ConfusionMatrix(2).accumulate(np.array([0, 0]), np.array([0, 5]))
    with pytest.raises(ValueError):
        ConfusionMatrix(2).accumulate(np.zeros(3), np.zeros(4))


def test_accumulation_order_independent():
    rng = Prng(1)
    chunks = [(rng.randint(0, 4, 50), rng.randint(0, 4, 50)) for _ in range(5)]
    a = ConfusionMatrix(4)
    for lab, pred in chunks:
        a.accumulate(lab, pred)
    b = ConfusionMatrix(4)
    for lab, pred in reversed(chunks):
        b.accumulate(lab, pred)
    np.testing.assert_array_equal(a.counts, b.counts)


def test_merge_equals_joint_accumulation():
    rng = Prng(2)
    l1, p1 = rng.randint(0, 3, 40), rng.randint(0, 3, 40)
    l2, p2 = rng.randint(0, 3, 40), rng.randint(0, 3, 40)
    joint = ConfusionMatrix(3).accumulate(l1, p1).accumulate(l2, p2)
    sharded = ConfusionMatrix(3).accumulate(l1, p1).merge(
        ConfusionMatrix(3).accumulate(l2, p2))
    np.testing.assert_array_equal(joint.counts, sharded.counts)
    with pytest.raises(ValueError):
        ConfusionMatrix(3).merge(ConfusionMatrix(4))


def test_mean_iou_permutation_invariant():
    rng = Prng(3)
    labels = rng.randint(0, 4, 256)
    preds = rng.randint(0, 4, 256)
    base = ConfusionMatrix(4).accumulate(labels, preds).mean_iou()
    perm = np.array([2, 0, 3, 1])
    permuted = ConfusionMatrix(4).accumulate(perm[labels], perm[preds]).mean_iou()
    assert base == pytest.approx(permuted)


def test_iou_matches_bruteforce_sets():
    rng = Prng(4)
    for _ in range(100):
        labels = rng.randint(0, 4, 64).reshape(8, 8)
        preds = rng.randint(0, 4, 64).reshape(8, 8)
        cm = ConfusionMatrix(4).accumulate(labels, preds)
        want = oracles.iou_naive(labels, preds, 4)
        got = cm.class_iou()
        np.testing.assert_array_equal(np.isnan(got), np.isnan(want))
        np.testing.assert_allclose(got[~np.isnan(got)], want[~np.isnan(want)])


def test_iou_bounds():
    rng = Prng(5)
    labels = rng.randint(0, 5, 400)
    preds = rng.randint(0, 5, 400)
    iou = ConfusionMatrix(5).accumulate(labels, preds).class_iou()
    assert np.all(iou[~np.isnan(iou)] >= 0.0)
    assert np.all(iou[~np.isnan(iou)] <= 1.0)


# -------------------------------------------------------------------- iIoU

def _worked_example():
    # one class with two instances, sizes 1 and 3 (average 2); the
    # prediction covers exactly the 3-pixel instance
    labels = np.full((1, 8), 255)
    labels[0, :4] = 1
    instances = np.zeros((1, 8), dtype=int)
    instances[0, 0] = 1          # size-1 instance
    instances[0, 1:4] = 2        # size-3 instance
    preds = np.full((1, 8), 0)
    preds[0, 1:4] = 1
    return labels, instances, preds


def test_iiou_worked_example():
    labels, instances, preds = _worked_example()
    avg = average_instance_sizes([(labels, instances)], num_classes=2)
    assert np.isnan(avg[0]) and avg[1] == 2.0
    # iTP = 3*(2/3) = 2, iFN = 1*(2/1) = 2, FP = 0 -> 2/(2+2) = 0.5
    per_class = iiou(labels, instances, preds, avg, num_classes=2)
    assert per_class[1] == pytest.approx(0.5)
    # whereas the plain IoU of that class is 3/4
    cm = ConfusionMatrix(2).accumulate(labels, preds)
    assert cm.class_iou()[1] == pytest.approx(0.75)


def test_single_instance_iiou_equals_iou():
    rng = Prng(6)
    labels = np.zeros((8, 8), dtype=int)
    labels[2:6, 2:6] = 1
    instances = (labels == 1).astype(int)
    preds = np.zeros((8, 8), dtype=int)
    preds[3:7, 2:6] = 1
    avg = average_instance_sizes([(labels, instances)], num_classes=2)
    got = iiou(labels, instances, preds, avg, num_classes=2)
    want = ConfusionMatrix(2).accumulate(labels, preds).class_iou()
    assert got[1] == pytest.approx(want[1])


def test_empty_prediction_iiou_zero():
    labels, instances, _ = _worked_example()
    avg = average_instance_sizes([(labels, instances)], num_classes=2)
    preds = np.zeros_like(labels)
    assert iiou(labels, instances, preds, avg, num_classes=2)[1] == 0.0


def test_no_instance_class_falls_back_to_iou():
    # class 1 present in labels but never marked as an instance
    labels = np.array([[0, 0, 1, 1]])
    instances = np.zeros((1, 4), dtype=int)
    preds = np.array([[0, 1, 1, 1]])
    avg = average_instance_sizes([(labels, instances)], num_classes=2)
    assert np.all(np.isnan(avg))
    acc = InstanceIouAccumulator(2, avg)
    acc.accumulate(labels, instances, preds)
    fallback = ConfusionMatrix(2).accumulate(labels, preds).class_iou()
    np.testing.assert_allclose(acc.class_iiou(fallback_iou=fallback), fallback)


def test_instance_spanning_classes_rejected():
    labels = np.array([[0, 1]])
    instances = np.array([[7, 7]])
    with pytest.raises(ValueError):
        average_instance_sizes([(labels, instances)], num_classes=2)


def test_iiou_bounds():
    rng = Prng(7)
    labels = rng.randint(0, 3, 64).reshape(8, 8)
    instances = np.where(labels > 0, labels, 0)
    preds = rng.randint(0, 3, 64).reshape(8, 8)
    avg = average_instance_sizes([(labels, instances)], num_classes=3)
    vals = iiou(labels, instances, preds, avg, num_classes=3)
    ok = ~np.isnan(vals)
    assert np.all(vals[ok] >= 0.0) and np.all(vals[ok] <= 1.0)


# ---------------------------------------------------------- class weights

def test_class_weights_endpoints():
    w = class_weights(np.array([0.0, 1.0]))
    # straight evaluation of 1/ln(1.02 + p)
    assert w[0] == pytest.approx(1.0 / np.log(1.02), abs=1e-9)
    assert w[1] == pytest.approx(1.0 / np.log(2.02), abs=1e-9)
    assert w[0] == pytest.approx(50.4983497918439, abs=1e-6)
    assert w[1] == pytest.approx(1.4222778260019158, abs=1e-6)


def test_class_weights_monotone_decreasing():
    w = class_weights(np.array([0.1, 0.5, 0.9]))
    assert w[0] > w[1] > w[2]


def test_class_weights_rejects_out_of_range():
    with pytest.raises(ValueError):
        class_weights(np.array([-0.1]))
    with pytest.raises(ValueError):
        class_weights(np.array([1.5]))


# ------------------------------------------------------- pixel frequencies

def test_pixel_frequencies_single_class():
    np.testing.assert_allclose(pixel_frequencies([np.zeros((4, 4), dtype=int)], 1), [1.0])


def test_pixel_frequencies_quarter_split():
    m = np.zeros((4, 4), dtype=int)
    m[0] = 1   # 4 of 16 pixels
    freqs = pixel_frequencies([m], 2)
    np.testing.assert_allclose(freqs, [0.75, 0.25])
    assert freqs.sum() == pytest.approx(1.0)


def test_pixel_frequencies_exclude_ignored():
    m = np.zeros((2, 4), dtype=int)
    m[0] = 255
    m[1, :2] = 1
    freqs = pixel_frequencies([m], 2)
    np.testing.assert_allclose(freqs, [0.5, 0.5])
