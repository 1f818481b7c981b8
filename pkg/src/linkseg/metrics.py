"""Evaluation metrics: confusion matrix, IoU, instance-weighted IoU.

Labels are int arrays of class ids; the ignore label (255 by default)
drops a pixel from every count. Instance maps carry positive ids for
countable objects and 0 for stuff/background.
"""
import numpy as np

IGNORE_LABEL = 255


class ConfusionMatrix:
    """C x C count matrix; entry (t, p) counts pixels of true class t
    predicted as class p."""

    def __init__(self, num_classes):
        if num_classes < 1:
            raise ValueError(f"num_classes must be >= 1, got {num_classes}")
        self.num_classes = num_classes
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def accumulate(self, labels, predictions, ignore_label=IGNORE_LABEL):
        labels = np.asarray(labels)
        predictions = np.asarray(predictions)
        if labels.shape != predictions.shape:
            raise ValueError(f"label shape {labels.shape} != prediction shape {predictions.shape}")
        t = labels.ravel()
        p = predictions.ravel()
        keep = t != ignore_label
        t, p = t[keep], p[keep]
        c = self.num_classes
        if t.size:
            if t.min() < 0 or t.max() >= c:
                raise ValueError(f"labels outside [0, {c}) encountered (ignore label is {ignore_label})")
            if p.min() < 0 or p.max() >= c:
                raise ValueError(f"predictions outside [0, {c}) encountered")
            self.counts += np.bincount(t.astype(np.int64) * c + p, minlength=c * c).reshape(c, c)
        return self

    def merge(self, other):
        if other.num_classes != self.num_classes:
            raise ValueError("cannot merge confusion matrices of different sizes")
        self.counts += other.counts
        return self

    def class_iou(self):
        """Per-class intersection over union; nan where a class never
        occurs as either label or prediction."""
        diag = np.diag(self.counts).astype(np.float64)
        denom = self.counts.sum(axis=1) + self.counts.sum(axis=0) - np.diag(self.counts)
        out = np.full(self.num_classes, np.nan)
        seen = denom > 0
        out[seen] = diag[seen] / denom[seen]
        return out

    def mean_iou(self):
        """Mean over classes with a defined IoU (nan entries excluded)."""
        iou = self.class_iou()
        if np.all(np.isnan(iou)):
            return float("nan")
        return float(np.nanmean(iou))


def _instance_sizes(labels, instances, num_classes, ignore_label):
    """Per-image instance inventory.

    Returns (ids, sizes, classes) over the scored pixels; raises when an
    instance id spans more than one class.
    """
    mask = (instances > 0) & (labels != ignore_label)
    ids = instances[mask]
    cls = labels[mask]
    if not ids.size:
        return (np.empty(0, np.int64),) * 3
    order = np.argsort(ids, kind="stable")
    ids, cls = ids[order], cls[order]
    uniq, start, counts = np.unique(ids, return_index=True, return_counts=True)
    for u, s, n in zip(uniq, start, counts):
        span = np.unique(cls[s:s + n])
        if span.size > 1:
            raise ValueError(f"instance id {int(u)} spans classes {span.tolist()}")
    return uniq.astype(np.int64), counts.astype(np.int64), cls[start].astype(np.int64)


def average_instance_sizes(samples, num_classes, ignore_label=IGNORE_LABEL):
    """Mean instance size per class over (labels, instances) pairs.

    Classes with no instances anywhere get nan. Feeds the instance-weighted
    IoU; compute it once over the whole evaluation set.
    """
    total = np.zeros(num_classes, dtype=np.float64)
    count = np.zeros(num_classes, dtype=np.int64)
    for labels, instances in samples:
        _, sizes, classes = _instance_sizes(np.asarray(labels), np.asarray(instances),
                                            num_classes, ignore_label)
        np.add.at(total, classes, sizes.astype(np.float64))
        np.add.at(count, classes, 1)
    out = np.full(num_classes, np.nan)
    has = count > 0
    out[has] = total[has] / count[has]
    return out


class InstanceIouAccumulator:
    """Instance-weighted IoU: iTP / (iTP + FP + iFN).

    Pixels belonging to an instance contribute with weight
    (class average instance size) / (own instance size), so small objects
    count as much as large ones; pixels outside instances weigh 1. False
    positives are plain counts.
    """

    def __init__(self, num_classes, avg_sizes, ignore_label=IGNORE_LABEL):
        avg_sizes = np.asarray(avg_sizes, dtype=np.float64)
        if avg_sizes.shape != (num_classes,):
            raise ValueError(f"avg_sizes must have shape ({num_classes},), got {avg_sizes.shape}")
        self.num_classes = num_classes
        self.avg_sizes = avg_sizes
        self.ignore_label = ignore_label
        self.itp = np.zeros(num_classes, dtype=np.float64)
        self.ifn = np.zeros(num_classes, dtype=np.float64)
        self.fp = np.zeros(num_classes, dtype=np.float64)

    def accumulate(self, labels, instances, predictions):
        labels = np.asarray(labels)
        instances = np.asarray(instances)
        predictions = np.asarray(predictions)
        if labels.shape != predictions.shape or labels.shape != instances.shape:
            raise ValueError("labels, instances and predictions must share one shape")
        ids, sizes, classes = _instance_sizes(labels, instances, self.num_classes,
                                              self.ignore_label)
        scored = labels != self.ignore_label

        weight = np.ones(labels.shape, dtype=np.float64)
        if ids.size:
            size_of = dict(zip(ids.tolist(), sizes.tolist()))
            inst_mask = (instances > 0) & scored
            pix_ids = instances[inst_mask]
            pix_cls = labels[inst_mask]
            pix_sizes = np.array([size_of[int(i)] for i in pix_ids], dtype=np.float64)
            avg = self.avg_sizes[pix_cls]
            w = np.where(np.isnan(avg), 1.0, avg / pix_sizes)
            weight[inst_mask] = w

        correct = scored & (labels == predictions)
        wrong = scored & (labels != predictions)
        np.add.at(self.itp, labels[correct], weight[correct])
        np.add.at(self.ifn, labels[wrong], weight[wrong])
        np.add.at(self.fp, predictions[wrong], 1.0)
        return self

    def class_iiou(self, fallback_iou=None):
        """Per-class instance-weighted IoU.

        Classes without any instance in the evaluation set take their value
        from ``fallback_iou`` (per-class array) when given, else nan.
        """
        denom = self.itp + self.fp + self.ifn
        out = np.full(self.num_classes, np.nan)
        ok = denom > 0
        out[ok] = self.itp[ok] / denom[ok]
        no_inst = np.isnan(self.avg_sizes)
        if fallback_iou is not None:
            fallback_iou = np.asarray(fallback_iou, dtype=np.float64)
            out[no_inst] = fallback_iou[no_inst]
        return out

    def mean_iiou(self, fallback_iou=None):
        vals = self.class_iiou(fallback_iou)
        if np.all(np.isnan(vals)):
            return float("nan")
        return float(np.nanmean(vals))


def iiou(labels, instances, predictions, avg_sizes, num_classes,
         ignore_label=IGNORE_LABEL, fallback_iou=None):
    """One-shot instance-weighted IoU for a single image or stacked batch."""
    acc = InstanceIouAccumulator(num_classes, avg_sizes, ignore_label)
    acc.accumulate(labels, instances, predictions)
    return acc.class_iiou(fallback_iou)


def pixel_frequencies(labelmaps, num_classes, ignore_label=IGNORE_LABEL):
    """Fraction of scored pixels per class across an iterable of label maps."""
    counts = np.zeros(num_classes, dtype=np.int64)
    for labels in labelmaps:
        labels = np.asarray(labels).ravel()
        keep = labels != ignore_label
        kept = labels[keep]
        if kept.size:
            if kept.min() < 0 or kept.max() >= num_classes:
                raise ValueError(f"labels outside [0, {num_classes}) encountered")
            counts += np.bincount(kept, minlength=num_classes)
    total = counts.sum()
    if total == 0:
        raise ValueError("no scored pixels in any label map")
    return counts.astype(np.float64) / total


def class_weights(frequencies):
    """Inverse-log reweighting w_c = 1 / ln(1.02 + p_c).

    Bounded (p=0 gives ~50.5, p=1 gives ~1.42) yet strongly favors rare
    classes.
    """
    p = np.asarray(frequencies, dtype=np.float64)
    if np.any(p < 0) or np.any(p > 1):
        raise ValueError("class frequencies must lie in [0, 1]")
    return 1.0 / np.log(1.02 + p)
