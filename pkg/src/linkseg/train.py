"""Toy-scale supervised training.

Weighted softmax cross-entropy over per-pixel logits, a plain RMSProp
optimizer, a synthetic shape dataset that stands in for street scenes at
desk scale, and the train/eval loops. Everything is deterministic given
(seed, config, dataset).
"""
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .model import backward, forward
from .tensor import INT, REAL, Prng


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-4
    batch_size: int = 4
    epochs: int = 1
    seed: int = 0
    rms_decay: float = 0.9
    rms_epsilon: float = 1e-8
    use_class_weights: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0 < self.rms_decay < 1:
            raise ValueError(f"rms_decay must lie in (0, 1), got {self.rms_decay}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")


@dataclass
class OptState:
    """Per-parameter squared-gradient accumulators, created lazily at 0."""
    square_avg: dict = field(default_factory=dict)


@dataclass
class Sample:
    image: np.ndarray              # (C, H, W) real32 in [0, 1]
    labels: np.ndarray             # (H, W) int32
    instances: np.ndarray = None   # (H, W) int32, 0 = no instance


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    loss: float
    miou: float

    def line(self):
        return f"{self.epoch} {self.loss:.6f} {self.miou:.6f}"


def weighted_cross_entropy(logits, labels, weights=None, ignore_label=metrics.IGNORE_LABEL):
    """Per-pixel softmax cross-entropy with class weights.

    Loss = sum_i w[y_i] * (-log softmax(logits_i)[y_i]) / sum_i w[y_i]
    over scored pixels; the returned gradient is with respect to the
    logits and is zero at ignored pixels. Log-sum-exp is max-subtracted.
    """
    if logits.ndim != 4:
        raise ValueError(f"logits must be (N, C, H, W), got shape {logits.shape}")
    n, c, h, w = logits.shape
    if labels.shape != (n, h, w):
        raise ValueError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    scored = labels != ignore_label
    if not scored.any():
        raise ValueError("all pixels carry the ignore label; loss undefined")
    safe = np.where(scored, labels, 0).astype(np.int64)
    if safe.min() < 0 or safe.max() >= c:
        raise ValueError(f"labels outside [0, {c}) encountered")

    if weights is None:
        weights = np.ones(c, dtype=np.float64)
    else:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (c,):
            raise ValueError(f"weights must have shape ({c},), got {weights.shape}")

    m = logits.max(axis=1, keepdims=True)
    z = logits - m
    ez = np.exp(z)
    sez = ez.sum(axis=1, keepdims=True)
    logp_true = np.take_along_axis(z, safe[:, None], axis=1)[:, 0] - np.log(sez[:, 0])

    wpix = np.where(scored, weights[safe], 0.0)
    wsum = wpix.sum(dtype=np.float64)
    if wsum <= 0:
        raise ValueError("total pixel weight is zero; loss undefined")
    loss = float(-(wpix * logp_true).sum(dtype=np.float64) / wsum)

    softmax = ez / sez
    grad = softmax * (wpix / wsum)[:, None].astype(logits.dtype)
    np.subtract.at(grad.reshape(n, c, h * w),
                   (np.arange(n)[:, None], safe.reshape(n, h * w), np.arange(h * w)[None, :]),
                   (wpix / wsum).reshape(n, h * w).astype(logits.dtype))
    mask = scored[:, None]
    grad = np.where(mask, grad, 0).astype(logits.dtype, copy=False)
    return loss, grad


def rmsprop_step(params, grads, opt_state, config):
    """In-place update: r <- rho r + (1 - rho) g^2; p <- p - lr g / (sqrt(r) + eps)."""
    rho = config.rms_decay
    lr = config.learning_rate
    eps = config.rms_epsilon
    for key, g in grads.items():
        r = opt_state.square_avg.get(key)
        if r is None:
            r = opt_state.square_avg[key] = np.zeros_like(g)
        r *= rho
        r += (1.0 - rho) * g * g
        params[key] = params[key] - lr * g / (np.sqrt(r) + eps)
    return params, opt_state


def _palette(num_classes, channels):
    pal = np.zeros((num_classes, channels), dtype=np.float64)
    for cls in range(num_classes):
        for ch in range(channels):
            pal[cls, ch] = 0.5 + 0.42 * np.sin(2 * np.pi * (cls / num_classes + ch / 3.0))
    return pal


def make_toy_dataset(num_samples, hw, num_classes, seed, channels=3, noise=0.05):
    """Synthetic scenes: background 0 plus one solid shape kind per class.

    Class k draws axis-aligned rectangles (k % 3 == 1), discs (k % 3 == 2)
    or full-width horizontal bands (k % 3 == 0), painted in class order so
    later classes may occlude earlier ones. Each shape gets a fresh
    instance id; colors are a class-specific mean plus Gaussian noise.
    Deterministic per seed.
    """
    h, w = hw
    if h < 16 or w < 16:
        raise ValueError(f"toy images must be at least 16x16, got {h}x{w}")
    if num_classes < 2:
        raise ValueError(f"need at least 2 classes, got {num_classes}")
    rng = Prng(seed)
    pal = _palette(num_classes, channels)
    yy = np.arange(h).reshape(h, 1)
    xx = np.arange(w).reshape(1, w)
    samples = []
    for _ in range(num_samples):
        labels = np.zeros((h, w), dtype=INT)
        inst = np.zeros((h, w), dtype=INT)
        next_id = 1
        for cls in range(1, num_classes):
            count = 2 if rng.uniform(1)[0] < 0.25 else 1
            for _ in range(count):
                kind = (cls - 1) % 3
                if kind == 0:
                    sh = int(rng.randint(h // 4, h // 2 + 1, 1)[0])
                    sw = int(rng.randint(w // 4, w // 2 + 1, 1)[0])
                    top = int(rng.randint(0, h - sh + 1, 1)[0])
                    left = int(rng.randint(0, w - sw + 1, 1)[0])
                    mask = np.zeros((h, w), dtype=bool)
                    mask[top:top + sh, left:left + sw] = True
                elif kind == 1:
                    r = int(rng.randint(min(h, w) // 7, min(h, w) // 4 + 1, 1)[0])
                    cy = int(rng.randint(r, h - r + 1, 1)[0])
                    cx = int(rng.randint(r, w - r + 1, 1)[0])
                    mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
                else:
                    th = int(rng.randint(h // 8, h // 4 + 1, 1)[0])
                    top = int(rng.randint(0, h - th + 1, 1)[0])
                    mask = np.zeros((h, w), dtype=bool)
                    mask[top:top + th, :] = True
                labels[mask] = cls
                inst[mask] = next_id
                next_id += 1
        image = pal[labels].transpose(2, 0, 1)
        image = image + noise * rng.normal(channels * h * w).reshape(channels, h, w)
        image = np.clip(image, 0.0, 1.0).astype(REAL)
        samples.append(Sample(image=image, labels=labels, instances=inst))
    return samples


def _batches(count, batch_size, order=None):
    idx = np.arange(count) if order is None else order
    for start in range(0, count, batch_size):
        yield idx[start:start + batch_size]


def _stack(dataset, idx):
    x = np.stack([dataset[i].image for i in idx]).astype(REAL, copy=False)
    y = np.stack([dataset[i].labels for i in idx])
    return x, y


@dataclass
class EvalReport:
    confusion: metrics.ConfusionMatrix
    class_iou: np.ndarray
    mean_iou: float
    class_iiou: np.ndarray
    mean_iiou: float

    def summary_line(self):
        return f"mIoU={self.mean_iou:.6f} iIoU={self.mean_iiou:.6f}"

    def format_table(self):
        lines = ["class        IoU       iIoU"]
        for cls in range(self.confusion.num_classes):
            a, b = self.class_iou[cls], self.class_iiou[cls]
            fa = "     -" if np.isnan(a) else f"{a:.4f}"
            fb = "     -" if np.isnan(b) else f"{b:.4f}"
            lines.append(f"{cls:<5d}     {fa}     {fb}")
        lines.append(self.summary_line())
        return "\n".join(lines)


def evaluate(graph, params, dataset, batch_size=8, ignore_label=metrics.IGNORE_LABEL):
    """Infer-mode pass over a dataset; confusion, IoU and instance-weighted IoU."""
    if not dataset:
        raise ValueError("cannot evaluate on an empty dataset")
    if graph.config is None:
        raise ValueError("evaluate needs a full network graph with a config")
    num_classes = graph.config.num_classes
    cm = metrics.ConfusionMatrix(num_classes)
    with_inst = all(s.instances is not None for s in dataset)
    inst_acc = None
    if with_inst:
        avg = metrics.average_instance_sizes(
            ((s.labels, s.instances) for s in dataset), num_classes, ignore_label)
        inst_acc = metrics.InstanceIouAccumulator(num_classes, avg, ignore_label)
    for idx in _batches(len(dataset), batch_size):
        x, y = _stack(dataset, idx)
        logits, _ = forward(graph, params, x, mode="infer")
        pred = logits.argmax(axis=1).astype(INT)
        cm.accumulate(y, pred, ignore_label)
        if inst_acc is not None:
            for row, i in enumerate(idx):
                inst_acc.accumulate(dataset[i].labels, dataset[i].instances, pred[row])
    class_iou = cm.class_iou()
    if inst_acc is not None:
        class_iiou = inst_acc.class_iiou(fallback_iou=class_iou)
    else:
        class_iiou = class_iou.copy()
    miiou = float(np.nanmean(class_iiou)) if not np.all(np.isnan(class_iiou)) else float("nan")
    return EvalReport(confusion=cm, class_iou=class_iou, mean_iou=cm.mean_iou(),
                      class_iiou=class_iiou, mean_iiou=miiou)


def train_loop(graph, params, dataset, config, log_fn=None):
    """Seeded-shuffle epochs of forward/backward/update; returns (params, log).

    The log holds one EpochStats(epoch, mean loss, train mIoU) per epoch.
    A non-finite loss aborts immediately, naming the batch.
    """
    if not dataset:
        raise ValueError("cannot train on an empty dataset")
    if graph.config is None:
        raise ValueError("train_loop needs a full network graph with a config")
    num_classes = graph.config.num_classes
    weights = None
    if config.use_class_weights:
        freq = metrics.pixel_frequencies((s.labels for s in dataset), num_classes)
        weights = metrics.class_weights(freq)
    rng = Prng(config.seed)
    opt = OptState()
    log = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(dataset))
        losses = []
        for bno, idx in enumerate(_batches(len(dataset), config.batch_size, order)):
            x, y = _stack(dataset, idx)
            logits, cache = forward(graph, params, x, mode="train")
            loss, grad = weighted_cross_entropy(logits, y, weights)
            if not np.isfinite(loss):
                raise RuntimeError(f"non-finite loss {loss} at epoch {epoch}, batch {bno}")
            grads = backward(graph, params, cache, grad)
            rmsprop_step(params, grads, opt, config)
            losses.append(loss)
        stats = EpochStats(epoch=epoch, loss=float(np.mean(losses)),
                           miou=evaluate(graph, params, dataset).mean_iou)
        log.append(stats)
        if log_fn is not None:
            log_fn(stats)
    return params, log
