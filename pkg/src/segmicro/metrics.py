"""Cross-entropy loss, pixel accuracy and Dice coefficient."""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ShapeError

LOG_EPS = 1e-12


def one_hot(labels: np.ndarray, num_classes: int, dtype=np.float32) -> np.ndarray:
    """(..., H, W) integer labels -> (..., H, W, num_classes) one-hot."""
    labels = np.asarray(labels)
    if labels.size and labels.max() >= num_classes:
        raise DataError(f"label {int(labels.max())} out of range for {num_classes} classes")
    return np.eye(num_classes, dtype=dtype)[labels]


def cross_entropy(probs: np.ndarray, targets: np.ndarray):
    """Mean categorical cross-entropy and its gradient w.r.t. the logits.

    ``targets`` is one-hot with the same shape as ``probs``. The returned
    gradient is the fused softmax + cross-entropy form ``(p - y) / pixels``.
    """
    if probs.shape != targets.shape:
        raise ShapeError(f"cross_entropy shape mismatch: probs {probs.shape} vs targets {targets.shape}")
    pixels = probs.size // probs.shape[-1]
    loss = -float(np.sum(targets * np.log(probs + LOG_EPS), dtype=np.float64)) / pixels
    grad = (probs - targets) / pixels
    return loss, grad.astype(probs.dtype, copy=False)


def _check_pair(pred, truth):
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise ShapeError(f"label maps differ in shape: {pred.shape} vs {truth.shape}")
    return pred, truth


def pixel_accuracy(pred: np.ndarray, truth: np.ndarray) -> float:
    pred, truth = _check_pair(pred, truth)
    return float(np.mean(pred == truth))


def confusion_counts(pred, truth, class_id):
    """(TP, FP, FN) after binarizing both maps at ``class_id``."""
    p = pred == class_id
    t = truth == class_id
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    return tp, fp, fn


def dice_from_counts(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    # class absent from both maps counts as a correct prediction
    return 1.0 if denom == 0 else 2 * tp / denom


def dice(pred: np.ndarray, truth: np.ndarray, class_id: int, num_classes: int = None) -> float:
    """Dice coefficient 2TP / (2TP + FP + FN) for one class."""
    pred, truth = _check_pair(pred, truth)
    if class_id < 0 or (num_classes is not None and class_id >= num_classes):
        raise DataError(f"class_id {class_id} outside [0, {num_classes})")
    return dice_from_counts(*confusion_counts(pred, truth, class_id))


@dataclass
class MetricsReport:
    accuracy: float
    per_class_dice: dict = field(default_factory=dict)
    sample_count: int = 0

    def to_dict(self) -> dict:
        d = {"accuracy": self.accuracy}
        for c in sorted(self.per_class_dice):
            d[f"dice.{c}"] = self.per_class_dice[c]
        d["samples"] = self.sample_count
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        per_class = {int(k.split(".", 1)[1]): v for k, v in d.items() if k.startswith("dice.")}
        return cls(d["accuracy"], per_class, d["samples"])

    @property
    def mean_dice(self) -> float:
        return float(np.mean(list(self.per_class_dice.values())))


def dice_report(pred_set, truth_set, num_classes: int, include_background: bool = False,
                per_image: bool = False) -> MetricsReport:
    """Accuracy and per-class Dice over a set of aligned label maps.

    By default counts are pooled over all pixels of all samples. With
    ``per_image=True`` each metric is computed per sample and then averaged.
    """
    pred_set, truth_set = list(pred_set), list(truth_set)
    if len(pred_set) != len(truth_set):
        raise ShapeError(f"{len(pred_set)} predictions vs {len(truth_set)} ground truths")
    classes = range(0 if include_background else 1, num_classes)
    if per_image:
        acc = float(np.mean([pixel_accuracy(p, t) for p, t in zip(pred_set, truth_set)]))
        per_class = {c: float(np.mean([dice(p, t, c) for p, t in zip(pred_set, truth_set)])) for c in classes}
        return MetricsReport(acc, per_class, len(pred_set))
    correct = total = 0
    counts = {c: [0, 0, 0] for c in classes}
    for p, t in zip(pred_set, truth_set):
        p, t = _check_pair(p, t)
        correct += int(np.count_nonzero(p == t))
        total += p.size
        for c in classes:
            for i, v in enumerate(confusion_counts(p, t, c)):
                counts[c][i] += v
    acc = correct / total if total else 1.0
    return MetricsReport(float(acc), {c: dice_from_counts(*counts[c]) for c in classes}, len(pred_set))
