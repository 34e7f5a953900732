"""Training objective (soft-Dice + weighted cross-entropy) and the hard
Dice/IoU evaluation metrics computed from integer voxel counts."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import FsegError
from .tensor import Tensor

log = logging.getLogger(__name__)

LOG_CLAMP = 1e-8


@dataclass
class ConfusionCounts:
    """Per-class voxel counts of prediction, truth, and their overlap."""

    pred: np.ndarray  # |X_k|
    true: np.ndarray  # |X_k*|
    inter: np.ndarray  # |X_k ∩ X_k*|

    @property
    def union(self) -> np.ndarray:
        return self.pred + self.true - self.inter

    @staticmethod
    def from_labels(pred: np.ndarray, true: np.ndarray, num_classes: int) -> "ConfusionCounts":
        if pred.shape != true.shape:
            raise FsegError(f"label shapes differ: {pred.shape} vs {true.shape}")
        p = pred.ravel().astype(np.int64)
        t = true.ravel().astype(np.int64)
        for name, arr in (("pred", p), ("true", t)):
            if arr.min(initial=0) < 0 or arr.max(initial=0) >= num_classes:
                raise FsegError(f"{name} labels outside [0, {num_classes})")
        pc = np.bincount(p, minlength=num_classes)
        tc = np.bincount(t, minlength=num_classes)
        ic = np.bincount(p[p == t], minlength=num_classes)
        return ConfusionCounts(pc, tc, ic)


def dice(counts: ConfusionCounts, k: int) -> float:
    denom = counts.pred[k] + counts.true[k]
    if denom == 0:
        log.info("class %d empty in both masks; Dice defined as 1.0", k)
        return 1.0
    return 2.0 * counts.inter[k] / denom


def iou(counts: ConfusionCounts, k: int) -> float:
    u = counts.union[k]
    if u == 0:
        log.info("class %d empty in both masks; IoU defined as 1.0", k)
        return 1.0
    return counts.inter[k] / u


def foreground_dice(pred: np.ndarray, true: np.ndarray, num_classes: int) -> float:
    """Mean hard Dice over classes 1..M-1 (background excluded)."""
    c = ConfusionCounts.from_labels(pred, true, num_classes)
    return float(np.mean([dice(c, k) for k in range(1, num_classes)]))


def softmax_channels(logits: Tensor) -> Tensor:
    """Softmax over the leading class axis; shift by a constant max for
    stability (gradient-neutral)."""
    shifted = logits + (-logits.data.max(axis=0, keepdims=True))
    e = T.texp(shifted)
    return e / T.tsum(e, axis=0, keepdims=True)


def combined_loss(logits: Tensor, labels: np.ndarray, lam: float = 0.5) -> Tensor:
    """(1 - soft Dice over foreground classes) + lam * cross-entropy.

    Probabilities enter the Dice formula directly so the objective is
    differentiable; logs are clamped at p >= 1e-8.
    """
    m = logits.shape[0]
    if labels.shape != tuple(logits.shape[1:]):
        raise FsegError(f"label shape {labels.shape} != logits spatial {tuple(logits.shape[1:])}")
    lab = labels.astype(np.int64)
    if lab.min() < 0 or lab.max() >= m:
        raise FsegError(f"labels outside [0, {m})")
    onehot = np.zeros((m,) + lab.shape, dtype=logits.dtype)
    np.put_along_axis(onehot, lab[None], 1.0, axis=0)

    p = softmax_channels(logits)
    n_vox = float(lab.size)
    ce = -(T.tsum(T.tlog(T.clip_min(p, LOG_CLAMP)) * onehot) / n_vox)

    dices = []
    for k in range(1, m):
        pk = p[k]
        gk = onehot[k]
        inter = T.tsum(pk * gk)
        denom = T.tsum(pk) + float(gk.sum())
        dices.append(2.0 * inter / denom)
    soft_dice = sum(dices[1:], dices[0]) / float(len(dices))
    return (1.0 - soft_dice) + lam * ce


def write_metrics_csv(path: str, rows: list):
    """rows: (volume_id, class, dice, iou); an aggregate mean/std row pair is
    appended per metric."""
    d = np.array([r[2] for r in rows], dtype=np.float64)
    i = np.array([r[3] for r in rows], dtype=np.float64)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["volume_id", "class", "dice", "iou"])
        for r in rows:
            w.writerow([r[0], r[1], f"{r[2]:.6f}", f"{r[3]:.6f}"])
        if rows:
            w.writerow(["aggregate_mean", "all", f"{d.mean():.6f}", f"{i.mean():.6f}"])
            w.writerow(["aggregate_std", "all", f"{d.std():.6f}", f"{i.std():.6f}"])
