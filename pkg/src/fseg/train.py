"""AdamW optimization, the training loop with CSV logging and best-checkpoint
tracking, and sliding-window whole-volume inference."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import FsegError, GeometryError, NanGradientError
from .losses import ConfusionCounts, combined_loss
from .network import FsegModel, save_checkpoint
from .phantom import AugmentConfig, augment, sample_rng
from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-4  # constant; no schedule
    weight_decay: float = 1e-6
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    batch_size: int = 2
    patch_size: int = 32
    max_steps: int = 200
    val_interval: int = 50
    lam: float = 0.5
    early_stop_dice: float | None = None  # halt once val Dice reaches this
    seed: int = 0
    deterministic: bool = False

    def __post_init__(self):
        if self.lr <= 0 or self.eps <= 0:
            raise ValueError("lr and eps must be positive")
        if not all(0.0 <= b < 1.0 for b in self.betas):
            raise ValueError(f"betas must lie in [0,1): {self.betas}")


class AdamW:
    """Decoupled weight decay (applied before the Adam direction); complex
    parameters are updated on their real/imaginary parts independently."""

    def __init__(self, named_params, cfg: TrainConfig):
        self.params = list(named_params)
        self.cfg = cfg
        self.t = 0
        self.state = {}
        for name, p in self.params:
            flat = self._float_view(p)
            self.state[name] = (np.zeros_like(flat), np.zeros_like(flat))

    @staticmethod
    def _float_view(p) -> np.ndarray:
        if p.is_complex:
            real_dtype = np.float32 if p.dtype == np.complex64 else np.float64
            return p.data.view(real_dtype)
        return p.data

    def step(self):
        cfg = self.cfg
        self.t += 1
        b1, b2 = cfg.betas
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for name, p in self.params:
            if p.grad is None:
                raise NanGradientError(f"parameter {name} has no gradient before step")
            g = p.grad.view(self._float_view(p).dtype) if p.is_complex else p.grad
            if not np.all(np.isfinite(g)):
                raise NanGradientError(f"non-finite gradient in parameter {name}")
            data = self._float_view(p)
            m, v = self.state[name]
            data -= cfg.lr * cfg.weight_decay * data
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            mhat = m / bc1
            vhat = v / bc2
            data -= cfg.lr * mhat / (np.sqrt(vhat) + cfg.eps)

    def zero_grad(self):
        for _, p in self.params:
            p.zero_grad()


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


def _validate(model, val_set, num_classes):
    dices, ious = [], []
    with T.no_grad():
        for image, label in val_set:
            logits = model(Tensor(image[None]))
            pred = np.argmax(logits.data, axis=0)
            c = ConfusionCounts.from_labels(pred, label, num_classes)
            ds = [2.0 * c.inter[k] / (c.pred[k] + c.true[k]) if c.pred[k] + c.true[k] else 1.0
                  for k in range(1, num_classes)]
            us = [c.inter[k] / c.union[k] if c.union[k] else 1.0 for k in range(1, num_classes)]
            dices.append(float(np.mean(ds)))
            ious.append(float(np.mean(us)))
    return float(np.mean(dices)), float(np.mean(ious))


def train(
    model: FsegModel,
    train_set: list,
    val_set: list,
    cfg: TrainConfig,
    log_path: str | None = None,
    checkpoint_path: str | None = None,
    augment_cfg: AugmentConfig | None = None,
) -> dict:
    """train_set/val_set: lists of (image [D,H,W] float32, label [D,H,W] int).
    Images are assumed already intensity-mapped unless augment_cfg is given,
    in which case the full augmentation pipeline runs per sample draw.

    Returns a history dict; writes CSV rows (step, loss, val_dice, val_iou,
    wall_ms) if log_path is given. In deterministic mode wall_ms is logged
    as 0 so reruns are bit-identical.
    """
    if not train_set:
        raise FsegError("empty training set")
    num_classes = model.config.num_classes
    opt = AdamW(list(model.named_parameters()), cfg)
    rng = np.random.default_rng(cfg.seed)
    rows = []
    history = {"loss": [], "val": [], "best_val_dice": -1.0, "best_step": -1}
    draw = 0
    stop = False
    for step in range(1, cfg.max_steps + 1):
        t0 = time.perf_counter()
        opt.zero_grad()
        idx = rng.integers(0, len(train_set), size=cfg.batch_size)
        loss_total = None
        for i in idx:
            image, label = train_set[int(i)]
            if augment_cfg is not None:
                image, label = augment(image, label, augment_cfg, sample_rng(cfg.seed, draw))
            draw += 1
            logits = model(Tensor(np.ascontiguousarray(image, dtype=np.float32)[None]))
            loss = combined_loss(logits, label, lam=cfg.lam)
            loss_total = loss if loss_total is None else loss_total + loss
        loss_total = loss_total * (1.0 / cfg.batch_size)
        loss_val = float(loss_total.data)
        if not np.isfinite(loss_val):
            raise FsegError(f"training diverged: loss {loss_val} at step {step}")
        loss_total.backward()
        opt.step()

        val_dice = val_iou = ""
        if val_set and (step % cfg.val_interval == 0 or step == cfg.max_steps):
            vd, vi = _validate(model, val_set, num_classes)
            val_dice, val_iou = f"{vd:.6f}", f"{vi:.6f}"
            history["val"].append((step, vd, vi))
            if vd > history["best_val_dice"]:
                history["best_val_dice"] = vd
                history["best_step"] = step
                if checkpoint_path:
                    save_checkpoint(model, checkpoint_path, seed=cfg.seed, step=step)
            if cfg.early_stop_dice is not None and vd >= cfg.early_stop_dice:
                stop = True
        wall_ms = 0 if cfg.deterministic else int((time.perf_counter() - t0) * 1000)
        rows.append((step, f"{loss_val:.6f}", val_dice, val_iou, wall_ms))
        history["loss"].append(loss_val)
        if stop:
            break

    if checkpoint_path and history["best_step"] < 0:
        save_checkpoint(model, checkpoint_path, seed=cfg.seed, step=cfg.max_steps)
    if log_path:
        with open(log_path, "w", newline="") as f:
            f.write(f"# seed={cfg.seed} lambda={cfg.lam} lr={cfg.lr} wd={cfg.weight_decay}\n")
            f.write("step,loss,val_dice,val_iou,wall_ms\n")
            for r in rows:
                f.write(",".join(str(x) for x in r) + "\n")
    return history


# ---------------------------------------------------------------------------
# Sliding-window inference
# ---------------------------------------------------------------------------


@dataclass
class SlidingWindowSpec:
    window: tuple = (32, 32, 32)
    overlap: float = 0.25
    blend: str = "uniform"

    def __post_init__(self):
        if isinstance(self.window, int):
            self.window = (self.window,) * 3
        self.window = tuple(self.window)
        if not 0.0 <= self.overlap < 1.0:
            raise ValueError(f"overlap {self.overlap} outside [0,1)")
        if self.blend != "uniform":
            raise ValueError(f"unsupported blend {self.blend!r}")
        if any(self.stride(w) < 1 for w in self.window):
            raise ValueError("stride must be >= 1")

    def stride(self, w: int) -> int:
        return max(1, int(w * (1.0 - self.overlap)))


def _axis_positions(extent: int, window: int, stride: int) -> list:
    if window > extent:
        raise GeometryError(f"window {window} exceeds extent {extent}")
    pos = list(range(0, extent - window + 1, stride))
    last = extent - window
    if pos[-1] != last:
        pos.append(last)
    return pos


def sliding_window_infer(model, volume: np.ndarray, spec: SlidingWindowSpec):
    """Tile the volume with overlapping windows, average logits uniformly,
    and argmax.  Volumes smaller than the window are zero-padded and the
    padding removed from the outputs.  Returns (labels u8, probabilities
    [num_classes, D, H, W] float32)."""
    orig = volume.shape
    pad = [max(0, w - n) for w, n in zip(spec.window, orig)]
    if any(pad):
        volume = np.pad(volume, [(0, p) for p in pad])
    extents = volume.shape
    positions = [
        _axis_positions(n, w, spec.stride(w)) for n, w in zip(extents, spec.window)
    ]
    num_classes = model.config.num_classes if hasattr(model, "config") else None
    acc = None
    cover = np.zeros(extents, dtype=np.float32)
    with T.no_grad():
        for z in positions[0]:
            for y in positions[1]:
                for x in positions[2]:
                    sl = (
                        slice(z, z + spec.window[0]),
                        slice(y, y + spec.window[1]),
                        slice(x, x + spec.window[2]),
                    )
                    patch = np.ascontiguousarray(volume[sl], dtype=np.float32)
                    logits = model(Tensor(patch[None])).data
                    if acc is None:
                        acc = np.zeros((logits.shape[0],) + extents, dtype=np.float64)
                    acc[(slice(None),) + sl] += logits
                    cover[sl] += 1.0
    if np.any(cover == 0):
        raise GeometryError("sliding window left uncovered voxels")
    blended = (acc / cover).astype(np.float32)
    sl = tuple(slice(0, n) for n in orig)
    blended = blended[(slice(None),) + sl]
    e = np.exp(blended - blended.max(axis=0, keepdims=True))
    probs = (e / e.sum(axis=0, keepdims=True)).astype(np.float32)
    labels = np.argmax(blended, axis=0).astype(np.uint8)
    return labels, probs
