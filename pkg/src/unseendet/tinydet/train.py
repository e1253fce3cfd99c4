"""Mini-batch SGD training of a DetectorModel."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from ..errors import ValidationError
from ..shapesworld import DatasetManifest, load_arrays
from .loss import build_targets, yolo_loss
from .model import DetectorModel, forward_tensor

log = logging.getLogger(__name__)

MOMENTUM = 0.9
BASELINE = "baseline"
UNSEEN = "unseen"
SCOPES = ("all", "head", "classes")


@dataclass(frozen=True)
class TrainSchedule:
    mode: str = BASELINE
    lr_initial: float = 1e-3
    lr_final: float = 1e-4
    decay: str = "exponential"  # or "none"
    epochs: int = 30
    batch_size: int = 16
    optimizer: str = "sgd"  # "sgd" (momentum 0.9) or "adam"
    weight_decay: float = 0.0
    scope: str = "all"  # which parameters train: all | head | classes
    clip_norm: Optional[float] = None

    def __post_init__(self):
        if self.mode not in (BASELINE, UNSEEN):
            raise ValidationError(f"unknown schedule mode {self.mode!r}")
        if self.decay not in ("none", "exponential"):
            raise ValidationError(f"unknown decay {self.decay!r}")
        if self.lr_initial <= 0 or self.lr_final <= 0:
            raise ValidationError("learning rates must be positive")
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValidationError(f"unknown optimizer {self.optimizer!r}")
        if self.scope not in SCOPES:
            raise ValidationError(f"unknown training scope {self.scope!r}")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ValidationError("clip_norm must be positive")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")

    def lr(self, epoch: int) -> float:
        """Learning rate for a 0-based epoch.

        Baseline runs hold lr_initial for the first third of the epochs,
        decay exponentially to lr_final over the second third and hold
        lr_final for the rest. Unseen runs use lr_initial throughout.
        """
        if self.mode == UNSEEN or self.decay == "none":
            return self.lr_initial
        b1 = round(self.epochs / 3)
        b2 = round(2 * self.epochs / 3)
        if epoch < b1:
            return self.lr_initial
        if epoch >= b2:
            return self.lr_final
        frac = (epoch - b1 + 1) / (b2 - b1)
        return self.lr_initial * (self.lr_final / self.lr_initial) ** frac


def baseline_schedule(epochs=30, batch_size=16):
    return TrainSchedule(BASELINE, 1e-3, 1e-4, "exponential", epochs, batch_size)


def unseen_schedule(epochs, batch_size=16, lr=1e-4, **kw):
    return TrainSchedule(UNSEEN, lr, lr, "none", epochs, batch_size, **kw)


@dataclass
class TensorData:
    images: np.ndarray  # (N, 3, S, S) float32
    targets: list  # per image [(class, (x0, y0, x1, y1) fractions)]

    @classmethod
    def from_manifest(cls, m: DatasetManifest, size: int) -> "TensorData":
        images, targets = load_arrays(m, size)
        return cls(images, targets)

    def __len__(self):
        return len(self.targets)

    @property
    def classes(self):
        return {c for objs in self.targets for c, _ in objs}


def as_tensor_data(data, size) -> TensorData:
    return data if isinstance(data, TensorData) else TensorData.from_manifest(data, size)


def _scope_masks(m: DetectorModel, scope: str) -> dict:
    """Trainable parameter names, each with an optional 0/1 gradient mask.

    "classes" leaves only the class-score rows of the head trainable, which
    keeps box regression and objectness exactly as the starting model had them.
    """
    if scope not in SCOPES:
        raise ValidationError(f"unknown training scope {scope!r}; expected one of {', '.join(SCOPES)}")
    if scope == "all":
        return {k: None for k in m.params}
    if scope == "head":
        return {"head.weight": None, "head.bias": None}
    rows = np.zeros(m.head_out, dtype=np.float32)
    per = 5 + m.n_classes
    for a in range(m.arch.num_anchors):
        rows[a * per + 5:(a + 1) * per] = 1.0
    rows_t = torch.from_numpy(rows)
    return {"head.weight": rows_t[:, None], "head.bias": rows_t}


class Trainer:
    """Owns a float32 working copy of the parameters and the optimizer state."""

    def __init__(self, m: DetectorModel, data: TensorData, lr: float, seed: int,
                 optimizer="sgd", weight_decay=0.0, clip_norm=None, scope="all"):
        missing = data.classes - set(m.classes)
        if missing:
            raise ValidationError(f"dataset classes not in the detector: {', '.join(sorted(missing))}")
        self.base = m
        self.data = data
        self.masks = _scope_masks(m, scope)
        self.tp = {k: torch.tensor(v, dtype=torch.float32, requires_grad=k in self.masks) for k, v in m.params.items()}
        params = [self.tp[k] for k in self.masks]
        if optimizer == "adam":
            self.opt = torch.optim.AdamW(params, lr=lr, weight_decay=weight_decay)
        else:
            self.opt = torch.optim.SGD(params, lr=lr, momentum=MOMENTUM, weight_decay=weight_decay)
        self.clip_norm = clip_norm
        self.rng = np.random.default_rng(seed)
        self.class_index = {c: i for i, c in enumerate(m.classes)}
        self._x = torch.from_numpy(np.ascontiguousarray(data.images, dtype=np.float32))

    def set_lr(self, lr):
        for group in self.opt.param_groups:
            group["lr"] = lr

    def step(self, idx):
        idx = np.asarray(idx)
        resp, box, cls = build_targets([self.data.targets[i] for i in idx], self.base.arch, self.class_index)
        raw = forward_tensor(self.tp, self.base.arch, self.base.n_classes, self._x[torch.from_numpy(idx)])
        total, parts = yolo_loss(raw, resp, box, cls)
        self.opt.zero_grad(set_to_none=True)
        total.backward()
        for k, mask in self.masks.items():
            if mask is not None:
                self.tp[k].grad.mul_(mask)
        if self.clip_norm:
            torch.nn.utils.clip_grad_norm_([self.tp[k] for k in self.masks], self.clip_norm)
        self.opt.step()
        return float(total.detach()), {k: float(v.detach()) for k, v in parts.items()}

    def epoch(self, batch_size):
        n = len(self.data)
        order = self.rng.permutation(n)
        sums = {"loss": 0.0, "localization": 0.0, "objectness": 0.0, "classification": 0.0}
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            total, parts = self.step(idx)
            w = len(idx) / n
            sums["loss"] += total * w
            for k, v in parts.items():
                sums[k] += v * w
        return sums

    def model(self) -> DetectorModel:
        out = self.base.copy()
        for k, mask in self.masks.items():
            trained = self.tp[k].detach().to(torch.float64).numpy().copy()
            if mask is not None:
                # frozen rows keep their float64 values rather than a float32 round trip
                trained = np.where(mask.numpy().astype(bool), trained, out.params[k])
            out.params[k] = trained
        return out


def steps_per_epoch(n_images, batch_size):
    return math.ceil(n_images / batch_size)


def train(m: DetectorModel, dataset, sched: TrainSchedule, seed: int):
    """Train a copy of ``m``; returns (trained model, per-epoch history)."""
    data = as_tensor_data(dataset, m.arch.input_size)
    trainer = Trainer(m, data, sched.lr(0), seed, sched.optimizer, sched.weight_decay, sched.clip_norm, sched.scope)
    history = []
    t0 = time.perf_counter()
    for epoch in range(sched.epochs):
        lr = sched.lr(epoch)
        trainer.set_lr(lr)
        rec = trainer.epoch(sched.batch_size)
        rec.update(epoch=epoch, lr=lr)
        if not math.isfinite(rec["loss"]):
            raise FloatingPointError(f"training diverged at epoch {epoch} (lr={lr})")
        history.append(rec)
        log.debug("epoch %d lr %.2e loss %.4f", epoch, lr, rec["loss"])
    log.info("trained %d epochs on %d images in %.1fs, final loss %.4f",
             sched.epochs, len(data), time.perf_counter() - t0, history[-1]["loss"])
    out = trainer.model()
    out.history = list(m.history) + [dict(h, mode=sched.mode) for h in history]
    return out, history
