"""Turning a wall-clock response time into an epoch count."""

from __future__ import annotations

import math
import statistics
import time
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ValidationError
from .tinydet import Trainer, as_tensor_data


@dataclass(frozen=True)
class BudgetPlan:
    response_time: float
    num_images: int
    batch_size: int
    step_time: float
    steps_per_epoch: int
    epochs: int

    def to_dict(self):
        return asdict(self)


def epochs_for_budget(response_time, num_images, batch_size, t) -> int:
    for name, v in (("response_time", response_time), ("num_images", num_images),
                    ("batch_size", batch_size), ("step_time", t)):
        if not v > 0:
            raise ValidationError(f"{name} must be positive, got {v}")
    steps = math.ceil(num_images / batch_size)
    return max(1, math.floor(response_time / (steps * t)))


def plan_budget(response_time, num_images, batch_size, t) -> BudgetPlan:
    return BudgetPlan(float(response_time), int(num_images), int(batch_size), float(t),
                      math.ceil(num_images / batch_size), epochs_for_budget(response_time, num_images, batch_size, t))


def measure_step_time(model, dataset, warmup=3, sample=10, batch_size=16, lr=1e-4, seed=0, **trainer_kw) -> float:
    """Median wall-clock seconds of one optimizer step, on a throwaway copy of ``model``.

    ``trainer_kw`` (optimizer, scope, ...) should match the run being budgeted.
    """
    if sample < 1:
        raise ValidationError("need at least one timed step")
    if warmup < 0:
        raise ValidationError("warmup must be >= 0")
    data = as_tensor_data(dataset, model.arch.input_size)
    n = len(data)
    if n < 1:
        raise ValidationError("cannot time steps on an empty dataset")
    steps_available = max(1, n // batch_size)  # full batches only; wraps around
    trainer = Trainer(model, data, lr, seed, **trainer_kw)
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    times = []
    for i in range(warmup + sample):
        start = (i % steps_available) * batch_size
        idx = order[start:start + batch_size]
        t0 = time.perf_counter()
        trainer.step(idx)
        dt = time.perf_counter() - t0
        if i >= warmup:
            times.append(dt)
    return statistics.median(times)
