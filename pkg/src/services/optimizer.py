"""AdamW with decoupled weight decay and a linear-warm-up cosine learning-rate schedule."""

import logging
import math
from typing import Dict, Mapping, Tuple, Union

import numpy as np

from src.engine.autograd import Tensor
from src.models.parameters import ParameterStore
from src.utils.errors import ConfigError, ShapeError

logger = logging.getLogger(__name__)


class CosineWarmupSchedule:
    """lr rises linearly from 0 over the first ``warmup_ratio`` of the steps, then follows
    half a cosine down to ``end_value``. Steps past ``total_steps`` stay at ``end_value``.
    """

    def __init__(self, peak_lr: float, total_steps: int, warmup_ratio: float = 0.15, end_value: float = 0.0):
        if peak_lr <= 0 or total_steps < 1:
            raise ConfigError(f"invalid schedule: peak_lr={peak_lr}, total_steps={total_steps}")
        if not 0 <= warmup_ratio < 1:
            raise ConfigError(f"warmup_ratio must lie in [0, 1), got {warmup_ratio}")
        self.peak_lr = peak_lr
        self.total_steps = total_steps
        self.warmup_steps = int(round(warmup_ratio * total_steps))
        self.end_value = end_value

    def lr_at(self, step: int) -> float:
        if step < self.warmup_steps:
            return self.peak_lr * step / self.warmup_steps
        if step >= self.total_steps:
            return self.end_value
        progress = (step - self.warmup_steps) / max(1, self.total_steps - self.warmup_steps)
        return self.end_value + 0.5 * (self.peak_lr - self.end_value) * (1.0 + math.cos(math.pi * progress))

    __call__ = lr_at


class AdamW:
    def __init__(self, params: ParameterStore, betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.01):
        beta1, beta2 = betas
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1) or eps <= 0 or weight_decay < 0:
            raise ConfigError(f"invalid AdamW settings betas={betas} eps={eps} weight_decay={weight_decay}")
        self.params = params
        self.betas = (beta1, beta2)
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.exp_avg: Dict[str, np.ndarray] = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.exp_avg_sq: Dict[str, np.ndarray] = {name: np.zeros_like(t.data) for name, t in params.items()}

    def step(self, grads: Mapping[str, Union[Tensor, np.ndarray]], lr: float):
        """One update of every parameter in the store (replacing its tensor)."""
        beta1, beta2 = self.betas
        self.step_count += 1
        bias1 = 1.0 - beta1 ** self.step_count
        bias2 = 1.0 - beta2 ** self.step_count
        for name, param in list(self.params.items()):
            grad = grads[name]
            grad = grad.data if isinstance(grad, Tensor) else np.asarray(grad)
            if grad.shape != param.shape:
                raise ShapeError(f"adamw[{name}]", param.shape, grad.shape)
            m = self.exp_avg[name] = beta1 * self.exp_avg[name] + (1.0 - beta1) * grad
            v = self.exp_avg_sq[name] = beta2 * self.exp_avg_sq[name] + (1.0 - beta2) * grad * grad
            decayed = param.data * (1.0 - lr * self.weight_decay)
            update = (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            self.params.set(name, decayed - lr * update)
