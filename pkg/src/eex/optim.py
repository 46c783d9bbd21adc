"""Named trainable parameters and AdamW with a linear warmup/decay schedule."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .autodiff import Tensor
from .errors import ConfigError


class Parameter(Tensor):
    """A leaf tensor with a name, a freeze flag, and AdamW moment state.

    The gradient accumulator always exists (zeros when untouched), so a
    parameter that a loss never reaches reports an exact zero gradient.
    """

    __slots__ = ("name", "trainable", "m", "v", "step")

    def __init__(self, name: str, value: np.ndarray):
        super().__init__(value, requires_grad=True)
        self.name = name
        self.trainable = True
        self.grad = np.zeros_like(self.data)
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)
        self.step = 0

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape}, trainable={self.trainable})"


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    warmup_fraction: float = 0.1
    total_steps: int = 1

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError("beta1 and beta2 must lie in (0, 1)")
        if self.eps <= 0:
            raise ConfigError("eps must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        if not 0 <= self.warmup_fraction < 1:
            raise ConfigError("warmup_fraction must lie in [0, 1)")
        if self.total_steps < 1:
            raise ConfigError("total_steps must be a positive integer")


def learning_rate_at(cfg: OptimizerConfig, step: int) -> float:
    """Scheduled learning rate at 1-based `step`.

    Linear ramp from 0 over warmup_fraction * total_steps, then linear
    decay to 0 at total_steps.
    """
    warmup = cfg.warmup_fraction * cfg.total_steps
    if warmup > 0 and step <= warmup:
        return cfg.learning_rate * step / warmup
    denom = max(cfg.total_steps - warmup, 1.0)
    return cfg.learning_rate * max(cfg.total_steps - step, 0.0) / denom


def adamw_step(params: Iterable[Parameter], cfg: OptimizerConfig, step: int) -> None:
    """One AdamW update with decoupled weight decay.

    Frozen parameters are left bit-identical (moments included). All
    gradients, frozen or not, are zeroed afterwards. The scheduled
    learning rate multiplies both the Adam update and the decay term;
    decay never enters the moment estimates.
    """
    lr = learning_rate_at(cfg, step)
    for p in params:
        if not p.trainable:
            p.zero_grad()
            continue
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        p.step = step
        p.m = cfg.beta1 * p.m + (1.0 - cfg.beta1) * g
        p.v = cfg.beta2 * p.v + (1.0 - cfg.beta2) * (g * g)
        m_hat = p.m / (1.0 - cfg.beta1**step)
        v_hat = p.v / (1.0 - cfg.beta2**step)
        p.data -= lr * (m_hat / (np.sqrt(v_hat) + cfg.eps) + cfg.weight_decay * p.data)
        p.zero_grad()
