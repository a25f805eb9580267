"""AdamW with decoupled weight decay, warmup/linear-decay schedule, gradient clipping.

Parameters travel as an ordered ``{name: array}`` dict so the optimizer and
the clippers can treat the whole model as one flat collection.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, NumericError, UsageError


@dataclass(frozen=True)
class ScheduleSpec:
    """Linear warmup to base_lr, then linear decay to final_frac * base_lr."""

    base_lr: float = 1e-4
    total_steps: int = 1
    warmup_frac: float = 0.20
    final_frac: float = 0.10

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ConfigError(f"base_lr must be positive, got {self.base_lr}")
        if self.total_steps < 1:
            raise ConfigError(f"total_steps must be >= 1, got {self.total_steps}")
        if not 0.0 < self.warmup_frac < 1.0:
            raise ConfigError(f"warmup_frac must be in (0, 1), got {self.warmup_frac}")
        if not 0.0 < self.final_frac <= 1.0:
            raise ConfigError(f"final_frac must be in (0, 1], got {self.final_frac}")

    @property
    def warmup_steps(self) -> int:
        return round(self.warmup_frac * self.total_steps)


def lr_at(spec: ScheduleSpec, step: int) -> float:
    """Learning rate for a 0-based step index; applied before the update.

    Steps 0..warmup_steps-1 ramp linearly so the last warmup step reaches
    base_lr; the decay segment then interpolates down to final_frac * base_lr
    at step == total_steps.
    """
    if step < 0 or step > spec.total_steps:
        raise UsageError(f"step {step} outside [0, {spec.total_steps}]")
    warmup = spec.warmup_steps
    if step < warmup:
        return spec.base_lr * (step + 1) / warmup
    decay_span = spec.total_steps - warmup
    if decay_span == 0:
        return spec.base_lr * (spec.final_frac if step == spec.total_steps else 1.0)
    frac = (step - warmup) / decay_span
    return spec.base_lr * (1.0 + (spec.final_frac - 1.0) * frac)


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    """Jointly rescale all gradients so their concatenated L2 norm is <= max_norm."""
    if max_norm <= 0:
        raise ConfigError(f"max_norm must be positive, got {max_norm}")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in {name}")
    norm = global_norm(grads)
    if norm <= max_norm:
        return dict(grads)
    scale = max_norm / norm
    return {name: (g * scale).astype(g.dtype, copy=False) for name, g in grads.items()}


def clip_value(grads: dict[str, np.ndarray], max_abs: float) -> dict[str, np.ndarray]:
    """Per-entry clipping to [-max_abs, max_abs] (alternative clip mode)."""
    if max_abs <= 0:
        raise ConfigError(f"max_abs must be positive, got {max_abs}")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in {name}")
    return {name: np.clip(g, -max_abs, max_abs) for name, g in grads.items()}


@dataclass
class AdamWState:
    """First/second moment accumulators plus the step counter."""

    step: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    decay_names: frozenset = field(default_factory=frozenset)

    @classmethod
    def create(cls, params: dict[str, np.ndarray], beta1: float = 0.9,
               beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.01,
               decay_names=None) -> "AdamWState":
        """Fresh state; by default only '*.w' entries receive weight decay.

        BN gamma/beta and bias vectors are excluded from decoupled decay.
        """
        if decay_names is None:
            decay_names = frozenset(n for n in params if n.endswith(".w"))
        return cls(
            step=0,
            m={n: np.zeros_like(p) for n, p in params.items()},
            v={n: np.zeros_like(p) for n, p in params.items()},
            beta1=beta1, beta2=beta2, eps=eps, weight_decay=weight_decay,
            decay_names=frozenset(decay_names),
        )


def adamw_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
               state: AdamWState, lr: float) -> None:
    """One AdamW update, in place on the parameter arrays.

    param <- param - lr * (mhat / (sqrt(vhat) + eps) + weight_decay * param),
    with the decay term applied only to entries in state.decay_names.
    """
    if set(params) != set(grads) or set(params) != set(state.m):
        raise DimensionError("params, grads and optimizer state must share keys")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise DimensionError(f"{name}: grad{g.shape} does not match param{p.shape}")
        m = state.m[name]
        v = state.v[name]
        m += (1.0 - state.beta1) * (g - m)
        v += (1.0 - state.beta2) * (g * g - v)
        mhat = m / bc1
        vhat = v / bc2
        update = mhat / (np.sqrt(vhat) + state.eps)
        if name in state.decay_names and state.weight_decay != 0.0:
            update = update + state.weight_decay * p
        p -= (lr * update).astype(p.dtype, copy=False)
