"""Dense layer primitives with hand-written backward passes.

Everything operates on plain 2-D numpy arrays (rows = batch). Forward
functions return the layer output plus the cache its backward needs; no
autodiff graph is built. Arrays keep whatever float dtype they come in
with, float32 being the reference precision for the shipped models.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, DegenerateBatchError, DimensionError, UsageError

DTYPE = np.float32

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def as_matrix(values, name: str = "matrix") -> np.ndarray:
    """Validate external input as a finite 2-D float array (row-major copy)."""
    arr = np.ascontiguousarray(values, dtype=DTYPE)
    if arr.ndim != 2:
        raise DimensionError(f"{name}: expected 2-D data, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name}: contains non-finite values")
    return arr


def _check_mode(mode: str) -> None:
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")


# ---------------------------------------------------------------------------
# linear
# ---------------------------------------------------------------------------

def linear_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """y = x @ w + b. Returns (y, cache)."""
    if x.ndim != 2 or w.ndim != 2 or b.ndim != 1:
        raise DimensionError("linear: x and w must be 2-D, b 1-D")
    if x.shape[1] != w.shape[0] or w.shape[1] != b.shape[0]:
        raise DimensionError(
            f"linear: shapes do not conform: x{x.shape} w{w.shape} b{b.shape}"
        )
    y = x @ w + b
    return y, (x, w)


def linear_backward(dy: np.ndarray, cache):
    """Gradients of y = x @ w + b. Returns (dx, dw, db)."""
    x, w = cache
    if dy.shape != (x.shape[0], w.shape[1]):
        raise DimensionError(f"linear backward: dy{dy.shape} does not match forward")
    dx = dy @ w.T
    dw = x.T @ dy
    db = dy.sum(axis=0)
    return dx, dw, db


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------

@dataclass
class BatchNormState:
    """Affine parameters plus running statistics for one BN layer."""

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = BN_EPS
    momentum: float = BN_MOMENTUM

    @classmethod
    def create(cls, num_features: int, eps: float = BN_EPS,
               momentum: float = BN_MOMENTUM, dtype=DTYPE) -> "BatchNormState":
        return cls(
            gamma=np.ones(num_features, dtype=dtype),
            beta=np.zeros(num_features, dtype=dtype),
            running_mean=np.zeros(num_features, dtype=dtype),
            running_var=np.ones(num_features, dtype=dtype),
            eps=eps,
            momentum=momentum,
        )

    @property
    def num_features(self) -> int:
        return self.gamma.shape[0]

    def copy(self) -> "BatchNormState":
        return BatchNormState(self.gamma.copy(), self.beta.copy(),
                              self.running_mean.copy(), self.running_var.copy(),
                              self.eps, self.momentum)


def batchnorm_forward(x: np.ndarray, state: BatchNormState, mode: str):
    """Normalize per feature; train mode uses batch stats and updates running stats.

    Train-mode variance is the biased (population) estimate, and the running
    stats store the same quantity: running <- (1-momentum)*running + momentum*batch.
    Returns (y, cache); cache is None after an eval-mode pass.
    """
    _check_mode(mode)
    if x.ndim != 2 or x.shape[1] != state.num_features:
        raise DimensionError(
            f"batchnorm: x{x.shape} does not match {state.num_features} features"
        )
    if mode == "eval":
        inv_std = 1.0 / np.sqrt(state.running_var + state.eps)
        y = (x - state.running_mean) * inv_std * state.gamma + state.beta
        return y.astype(x.dtype, copy=False), None

    if x.shape[0] < 2:
        raise DegenerateBatchError(
            f"batchnorm train mode needs at least 2 rows, got {x.shape[0]}"
        )
    mean = x.mean(axis=0)
    var = x.var(axis=0)  # biased
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (x - mean) * inv_std
    y = xhat * state.gamma + state.beta

    m = state.momentum
    state.running_mean = ((1.0 - m) * state.running_mean + m * mean).astype(x.dtype)
    state.running_var = ((1.0 - m) * state.running_var + m * var).astype(x.dtype)

    cache = (xhat, inv_std, state.gamma)
    return y.astype(x.dtype, copy=False), cache


def batchnorm_backward(dy: np.ndarray, cache):
    """Gradients through train-mode batch normalization. Returns (dx, dgamma, dbeta)."""
    if cache is None:
        raise UsageError("batchnorm_backward requires a train-mode forward cache")
    xhat, inv_std, gamma = cache
    if dy.shape != xhat.shape:
        raise DimensionError(f"batchnorm backward: dy{dy.shape} does not match forward")
    n = dy.shape[0]
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    # dx folds the dependence of batch mean/var on every row
    dx = (inv_std / n) * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
    return dx.astype(dy.dtype, copy=False), dgamma, dbeta


# ---------------------------------------------------------------------------
# relu / dropout
# ---------------------------------------------------------------------------

def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    # ties at exactly 0 pass zero gradient
    return dy * (x > 0)


def dropout(x: np.ndarray, rate: float, rng: np.random.Generator, mode: str):
    """Inverted dropout: train-mode survivors are scaled by 1/(1-rate).

    Eval mode is the identity and draws nothing from ``rng``.
    Returns (y, mask) with a boolean keep-mask.
    """
    _check_mode(mode)
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == "eval" or rate == 0.0:
        return x, np.ones(x.shape, dtype=bool)
    mask = rng.random(x.shape) >= rate
    y = x * mask / (1.0 - rate)
    return y.astype(x.dtype, copy=False), mask


def dropout_backward(dy: np.ndarray, mask: np.ndarray, rate: float) -> np.ndarray:
    if rate == 0.0:
        return dy
    return (dy * mask / (1.0 - rate)).astype(dy.dtype, copy=False)


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits.

    Returns (loss, dlogits) with dlogits = (softmax - onehot) / batch.
    """
    if logits.ndim != 2:
        raise DimensionError(f"logits must be 2-D, got ndim={logits.ndim}")
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise DimensionError(f"labels{labels.shape} do not match batch size {n}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise DataError(f"labels must be in [0, {c}), got range "
                        f"[{labels.min()}, {labels.max()}]")
    z = logits - logits.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    nll = -log_probs[np.arange(n), labels]
    loss = float(nll.mean())
    dlogits = np.exp(log_probs)
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return loss, dlogits.astype(logits.dtype, copy=False)


# ---------------------------------------------------------------------------
# tape
# ---------------------------------------------------------------------------

@dataclass
class GradTape:
    """Caches from one forward pass; backward may consume it exactly once."""

    entries: dict = field(default_factory=dict)
    _consumed: bool = False

    def consume(self) -> dict:
        if self._consumed:
            raise UsageError("tape already consumed; rerun forward before backward")
        self._consumed = True
        return self.entries
