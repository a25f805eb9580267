"""Shared test helpers: finite-difference oracles and relative-error metrics."""
from __future__ import annotations

import numpy as np


def finite_difference(loss_fn, arrays, h=1e-3):
    """Central finite differences of a scalar loss w.r.t. every array entry.

    ``arrays`` maps names to live numpy arrays that ``loss_fn`` reads; entries
    are perturbed in place and restored. Run in float64 so the oracle noise
    stays far below the tolerances under test.
    """
    out = {}
    for name, arr in arrays.items():
        grad = np.zeros_like(arr, dtype=np.float64)
        flat = arr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn()
            flat[i] = orig - h
            down = loss_fn()
            flat[i] = orig
            grad.reshape(-1)[i] = (up - down) / (2.0 * h)
        out[name] = grad
    return out


def max_rel_err(analytic, numeric, clamp=1e-6):
    """Max relative error with the denominator clamped away from zero."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), clamp)
    return float(np.max(np.abs(a - n) / denom))


def max_rel_err_dict(analytic: dict, numeric: dict, clamp=1e-6):
    return max(max_rel_err(analytic[k], numeric[k], clamp) for k in analytic)
