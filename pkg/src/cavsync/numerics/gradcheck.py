"""Central finite differences, used as the independent gradient oracle."""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..errors import ParameterError
from .tensor import Tensor


def finite_diff_grad(f: Callable[[Tensor], float], x: Tensor, step: float = 1e-5,
                     indices=None) -> np.ndarray:
    """Estimate df/dx by central differences.

    ``f`` must return a scalar (float or one-element Tensor). When ``indices``
    is given only those flat positions are perturbed; the remaining entries
    of the returned array are NaN.
    """
    if step <= 0:
        raise ParameterError(f"step must be > 0, got {step}")
    base = x.data
    flat = base.reshape(-1)
    out = np.full(flat.shape, np.nan if indices is not None else 0.0)
    positions = range(flat.size) if indices is None else indices
    for i in positions:
        orig = flat[i]
        flat[i] = orig + step
        fp = _scalar(f(x))
        flat[i] = orig - step
        fm = _scalar(f(x))
        flat[i] = orig
        out[i] = (fp - fm) / (2.0 * step)
    return out.reshape(base.shape)


def relative_error(analytic, numeric, floor: float = 1e-8) -> np.ndarray:
    """Elementwise |a - n| / max(|a|, |n|, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def _scalar(v) -> float:
    if isinstance(v, Tensor):
        v = v.data
    return float(np.asarray(v).reshape(()))
