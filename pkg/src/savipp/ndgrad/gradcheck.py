"""Central finite-difference checks for ndgrad graphs."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max per-entry relative error with a floor tied to the gradient scale.

    The floor (1e-3 of the largest numeric entry) keeps entries that are
    zero up to round-off from dominating the statistic.
    """
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    if a.size == 0:
        return 0.0
    scale = max(np.max(np.abs(n)), np.max(np.abs(a)))
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), max(1e-3 * scale, 1e-10))
    return float(np.max(np.abs(a - n) / denom))


def numeric_grad(fn: Callable[[], Tensor], t: Tensor, step: float = 1e-5) -> np.ndarray:
    """d fn() / d t by central differences, perturbing ``t.data`` in place."""
    flat = t.data.reshape(-1)
    out = np.zeros(flat.size, dtype=np.float64)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = float(fn().data)
        flat[i] = orig - step
        fm = float(fn().data)
        flat[i] = orig
        out[i] = (fp - fm) / (2.0 * step)
    return out.reshape(t.shape)


def analytic_grads(fn: Callable[[], Tensor], tensors: Sequence[Tensor]) -> list:
    for t in tensors:
        t.grad = None
        t.requires_grad = True
    loss = fn()
    backward(loss)
    return [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]


def check_gradients(fn: Callable[[], Tensor], tensors: Sequence[Tensor], step: float = 1e-5) -> float:
    """Largest relative error between analytic and central-difference gradients."""
    grads = analytic_grads(fn, tensors)
    worst = 0.0
    for t, g in zip(tensors, grads):
        worst = max(worst, relative_error(g, numeric_grad(fn, t, step)))
    return worst
