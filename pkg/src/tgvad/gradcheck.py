"""Central finite differences, used to cross-check analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autodiff import Tensor


def numerical_gradient(fn: Callable[[], Tensor], wrt: Tensor, h: float = 1e-5) -> np.ndarray:
    """d fn() / d wrt by central differences; ``wrt.data`` is perturbed in place and restored."""
    grad = np.zeros_like(wrt.data)
    flat = wrt.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = float(fn().data)
        flat[i] = orig - h
        down = float(fn().data)
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return grad


def analytic_gradients(fn: Callable[[], Tensor], wrt: Sequence[Tensor]) -> list[np.ndarray]:
    for t in wrt:
        t.zero_grad()
    fn().backward()
    return [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in wrt]


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """max |a - n| / max(|a|, |n|, floor) over all entries."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def check_gradients(
    fn: Callable[[], Tensor], wrt: Sequence[Tensor], h: float = 1e-5, floor: float = 1e-8
) -> float:
    """Worst relative error between backprop and finite differences over ``wrt``."""
    analytic = analytic_gradients(fn, wrt)
    worst = 0.0
    for t, a in zip(wrt, analytic):
        worst = max(worst, max_relative_error(a, numerical_gradient(fn, t, h), floor))
    return worst
