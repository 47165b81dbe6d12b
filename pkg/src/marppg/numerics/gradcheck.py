"""Finite-difference verification of autodiff gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import GradientError, Tensor


def numerical_grad(f: Callable[[Tensor], Tensor], point: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    x = np.array(point, dtype=np.float64, copy=True)
    grad = np.zeros_like(x)
    flat_x, flat_g = x.reshape(-1), grad.reshape(-1)
    for i in range(flat_x.size):
        orig = flat_x[i]
        flat_x[i] = orig + eps
        up = f(Tensor(x.copy())).item()
        flat_x[i] = orig - eps
        down = f(Tensor(x.copy())).item()
        flat_x[i] = orig
        flat_g[i] = (up - down) / (2 * eps)
    return grad


def analytic_grad(f: Callable[[Tensor], Tensor], point: np.ndarray) -> np.ndarray:
    x = Tensor(np.array(point, dtype=np.float64, copy=True), requires_grad=True)
    f(x).backward()
    return np.zeros_like(x.data) if x.grad is None else x.grad


def grad_check(f: Callable[[Tensor], Tensor], point, eps: float = 1e-5) -> float:
    """Max componentwise relative error between autodiff and central differences.

    The relative error of a component is ``|a - b| / max(|a|, |b|, 1e-8)``.
    Raises ``GradientError`` if either gradient contains NaN.
    """
    point = np.asarray(point.data if isinstance(point, Tensor) else point, dtype=np.float64)
    a = analytic_grad(f, point)
    b = numerical_grad(f, point, eps)
    if np.isnan(a).any() or np.isnan(b).any():
        raise GradientError("NaN in gradient during grad_check")
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0
