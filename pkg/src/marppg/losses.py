"""Regression and attention-consistency objectives."""

from __future__ import annotations

import numpy as np

from .model import flip_align
from .numerics import Tensor, sqrt
from .numerics.tensor import ShapeError, as_tensor

PEARSON_EPS = 1e-8


def _check_pair(op: str, y: Tensor, z: Tensor) -> None:
    if y.shape != z.shape or y.ndim != 1:
        raise ShapeError(op, y.shape, z.shape)


def l1_loss(y, z) -> Tensor:
    y, z = as_tensor(y), as_tensor(z)
    _check_pair("l1_loss", y, z)
    return (y - z).abs().mean()


def neg_pearson_loss(y, z, eps: float = PEARSON_EPS) -> Tensor:
    """1 - Pearson correlation, with ``eps`` added under the square root.

    Written on centred signals; the numerator and radicand equal the raw
    sum form ``T*sum(yz) - sum(y)*sum(z)`` etc. up to rounding.
    """
    y, z = as_tensor(y), as_tensor(z)
    _check_pair("neg_pearson_loss", y, z)
    if y.shape[0] < 2:
        raise ShapeError("neg_pearson_loss", y.shape, (2,))
    n = float(y.shape[0])
    yc = y - y.mean()
    zc = z - z.mean()
    num = (yc * zc).sum() * n
    den = sqrt((yc * yc).sum() * (zc * zc).sum() * (n * n) + eps)
    return 1.0 - num / den


def regression_loss(y, z, alpha: float) -> Tensor:
    return (1.0 - alpha) * l1_loss(y, z) + alpha * neg_pearson_loss(y, z)


def attention_consistency_loss(m, m_flipped) -> Tensor:
    """Mean over (t, expert) of the spatial L2 distance between ``m`` and the
    flip-aligned ``m_flipped``, normalized by T*E*Hq*Wq."""
    m, m_flipped = as_tensor(m), as_tensor(m_flipped)
    if m.shape != m_flipped.shape or m.ndim != 4:
        raise ShapeError("attention_consistency_loss", m.shape, m_flipped.shape)
    diff = m - flip_align(m_flipped)
    norms = sqrt((diff * diff).sum(axis=(2, 3)))
    return norms.sum() * (1.0 / float(np.prod(m.shape)))


def total_loss(reg_orig, reg_flip, ac, beta: float) -> Tensor:
    return (1.0 - beta) * (as_tensor(reg_orig) + reg_flip) * 0.5 + beta * as_tensor(ac)
