"""Layer primitives built on the tensor graph: conv, pooling, softmax, linear."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, as_tensor, make_result, matmul


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """(N, C, H, W) -> (N*H*W, C*k*k) patches for a same-padded stride-1 conv."""
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    n, c, h, w = x.shape
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))  # N C H W k k
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * k * k)


def _conv_forward(x: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n, _, h, wd = x.shape
    c_out, _, k, _ = w.shape
    cols = _im2col(x, k)
    out = cols @ w.reshape(c_out, -1).T
    return out.reshape(n, h, wd, c_out).transpose(0, 3, 1, 2), cols


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Stride-1 convolution with zero padding that preserves spatial size.

    ``x`` is (N, C_in, H, W), ``weight`` is (C_out, C_in, k, k) with odd k.
    Computes cross-correlation, as deep learning frameworks do.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1] \
            or weight.shape[2] != weight.shape[3] or weight.shape[2] % 2 == 0:
        raise ShapeError("conv2d", x.shape, weight.shape)
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError("conv2d", weight.shape, bias.shape)
    out, cols = _conv_forward(x.data, weight.data)
    if bias is not None:
        out = out + bias.data.reshape(1, -1, 1, 1)
    c_out = weight.shape[0]

    def backward(g):
        g_rows = g.transpose(0, 2, 3, 1).reshape(-1, c_out)
        gx = gw = gb = None
        if weight.requires_grad:
            gw = (g_rows.T @ cols).reshape(weight.shape)
        if x.requires_grad:
            flipped = np.flip(weight.data, (2, 3)).transpose(1, 0, 2, 3)
            gx, _ = _conv_forward(g, np.ascontiguousarray(flipped))
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, backward, "conv2d")


def avg_pool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping ``size`` x ``size`` average pooling over the last two axes."""
    x = as_tensor(x)
    n, c, h, w = x.shape
    if h % size or w % size:
        raise ShapeError("avg_pool2d", x.shape, (size, size))
    out = x.data.reshape(n, c, h // size, size, w // size, size).mean(axis=(3, 5))

    def backward(g):
        g = np.repeat(np.repeat(g, size, axis=2), size, axis=3)
        return (g / (size * size),)

    return make_result(out, (x,), backward, "avg_pool2d")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_result(out, (x,), backward, "softmax")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` for x of shape (N, in) and weight (out, in)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError("linear", x.shape, weight.shape)
    out = matmul(x, _transpose2d(weight))
    if bias is not None:
        out = out + bias
    return out


def _transpose2d(w: Tensor) -> Tensor:
    return make_result(w.data.T, (w,), lambda g: (g.T,), "transpose")

