"""Registry of gradient checks over every layer primitive and loss.

Each entry draws ``points`` seeded random inputs, runs ``grad_check`` with
respect to every differentiable argument and reports the worst relative
error.  Ops are looked up through their modules at call time so a patched
backward rule is what gets checked.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import losses, model as erea
from .numerics import functional as F
from .numerics import make_rng, tensor as T
from .numerics.gradcheck import grad_check

TOLERANCE = 1e-4


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_error: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_error) and self.max_error < TOLERANCE)


def _away_from_zero(rng, shape, margin=0.1):
    u = rng.uniform(-1, 1, size=shape)
    return np.sign(u) * (margin + np.abs(u))


def _wrt_each(fn: Callable, args: list[np.ndarray]) -> float:
    """Max grad_check error of scalar ``fn(*args)`` w.r.t. each argument in turn."""
    worst = 0.0
    for i in range(len(args)):
        def f(x, i=i):
            full = [T.Tensor(a) for a in args]
            full[i] = x
            return fn(*full)
        worst = max(worst, grad_check(f, args[i]))
    return worst


def _weighted(out):
    """Reduce a tensor to a scalar with fixed non-uniform weights."""
    w = np.cos(np.arange(out.size, dtype=np.float64)).reshape(out.shape) + 1.5
    return T.tsum(T.mul(out, T.Tensor(w)))


def _binary(op_name):
    def check(rng):
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(4,))
        if op_name == "div":
            b = _away_from_zero(rng, (4,), 0.5)
        op = getattr(T, op_name)
        return _wrt_each(lambda x, y: _weighted(op(x, y)), [a, b])
    return check


def _unary(op_name, domain="normal"):
    def check(rng):
        if domain == "positive":
            x = rng.uniform(0.2, 2.0, size=(3, 5))
        elif domain == "offset":
            x = _away_from_zero(rng, (3, 5))
        else:
            x = rng.normal(size=(3, 5))
        op = getattr(T, op_name)
        return _wrt_each(lambda t: _weighted(op(t)), [x])
    return check


def _check_power(rng):
    x = rng.uniform(0.2, 2.0, size=(3, 4))
    return _wrt_each(lambda t: _weighted(T.power(t, 2.5)), [x])


def _check_matmul(rng):
    return _wrt_each(lambda a, b: _weighted(T.matmul(a, b)), [rng.normal(size=(3, 4)), rng.normal(size=(4, 2))])


def _check_linear(rng):
    return _wrt_each(lambda x, w, b: _weighted(F.linear(x, w, b)),
                     [rng.normal(size=(3, 4)), rng.normal(size=(2, 4)), rng.normal(size=(2,))])


def _check_conv2d(rng):
    return _wrt_each(lambda x, w, b: _weighted(F.conv2d(x, w, b)),
                     [rng.normal(size=(2, 2, 5, 4)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=(3,))])


def _check_avg_pool(rng):
    return _wrt_each(lambda x: _weighted(F.avg_pool2d(x, 2)), [rng.normal(size=(2, 2, 4, 6))])


def _check_softmax(rng):
    return _wrt_each(lambda x: _weighted(F.softmax(x, axis=1)), [rng.normal(size=(3, 5))])


def _check_reductions(rng):
    x = rng.normal(size=(3, 4, 2))
    return max(_wrt_each(lambda t: _weighted(T.tsum(t, axis=(0, 2))), [x]),
               _wrt_each(lambda t: _weighted(T.mean(t, axis=1, keepdims=True)), [x]))


def _check_shape_ops(rng):
    x = rng.normal(size=(3, 4, 2))
    return max(_wrt_each(lambda t: _weighted(T.transpose(T.reshape(t, (4, 6)), (1, 0))), [x]),
               _wrt_each(lambda t: _weighted(T.getitem(t, (slice(None), [1, 0, 3, 3], slice(None, None, -1)))), [x]))


def _check_concat_stack(rng):
    a, b = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
    return max(_wrt_each(lambda x, y: _weighted(T.concatenate([x, y], axis=1)), [a, b]),
               _wrt_each(lambda x, y: _weighted(T.stack([x, y], axis=1)), [a, b]))


def _signal_pair(rng, n=12):
    z = rng.normal(size=n)
    y = 0.6 * z + rng.normal(size=n)
    return y, z


def _check_l1(rng):
    y, z = _signal_pair(rng)
    return _wrt_each(losses.l1_loss, [y, z])


def _check_pearson(rng):
    y, z = _signal_pair(rng)
    return _wrt_each(losses.neg_pearson_loss, [y, z])


def _check_regression(rng):
    y, z = _signal_pair(rng)
    return _wrt_each(lambda a, b: losses.regression_loss(a, b, 0.3), [y, z])


def _check_attention(rng):
    m, mf = rng.normal(size=(3, 4, 2, 2)), rng.normal(size=(3, 4, 2, 2))
    return _wrt_each(losses.attention_consistency_loss, [m, mf])


def _check_total(rng):
    parts = [rng.uniform(0.1, 2.0, size=()) for _ in range(3)]
    return _wrt_each(lambda a, b, c: losses.total_loss(a, b, c, 0.5), parts)


# odd T keeps the L1 sign sum, and so the head-bias gradient, away from an exact zero
MICRO_MODEL = erea.ModelConfig(frames=5, height=8, width=8, in_channels=3,
                               encoder_channels=(2, 3), feature_size=4)


def micro_model_loss(params: dict, frames: np.ndarray, label: np.ndarray, mask_seed: int,
                     alpha: float = 0.3, beta: float = 0.5):
    """Full training objective of one masked + mirrored chunk on a tiny EREA."""
    from .training import horizontal_flip, random_mask
    net = erea.EREA(MICRO_MODEL, params=params)
    x = random_mask(frames, make_rng(mask_seed), mask_size=3)
    y, m = net(x)
    y_f, m_f = net(horizontal_flip(x))
    return losses.total_loss(losses.regression_loss(y, label, alpha),
                             losses.regression_loss(y_f, label, alpha),
                             losses.attention_consistency_loss(m, m_f), beta)


def _check_model(rng):
    seed = int(rng.integers(0, 2 ** 31))
    params = erea.init_params(MICRO_MODEL, seed)
    frames = rng.uniform(0, 1, size=(MICRO_MODEL.frames, 8, 8, 3))
    label = rng.normal(size=MICRO_MODEL.frames)
    worst = 0.0
    for name in params:
        def f(x, name=name):
            local = {k: T.Tensor(v.data) for k, v in params.items()}
            local[name] = x
            return micro_model_loss(local, frames, label, seed)
        worst = max(worst, grad_check(f, params[name].data))
    return worst


REGISTRY: dict[str, Callable[[np.random.Generator], float]] = {
    "add": _binary("add"),
    "sub": _binary("sub"),
    "mul": _binary("mul"),
    "div": _binary("div"),
    "matmul": _check_matmul,
    "linear": _check_linear,
    "conv2d": _check_conv2d,
    "avg_pool2d": _check_avg_pool,
    "softmax": _check_softmax,
    "tanh": _unary("tanh"),
    "relu": _unary("relu", "offset"),
    "exp": _unary("exp"),
    "log": _unary("log", "positive"),
    "sqrt": _unary("sqrt", "positive"),
    "abs": _unary("absolute", "offset"),
    "neg": _unary("neg"),
    "power": _check_power,
    "sum_mean": _check_reductions,
    "reshape_transpose_getitem": _check_shape_ops,
    "concatenate_stack": _check_concat_stack,
    "l1_loss": _check_l1,
    "neg_pearson_loss": _check_pearson,
    "regression_loss": _check_regression,
    "attention_consistency_loss": _check_attention,
    "total_loss": _check_total,
    "erea_total_loss": _check_model,
}


def run_checks(points: int = 10, seed: int = 0, names=None) -> list[CheckResult]:
    results = []
    for i, (name, check) in enumerate(REGISTRY.items()):
        if names is not None and name not in names:
            continue
        rng = make_rng(seed, 100 + i)
        worst = 0.0
        for _ in range(points):
            try:
                worst = max(worst, check(rng))
            except Exception:  # a crashing rule is a failed check, not a crashed run
                worst = float("nan")
                break
        results.append(CheckResult(name, worst))
    return results
