import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from marppg.numerics import (
    AdamState, GradientError, OneCycleSchedule, ShapeError, Tensor, adam_step, avg_pool2d, conv2d,
    grad_check, linear, make_rng, no_grad, onecycle_lr, relu, softmax,
)
from marppg.numerics import tensor as T
from marppg.numerics.checkpoint import (
    CheckpointError, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint,
)


def leaf(x):
    return Tensor(np.asarray(x, dtype=float), requires_grad=True)


# ---------------------------------------------------------------- forward

def test_add_and_matmul_examples():
    assert np.array_equal((Tensor([1, 2]) + Tensor([3, 4])).data, [4, 6])
    a = np.arange(6.0).reshape(2, 3)
    out = Tensor(a) @ Tensor(np.ones((3, 1)))
    assert np.array_equal(out.data[:, 0], a.sum(axis=1))


def test_identity_kernel_conv_is_identity():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 3, 7, 5))
    w = np.zeros((3, 3, 3, 3))
    for c in range(3):
        w[c, c, 1, 1] = 1.0
    assert np.array_equal(conv2d(Tensor(x), Tensor(w)).data, x)


def naive_conv(x, w, b):
    n, c_in, h, wd = x.shape
    c_out, _, k, _ = w.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.zeros((n, c_out, h, wd))
    for i in range(n):
        for o in range(c_out):
            for r in range(h):
                for s in range(wd):
                    out[i, o, r, s] = np.sum(xp[i, :, r:r + k, s:s + k] * w[o]) + b[o]
    return out


def test_conv2d_matches_loop_oracle():
    rng = np.random.default_rng(2)
    x, w, b = rng.normal(size=(2, 3, 6, 5)), rng.normal(size=(4, 3, 3, 3)), rng.normal(size=4)
    got = conv2d(Tensor(x), Tensor(w), Tensor(b)).data
    np.testing.assert_allclose(got, naive_conv(x, w, b), rtol=1e-12, atol=1e-12)


def test_avg_pool_and_softmax_values():
    x = np.arange(16.0).reshape(1, 1, 4, 4)
    np.testing.assert_array_equal(avg_pool2d(Tensor(x), 2).data[0, 0], [[2.5, 4.5], [10.5, 12.5]])
    s = softmax(Tensor([[0.0, math.log(3.0)]]), axis=1).data
    np.testing.assert_allclose(s, [[0.25, 0.75]], rtol=1e-15)


def test_linear_is_x_wt_plus_b():
    rng = np.random.default_rng(3)
    x, w, b = rng.normal(size=(5, 3)), rng.normal(size=(2, 3)), rng.normal(size=2)
    np.testing.assert_allclose(linear(Tensor(x), Tensor(w), Tensor(b)).data, x @ w.T + b, rtol=1e-14)


def test_shape_mismatch_names_op_and_shapes():
    with pytest.raises(ShapeError) as exc:
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))
    assert "matmul" in str(exc.value) and "(2, 3)" in str(exc.value)
    with pytest.raises(ShapeError, match="add"):
        Tensor(np.ones(3)) + Tensor(np.ones(4))


def test_forward_is_bitwise_deterministic():
    rng = np.random.default_rng(4)
    x, w = rng.normal(size=(3, 2, 8, 8)), rng.normal(size=(4, 2, 3, 3))
    a = softmax(conv2d(Tensor(x), Tensor(w)).reshape(3, -1), axis=1).data
    b = softmax(conv2d(Tensor(x), Tensor(w)).reshape(3, -1), axis=1).data
    assert a.tobytes() == b.tobytes()


# ---------------------------------------------------------------- backward

def test_backward_examples():
    x = leaf(3.0)
    (x * x).backward()
    assert x.grad == pytest.approx(6.0)

    x = leaf(np.arange(4.0))
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, np.ones(4))

    x = leaf([-1.0, 2.0])
    relu(x).mean().backward()
    np.testing.assert_array_equal(x.grad, [0.0, 0.5])


def test_backward_requires_scalar():
    x = leaf(np.ones(3))
    with pytest.raises(GradientError):
        (x * 2).backward()


def test_shared_subexpression_visited_once():
    x = leaf(2.0)
    y = x * x  # used twice below
    (y + y * 3.0).backward()
    assert x.grad == pytest.approx(16.0)  # d/dx 4x^2


def test_backward_of_sum_is_sum_of_backwards():
    rng = np.random.default_rng(5)
    data = rng.normal(size=(4, 3))

    def loss_a(x):
        return (x.tanh() * x).sum()

    def loss_b(x):
        return (x.exp() * 0.3).mean()

    grads = []
    for fn in (loss_a, loss_b, lambda x: loss_a(x) + loss_b(x)):
        x = leaf(data)
        fn(x).backward()
        grads.append(x.grad)
    np.testing.assert_allclose(grads[0] + grads[1], grads[2], atol=1e-10)


def test_every_leaf_gets_grad_and_graph_is_freed():
    a, b = leaf(np.ones(3)), leaf(np.full(3, 2.0))
    out = (a * b).sum()
    out.backward()
    assert a.grad is not None and b.grad is not None
    assert out.is_leaf  # graph released


def test_no_grad_records_nothing():
    x = leaf(np.ones(2))
    with no_grad():
        y = (x * 2).sum()
    assert y.is_leaf and not y.requires_grad


def test_sqrt_gradient_at_zero_is_zero():
    x = leaf(np.zeros(2))
    T.sqrt(x).sum().backward()
    np.testing.assert_array_equal(x.grad, np.zeros(2))


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (3, 4), elements=st.floats(-3, 3)))
def test_tanh_mul_chain_passes_grad_check(x):
    assert grad_check(lambda t: (t.tanh() * t + t * 0.5).sum(), x) < 1e-4


def test_grad_check_polynomial_and_nan():
    assert grad_check(lambda t: (t * t).sum(), np.array([1.0, 2.0, 3.0])) < 1e-6
    with np.errstate(invalid="ignore"), pytest.raises(GradientError):
        grad_check(lambda t: T.log(t).sum(), np.array([-1.0]))


# ---------------------------------------------------------------- Adam / schedule

def test_adam_zero_grad_fresh_state_no_change():
    p = leaf([1.0, -2.0])
    adam_step([p], [np.zeros(2)], AdamState(lr=0.1))
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_adam_first_step_is_lr_sign_g():
    p = leaf([0.5])
    state = AdamState(lr=0.1)
    adam_step([p], [np.array([1.0])], state)
    assert state.step == 1
    assert p.data[0] == pytest.approx(0.5 - 0.1, abs=1e-8)


def test_adam_constant_grad_displacement_approaches_lr():
    # closed form: with constant g the bias-corrected ratio m_hat / sqrt(v_hat) is exactly sign(g)
    p = leaf([0.0])
    state = AdamState(lr=0.01)
    prev = 0.0
    for _ in range(1000):
        adam_step([p], [np.array([3.0])], state)
        step, prev = prev - p.data[0], p.data[0]
    assert step == pytest.approx(0.01, rel=1e-6)


def test_adam_shape_mismatch():
    with pytest.raises(ShapeError):
        adam_step([leaf(np.ones(2))], [np.ones(3)], AdamState())


def test_onecycle_endpoints():
    s = OneCycleSchedule(max_lr=1e-3, total_steps=100)
    assert onecycle_lr(0, s) == pytest.approx(1e-3 / 25)
    assert onecycle_lr(30, s) == 1e-3
    assert onecycle_lr(99, s) == pytest.approx(1e-3 / 1e4)
    with pytest.raises(ValueError):
        onecycle_lr(100, s)
    with pytest.raises(ValueError):
        onecycle_lr(-1, s)


def test_onecycle_frozen_values():
    # independent closed form: cos annealing between endpoints, 40-step horizon, peak at 12
    s = OneCycleSchedule(max_lr=2e-3, total_steps=40)
    lo, hi, fin = 2e-3 / 25, 2e-3, 2e-3 / 1e4
    assert onecycle_lr(6, s) == pytest.approx(lo + (hi - lo) * 0.5, rel=1e-12)
    frac = (20 - 12) / 27
    assert onecycle_lr(20, s) == pytest.approx(fin + (hi - fin) * (1 + math.cos(math.pi * frac)) / 2, rel=1e-12)
    assert onecycle_lr(20, s) == pytest.approx(0.0015971988758436157, rel=1e-12)


@given(st.integers(1, 500), st.floats(0.0, 1.0))
def test_onecycle_positive_and_peak(total, wf):
    s = OneCycleSchedule(1e-3, total, warmup_fraction=wf)
    lrs = [onecycle_lr(i, s) for i in range(total)]
    assert min(lrs) > 0
    assert max(lrs) == 1e-3
    if s.peak_step < total:
        assert lrs[s.peak_step] == 1e-3


# ---------------------------------------------------------------- checkpoint / rng

def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(6)
    tensors = {"enc0.w": rng.normal(size=(2, 3, 3, 3)), "scalar": np.array(1.5), "é": np.arange(4.0)}
    save_checkpoint(tmp_path / "c.marw", tensors)
    back = load_checkpoint(tmp_path / "c.marw")
    assert list(back) == list(tensors)
    for k in tensors:
        assert back[k].shape == tensors[k].shape
        assert back[k].tobytes() == tensors[k].tobytes()


def test_checkpoint_corruption_is_structured():
    buf = encode_checkpoint({"a": np.ones((2, 2))})
    with pytest.raises(CheckpointError):
        decode_checkpoint(b"XXXX" + buf[4:])
    for cut in range(len(buf)):
        with pytest.raises(CheckpointError):
            decode_checkpoint(buf[:cut])
    with pytest.raises(CheckpointError):
        decode_checkpoint(buf + b"\0")


def test_rng_streams_are_keyed_and_reproducible():
    a = make_rng(7, 1, 3).random(4)
    assert np.array_equal(a, make_rng(7, 1, 3).random(4))
    assert not np.array_equal(a, make_rng(7, 1, 4).random(4))
    assert not np.array_equal(a, make_rng(8, 1, 3).random(4))
