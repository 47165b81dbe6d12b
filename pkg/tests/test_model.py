import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from marppg.checks import MICRO_MODEL, micro_model_loss
from marppg.model import (
    EREA, ModelConfig, cam_attention, encode, expert_forward, flip_align, gate_aggregate,
    init_params, merge_quadrants, model_forward, split_quadrants,
)
from marppg.numerics import ShapeError, Tensor, grad_check

SMALL = ModelConfig(frames=4, height=16, width=16, encoder_channels=(4, 6, 6), feature_size=4)


def test_default_shapes():
    cfg = ModelConfig()
    params = init_params(cfg, 0)
    frames = np.random.default_rng(0).uniform(size=(60, 64, 64, 3))
    assert encode(frames, params, cfg).shape == (60, 32, 8, 8)
    y, m = EREA(cfg, params=params)(frames)
    assert y.shape == (60,) and m.shape == (60, 4, 4, 4)


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(height=48, feature_size=8, encoder_channels=(4,))
    with pytest.raises(ValueError):
        ModelConfig(height=14, width=14, feature_size=7)


def test_encode_zero_frames_zero_bias_gives_zero():
    params = init_params(SMALL, 1)
    for k in params:
        if k.startswith("enc") and k.endswith(".b"):
            params[k].data[:] = 0.0
    out = encode(np.zeros((4, 16, 16, 3)), params, SMALL)
    assert not np.any(out.data)


def test_encode_identical_frames_identical_slices():
    frame = np.random.default_rng(2).uniform(size=(16, 16, 3))
    out = encode(np.stack([frame] * 4), init_params(SMALL, 2), SMALL).data
    for t in range(1, 4):
        assert out[t].tobytes() == out[0].tobytes()


def test_encode_rejects_wrong_dims():
    with pytest.raises(ShapeError):
        encode(np.zeros((4, 16, 16, 1)), init_params(SMALL, 0), SMALL)


def test_split_quadrants_indexing_and_partition():
    grid = np.arange(16.0).reshape(1, 1, 4, 4)
    tl, tr, bl, br = split_quadrants(Tensor(grid))
    assert sorted(tl.data.ravel()) == [0, 1, 4, 5]
    assert sorted(br.data.ravel()) == [10, 11, 14, 15]
    f = np.random.default_rng(3).normal(size=(3, 2, 6, 8))
    assert merge_quadrants(*split_quadrants(Tensor(f))).tobytes() == f.tobytes()
    with pytest.raises(ShapeError):
        split_quadrants(Tensor(np.zeros((1, 1, 3, 4))))


def test_flipped_input_swaps_quadrants():
    f = np.random.default_rng(4).normal(size=(2, 3, 4, 4))
    tl, tr, _, _ = split_quadrants(Tensor(f))
    ftl, ftr, _, _ = split_quadrants(Tensor(f[..., ::-1]))
    np.testing.assert_array_equal(ftl.data, tr.data[..., ::-1])
    np.testing.assert_array_equal(ftr.data, tl.data[..., ::-1])


def test_cam_attention_examples():
    f = np.random.default_rng(5).normal(size=(3, 4, 2, 2))
    np.testing.assert_allclose(cam_attention(Tensor(f), Tensor(np.ones((3, 4)))).data, f.sum(axis=1))
    assert not np.any(cam_attention(Tensor(f), Tensor(np.zeros((3, 4)))).data)
    one = f[:, :1]
    np.testing.assert_array_equal(cam_attention(Tensor(one), Tensor(np.ones((3, 1)))).data, one[:, 0])


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (2, 3, 2, 2), elements=st.floats(-5, 5)),
       arrays(np.float64, (2, 3, 2, 2), elements=st.floats(-5, 5)),
       arrays(np.float64, (2, 3), elements=st.floats(-5, 5)))
def test_cam_attention_is_linear(f1, f2, w):
    lhs = cam_attention(Tensor(f1 + f2), Tensor(w)).data
    rhs = cam_attention(Tensor(f1), Tensor(w)).data + cam_attention(Tensor(f2), Tensor(w)).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_expert_uniform_maps_give_spatial_mean():
    params = init_params(SMALL, 6)
    params["expert_tl.cam.w"].data[:] = 0.0  # maps all zero -> uniform softmax
    f = Tensor(np.random.default_rng(6).normal(size=(4, 6, 2, 2)))
    y, maps = expert_forward(f, params, "expert_tl")
    assert y.shape == (4,) and maps.shape == (4, 2, 2)
    from marppg.numerics import conv2d
    g = np.tanh(conv2d(f, params["expert_tl.refine.w"], params["expert_tl.refine.b"]).data)
    expected = g.mean(axis=(2, 3)) @ params["expert_tl.head.w"].data[:, 0] + params["expert_tl.head.b"].data[0]
    np.testing.assert_allclose(y.data, expected, rtol=1e-12)


def test_expert_zero_features_gives_head_bias():
    params = init_params(SMALL, 7)
    params["expert_br.refine.w"].data[:] = 0.0
    params["expert_br.refine.b"].data[:] = 0.0
    y, _ = expert_forward(Tensor(np.ones((4, 6, 2, 2))), params, "expert_br")
    np.testing.assert_array_equal(y.data, np.full(4, params["expert_br.head.b"].data[0]))


def test_gate_examples():
    rng = np.random.default_rng(8)
    sig = [Tensor(rng.normal(size=5)) for _ in range(4)]
    f = Tensor(rng.normal(size=(5, 6, 2, 2)))
    out = gate_aggregate(sig, f, weights=Tensor(np.full((1, 4), 0.25)))
    np.testing.assert_allclose(out.data, np.mean([s.data for s in sig], axis=0), rtol=1e-14)
    same = [sig[0]] * 4
    np.testing.assert_allclose(gate_aggregate(same, f, init_params(SMALL, 8)).data, sig[0].data, rtol=1e-14)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_gate_output_in_convex_hull(seed):
    rng = np.random.default_rng(seed)
    sig = [Tensor(rng.normal(size=6)) for _ in range(4)]
    f = Tensor(rng.normal(size=(6, 6, 2, 2)) * 3)
    out = gate_aggregate(sig, f, init_params(SMALL, seed % 1000)).data
    stacked = np.stack([s.data for s in sig])
    assert np.all(out >= stacked.min(axis=0) - 1e-12)
    assert np.all(out <= stacked.max(axis=0) + 1e-12)


def test_flip_align_examples():
    rng = np.random.default_rng(9)
    m = rng.normal(size=(3, 4, 2, 2))
    np.testing.assert_array_equal(flip_align(flip_align(m)), m)
    np.testing.assert_array_equal(flip_align(Tensor(m)).data, flip_align(m))
    # symmetric maps, paired experts identical -> fixed point
    half = rng.normal(size=(3, 2, 2, 1))
    sym = np.concatenate([half, half[..., ::-1]], axis=-1)
    s = np.stack([sym[:, 0], sym[:, 0], sym[:, 1], sym[:, 1]], axis=1)
    np.testing.assert_array_equal(flip_align(s), s)
    # corner peak in TL map moves to the mirrored column of the TR slot
    c = np.zeros((1, 4, 2, 2))
    c[0, 0, 0, 0] = 1.0
    out = flip_align(c)
    assert out[0, 1, 0, 1] == 1.0 and out.sum() == 1.0


def test_forward_deterministic_and_weights_shared():
    model = EREA(SMALL, seed=10)
    frames = np.random.default_rng(10).uniform(size=(4, 16, 16, 3))
    y1, m1 = model_forward(model, frames)
    y2, m2 = model_forward(model, frames[:, :, ::-1])
    y3, _ = model_forward(model, frames)
    assert y1.data.tobytes() == y3.data.tobytes()
    ids = {id(p) for p in model.parameters()}
    assert len(ids) == len(model.params)
    (y1.sum() + y2.sum()).backward()
    assert all(p.grad is not None for p in model.parameters())
    assert {id(p) for p in model.parameters()} == ids


def test_state_dict_roundtrip_and_mismatch():
    a, b = EREA(SMALL, seed=1), EREA(SMALL, seed=2)
    b.load_state_dict(a.state_dict())
    frames = np.random.default_rng(0).uniform(size=(4, 16, 16, 3))
    assert a(frames)[0].data.tobytes() == b(frames)[0].data.tobytes()
    with pytest.raises(KeyError):
        b.load_state_dict({"nope": np.zeros(1)})


def test_init_is_seeded_and_fan_in_bounded():
    p1, p2 = init_params(SMALL, 3), init_params(SMALL, 3)
    for k in p1:
        assert p1[k].data.tobytes() == p2[k].data.tobytes()
    w = p1["enc1.w"].data
    assert np.abs(w).max() <= np.sqrt(1.0 / (4 * 9))


def test_total_loss_gradient_every_parameter():
    rng = np.random.default_rng(11)
    params = init_params(MICRO_MODEL, 11)
    frames = rng.uniform(size=(MICRO_MODEL.frames, 8, 8, 3))
    label = rng.normal(size=MICRO_MODEL.frames)
    for name in ("enc0.w", "expert_tr.cam.w", "expert_bl.head.w", "gate.w"):
        def f(x, name=name):
            local = {k: Tensor(v.data) for k, v in params.items()}
            local[name] = x
            return micro_model_loss(local, frames, label, 11)
        assert grad_check(f, params[name].data) < 1e-4, name
