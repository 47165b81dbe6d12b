import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from marppg.data import SynthConfig, load_manifest, synth_clip, synth_dataset
from marppg.losses import regression_loss
from marppg.model import EREA, ModelConfig, init_params
from marppg.numerics import load_checkpoint, make_rng
from marppg.training import (
    LOG_COLUMNS, TrainConfig, Trainer, TrainingDiverged, horizontal_flip, random_mask, train,
)

TINY_MODEL = ModelConfig(frames=20, height=16, width=16, encoder_channels=(4, 6, 6), feature_size=4)
TINY_SYNTH = SynthConfig(frames=20, eval_frames=40, height=16, width=16, motion_max=1.0, seed=5)


def tiny_chunks(n, seed=0):
    rng = make_rng(seed, 9)
    return [synth_clip(TINY_SYNTH, rng, hr_bpm=60 + 15 * i) for i in range(n)]


@pytest.fixture(scope="module")
def tiny_manifest(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny")
    synth_dataset(TINY_SYNTH, 5, 1, 2, out)
    return load_manifest(out / "manifest.txt")


def test_config_validation():
    for bad in (dict(alpha=1.5), dict(beta=1.0), dict(chunk_len=1), dict(batch_size=0)):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_horizontal_flip_examples():
    x = np.random.default_rng(0).uniform(size=(3, 4, 5, 2))
    np.testing.assert_array_equal(horizontal_flip(horizontal_flip(x)), x)
    assert horizontal_flip(x)[1, 2, 5 - 1 - 3, 0] == x[1, 2, 3, 0]
    sym = np.concatenate([x[:, :, :2], x[:, :, 2:3], x[:, :, :2][:, :, ::-1]], axis=2)
    np.testing.assert_array_equal(horizontal_flip(sym), sym)


def test_random_mask_examples():
    x = np.random.default_rng(1).uniform(0.1, 1.0, size=(4, 64, 64, 3))
    rng = make_rng(0)
    assert not np.any(random_mask(x, rng, mask_size=64))
    np.testing.assert_array_equal(random_mask(x, rng, mask_size=0), x)
    out = random_mask(x, rng, mask_size=16)
    assert np.mean(out == 0) == pytest.approx(1 / 16)
    with pytest.raises(ValueError):
        random_mask(x, rng, mask_size=65)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(1, 12))
def test_random_mask_touches_only_one_square(seed, size):
    x = np.random.default_rng(seed).uniform(0.1, 1.0, size=(3, 12, 12, 2))
    before = x.copy()
    out = random_mask(x, make_rng(seed), mask_size=size)
    np.testing.assert_array_equal(x, before)  # input untouched
    zero = np.all(out == 0, axis=(0, 3))
    rows, cols = np.nonzero(zero)
    assert zero.sum() == size * size
    assert rows.max() - rows.min() == size - 1 and cols.max() - cols.min() == size - 1
    keep = ~zero
    np.testing.assert_array_equal(out[:, keep], x[:, keep])


def records(seed, steps=3, beta=0.5):
    model = EREA(TINY_MODEL, seed=seed)
    cfg = TrainConfig(chunk_len=20, mask_size=4, batch_size=2, seed=seed, beta=beta)
    trainer = Trainer(model, cfg, total_steps=steps)
    chunks = tiny_chunks(4)
    return [trainer.train_step(chunks[(2 * i) % 4:(2 * i) % 4 + 2]) for i in range(steps)], model


def test_train_step_is_deterministic():
    a, ma = records(3)
    b, mb = records(3)
    assert a == b
    for k in ma.params:
        assert ma.params[k].data.tobytes() == mb.params[k].data.tobytes()
    assert all(r.loss_ac >= 0 for r in a)


def test_batch_accumulation_equals_mean_loss_gradient():
    chunks = tiny_chunks(2)
    cfg = TrainConfig(chunk_len=20, mask_size=0, batch_size=2, beta=0.0)
    model = EREA(TINY_MODEL, seed=1)
    trainer = Trainer(model, cfg, 1)
    # capture the gradients adam_step would see
    seen = {}
    import marppg.training as tr
    orig = tr.adam_step
    tr.adam_step = lambda params, grads, state, lr=None: seen.setdefault("g", [g.copy() for g in grads])
    try:
        trainer.train_step(chunks)
    finally:
        tr.adam_step = orig
    ref = EREA(TINY_MODEL, seed=1)
    loss = None
    for c in chunks:
        y, _ = ref(c.frames)
        y_f, _ = ref(horizontal_flip(c.frames))
        term = (regression_loss(y, c.ppg, 0.3) + regression_loss(y_f, c.ppg, 0.3)) * 0.5
        loss = term if loss is None else loss + term
    (loss * 0.5).backward()
    for g, p in zip(seen["g"], ref.parameters()):
        np.testing.assert_allclose(g, p.grad, atol=1e-12)


def test_beta_zero_gradient_ignores_attention_term():
    # with beta = 0 the attention consistency term contributes nothing, so the
    # step gradient must equal the regression-only gradient exactly
    chunk = tiny_chunks(1)[0]
    model = EREA(TINY_MODEL, seed=2)
    y, m = model(chunk.frames)
    y_f, m_f = model(horizontal_flip(chunk.frames))
    from marppg.losses import attention_consistency_loss, total_loss
    total_loss(regression_loss(y, chunk.ppg, 0.3), regression_loss(y_f, chunk.ppg, 0.3),
               attention_consistency_loss(m, m_f), 0.0).backward()
    with_ac = [p.grad.copy() for p in model.parameters()]
    model.zero_grad()
    y, _ = model(chunk.frames)
    y_f, _ = model(horizontal_flip(chunk.frames))
    ((regression_loss(y, chunk.ppg, 0.3) + regression_loss(y_f, chunk.ppg, 0.3)) * 0.5).backward()
    for a, p in zip(with_ac, model.parameters()):
        np.testing.assert_array_equal(a, p.grad)


def test_overfit_four_chunks():
    chunks = tiny_chunks(4, seed=4)
    # the pulse is a 2 % intensity change, so a 50-step overfit needs a hot learning rate
    cfg = TrainConfig(chunk_len=20, mask_size=0, batch_size=4, max_lr=5e-2, seed=0)
    trainer = Trainer(EREA(TINY_MODEL, seed=0), cfg, total_steps=50)
    losses = [trainer.train_step(chunks).loss_total for _ in range(50)]
    assert losses[-1] < 0.5 * losses[0]


def test_non_finite_loss_raises_with_diagnostics():
    model = EREA(TINY_MODEL, seed=0)
    model.params["expert_tl.head.b"].data[:] = np.inf
    trainer = Trainer(model, TrainConfig(chunk_len=20, mask_size=4, batch_size=1), 1)
    with np.errstate(invalid="ignore"), pytest.raises(TrainingDiverged) as exc:
        trainer.train_step(tiny_chunks(1))
    assert exc.value.record.step == 0
    assert "lr=" in str(exc.value) and "reg_orig=" in str(exc.value)


def test_train_writes_log_and_checkpoint(tiny_manifest, tmp_path):
    cfg = TrainConfig(chunk_len=20, mask_size=4, batch_size=2, epochs=2, seed=1)
    model, recs = train(cfg, tiny_manifest, tmp_path, model_cfg=TINY_MODEL)
    assert len(recs) == 2 * 3  # 5 chunks, batch 2
    with open(tmp_path / "training_log.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == LOG_COLUMNS and len(rows) == 7
    ckpt = load_checkpoint(tmp_path / "checkpoint.marw")
    for k, v in model.state_dict().items():
        assert ckpt[k].tobytes() == v.tobytes()


def test_zero_epochs_keeps_initialization(tiny_manifest, tmp_path):
    cfg = TrainConfig(chunk_len=20, epochs=0, seed=4)
    train(cfg, tiny_manifest, tmp_path, model_cfg=TINY_MODEL)
    ckpt = load_checkpoint(tmp_path / "checkpoint.marw")
    for k, v in init_params(TINY_MODEL, 4).items():
        assert ckpt[k].tobytes() == v.data.tobytes()
