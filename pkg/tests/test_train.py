"""Optimizer, schedule, patch sampling, and the training loop."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mssnet.archive import load_weights
from mssnet.autodiff import Variable, backward, constant, mul, scale, sub, sum_
from mssnet.errors import ContractViolation, TrainingDiverged
from mssnet.model import ModelConfig, build_model
from mssnet.train import (AdamState, TrainConfig, adam_step, cosine_lr,
                          full_regime, history_csv, sample_patch, train,
                          write_history)
from mssnet.unet import UNetChannels


def tiny_config(stages=(1,)):
    return ModelConfig(stages_per_scale=stages, base_channels=4,
                       channels=(UNetChannels(4, 6, 8),))


def toy_pairs(n=2, size=16, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        s = rng.uniform(0.2, 0.8, (3, size, size)).astype(np.float32)
        b = np.clip(s + rng.normal(0, 0.05, s.shape), 0, 1).astype(np.float32)
        out.append((b, s))
    return out


# ---------------------------------------------------------------------------
# cosine schedule
# ---------------------------------------------------------------------------

def test_cosine_lr_endpoints_and_midpoint():
    assert cosine_lr(0, 1000) == pytest.approx(2e-4, rel=1e-15)
    assert cosine_lr(1000, 1000) == 1e-6
    assert cosine_lr(500, 1000) == pytest.approx(1.005e-4, rel=1e-12)


def test_cosine_lr_clamps_past_the_end():
    assert cosine_lr(1500, 1000) == 1e-6


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 997), st.integers(0, 997))
def test_cosine_lr_monotone_non_increasing(t1, t2):
    lo, hi = sorted((t1, t2))
    assert cosine_lr(lo, 997) >= cosine_lr(hi, 997)


def test_cosine_lr_violations():
    with pytest.raises(ContractViolation):
        cosine_lr(0, 0)
    with pytest.raises(ContractViolation):
        cosine_lr(-1, 100)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

def test_adam_zero_gradient_leaves_parameters_unchanged():
    v = Variable("w", np.full((1, 2, 3, 3), 0.7))
    state = AdamState.for_variables([v])
    adam_step([v], [np.zeros_like(v.value)], state, lr=1e-2)
    np.testing.assert_array_equal(v.value, np.full((1, 2, 3, 3), 0.7))


def test_adam_first_step_is_lr_times_sign():
    rng = np.random.default_rng(0)
    g = rng.uniform(0.5, 2.0, (1, 2, 3, 3)) * rng.choice([-1, 1], (1, 2, 3, 3))
    v = Variable("w", np.zeros((1, 2, 3, 3)))
    state = AdamState.for_variables([v])
    adam_step([v], [g], state, lr=1e-3)
    np.testing.assert_allclose(v.value, -1e-3 * np.sign(g), rtol=1e-6)


def test_adam_update_direction_is_minus_sign_of_first_moment():
    rng = np.random.default_rng(1)
    v = Variable("w", np.zeros((1, 1, 4, 4)))
    state = AdamState.for_variables([v])
    m_ref = np.zeros_like(v.value)
    before = v.value.copy()
    for step in range(3):
        g = rng.normal(0, 1, v.value.shape)
        m_ref = 0.9 * m_ref + 0.1 * g
        adam_step([v], [g], state, lr=1e-3)
        delta = v.value - before
        moving = np.abs(m_ref) > 1e-12
        np.testing.assert_array_equal(np.sign(delta)[moving],
                                      -np.sign(m_ref)[moving])
        before = v.value.copy()


def test_adam_descends_a_quadratic():
    v = Variable("theta", np.full((1, 1, 1, 1), 1.0))
    state = AdamState.for_variables([v])
    losses = [float(v.value[0, 0, 0, 0] ** 2)]
    for _ in range(10):
        g = 2.0 * v.value
        adam_step([v], [g], state, lr=1e-2)
        losses.append(float(v.value[0, 0, 0, 0] ** 2))
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_adam_rejects_shape_mismatch():
    v = Variable("w", np.zeros((1, 1, 2, 2)))
    state = AdamState.for_variables([v])
    with pytest.raises(ContractViolation, match="adam_step"):
        adam_step([v], [np.zeros((1, 1, 3, 3))], state, 1e-3)


# ---------------------------------------------------------------------------
# patch sampling
# ---------------------------------------------------------------------------

def test_sample_patch_reproducible():
    pair = toy_pairs(1, size=32)[0]
    a = sample_patch(pair, 8, np.random.default_rng(7))
    b = sample_patch(pair, 8, np.random.default_rng(7))
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_sample_patch_crop_and_flip_are_aligned():
    rng = np.random.default_rng(2)
    sharp = rng.uniform(0, 1, (3, 40, 40)).astype(np.float32)
    blur = sharp + 1.0
    for seed in range(10):
        b, s = sample_patch((blur, sharp), 12, np.random.default_rng(seed))
        np.testing.assert_array_equal(b, s + 1.0)


class _ForcedRng:
    """Deterministic stand-in: fixed crop corner, always-true flips."""

    def integers(self, lo, hi):
        return 3

    def random(self):
        return 0.0


def test_sample_patch_flips_are_involutive():
    pair = toy_pairs(1, size=32)[0]
    b_flip, s_flip = sample_patch(pair, 8, _ForcedRng(), flips=True)
    b_plain, s_plain = sample_patch(pair, 8, _ForcedRng(), flips=False)
    np.testing.assert_array_equal(np.flip(b_flip, (1, 2)), b_plain)
    np.testing.assert_array_equal(np.flip(s_flip, (1, 2)), s_plain)


def test_sample_patch_constant_pair_stays_constant():
    pair = (np.full((3, 20, 20), 0.3, np.float32),
            np.full((3, 20, 20), 0.6, np.float32))
    b, s = sample_patch(pair, 8, np.random.default_rng(0))
    assert np.all(b == 0.3) and np.all(s == 0.6)
    assert b.shape == s.shape == (3, 8, 8)


def test_sample_patch_image_too_small():
    pair = toy_pairs(1, size=16)[0]
    with pytest.raises(ContractViolation, match="smaller than patch"):
        sample_patch(pair, 32, np.random.default_rng(0))


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------

def test_train_config_validation():
    with pytest.raises(ContractViolation):
        TrainConfig(lr_init=1e-6, lr_final=2e-4)
    with pytest.raises(ContractViolation):
        TrainConfig(patch=30)
    with pytest.raises(ContractViolation):
        TrainConfig(total_iters=0)
    with pytest.raises(ContractViolation):
        TrainConfig(precision="half")


def test_full_regime_matches_published_recipe():
    cfg = full_regime()
    assert cfg.total_iters == 396_000
    assert cfg.batch == 16
    assert cfg.patch == 256
    assert cfg.lr_init == 2e-4
    assert cfg.lr_final == 1e-6


# ---------------------------------------------------------------------------
# the loop
# ---------------------------------------------------------------------------

def test_train_one_iteration_records_finite_history():
    model = build_model(tiny_config(), seed=0)
    hist = train(model, toy_pairs(), TrainConfig(total_iters=1, batch=2,
                                                 patch=16, seed=0))
    assert len(hist) == 1
    it, lr, report = hist[0]
    assert it == 0
    assert lr == cosine_lr(0, 1)
    assert np.isfinite(report.total)
    assert report.total == pytest.approx(report.cont + 0.1 * report.freq,
                                         rel=1e-6)


def test_train_follows_cosine_schedule():
    model = build_model(tiny_config(), seed=0)
    cfg = TrainConfig(total_iters=4, batch=1, patch=16, seed=0)
    hist = train(model, toy_pairs(), cfg)
    for it, lr, _ in hist:
        assert lr == cosine_lr(it, 4, cfg.lr_init, cfg.lr_final)


def test_train_is_bit_reproducible():
    runs = []
    for _ in range(2):
        model = build_model(tiny_config(), seed=5)
        hist = train(model, toy_pairs(seed=3),
                     TrainConfig(total_iters=3, batch=2, patch=16, seed=11))
        runs.append(([r.total for _, _, r in hist],
                     [v.value.copy() for v in model.variables()]))
    assert runs[0][0] == runs[1][0]
    for a, b in zip(runs[0][1], runs[1][1]):
        np.testing.assert_array_equal(a, b)


def test_train_accepts_named_pairs_and_rejects_empty():
    model = build_model(tiny_config(), seed=0)
    named = [("x.png", b, s) for b, s in toy_pairs()]
    hist = train(model, named, TrainConfig(total_iters=1, batch=1, patch=16))
    assert len(hist) == 1
    with pytest.raises(ContractViolation, match="empty"):
        train(model, [], TrainConfig(total_iters=1, batch=1, patch=16))


def test_train_aborts_on_non_finite_loss():
    model = build_model(tiny_config(), seed=0)
    poisoned = next(iter(model.variables()))
    poisoned.value[...] = np.inf
    with np.errstate(invalid="ignore"):
        with pytest.raises(TrainingDiverged,
                           match="non-finite loss at iteration 0"):
            train(model, toy_pairs(),
                  TrainConfig(total_iters=2, batch=1, patch=16))


def test_train_writes_loadable_checkpoints(tmp_path):
    ckpt = tmp_path / "w.bin"
    model = build_model(tiny_config(), seed=0)
    train(model, toy_pairs(),
          TrainConfig(total_iters=2, batch=1, patch=16, seed=0,
                      checkpoint_path=str(ckpt), checkpoint_every=1))
    assert ckpt.exists()
    clone = build_model(tiny_config(), seed=42)
    load_weights(ckpt, clone)
    for a, b in zip(model.variables(), clone.variables()):
        np.testing.assert_array_equal(a.value.astype(np.float32), b.value)


def test_history_csv_round_trips(tmp_path):
    model = build_model(tiny_config(), seed=0)
    hist = train(model, toy_pairs(), TrainConfig(total_iters=3, batch=1,
                                                 patch=16, seed=0))
    text = history_csv(hist)
    lines = text.strip().split("\n")
    assert lines[0] == "iteration,lr,cont,freq,total"
    assert len(lines) == 4
    for line, (it, lr, rep) in zip(lines[1:], hist):
        f = line.split(",")
        assert int(f[0]) == it
        assert float(f[1]) == pytest.approx(lr, rel=1e-9)
        assert float(f[4]) == pytest.approx(rep.total, rel=1e-9)
    p = tmp_path / "h.csv"
    write_history(hist, p)
    assert p.read_text() == text


def test_first_step_decreases_smooth_surrogate_over_seeds():
    # squared error on the final output only, so the surface is smooth
    # and a single Adam step from init must make progress
    for seed in range(5):
        model = build_model(tiny_config(), seed=seed, dtype=np.float64)
        rng = np.random.default_rng(100 + seed)
        B = rng.uniform(0.2, 0.8, (1, 3, 16, 16))
        gt = np.clip(B + rng.normal(0, 0.1, B.shape), 0, 1)

        def surrogate():
            d = sub(model.forward(B).final, constant(gt))
            return scale(sum_(mul(d, d)), 1.0 / d.value.size)

        variables = list(model.variables())
        state = AdamState.for_variables(variables)
        loss0 = surrogate()
        for v in variables:
            v.zero_grad()
        backward(loss0)
        adam_step(variables, [v.grad for v in variables], state, lr=1e-3)
        loss1 = surrogate()
        assert float(loss1.value) < float(loss0.value), f"seed {seed}"
