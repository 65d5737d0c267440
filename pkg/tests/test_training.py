import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from svad.audio import synth_corpus
from svad.errors import DivergenceError, ShapeError
from svad.model import SVAD, Architecture
from svad.training import (
    AdamState,
    LossBreakdown,
    TrainConfig,
    adam_step,
    ce_loss,
    clip_grad_norm,
    lr_at,
    mse_loss,
    total_loss,
    train,
)


def test_ce_examples():
    assert ce_loss(np.array([[0.5, 0.5]]), np.array([[0, 1]])) == pytest.approx(math.log(2), abs=1e-6)
    assert ce_loss(np.array([[1.0, 0.0]]), np.array([[1, 0]])) == 0.0


def test_ce_vs_independent_oracle():
    rng = np.random.default_rng(0)
    p1 = rng.uniform(1e-6, 1 - 1e-6, size=1000)
    p = np.stack([1 - p1, p1], axis=1)
    cls = rng.integers(0, 2, size=1000)
    t = np.eye(2)[cls]
    ref = math.fsum(-math.log(p[i, cls[i]]) for i in range(1000)) / 1000
    assert abs(ce_loss(p, t) - ref) < 1e-10


def test_ce_floor_and_target_check():
    assert ce_loss(np.array([[0.0, 1.0]]), np.array([[1, 0]])) == pytest.approx(-math.log(1e-12))
    with pytest.raises(ValueError):
        ce_loss(np.array([[0.5, 0.5]]), np.array([[0.5, 0.5]]))


def test_ce_mask_excludes_padding():
    p = np.array([[[0.5, 0.5], [1.0, 0.0]]])
    t = np.array([[[1, 0], [1, 0]]])
    assert ce_loss(p, t, np.array([[False, True]])) == 0.0


def test_mse_examples():
    rng = np.random.default_rng(1)
    a = (rng.random((13, 20)) < 0.5).astype(float)
    assert mse_loss(a, a) == 0.0
    assert mse_loss(a, 1 - a) == 1.0
    b = (rng.random((13, 20)) < 0.5).astype(float)
    assert mse_loss(a, b) == np.count_nonzero(a != b) / a.size
    with pytest.raises(ShapeError):
        mse_loss(a, b[:5])


def test_total_loss():
    assert total_loss(0.4, 0.3, 0.0) == 0.4
    assert total_loss(0.5, 0.2, 1.0) == pytest.approx(0.7)


@given(st.floats(0, 10), st.floats(0, 10), st.floats(0, 10))
def test_loss_breakdown_additivity(ce, mse, lam):
    b = LossBreakdown(ce, mse, lam)
    assert b.total == ce + lam * mse and b.total >= 0


def test_lr_schedule():
    cfg = TrainConfig()
    assert [lr_at(e, cfg) for e in (0, 39, 40, 80)] == pytest.approx([1e-3, 1e-3, 1e-4, 1e-5], rel=1e-12)
    for e in range(200):
        assert lr_at(e, cfg) == cfg.lr0 * 0.1 ** (e // 40)


def test_adam_zero_gradient_noop():
    params = {"x": np.array([1.5, -2.0])}
    adam_step(params, {"x": np.zeros(2)}, AdamState.zeros_like(params), 1e-3)
    np.testing.assert_array_equal(params["x"], [1.5, -2.0])


def test_adam_constant_gradient_step_size():
    params = {"x": np.array([0.0])}
    state = AdamState.zeros_like(params)
    prev = 0.0
    for _ in range(500):
        adam_step(params, {"x": np.array([0.37])}, state, 1e-3)
        step = prev - params["x"][0]
        prev = params["x"][0]
    assert step == pytest.approx(1e-3, rel=0.01)


def test_adam_hand_trace():
    params = {"x": np.array([1.0])}
    state = AdamState.zeros_like(params)
    grads = [0.5, -1.0, 2.0]
    x, m, v = 1.0, 0.0, 0.0
    for t, g in enumerate(grads, 1):
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        x -= 0.01 * (m / (1 - 0.9 ** t)) / (math.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        adam_step(params, {"x": np.array([g])}, state, 0.01)
        assert params["x"][0] == pytest.approx(x, abs=1e-15)


def test_adam_rejects_bad_gradients():
    params = {"x": np.zeros(2)}
    state = AdamState.zeros_like(params)
    with pytest.raises(DivergenceError):
        adam_step(params, {"x": np.array([np.inf, 0.0])}, state, 1e-3)
    assert state.t == 0 and not params["x"].any()
    with pytest.raises(ShapeError):
        adam_step(params, {"x": np.zeros(3)}, state, 1e-3)


def test_clip_grad_norm():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    assert clip_grad_norm(g, 1.0) == 5.0
    assert math.hypot(g["a"][0], g["b"][0]) == pytest.approx(1.0)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        train(TrainConfig(epochs=1), [])


@pytest.fixture(scope="module")
def tiny_corpus():
    return synth_corpus(10, seed=11)


def test_two_epoch_smoke(tiny_corpus):
    res = train(TrainConfig(epochs=2, batch_size=4, lr0=3e-3), tiny_corpus)
    assert res.log[1].total < res.log[0].total
    for entry in res.log:
        assert entry.total == pytest.approx(entry.ce + entry.mse, rel=1e-9)
        assert entry.line().startswith(f"epoch={entry.epoch} ")


def test_determinism_and_trajectories(tiny_corpus):
    a = train(TrainConfig(epochs=1, batch_size=5, seed=4), tiny_corpus)
    b = train(TrainConfig(epochs=1, batch_size=5, seed=4), tiny_corpus)
    assert a.log[0].total == b.log[0].total
    for k in a.model.params:
        np.testing.assert_array_equal(a.model.params[k], b.model.params[k])


def test_cutoffs_safe_after_aggressive_updates(tiny_corpus):
    model = SVAD.init(Architecture())
    res = train(TrainConfig(epochs=1, batch_size=5, lr0=500.0, clip_norm=0.0), tiny_corpus, model=model)
    f1e, be, *_ = res.model.bank.effective()
    assert np.all(f1e > 0) and np.all(be > 0) and np.all(f1e + be <= 8000)


def test_no_attention_skips_mse(tiny_corpus):
    arch = Architecture.from_variant("svad", no_sconv=True, no_attention=True)
    res = train(TrainConfig(epochs=1, batch_size=5), tiny_corpus[:5], arch)
    assert res.log[0].mse == 0.0
