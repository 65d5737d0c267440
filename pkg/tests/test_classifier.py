import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from svad.classifier import (
    NON_SPEECH,
    SPEECH,
    SrnnConfig,
    decide,
    labels_from_potentials,
    softmax,
    srnn_forward,
)
from svad.errors import ShapeError
from svad.snn import LayerWeights, LifParams, LifState, layer_current, lif_step

P = LifParams()


def weights(rng, n_hidden=32, bias=0.0):
    srnn = LayerWeights.init(rng, 20, n_hidden, recurrent=True, dtype=np.float64)
    srnn.b[:] = bias
    readout = LayerWeights.init(rng, n_hidden, 2, dtype=np.float64)
    readout.b[:] = rng.normal(size=2)
    return srnn, readout


def test_zero_input_zero_output():
    rng = np.random.default_rng(0)
    srnn, readout = weights(rng)
    readout.b[:] = 0
    h, v = srnn_forward(np.zeros((10, 20)), srnn, readout, SrnnConfig(), P)
    assert not h.any() and not v.any()


def test_first_step_recurrence_inert():
    rng = np.random.default_rng(1)
    srnn, readout = weights(rng, bias=0.1)
    x = (rng.random((1, 20)) < 0.5).astype(float)
    h, _ = srnn_forward(x, srnn, readout, SrnnConfig(), P)
    ff = LayerWeights(srnn.w, srnn.b)
    _, o = lif_step(LifState.zeros(32), layer_current(ff, x[0]), P)
    np.testing.assert_array_equal(h[0], o)


@pytest.mark.parametrize("seed", range(50))
def test_srnn_compositional(seed):
    rng = np.random.default_rng(seed)
    srnn, readout = weights(rng, bias=0.15)
    x = (rng.random((30, 20)) < 0.4).astype(float)
    state, ref, v, acc = LifState.zeros(32), [], [], np.zeros(2)
    for t in range(30):
        state, o = lif_step(state, layer_current(srnn, x[t], state.o_prev), P)
        ref.append(o)
        acc = P.alpha * acc + readout.w @ o + readout.b
        v.append(acc)
    h, pot = srnn_forward(x, srnn, readout, SrnnConfig(), P)
    np.testing.assert_array_equal(h, np.array(ref))
    np.testing.assert_allclose(pot, np.array(v), rtol=0, atol=1e-12)


def test_causality():
    rng = np.random.default_rng(5)
    srnn, readout = weights(rng, bias=0.1)
    x = (rng.random((40, 20)) < 0.4).astype(float)
    _, v = srnn_forward(x, srnn, readout, SrnnConfig(), P)
    for cut in (1, 13, 39):
        _, vc = srnn_forward(x[:cut], srnn, readout, SrnnConfig(), P)
        np.testing.assert_array_equal(vc, v[:cut])


def test_long_run_finite():
    rng = np.random.default_rng(6)
    srnn, readout = weights(rng, n_hidden=10, bias=0.1)
    x = (rng.random((10_000, 20)) < 0.5).astype(float)
    h, v = srnn_forward(x, srnn, readout, SrnnConfig(n_hidden=10), P)
    assert np.all(np.isfinite(v)) and np.all((h == 0) | (h == 1))


def test_shape_mismatch():
    srnn, readout = weights(np.random.default_rng(0))
    with pytest.raises(ShapeError):
        srnn_forward(np.zeros((5, 19)), srnn, readout, SrnnConfig(), P)
    with pytest.raises(ValueError):
        SrnnConfig(n_hidden=0)


def test_decide_tie_is_non_speech():
    (d,) = decide(np.array([[0.0, 0.0]]))
    np.testing.assert_allclose(d.p, [0.5, 0.5])
    assert d.label == NON_SPEECH


def test_decide_confident_speech():
    (d,) = decide(np.array([[0.0, 10.0]]))
    assert d.p[0] == pytest.approx(4.5398e-5, rel=1e-4)
    assert d.p[1] == pytest.approx(0.99995, abs=1e-5)
    assert d.label == SPEECH


def test_softmax_vs_independent_oracle():
    rng = np.random.default_rng(0)
    v = rng.normal(scale=5, size=(1000, 2))
    for row, p in zip(v, softmax(v)):
        e0, e1 = math.exp(row[0]), math.exp(row[1])
        assert abs(p[0] - e0 / (e0 + e1)) < 1e-12 and abs(p[1] - e1 / (e0 + e1)) < 1e-12


@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(-100, 100))
def test_shift_invariance(a, b, c):
    v = np.array([[a, b]])
    w = v + c
    np.testing.assert_allclose(softmax(v), softmax(w), atol=1e-9)
    d = decide(v)[0]
    assert abs(d.p.sum() - 1) < 1e-6 and 0 <= d.p.min() and d.p.max() <= 1
    # the label is an exact comparison, so only test shifts that preserve the ordering in floats
    if (a + c > b + c) == (a > b) and (a + c == b + c) == (a == b):
        assert labels_from_potentials(v)[0] == labels_from_potentials(w)[0]
