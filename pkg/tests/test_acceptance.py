"""Acceptance criteria 1-8, each at its stated tolerance.

Every test records one PASS/FAIL line (shown in the terminal summary) before asserting.
"""

import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from svad.audio import STANDARD_SNRS, Waveform, measured_snr, mix_at_snr, read_wav, synth_corpus, synth_utterance, wav_bytes
from svad.checkpoint import checkpoint_bytes, parse_checkpoint
from svad.classifier import SrnnConfig, srnn_forward
from svad.encoder import sconv1d
from svad.evaluation import ConfusionCounts, evaluate_model, format_report, group_by_level, hter
from svad.gradcheck import run_suite
from svad.model import SVAD, Architecture, param_count
from svad.power import LOIHI, count_ops, power_from_trace
from svad.snn import Dense, LayerStack, LayerWeights, LifParams, LifState, forward_recorded, layer_current, lif_step
from svad.training import TrainConfig, train

P = LifParams()


def record(n: int, name: str, ok: bool, detail: str):
    ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {name} -- {detail}")
    print(ACCEPTANCE_LINES[-1])
    assert ok, detail


# -- 1 ------------------------------------------------------------------------

def test_1_parameter_budgets():
    svad = param_count(Architecture.from_variant("svad"))
    small = param_count(Architecture.from_variant("svad-s"))
    ok = svad == 4282 and small == 2432 and round(svad / 1000, 1) == 4.3 and round(small / 1000, 1) == 2.4
    record(1, "parameter budgets", ok, f"svad={svad} (4.3K), svad-s={small} (2.4K)")


# -- 2 ------------------------------------------------------------------------

def test_2_gradient_correctness():
    t0 = time.perf_counter()
    results = run_suite(n_seeds=100, seed=0)
    worst = max(r.max_rel_error for r in results)
    elapsed = time.perf_counter() - t0
    record(2, "relaxed-mode BPTT vs finite differences", worst < 1e-4 and elapsed < 120,
           f"max rel err {worst:.2e} over {len(results)} triples (T<=10), {elapsed:.1f}s")


# -- 3 ------------------------------------------------------------------------

def _scalar_lif(currents):
    u, o, out = 0.0, 0.0, []
    for i in currents:
        u = 0.5 * u + i - 0.3 * o
        o = 1.0 if u >= 0.3 else 0.0
        out.append(o)
    return out


def _lif_trace_ok(seed):
    currents = np.random.default_rng(seed).uniform(-0.5, 1.0, size=10)
    state, got = LifState.zeros(1), []
    for c in currents:
        state, o = lif_step(state, np.array([c]), P)
        got.append(float(o[0]))
    return got == _scalar_lif(currents)


def _sparse_ok(seed):
    rng = np.random.default_rng(seed)
    lw = LayerWeights.init(rng, 20, 32, recurrent=True, dtype=np.float64)
    lw.b[:] = rng.normal(size=32)
    x = (rng.random(20) < 0.3).astype(float)
    own = (rng.random(32) < 0.3).astype(float)
    acc = lw.b.copy()
    for j in np.flatnonzero(x):
        acc += lw.w[:, j]
    for j in np.flatnonzero(own):
        acc += lw.w_rec[:, j]
    return np.abs(layer_current(lw, x, own) - acc).max() <= 1e-12


def _sconv_ok(seed):
    rng = np.random.default_rng(seed)
    T = int(rng.integers(1, 30))
    lw = LayerWeights.init(rng, 20, 20, kernel=3, dtype=np.float64)
    lw.b[:] = rng.uniform(-0.1, 0.2)
    x = rng.uniform(0, 1, size=(T, 20))
    big = np.zeros((T * 20, T * 20))
    for t in range(T):
        for j in range(3):
            s = t + j - 1
            if 0 <= s < T:
                big[t * 20:(t + 1) * 20, s * 20:(s + 1) * 20] = lw.w[:, :, j]
    cur = (big @ x.ravel()).reshape(T, 20) + lw.b
    state, ref = LifState.zeros(20), []
    for t in range(T):
        state, o = lif_step(state, cur[t], P)
        ref.append(o)
    return np.array_equal(sconv1d(x, lw, P), np.array(ref))


def _srnn_ok(seed):
    rng = np.random.default_rng(seed)
    srnn = LayerWeights.init(rng, 20, 32, recurrent=True, dtype=np.float64)
    srnn.b[:] = 0.15
    readout = LayerWeights.init(rng, 32, 2, dtype=np.float64)
    x = (rng.random((30, 20)) < 0.4).astype(float)
    state, ref = LifState.zeros(32), []
    for t in range(30):
        state, o = lif_step(state, layer_current(srnn, x[t], state.o_prev), P)
        ref.append(o)
    h, _ = srnn_forward(x, srnn, readout, SrnnConfig(), P)
    return np.array_equal(h, np.array(ref))


def test_3_lif_and_layer_oracles():
    seeds = range(50)
    counts = {name: sum(fn(s) for s in seeds) for name, fn in
              (("lif_step", _lif_trace_ok), ("layer_current", _sparse_ok),
               ("sconv1d", _sconv_ok), ("srnn", _srnn_ok))}
    record(3, "LIF / layer oracles", all(c == 50 for c in counts.values()),
           ", ".join(f"{k} {v}/50" for k, v in counts.items()))


# -- 4 ------------------------------------------------------------------------

def test_4_metric_arithmetic():
    shown = []
    for mr, far in ((10.4, 27.9), (19.5, 26.9), (24.6, 29.8)):
        c = ConfusionCounts(tp=1000 - round(mr * 10), fn=round(mr * 10),
                            fp=round(far * 10), tn=1000 - round(far * 10))
        shown.append(hter(c).pct("hter"))
    record(4, "HTER display of reference rows", shown == ["19.1", "23.2", "27.2"], f"got {shown}")


# -- 5 ------------------------------------------------------------------------

def test_5_snr_mixing():
    errs = []
    rng = np.random.default_rng(5)
    for snr in STANDARD_SNRS:
        for _ in range(5):
            clean = Waveform(rng.normal(scale=rng.uniform(0.01, 0.3), size=int(rng.integers(1000, 50000))))
            noise = Waveform(rng.uniform(-1, 1, size=clean.samples.size + 100))
            errs.append(abs(measured_snr(clean.samples, mix_at_snr(clean, noise, snr).samples) - snr))
    record(5, "SNR mixing", max(errs) < 0.01, f"max |measured - target| = {max(errs):.2e} dB over 6 levels")


# -- 6 ------------------------------------------------------------------------

DESK = TrainConfig(epochs=30, batch_size=16, lr0=3e-3, lr_decay_every=20, seed=0)


def _train_and_eval(train_set, test_set, arch):
    res = train(DESK, train_set, arch)
    counts = evaluate_model(res.model, test_set)
    return res.model, group_by_level(counts, [u.snr_db for u in test_set])


@pytest.mark.slow
def test_6_desk_scale_learning():
    t0 = time.perf_counter()
    train_set = synth_corpus(200, seed=1)
    test_set = synth_corpus(50, seed=2)
    model, full = _train_and_eval(train_set, test_set, Architecture())
    _, ablated = _train_and_eval(train_set, test_set, Architecture.from_variant("svad", True, True))
    elapsed = time.perf_counter() - t0
    print("full model\n" + format_report(full))
    print("- sConv1D & Attention\n" + format_report(ablated))
    low, high = full["low"].hter, full["high"].hter
    gap = ablated["high"].hter - high
    ok = low < 0.15 and high < 0.35 and gap >= 0.02 and elapsed < 1800
    record(6, "desk-scale learning", ok,
           f"low HTER {100 * low:.1f}% (<15), high HTER {100 * high:.1f}% (<35), "
           f"ablation high {100 * ablated['high'].hter:.1f}% (gap {100 * gap:.1f} >= 2 pts), {elapsed / 60:.1f} min")


# -- 7 ------------------------------------------------------------------------

def test_7_power_accounting():
    checks = {}
    model = SVAD.init(Architecture(), seed=0)
    silent = power_from_trace(model.profile(np.zeros(16000)))
    checks["silent floor"] = silent.synops == 0 and silent.avg_power == silent.floor_power

    recount_ok = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        widths = [int(w) for w in rng.integers(3, 12, size=4)]
        layers = [Dense(LayerWeights.init(rng, widths[i], widths[i + 1], recurrent=bool(rng.random() < 0.5),
                                          dtype=np.float64)) for i in range(3)]
        x = (rng.random((int(rng.integers(5, 40)), widths[0])) < 0.5).astype(float)
        _, tape, trace = forward_recorded(LayerStack(layers, output_fan_out=2), x, P)
        syn = int(x.sum()) * widths[1]
        for i, rec in enumerate(tape.records):
            fan = (widths[i + 2] if i < 2 else 2) + (widths[i + 1] if layers[i].weights.w_rec is not None else 0)
            syn += int(rec.o.sum()) * fan
        counts = count_ops(trace)
        recount_ok += counts.synops == syn and counts.updates == sum(widths[1:]) * x.shape[0]
    checks["recount 20/20"] = recount_ok == 20

    wave = np.concatenate([synth_utterance(21, i).noisy.samples for i in range(6)])[:160_000]
    big = power_from_trace(model.profile(wave), LOIHI)
    small = power_from_trace(SVAD.init(Architecture.from_variant("svad-s"), seed=0).profile(wave), LOIHI)
    checks["svad-s < svad"] = small.avg_power < big.avg_power
    checks["0.1-100 uW"] = 0.1e-6 <= big.avg_power <= 100e-6
    record(7, "power accounting", all(checks.values()),
           f"{checks}; svad {big.avg_power * 1e6:.2f} uW, svad-s {small.avg_power * 1e6:.2f} uW on 10 s")


# -- 8 ------------------------------------------------------------------------

def test_8_determinism_and_round_trips(tmp_path):
    corpus = synth_corpus(8, seed=13)
    cfg = TrainConfig(epochs=1, batch_size=4, seed=3)
    a, b = train(cfg, corpus), train(cfg, corpus)
    same_loss = a.log[0].total == b.log[0].total

    blob = checkpoint_bytes(a.model, a.adam, 1)
    same_ckpt = checkpoint_bytes(*parse_checkpoint(blob)) == blob

    pcm = np.random.default_rng(8).integers(-32768, 32768, size=16000).astype("<i2")
    (tmp_path / "x.wav").write_bytes(wav_bytes(pcm.astype(np.float64) / 32768))
    wav = read_wav(tmp_path / "x.wav")
    payload = np.round(wav.samples * 32768).astype("<i2").tobytes()
    same_wav = payload == pcm.tobytes() and wav_bytes(wav) == (tmp_path / "x.wav").read_bytes()
    record(8, "determinism and round-trips", same_loss and same_ckpt and same_wav,
           f"epoch-1 loss bitwise equal={same_loss}, checkpoint byte-identical={same_ckpt}, "
           f"WAV payload byte-exact={same_wav}")
