"""
Finite-difference verification of the BPTT gradients in relaxed mode.

Everything here runs in float64; central differences use a fixed step of 1e-4.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .snn import Conv1d, Dense, LayerStack, LayerWeights, LifParams

EPS = 1e-4
# below this magnitude both gradients are treated as zero (roundoff floor of the FD quotient)
ABS_FLOOR = 1e-8


def rel_error(analytic, numeric) -> np.ndarray:
    a, n = np.asarray(analytic, dtype=np.float64), np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), ABS_FLOOR)


def central_difference(loss_fn, arr: np.ndarray, eps: float = EPS, indices=None) -> np.ndarray:
    """Numeric gradient of ``loss_fn()`` w.r.t. ``arr`` (perturbed in place, then restored)."""
    grad = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    for i in idx:
        orig = flat[i]
        flat[i] = orig + eps
        lp = loss_fn()
        flat[i] = orig - eps
        lm = loss_fn()
        flat[i] = orig
        grad.reshape(-1)[i] = (lp - lm) / (2 * eps)
    return grad


@dataclass
class CheckResult:
    seed: int
    max_rel_error: float
    n_checked: int
    description: str


def random_stack(rng: np.random.Generator):
    """A 1-3 layer spiking stack mixing dense, recurrent and conv layers."""
    n_layers = int(rng.integers(1, 4))
    widths = [int(w) for w in rng.integers(2, 7, size=n_layers + 1)]
    layers, kinds = [], []
    for i in range(n_layers):
        kind = rng.choice(["dense", "recurrent", "conv"])
        if kind == "conv":
            lw = LayerWeights.init(rng, widths[i], widths[i + 1], kernel=3, dtype=np.float64)
            layer = Conv1d(lw)
        else:
            lw = LayerWeights.init(rng, widths[i], widths[i + 1], recurrent=kind == "recurrent",
                                   dtype=np.float64)
            layer = Dense(lw)
        lw.b[:] = rng.uniform(-0.3, 0.3, size=lw.b.shape)
        layers.append(layer)
        kinds.append(str(kind))
    return LayerStack(layers), widths, kinds


def check_stack(seed: int, params: LifParams = LifParams()) -> CheckResult:
    """Compare BPTT with central differences on a random stack, input and loss."""
    rng = np.random.default_rng(seed)
    stack, widths, kinds = random_stack(rng)
    steps = int(rng.integers(1, 11))
    batch = int(rng.integers(1, 3))
    if rng.random() < 0.5:
        x = rng.uniform(0, 1, size=(batch, steps, widths[0]))
    else:
        x = (rng.random((batch, steps, widths[0])) < 0.4).astype(np.float64)
    target = rng.uniform(0, 1, size=(batch, steps, widths[-1]))
    loss_kind = rng.choice(["linear", "squared", "softplus"])

    def loss_and_grad(out):
        if loss_kind == "linear":
            return float((out * target).sum()), target
        if loss_kind == "squared":
            d = out - target
            return float((d * d).sum()), 2 * d
        z = out * target
        return float(np.logaddexp(0, 3 * z).sum()), 3 * target / (1 + np.exp(-3 * z))

    out, tape, _ = stack.forward_recorded(x, params, relaxed=True)
    _, g_out = loss_and_grad(out)
    grads, _ = stack.backward(tape, g_out, params)

    def loss():
        return loss_and_grad(stack.forward(x, params, relaxed=True))[0]

    worst, n = 0.0, 0
    for layer, g in zip(stack.layers, grads):
        for name, arr in layer.weights.arrays().items():
            numeric = central_difference(loss, arr)
            worst = max(worst, float(rel_error(g[name], numeric).max()))
            n += arr.size
    desc = f"layers={'/'.join(kinds)} widths={widths} T={steps} B={batch} loss={loss_kind}"
    return CheckResult(seed, worst, n, desc)


def check_model(seed: int, variant: str = "svad", n_params: int | None = 200,
                lam: float = 1.0, no_sconv: bool = False, no_attention: bool = False) -> CheckResult:
    """Finite-difference check of the full network (sinc front end included)."""
    from .audio import synth_utterance
    from .model import SVAD, Architecture
    from .training import loss_and_grads, make_batch

    rng = np.random.default_rng(seed)
    arch = Architecture.from_variant(variant, no_sconv, no_attention)
    model = SVAD.init(arch, seed=seed, dtype=np.float64)
    for k in model.params:
        if k.endswith(".b") and not k.startswith("sinc"):
            model.params[k][:] = rng.uniform(-0.2, 0.2, size=model.params[k].shape)
    utts = []
    for i in range(2):
        u = synth_utterance(seed, i)
        n = 480 + 240 * int(rng.integers(2, 9))
        start = int(rng.integers(0, len(u.noisy) - n))
        utts.append(_crop(u, start, n))
    batch = make_batch(model, utts, relaxed=True)
    losses, grads, _ = loss_and_grads(model, batch, lam, relaxed=True)

    def loss():
        feats, lengths, _ = model.features([u.noisy.samples for u in utts])
        b = type(batch)(feats, lengths, [], batch.target, batch.clean)
        return loss_and_grads(model, b, lam, relaxed=True, with_grads=False)[0].total

    names = list(model.params)
    sizes = np.array([model.params[k].size for k in names])
    total = int(sizes.sum())
    picks = np.arange(total) if n_params is None else np.sort(rng.choice(total, min(n_params, total), replace=False))
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst = 0.0
    for j, name in enumerate(names):
        local = picks[(picks >= offsets[j]) & (picks < offsets[j + 1])] - offsets[j]
        if local.size == 0:
            continue
        numeric = central_difference(loss, model.params[name], indices=local)
        err = rel_error(grads[name].reshape(-1)[local], numeric.reshape(-1)[local])
        worst = max(worst, float(err.max()))
    return CheckResult(seed, worst, int(picks.size), f"{arch.label} model, loss={losses.total:.4f}")


def _crop(u, start: int, n: int):
    from .audio import LabeledUtterance, Waveform, make_labels

    mask = u.speech_mask[start:start + n]
    return LabeledUtterance(Waveform(u.noisy.samples[start:start + n]),
                            Waveform(u.clean.samples[start:start + n]),
                            make_labels(mask), u.snr_db, u.noise_kind, mask)


def run_suite(n_seeds: int = 100, seed: int = 0) -> list[CheckResult]:
    return [check_stack(seed * 100_003 + i) for i in range(n_seeds)]
