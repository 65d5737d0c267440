"""
Losses, Adam, and the BPTT training loop.

The total loss is per-frame cross-entropy plus ``lam`` times the mean squared
error between the attended noisy features and the clean-speech encoder output.
The clean path is computed without recording, so it contributes no gradients.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .classifier import softmax
from .errors import DivergenceError, ShapeError
from .evaluation import ConfusionCounts, evaluate_model, hter
from .model import SVAD, Architecture, Forward
from .snn import LifParams, valid_mask

log = logging.getLogger(__name__)

P_FLOOR = 1e-12


@dataclass(frozen=True)
class LossBreakdown:
    ce: float
    mse: float
    lam: float

    @property
    def total(self) -> float:
        return total_loss(self.ce, self.mse, self.lam)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 128
    lr0: float = 1e-3
    lr_decay: float = 0.1
    lr_decay_every: int = 40
    lam: float = 1.0
    clip_norm: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.lr_decay_every < 1:
            raise ValueError("epochs, batch_size and lr_decay_every must be positive")
        if self.lr0 <= 0 or not 0 < self.lr_decay <= 1:
            raise ValueError("lr0 must be positive and lr_decay in (0, 1]")
        if self.lam < 0 or self.clip_norm < 0:
            raise ValueError("lam and clip_norm must be non-negative")


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Step schedule, ``epoch`` counted from 0."""
    return cfg.lr0 * cfg.lr_decay ** (epoch // cfg.lr_decay_every)


# -- losses -------------------------------------------------------------------

def _check_one_hot(target):
    t = np.asarray(target)
    if t.shape[-1] != 2 or not np.all((t == 0) | (t == 1)) or not np.all(t.sum(axis=-1) == 1):
        raise ValueError("target must be one-hot over two classes")
    return t


def ce_loss(p, target, mask=None) -> float:
    """Mean over frames of -sum_c x_c log p_c, probabilities floored at 1e-12."""
    p = np.asarray(p, dtype=np.float64)
    t = _check_one_hot(target)
    if p.shape != t.shape:
        raise ShapeError(f"probabilities {p.shape} vs target {t.shape}")
    per_frame = -(t * np.log(np.clip(p, P_FLOOR, 1.0))).sum(axis=-1)
    if mask is None:
        return float(per_frame.mean())
    mask = np.asarray(mask, dtype=bool)
    return float(per_frame[mask].sum() / max(mask.sum(), 1))


def ce_grad_logits(v, target, mask=None):
    """d(ce_loss(softmax(v)))/dv, ignoring the probability floor."""
    t = _check_one_hot(target)
    g = softmax(v) - t
    if mask is None:
        return g / (g.size // 2)
    mask = np.asarray(mask, dtype=bool)
    return g * mask[..., None] / max(mask.sum(), 1)


def mse_loss(s_hat, s, mask=None) -> float:
    s_hat, s = np.asarray(s_hat, dtype=np.float64), np.asarray(s, dtype=np.float64)
    if s_hat.shape != s.shape:
        raise ShapeError(f"feature shapes differ: {s_hat.shape} vs {s.shape}")
    sq = (s_hat - s) ** 2
    if mask is None:
        return float(sq.mean())
    m = np.broadcast_to(np.asarray(mask, dtype=bool)[..., None], sq.shape)
    return float(sq[m].sum() / max(m.sum(), 1))


def mse_grad(s_hat, s, mask=None):
    d = np.asarray(s_hat, dtype=np.float64) - np.asarray(s, dtype=np.float64)
    if mask is None:
        return 2.0 * d / d.size
    m = np.asarray(mask, dtype=bool)[..., None]
    return 2.0 * d * m / max(m.sum() * d.shape[-1], 1)


def total_loss(ce: float, mse: float, lam: float) -> float:
    return ce + lam * mse


# -- batches ------------------------------------------------------------------

@dataclass
class Batch:
    feats: np.ndarray
    lengths: np.ndarray
    caches: list
    target: np.ndarray  # one-hot (B, T, 2)
    clean: np.ndarray | None  # clean-path encoder spikes (B, T, F)

    @property
    def mask(self):
        return valid_mask(self.feats.shape[0], self.feats.shape[1], self.lengths)


def one_hot(labels, steps: int) -> np.ndarray:
    out = np.zeros((len(labels), steps, 2))
    out[..., 0] = 1.0
    for i, lab in enumerate(labels):
        lab = np.asarray(lab)
        out[i, :lab.size, 0] = 1 - lab
        out[i, :lab.size, 1] = lab
    return out


def make_batch(model: SVAD, utterances, with_grads: bool = True, relaxed: bool = False,
               spectra=None) -> Batch:
    """Noisy features (with backward caches) and the clean-path spike target.

    ``spectra`` is an optional list of (noisy, clean) waveform spectra.
    """
    noisy_spec = clean_spec = None
    if spectra is not None:
        noisy_spec, clean_spec = zip(*spectra)
    feats, lengths, caches = model.features([u.noisy.samples for u in utterances],
                                            keep_cache=with_grads, spectra=noisy_spec)
    clean = None
    if model.arch.use_attention:
        clean_feats, _, _ = model.features([u.clean.samples for u in utterances], spectra=clean_spec)
        clean = model.encode_spikes(clean_feats, relaxed=relaxed)
    return Batch(feats, lengths, caches, one_hot([u.labels for u in utterances], feats.shape[1]), clean)


def loss_and_grads(model: SVAD, batch: Batch, lam: float, relaxed: bool = False,
                   with_grads: bool = True):
    """Forward + BPTT on one batch; returns (LossBreakdown, grads or None, Forward)."""
    fw: Forward = model.forward(batch.feats, batch.lengths, relaxed=relaxed, caches=batch.caches)
    mask = batch.mask
    p = softmax(fw.v)
    ce = ce_loss(p, batch.target, mask)
    if batch.clean is not None:
        mse = mse_loss(fw.s_hat, batch.clean, mask)
    else:
        mse, lam = 0.0, 0.0
    losses = LossBreakdown(ce, mse, lam)
    if not with_grads:
        return losses, None, fw
    g_v = ce_grad_logits(fw.v, batch.target, mask).astype(model.dtype)
    g_s = None
    if batch.clean is not None and lam:
        g_s = (lam * mse_grad(fw.s_hat, batch.clean, mask)).astype(model.dtype)
    return losses, model.backward(fw, g_v, g_s), fw


# -- optimiser ----------------------------------------------------------------

@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: dict) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: dict, grads: dict, state: AdamState, lr: float):
    """One bias-corrected Adam update, in place; returns (params, state)."""
    for k, g in grads.items():
        if g.shape != params[k].shape:
            raise ShapeError(f"gradient {k} has shape {g.shape}, parameter {params[k].shape}")
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for {k}; step aborted")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for k, g in grads.items():
        m = state.m[k] = b1 * state.m[k] + (1 - b1) * g
        v = state.v[k] = b2 * state.v[k] + (1 - b2) * g * g
        step = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        params[k] -= step.astype(params[k].dtype)
    return params, state


def clip_grad_norm(grads: dict, max_norm: float) -> float:
    norm = float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values())))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for k in grads:
            grads[k] = grads[k] * np.asarray(scale, dtype=grads[k].dtype)
    return norm


# -- loop ---------------------------------------------------------------------

@dataclass
class EpochLog:
    epoch: int
    lr: float
    ce: float
    mse: float
    total: float
    val: ConfusionCounts | None = None

    def line(self) -> str:
        if self.val is not None and self.val.total:
            r = hter(self.val)
            tail = " ".join(f"{n}={'nan' if x is None else f'{x:.4f}'}" for n, x in
                            (("val_mr", r.mr), ("val_far", r.far), ("val_hter", r.hter)))
        else:
            tail = "val_mr=nan val_far=nan val_hter=nan"
        return (f"epoch={self.epoch} lr={self.lr:.6g} ce={self.ce:.6f} mse={self.mse:.6f} "
                f"total={self.total:.6f} {tail}")


@dataclass
class TrainResult:
    model: SVAD
    log: list[EpochLog] = field(default_factory=list)
    adam: AdamState | None = None


def train(config: TrainConfig, corpus, arch: Architecture | None = None,
          lif: LifParams = LifParams(), val=None, on_epoch=None, model: SVAD | None = None) -> TrainResult:
    """Train on (noisy, clean, labels) utterances; deterministic for a given seed.

    ``on_epoch(entry, result)`` runs after every epoch with the live result.
    """
    if not corpus:
        raise ValueError("empty training corpus")
    if model is None:
        model = SVAD.init(arch or Architecture(), seed=config.seed, lif=lif)
    rng = np.random.default_rng(config.seed + 1)
    adam = AdamState.zeros_like(model.params)
    result = TrainResult(model, [], adam)
    lam = config.lam if model.arch.use_attention else 0.0
    spectra = list(zip(model.spectra([u.noisy.samples for u in corpus]),
                       model.spectra([u.clean.samples for u in corpus])))
    for epoch in range(config.epochs):
        lr = lr_at(epoch, config)
        order = rng.permutation(len(corpus))
        sums = np.zeros(3)
        frames = 0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            batch = make_batch(model, [corpus[i] for i in idx], spectra=[spectra[i] for i in idx])
            losses, grads, _ = loss_and_grads(model, batch, lam)
            if not np.isfinite(losses.total):
                raise DivergenceError(f"non-finite loss at epoch {epoch + 1}: {losses}")
            if config.clip_norm > 0:
                clip_grad_norm(grads, config.clip_norm)
            adam_step(model.params, grads, adam, lr)
            n = int(batch.lengths.sum())
            sums += n * np.array([losses.ce, losses.mse, losses.total])
            frames += n
        ce, mse, tot = sums / frames
        val_counts = None
        if val:
            val_counts = sum(evaluate_model(model, val), ConfusionCounts())
        entry = EpochLog(epoch + 1, lr, ce, mse, tot, val_counts)
        result.log.append(entry)
        log.info(entry.line())
        if on_epoch is not None:
            on_epoch(entry, result)
    return result
