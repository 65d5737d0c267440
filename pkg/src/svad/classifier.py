"""Spiking recurrent classifier, leaky linear readout and per-frame decisions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .snn import Dense, LayerStack, LayerWeights, LifParams, _as_batch

NON_SPEECH = 0
SPEECH = 1


@dataclass(frozen=True)
class SrnnConfig:
    n_hidden: int = 32
    n_in: int = 20
    n_classes: int = 2

    def __post_init__(self):
        if self.n_hidden < 1:
            raise ValueError("n_hidden must be >= 1")


@dataclass
class ReadoutState:
    v: np.ndarray


@dataclass
class FrameDecision:
    p: np.ndarray
    label: int
    frame_index: int


def readout_forward(h, weights: LayerWeights, alpha: float):
    """Leaky integrator v[t] = alpha v[t-1] + W h[t] + b over (B, T, H) spikes."""
    drive = h @ weights.w.T + weights.b
    v = np.empty_like(drive)
    acc = np.zeros_like(drive[:, 0])
    for t in range(drive.shape[1]):
        acc = alpha * acc + drive[:, t]
        v[:, t] = acc
    return v


def readout_backward(h, g_v, weights: LayerWeights, alpha: float):
    """Returns ({w, b} grads, dL/dh) for ``readout_forward``."""
    delta = np.empty_like(g_v)
    acc = np.zeros_like(g_v[:, 0])
    for t in range(g_v.shape[1] - 1, -1, -1):
        acc = g_v[:, t] + alpha * acc
        delta[:, t] = acc
    grads = {"w": np.einsum("btc,bth->ch", delta, h), "b": delta.sum(axis=(0, 1))}
    return grads, delta @ weights.w


def srnn_stack(srnn: LayerWeights, n_classes: int = 2) -> LayerStack:
    if srnn.w_rec is None:
        raise ShapeError("sRNN weights need a recurrent matrix")
    return LayerStack([Dense(srnn)], names=["srnn"], output_fan_out=n_classes)


def srnn_forward(s_hat, srnn: LayerWeights, readout: LayerWeights, config: SrnnConfig,
                 params: LifParams):
    """Hidden spikes (T, H) and readout potentials (T, C) for one or more sequences."""
    x, squeeze = _as_batch(s_hat)
    if x.shape[2] != config.n_in or srnn.n_in != config.n_in or srnn.n_out != config.n_hidden:
        raise ShapeError(f"s_hat width {x.shape[2]} / sRNN weights do not match {config}")
    if readout.w.shape != (config.n_classes, config.n_hidden):
        raise ShapeError(f"readout weights {readout.w.shape} do not match {config}")
    h = srnn_stack(srnn, config.n_classes).forward(x, params)
    v = readout_forward(h, readout, params.alpha)
    return (h[0], v[0]) if squeeze else (h, v)


def softmax(v):
    v = np.asarray(v, dtype=np.float64)
    z = v - v.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def labels_from_potentials(v):
    """Argmax over classes; a tie resolves to non-speech."""
    v = np.asarray(v)
    return (v[..., SPEECH] > v[..., NON_SPEECH]).astype(np.int64)


def decide(potentials) -> list[FrameDecision]:
    v = np.asarray(potentials, dtype=np.float64)
    if v.ndim != 2 or v.shape[1] != 2:
        raise ShapeError(f"expected (T, 2) potentials, got {v.shape}")
    p = softmax(v)
    labels = labels_from_potentials(v)
    return [FrameDecision(p[t], int(labels[t]), t) for t in range(v.shape[0])]
