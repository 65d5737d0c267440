"""
sVAD network assembly: sinc front end -> sConv1D -> attention gate -> sRNN -> readout.

The architecture descriptor fixes every array shape, so parameter budgets can
be computed without instantiating weights.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .classifier import labels_from_potentials, readout_backward, readout_forward, softmax
from .encoder import (HOP, SincBank, frame_features, frame_features_backward, init_mel_cutoffs,
                      wave_spectrum)
from .errors import ConfigError, ShapeError
from .snn import (Conv1d, Dense, DirectLif, LayerStack, LayerTrace, LayerWeights, LifParams,
                  RunTrace, Tape, valid_mask)

VARIANTS = {
    "svad": dict(n_attn=3, n_hidden=32),
    "svad-s": dict(n_attn=2, n_hidden=10),
}


@dataclass(frozen=True)
class Architecture:
    variant: str = "svad"
    n_filters: int = 20
    kernel_len: int = 101
    fs: int = 16000
    conv_kernel: int = 3
    n_attn: int = 3
    n_hidden: int = 32
    n_classes: int = 2
    use_sconv: bool = True
    use_attention: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        for name in ("n_filters", "kernel_len", "fs", "conv_kernel", "n_hidden", "n_classes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.kernel_len % 2 == 0 or self.conv_kernel % 2 == 0:
            raise ConfigError("kernel lengths must be odd")
        if self.use_attention and self.n_attn < 1:
            raise ConfigError("attention needs at least one sFC layer")

    @classmethod
    def from_variant(cls, variant: str = "svad", no_sconv: bool = False,
                     no_attention: bool = False) -> "Architecture":
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant {variant!r}")
        return cls(variant=variant, use_sconv=not no_sconv, use_attention=not no_attention,
                   **VARIANTS[variant])

    @property
    def label(self) -> str:
        parts = [self.variant]
        if not self.use_sconv:
            parts.append("-sconv1d")
        if not self.use_attention:
            parts.append("-attention")
        return " ".join(parts)

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        f, h, c = self.n_filters, self.n_hidden, self.n_classes
        shapes = {"sinc.f1": (f,), "sinc.band": (f,)}
        if self.use_sconv:
            shapes["sconv.w"] = (f, f, self.conv_kernel)
            shapes["sconv.b"] = (f,)
        if self.use_attention:
            for i in range(1, self.n_attn + 1):
                shapes[f"attn{i}.w"] = (f, f)
                shapes[f"attn{i}.b"] = (f,)
        shapes["srnn.w"] = (h, f)
        shapes["srnn.w_rec"] = (h, h)
        shapes["srnn.b"] = (h,)
        shapes["readout.w"] = (c, h)
        shapes["readout.b"] = (c,)
        return shapes

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        kinds = {f.name: f.type for f in fields(cls)}
        out = {}
        for k, v in d.items():
            if k not in kinds:
                raise ConfigError(f"unknown architecture key {k!r}")
            if kinds[k] in ("bool", bool):
                out[k] = v if isinstance(v, bool) else str(v).lower() == "true"
            elif kinds[k] in ("int", int):
                out[k] = int(v)
            else:
                out[k] = str(v)
        return cls(**out)


def param_count(arch: Architecture) -> int:
    return int(sum(np.prod(s) for s in arch.param_shapes().values()))


@dataclass
class Forward:
    """Everything a backward pass or the op counter needs from one forward."""

    feats: np.ndarray
    lengths: np.ndarray
    enc: LayerStack
    enc_tape: Tape
    y: np.ndarray
    attn: LayerStack | None
    attn_tape: Tape | None
    m: np.ndarray | None
    s_hat: np.ndarray
    srnn: LayerStack
    srnn_tape: Tape
    h: np.ndarray
    v: np.ndarray
    caches: list = field(default_factory=list)

    @property
    def mask(self) -> np.ndarray:
        return valid_mask(self.v.shape[0], self.v.shape[1], self.lengths)


class SVAD:
    def __init__(self, arch: Architecture, params: dict[str, np.ndarray],
                 lif: LifParams = LifParams()):
        shapes = arch.param_shapes()
        if set(params) != set(shapes):
            raise ShapeError(f"parameter names {sorted(params)} do not match architecture")
        for name, shape in shapes.items():
            if params[name].shape != shape:
                raise ShapeError(f"{name} has shape {params[name].shape}, expected {shape}")
        self.arch = arch
        self.params = {name: params[name] for name in shapes}
        self.lif = lif

    @classmethod
    def init(cls, arch: Architecture, seed: int = 0, lif: LifParams = LifParams(),
             dtype=np.float32) -> "SVAD":
        rng = np.random.default_rng(seed)
        f = arch.n_filters
        bank = init_mel_cutoffs(f, arch.fs, arch.kernel_len)
        p = {"sinc.f1": bank.f1.astype(dtype), "sinc.band": bank.band.astype(dtype)}
        if arch.use_sconv:
            lw = LayerWeights.init(rng, f, f, kernel=arch.conv_kernel, dtype=dtype)
            p["sconv.w"], p["sconv.b"] = lw.w, lw.b
        if arch.use_attention:
            for i in range(1, arch.n_attn + 1):
                lw = LayerWeights.init(rng, f, f, dtype=dtype)
                p[f"attn{i}.w"], p[f"attn{i}.b"] = lw.w, lw.b
        lw = LayerWeights.init(rng, f, arch.n_hidden, recurrent=True, dtype=dtype)
        p["srnn.w"], p["srnn.w_rec"], p["srnn.b"] = lw.w, lw.w_rec, lw.b
        lw = LayerWeights.init(rng, arch.n_hidden, arch.n_classes, dtype=dtype)
        p["readout.w"], p["readout.b"] = lw.w, lw.b
        return cls(arch, p, lif)

    @classmethod
    def zeros(cls, arch: Architecture, lif: LifParams = LifParams(), dtype=np.float32) -> "SVAD":
        model = cls.init(arch, 0, lif, dtype)
        for name, arr in model.params.items():
            if not name.startswith("sinc."):
                arr[...] = 0
        return model

    @property
    def dtype(self):
        return self.params["srnn.w"].dtype

    def astype(self, dtype) -> "SVAD":
        return SVAD(self.arch, {k: v.astype(dtype) for k, v in self.params.items()}, self.lif)

    def copy(self) -> "SVAD":
        return SVAD(self.arch, {k: v.copy() for k, v in self.params.items()}, self.lif)

    # -- building blocks --------------------------------------------------

    @property
    def bank(self) -> SincBank:
        return SincBank(self.params["sinc.f1"], self.params["sinc.band"], self.arch.kernel_len,
                        self.arch.fs)

    def _weights(self, prefix: str) -> LayerWeights:
        p = self.params
        return LayerWeights(p[prefix + ".w"], p[prefix + ".b"], p.get(prefix + ".w_rec"))

    def encoder_stack(self) -> LayerStack:
        if self.arch.use_sconv:
            return LayerStack([Conv1d(self._weights("sconv"))], names=["sconv1d"])
        return LayerStack([DirectLif(self.arch.n_filters, self.dtype)], names=["direct"])

    def attention_stack(self) -> LayerStack | None:
        if not self.arch.use_attention:
            return None
        names = [f"attn{i}" for i in range(1, self.arch.n_attn + 1)]
        return LayerStack([Dense(self._weights(n)) for n in names], names=names)

    def srnn_stack(self) -> LayerStack:
        return LayerStack([Dense(self._weights("srnn"))], names=["srnn"],
                          output_fan_out=self.arch.n_classes)

    # -- forward / backward -----------------------------------------------

    def features(self, waves, keep_cache: bool = False, spectra=None):
        """Pad per-utterance frame features into (B, T, F); returns (feats, lengths, caches).

        ``spectra`` optionally supplies precomputed ``wave_spectrum`` results.
        """
        bank = self.bank
        out, caches = [], []
        for i, w in enumerate(waves):
            spec = None if spectra is None else spectra[i]
            f, cache = frame_features(w, bank, dtype=self.dtype, spectrum=spec)
            out.append(f.astype(self.dtype))
            if keep_cache:
                caches.append(cache)
        lengths = np.array([f.shape[0] for f in out])
        feats = np.zeros((len(out), lengths.max(), self.arch.n_filters), dtype=self.dtype)
        for i, f in enumerate(out):
            feats[i, :f.shape[0]] = f
        return feats, lengths, caches

    def spectra(self, waves):
        return [wave_spectrum(w, self.arch.kernel_len, self.dtype) for w in waves]

    def encode_spikes(self, feats, relaxed: bool = False):
        """Encoder output Y before attention; used for the clean-speech target."""
        return self.encoder_stack().forward(feats, self.lif, relaxed=relaxed)

    def forward(self, feats, lengths=None, relaxed: bool = False, caches=None) -> Forward:
        feats = np.asarray(feats)
        if feats.ndim != 3 or feats.shape[2] != self.arch.n_filters:
            raise ShapeError(f"features must be (B, T, {self.arch.n_filters}), got {feats.shape}")
        if lengths is None:
            lengths = np.full(feats.shape[0], feats.shape[1])
        lif = self.lif
        enc = self.encoder_stack()
        y, enc_tape, _ = enc.forward_recorded(feats, lif, relaxed=relaxed)
        attn = self.attention_stack()
        m = attn_tape = None
        s_hat = y
        if attn is not None:
            m, attn_tape, _ = attn.forward_recorded(y, lif, relaxed=relaxed)
            s_hat = y * m
        srnn = self.srnn_stack()
        h, srnn_tape, _ = srnn.forward_recorded(s_hat, lif, relaxed=relaxed)
        v = readout_forward(h, self._weights("readout"), lif.alpha)
        return Forward(feats, np.asarray(lengths), enc, enc_tape, y, attn, attn_tape, m, s_hat,
                       srnn, srnn_tape, h, v, list(caches or []))

    def backward(self, fw: Forward, g_v, g_s_hat=None) -> dict[str, np.ndarray]:
        """Parameter gradients from dL/dv and an optional extra dL/dS_hat."""
        lif = self.lif
        grads = {}
        g_readout, g_h = readout_backward(fw.h, g_v, self._weights("readout"), lif.alpha)
        grads["readout.w"], grads["readout.b"] = g_readout["w"], g_readout["b"]
        (g_srnn,), g_s = fw.srnn.backward(fw.srnn_tape, g_h, lif)
        for k, g in g_srnn.items():
            grads["srnn." + k] = g
        if g_s_hat is not None:
            g_s = g_s + g_s_hat
        if fw.attn is not None:
            g_y = g_s * fw.m
            g_attn, g_y_attn = fw.attn.backward(fw.attn_tape, g_s * fw.y, lif)
            for name, g in zip(fw.attn.names, g_attn):
                grads[name + ".w"], grads[name + ".b"] = g["w"], g["b"]
            g_y = g_y + g_y_attn
        else:
            g_y = g_s
        (g_enc,), g_feats = fw.enc.backward(fw.enc_tape, g_y, lif)
        if self.arch.use_sconv:
            grads["sconv.w"], grads["sconv.b"] = g_enc["w"], g_enc["b"]
        g_f1 = np.zeros(self.arch.n_filters)
        g_band = np.zeros(self.arch.n_filters)
        if fw.caches:
            bank = self.bank
            for i, cache in enumerate(fw.caches):
                a, b = frame_features_backward(cache, g_feats[i, :fw.lengths[i]], bank)
                g_f1 += a
                g_band += b
        grads["sinc.f1"], grads["sinc.band"] = g_f1, g_band
        return {k: np.asarray(grads[k], dtype=self.dtype) for k in self.params}

    # -- inference --------------------------------------------------------

    def potentials(self, wave) -> np.ndarray:
        feats, lengths, _ = self.features([wave])
        return self.forward(feats, lengths).v[0]

    def predict(self, wave):
        """Per-frame (p_speech, label) for one waveform."""
        v = self.potentials(wave)
        return softmax(v)[:, 1], labels_from_potentials(v)

    def run_trace(self, fw: Forward, duration_s: float, index: int | None = None) -> RunTrace:
        """Op bookkeeping for the valid frames of one forward pass."""
        mask = fw.mask[..., None]
        sel = slice(None) if index is None else slice(index, index + 1)
        mask = mask[sel]

        def pop(x):
            return int(np.count_nonzero(x[sel] * mask))

        a = self.arch
        f, hid = a.n_filters, a.n_hidden
        n_steps = int(mask.sum())
        layers = []
        enc_name = "sconv1d" if a.use_sconv else "direct"
        enc_fan = f if a.use_attention else hid
        layers.append(LayerTrace(enc_name, f, pop(fw.y), enc_fan))
        if a.use_attention:
            for i in range(1, a.n_attn + 1):
                rec = fw.attn_tape.records[i - 1]
                layers.append(LayerTrace(f"attn{i}", f, pop(rec.o), f if i < a.n_attn else 0))
            layers.append(LayerTrace("gate", f, pop(fw.s_hat), 1, stateful=False))
            layers.append(LayerTrace("s_hat", f, pop(fw.s_hat), hid, stateful=False))
        layers.append(LayerTrace("srnn", hid, pop(fw.h), hid + a.n_classes))
        layers.append(LayerTrace("readout", a.n_classes, 0, 0))
        n_samples = int(((fw.lengths[sel] + 1) * HOP).sum())
        dsp = n_samples * f * (a.kernel_len + 1)
        if a.use_sconv:
            dsp += n_steps * f * f * a.conv_kernel
        return RunTrace(layers, n_steps, duration_s, dsp)

    def profile(self, wave, fs: int = 16000) -> RunTrace:
        """Forward one waveform and return its op trace."""
        feats, lengths, _ = self.features([wave])
        fw = self.forward(feats, lengths)
        return self.run_trace(fw, len(wave) / fs)
