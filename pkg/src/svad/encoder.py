"""
Auditory encoder: learnable sinc band-pass bank, frame energies, spiking
temporal convolution and the spiking attention mask.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft

from .errors import NumericError, ShapeError
from .snn import Conv1d, Dense, LayerStack, LayerWeights, LifParams

FS = 16000
FRAME = 480
HOP = 240
MIN_LOW_HZ = 1.0
MIN_BAND_HZ = 1.0


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def n_frames(n_samples: int, frame: int = FRAME, hop: int = HOP) -> int:
    if n_samples < frame:
        return 0
    return (n_samples - frame) // hop + 1


@dataclass
class SincBank:
    f1: np.ndarray
    band: np.ndarray
    kernel_len: int = 101
    fs: int = FS

    def __post_init__(self):
        if self.kernel_len % 2 != 1:
            raise ValueError("kernel_len must be odd")
        if self.f1.shape != self.band.shape or self.f1.ndim != 1 or self.f1.size < 1:
            raise ShapeError("f1 and band must be equal-length non-empty vectors")

    @property
    def n_filters(self) -> int:
        return self.f1.size

    def effective(self):
        """Clamped cutoffs (f1_eff, band_eff) plus the clamp Jacobian entries.

        Returns f1e, be, d(f1e)/d(f1), d(be)/d(f1), d(be)/d(band).
        """
        f1 = self.f1.astype(np.float64)
        band = self.band.astype(np.float64)
        if not (np.all(np.isfinite(f1)) and np.all(np.isfinite(band))):
            raise NumericError("non-finite sinc cutoff")
        nyq = self.fs / 2.0
        f1e = np.clip(f1, MIN_LOW_HZ, nyq - MIN_BAND_HZ)
        j11 = ((f1 > MIN_LOW_HZ) & (f1 < nyq - MIN_BAND_HZ)).astype(np.float64)
        cap = nyq - f1e
        be = np.clip(band, MIN_BAND_HZ, cap)
        over = band > cap
        j22 = ((band > MIN_BAND_HZ) & ~over).astype(np.float64)
        j21 = np.where(over, -j11, 0.0)
        return f1e, be, j11, j21, j22

    def kernels(self, dtype=np.float64) -> np.ndarray:
        f1e, be, *_ = self.effective()
        return np.stack([sinc_kernel(a, b, self.kernel_len, self.fs) for a, b in zip(f1e, be)]).astype(dtype)


def _taps(kernel_len):
    return np.arange(kernel_len) - kernel_len // 2


def _lowpass(f_norm, n):
    # 2 f sinc(2 pi f n) written as sin(2 pi f n) / (pi n), value 2f at n = 0
    out = np.empty(n.shape, dtype=np.float64)
    nz = n != 0
    out[nz] = np.sin(2 * np.pi * f_norm * n[nz]) / (np.pi * n[nz])
    out[~nz] = 2 * f_norm
    return out


def sinc_kernel(f1: float, band: float, kernel_len: int = 101, fs: int = FS) -> np.ndarray:
    """Hamming-windowed band-pass FIR between f1 and f1 + band (Hz)."""
    if not (np.isfinite(f1) and np.isfinite(band)):
        raise NumericError("non-finite sinc parameters")
    if kernel_len % 2 != 1:
        raise ValueError("kernel_len must be odd")
    n = _taps(kernel_len)
    g = _lowpass((f1 + band) / fs, n) - _lowpass(f1 / fs, n)
    return g * np.hamming(kernel_len)


def _kernel_derivs(f1e, be, kernel_len, fs):
    """d(kernel)/d(f1_eff) and d(kernel)/d(band_eff), each (K, kernel_len)."""
    n = _taps(kernel_len)[None, :]
    win = np.hamming(kernel_len)[None, :]
    d_f2 = 2 * np.cos(2 * np.pi * ((f1e + be) / fs)[:, None] * n) / fs
    d_f1 = 2 * np.cos(2 * np.pi * (f1e / fs)[:, None] * n) / fs
    return win * (d_f2 - d_f1), win * d_f2


def init_mel_cutoffs(n_filters: int = 20, fs: int = FS, kernel_len: int = 101,
                     low_hz: float = 30.0) -> SincBank:
    """Bank with edges evenly spaced in mel between ``low_hz`` and just below fs/2."""
    if n_filters < 1:
        raise ValueError("n_filters must be >= 1")
    # top edge kept off the Nyquist clamp so its gradient is well defined
    high = fs / 2 - MIN_LOW_HZ - MIN_BAND_HZ
    edges = mel_to_hz(np.linspace(hz_to_mel(low_hz), hz_to_mel(high), n_filters + 1))
    return SincBank(edges[:-1].copy(), np.diff(edges), kernel_len, fs)


# -- frame features -----------------------------------------------------------

@dataclass
class FrameFeatures:
    values: np.ndarray
    frame_size_ms: float = 30.0
    hop_ms: float = 15.0
    provenance: str = "noisy"


@dataclass
class FeatureCache:
    """Intermediates of ``frame_features`` needed for the backward pass."""

    spectrum: np.ndarray
    filtered: np.ndarray
    energy: np.ndarray
    logged: np.ndarray
    peak: float
    peak_idx: tuple


def wave_spectrum(wave, kernel_len: int = 101, dtype=np.float64):
    """Real FFT of the waveform zero-padded by half a kernel on both sides.

    The transform length leaves room for the full linear convolution with a
    ``kernel_len`` kernel, so circular products below never alias the samples
    that are kept.
    """
    wave = np.asarray(wave)
    c = kernel_len // 2
    size = sfft.next_fast_len(wave.size + 2 * c, real=True)
    buf = np.zeros(size, dtype=dtype)
    buf[c:c + wave.size] = wave
    return sfft.rfft(buf)


def filter_bank(wave, kernels, spectrum=None):
    """Same-padded convolution of a waveform with every kernel, (K, n)."""
    wave = np.asarray(wave)
    k_len = kernels.shape[1]
    c = k_len // 2
    if spectrum is None:
        spectrum = wave_spectrum(wave, k_len, kernels.dtype)
    size = 2 * (spectrum.size - 1)
    full = sfft.irfft(spectrum[None, :] * sfft.rfft(kernels, size, axis=1), size, axis=1)
    return full[:, 2 * c:2 * c + wave.size]


def frame_energies(filtered):
    """Mean rectified amplitude per 480-sample frame, hop 240 -> (T, K)."""
    k, n = filtered.shape
    nb = n // HOP
    blocks = np.abs(filtered[:, :nb * HOP]).reshape(k, nb, HOP).sum(axis=2)
    return ((blocks[:, :-1] + blocks[:, 1:]) / FRAME).T


def frame_features(wave, bank: SincBank, dtype=np.float64, spectrum=None):
    """Normalised log frame energies plus a cache for ``frame_features_backward``."""
    wave = np.asarray(wave, dtype=dtype)
    if wave.ndim != 1:
        raise ShapeError("waveform must be one-dimensional")
    if wave.size < FRAME:
        raise ShapeError(f"waveform has {wave.size} samples, need at least {FRAME}")
    if not np.all(np.isfinite(wave)):
        raise NumericError("non-finite waveform samples")
    if spectrum is None:
        spectrum = wave_spectrum(wave, bank.kernel_len, dtype)
    filtered = filter_bank(wave, bank.kernels(dtype), spectrum)
    energy = frame_energies(filtered)
    logged = np.log1p(energy)
    idx = np.unravel_index(np.argmax(logged), logged.shape)
    peak = float(logged[idx])
    feats = logged / peak if peak > 0 else np.zeros_like(logged)
    return feats.astype(dtype), FeatureCache(spectrum, filtered, energy, logged, peak, idx)


def frame_features_backward(cache: FeatureCache, d_feats, bank: SincBank):
    """Gradients of a loss w.r.t. (f1, band) given dL/d(features)."""
    if cache.peak <= 0:
        return np.zeros(bank.n_filters), np.zeros(bank.n_filters)
    dtype = cache.filtered.dtype
    d_feats = np.asarray(d_feats, dtype=np.float64)
    d_log = d_feats / cache.peak
    d_log[cache.peak_idx] -= float((d_feats * cache.logged).sum()) / cache.peak ** 2
    d_energy = (d_log / (1.0 + cache.energy)).T  # (K, T)
    k, n = cache.filtered.shape
    nb = d_energy.shape[1] + 1
    d_blocks = np.zeros((k, nb), dtype=dtype)
    d_blocks[:, :-1] += d_energy / FRAME
    d_blocks[:, 1:] += d_energy / FRAME
    d_filtered = np.zeros((k, n), dtype=dtype)
    d_filtered[:, :nb * HOP] = np.repeat(d_blocks, HOP, axis=1)
    d_filtered *= np.sign(cache.filtered)
    # lag-l correlation of d_filtered with the padded wave is d(loss)/d(tap 2c - l)
    size = 2 * (cache.spectrum.size - 1)
    corr = sfft.irfft(np.conj(sfft.rfft(d_filtered, size, axis=1)) * cache.spectrum[None, :],
                      size, axis=1)
    d_kernel = corr[:, :bank.kernel_len][:, ::-1].astype(np.float64)
    f1e, be, j11, j21, j22 = bank.effective()
    dk_f1, dk_band = _kernel_derivs(f1e, be, bank.kernel_len, bank.fs)
    g_f1e = (d_kernel * dk_f1).sum(axis=1)
    g_be = (d_kernel * dk_band).sum(axis=1)
    return g_f1e * j11 + g_be * j21, g_be * j22


def extract_frames(waveform, bank: SincBank, provenance: str = "noisy") -> FrameFeatures:
    feats, _ = frame_features(waveform, bank)
    return FrameFeatures(feats, provenance=provenance)


# -- spiking stages -----------------------------------------------------------

def sconv1d(features, weights: LayerWeights, params: LifParams):
    """Spiking 1D convolution over frames; (T, C_in) -> binary (T, C_out)."""
    x = features.values if isinstance(features, FrameFeatures) else np.asarray(features)
    if x.ndim != 2 or x.shape[1] != weights.n_in:
        raise ShapeError(f"features shape {x.shape} does not match {weights.n_in} input channels")
    return LayerStack([Conv1d(weights)]).forward(x, params)


def attention_mask(y, sfc_weights, params: LifParams):
    """Binary mask from a chain of spiking fully connected layers."""
    stack = LayerStack([Dense(w) for w in sfc_weights])
    return stack.forward(np.asarray(y), params)


def apply_attention(y, m):
    y = np.asarray(y)
    m = np.asarray(m)
    if y.shape != m.shape:
        raise ShapeError(f"feature shape {y.shape} != mask shape {m.shape}")
    return y * m


@dataclass
class EncoderOut:
    y: np.ndarray
    m: np.ndarray
    s_hat: np.ndarray
