"""
WAV I/O, SNR-controlled mixing, frame labels and a synthetic noisy-speech corpus.

Only 16 kHz mono PCM-16 audio is accepted; there is no resampling.
"""

from __future__ import annotations

import io
import os
import tempfile
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoder import FRAME, HOP, n_frames
from .errors import NumericError, ShapeError, WavFormatError

FS = 16000
STANDARD_SNRS = (15.0, 10.0, 5.0, 0.0, -5.0, -10.0)
LEVEL_SNRS = {"low": (15.0, 10.0), "med": (5.0, 0.0), "medium": (5.0, 0.0), "high": (-5.0, -10.0)}
NOISE_KINDS = ("white", "pink", "tones")


@dataclass
class Waveform:
    samples: np.ndarray
    fs: int = FS

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.fs != FS:
            raise WavFormatError(f"sample rate {self.fs} Hz unsupported, need {FS}")
        if self.samples.ndim != 1:
            raise ShapeError("waveform must be mono")
        if not np.all(np.isfinite(self.samples)):
            raise NumericError("non-finite samples")

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.fs


@dataclass
class LabeledUtterance:
    noisy: Waveform
    clean: Waveform
    labels: np.ndarray
    snr_db: float
    noise_kind: str
    speech_mask: np.ndarray | None = None

    def __post_init__(self):
        if len(self.noisy) != len(self.clean):
            raise ShapeError("noisy and clean waveforms must have equal length")
        if self.labels.shape != (n_frames(len(self.noisy)),):
            raise ShapeError(f"{self.labels.shape[0]} labels for {n_frames(len(self.noisy))} frames")


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- WAV ----------------------------------------------------------------------

def read_wav(path) -> Waveform:
    try:
        with wave.open(str(path), "rb") as w:
            channels, width, rate = w.getnchannels(), w.getsampwidth(), w.getframerate()
            if w.getcomptype() != "NONE":
                raise WavFormatError(f"{path}: unsupported codec {w.getcomptype()!r}")
            if channels != 1:
                raise WavFormatError(f"{path}: channels = {channels}, need mono")
            if width != 2:
                raise WavFormatError(f"{path}: sample width = {8 * width} bits, need 16")
            if rate != FS:
                raise WavFormatError(f"{path}: sample rate = {rate} Hz, need {FS}")
            n = w.getnframes()
            raw = w.readframes(n)
    except wave.Error as e:
        msg = str(e)
        if msg.startswith("unknown format"):
            raise WavFormatError(f"{path}: unsupported codec (format tag {msg.split(':')[-1].strip()})") from e
        raise WavFormatError(f"{path}: malformed header ({msg})") from e
    except EOFError as e:
        raise WavFormatError(f"{path}: malformed header (truncated)") from e
    if len(raw) != 2 * n:
        raise WavFormatError(f"{path}: data chunk truncated ({len(raw)} of {2 * n} bytes)")
    pcm = np.frombuffer(raw, dtype="<i2")
    return Waveform(pcm.astype(np.float64) / 32768.0)


def to_pcm16(samples) -> np.ndarray:
    q = np.round(np.asarray(samples, dtype=np.float64) * 32768.0)
    return np.clip(q, -32768, 32767).astype("<i2")


def wav_bytes(wav: Waveform | np.ndarray) -> bytes:
    samples = wav.samples if isinstance(wav, Waveform) else np.asarray(wav)
    buf = io.BytesIO()
    with wave.open(buf, "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(FS)
        w.writeframes(to_pcm16(samples).tobytes())
    return buf.getvalue()


def write_wav(path, wav: Waveform | np.ndarray) -> None:
    atomic_write(path, wav_bytes(wav))


# -- mixing and labels --------------------------------------------------------

def rms(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.sqrt(np.mean(x * x)))


def snr_gain(clean, noise, snr_db: float) -> float:
    rc, rn = rms(clean), rms(noise)
    if rc == 0:
        raise ValueError("clean signal has zero energy")
    if rn == 0:
        raise ValueError("noise signal has zero energy")
    return rc / (rn * 10.0 ** (snr_db / 20.0))


def mix_at_snr(clean: Waveform, noise: Waveform, snr_db: float) -> Waveform:
    """clean + g * noise, with g chosen so the clean-to-noise RMS ratio is ``snr_db``."""
    c = clean.samples
    n = noise.samples
    if n.size < c.size:
        raise ShapeError(f"noise has {n.size} samples, clean needs {c.size}")
    n = n[:c.size]
    return Waveform(c + snr_gain(c, n, snr_db) * n)


def measured_snr(clean, noisy) -> float:
    clean = np.asarray(clean)
    return 20.0 * np.log10(rms(clean) / rms(np.asarray(noisy) - clean))


def make_labels(speech_mask, frame: int = FRAME, hop: int = HOP, n_samples: int | None = None):
    """Frame label 1 iff at least half of the frame's samples are speech."""
    mask = np.asarray(speech_mask).astype(np.int64)
    if n_samples is not None and mask.size != n_samples:
        raise ShapeError(f"mask length {mask.size} != waveform length {n_samples}")
    t = n_frames(mask.size, frame, hop)
    csum = np.concatenate([[0], np.cumsum(mask)])
    starts = np.arange(t) * hop
    speech = csum[starts + frame] - csum[starts]
    return (2 * speech >= frame).astype(np.int64)


def mask_to_regions(mask) -> list[tuple[int, int]]:
    m = np.concatenate([[0], np.asarray(mask).astype(np.int8), [0]])
    edges = np.flatnonzero(np.diff(m))
    return [(int(a), int(b)) for a, b in zip(edges[::2], edges[1::2])]


def regions_to_mask(regions, n_samples: int) -> np.ndarray:
    mask = np.zeros(n_samples, dtype=np.int64)
    for a, b in regions:
        if not 0 <= a <= b <= n_samples:
            raise ShapeError(f"speech region ({a}, {b}) outside 0..{n_samples}")
        mask[a:b] = 1
    return mask


def write_mask(path, mask) -> None:
    text = "".join(f"{a} {b}\n" for a, b in mask_to_regions(mask))
    atomic_write(path, text.encode())


def read_mask(path, n_samples: int) -> np.ndarray:
    regions = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            a, b = line.split()
            regions.append((int(a), int(b)))
    return regions_to_mask(regions, n_samples)


# -- synthetic corpus ---------------------------------------------------------

def _ramp(n: int, ramp: int) -> np.ndarray:
    env = np.ones(n)
    r = min(ramp, n // 2)
    if r > 0:
        edge = 0.5 - 0.5 * np.cos(np.pi * np.arange(r) / r)
        env[:r] = edge
        env[n - r:] = edge[::-1]
    return env


def voiced_segment(rng: np.random.Generator, n: int, fs: int = FS) -> np.ndarray:
    """Harmonic complex with a wandering pitch, formant-like tilt and syllabic AM."""
    t = np.arange(n) / fs
    f0 = rng.uniform(100.0, 250.0)
    contour = f0 * (1.0 + 0.08 * np.sin(2 * np.pi * rng.uniform(1.0, 4.0) * t + rng.uniform(0, 2 * np.pi)))
    phase = 2 * np.pi * np.cumsum(contour) / fs
    formants = [rng.uniform(300, 900), rng.uniform(900, 2300), rng.uniform(2300, 3500)]
    widths = [rng.uniform(80, 200), rng.uniform(100, 300), rng.uniform(150, 400)]
    sig = np.zeros(n)
    for k in range(1, int(4000 // f0) + 1):
        fk = k * f0
        amp = sum(np.exp(-0.5 * ((fk - f) / w) ** 2) for f, w in zip(formants, widths))
        amp = (amp + 0.05) / k ** 0.5
        sig += amp * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
    am = 0.6 + 0.4 * np.sin(2 * np.pi * rng.uniform(3.0, 6.0) * t + rng.uniform(0, 2 * np.pi))
    return sig * am * _ramp(n, int(0.02 * fs))


def make_noise(rng: np.random.Generator, kind: str, n: int, fs: int = FS) -> np.ndarray:
    if kind == "white":
        return rng.standard_normal(n)
    if kind == "pink":
        spec = np.fft.rfft(rng.standard_normal(n))
        f = np.fft.rfftfreq(n, 1.0 / fs)
        spec /= np.sqrt(np.maximum(f, 20.0))
        return np.fft.irfft(spec, n)
    if kind == "tones":
        t = np.arange(n) / fs
        out = 0.05 * rng.standard_normal(n)
        for _ in range(rng.integers(3, 7)):
            out += rng.uniform(0.3, 1.0) * np.sin(2 * np.pi * rng.uniform(150, 4000) * t
                                                  + rng.uniform(0, 2 * np.pi))
        return out
    raise ValueError(f"unknown noise kind {kind!r}")


def synth_speech(rng: np.random.Generator, n: int, fs: int = FS):
    """Alternating silence / voiced segments; returns (signal, per-sample speech mask)."""
    sig = np.zeros(n)
    mask = np.zeros(n, dtype=np.int64)
    pos = int(rng.uniform(0.2, 0.6) * fs)
    while pos < n:
        seg = min(int(rng.uniform(0.3, 0.9) * fs), n - pos)
        if seg < int(0.1 * fs):
            break
        sig[pos:pos + seg] = voiced_segment(rng, seg, fs)
        mask[pos:pos + seg] = 1
        pos += seg + int(rng.uniform(0.15, 0.6) * fs)
    return sig, mask


def synth_utterance(seed: int, index: int, snr_levels=STANDARD_SNRS) -> LabeledUtterance:
    rng = np.random.default_rng([seed, index])
    n = int(rng.uniform(2.0, 4.0) * FS)
    speech, mask = synth_speech(rng, n)
    speech *= rng.uniform(0.02, 0.08) / rms(speech)
    kind = NOISE_KINDS[rng.integers(len(NOISE_KINDS))]
    snr = float(snr_levels[rng.integers(len(snr_levels))])
    noise = Waveform(make_noise(rng, kind, n))
    clean = Waveform(speech)
    noisy = mix_at_snr(clean, noise, snr)
    peak = np.abs(noisy.samples).max()
    if peak > 0.99:
        clean = Waveform(speech * (0.99 / peak))
        noisy = mix_at_snr(clean, noise, snr)
    return LabeledUtterance(noisy, clean, make_labels(mask), snr, kind, mask)


def synth_corpus(n_utts: int, snr_levels=STANDARD_SNRS, seed: int = 0) -> list[LabeledUtterance]:
    if n_utts < 1:
        raise ValueError("n_utts must be >= 1")
    return [synth_utterance(seed, i, snr_levels) for i in range(n_utts)]


def parse_levels(spec: str) -> tuple[float, ...]:
    """'low,med,high' -> the SNR values of those levels."""
    out = []
    for name in spec.split(","):
        name = name.strip().lower()
        if name not in LEVEL_SNRS:
            raise ValueError(f"unknown noise level {name!r}")
        out.extend(LEVEL_SNRS[name])
    return tuple(out)


# -- corpus on disk -----------------------------------------------------------

MANIFEST = "manifest.tsv"


def write_corpus(root, utterances) -> Path:
    """Write WAVs, mask files and a tab-separated manifest under ``root``."""
    root = Path(root)
    lines = ["# noisy\tclean\tmask\tsnr_db\tnoise_kind"]
    for i, u in enumerate(utterances):
        name = f"utt{i:05d}"
        paths = (f"noisy/{name}.wav", f"clean/{name}.wav", f"masks/{name}.txt")
        write_wav(root / paths[0], u.noisy)
        write_wav(root / paths[1], u.clean)
        mask = u.speech_mask
        if mask is None:
            mask = np.zeros(len(u.clean), dtype=np.int64)
            for t in np.flatnonzero(u.labels):
                mask[t * HOP:t * HOP + FRAME] = 1
        write_mask(root / paths[2], mask)
        lines.append("\t".join((*paths, f"{u.snr_db:g}", u.noise_kind)))
    atomic_write(root / MANIFEST, ("\n".join(lines) + "\n").encode())
    return root / MANIFEST


def read_corpus(root) -> list[LabeledUtterance]:
    root = Path(root)
    manifest = root / MANIFEST
    if not manifest.exists():
        raise FileNotFoundError(f"no {MANIFEST} in {root}")
    out = []
    for lineno, line in enumerate(manifest.read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise ValueError(f"{manifest}:{lineno}: expected 5 tab-separated fields")
        noisy, clean = read_wav(root / parts[0]), read_wav(root / parts[1])
        mask = read_mask(root / parts[2], len(clean))
        out.append(LabeledUtterance(noisy, clean, make_labels(mask), float(parts[3]), parts[4], mask))
    return out
