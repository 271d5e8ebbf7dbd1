"""Signal-processing primitives: smoothing, resampling, RIR convolution, MFCC, KDE."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import fft as sfft
from scipy import signal as ssignal

from .errors import (
    EmptyInput,
    EmptyValues,
    InvalidBandwidth,
    InvalidRate,
    InvalidWindow,
    TooShort,
)

CANONICAL_RATE = 16000


def _as_1d(signal) -> np.ndarray:
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a 1-D signal, got shape {x.shape}")
    return x


def local_smooth(signal, h: int) -> np.ndarray:
    """Replace each sample by the mean of its ``2h + 1`` neighbourhood.

    Windows are truncated at the edges, so the first sample averages
    ``signal[0 .. h]`` only.
    """
    if int(h) != h or h < 1:
        raise InvalidWindow(f"half-width must be an integer >= 1, got {h}")
    x = _as_1d(signal)
    n = len(x)
    if n == 0:
        raise EmptyInput("cannot smooth an empty signal")
    h = int(h)
    csum = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(n)
    lo = np.maximum(idx - h, 0)
    hi = np.minimum(idx + h, n - 1) + 1
    return (csum[hi] - csum[lo]) / (hi - lo)


def resample(signal, from_rate: int, to_rate: int) -> np.ndarray:
    """Band-limited polyphase resampling; output length is ``round(n * to/from)``."""
    if from_rate <= 0 or to_rate <= 0:
        raise InvalidRate(f"rates must be positive, got {from_rate} -> {to_rate}")
    x = _as_1d(signal)
    if from_rate == to_rate or len(x) == 0:
        return x.copy()
    ratio = Fraction(int(to_rate), int(from_rate))
    y = ssignal.resample_poly(x, ratio.numerator, ratio.denominator)
    n_out = int(round(len(x) * to_rate / from_rate))
    return _fit_length(y, n_out)


def _fit_length(y: np.ndarray, n: int) -> np.ndarray:
    if len(y) >= n:
        return y[:n]
    return np.pad(y, (0, n - len(y)))


def downsample_defense(signal, dr: int, rate: int = CANONICAL_RATE) -> np.ndarray:
    """Low-pass + decimate to ``dr`` Hz, then upsample back to ``rate``."""
    if not 0 < dr < rate:
        raise InvalidRate(f"downsampling rate must lie in (0, {rate}), got {dr}")
    x = _as_1d(signal)
    down = resample(x, rate, dr)
    up = resample(down, dr, rate)
    return _fit_length(up, len(x))


def rir_convolve(signal, rir) -> np.ndarray:
    """Convolve with an impulse response, truncate to the input length and
    restore the input's peak amplitude."""
    x = _as_1d(signal)
    r = _as_1d(rir)
    if len(x) == 0 or len(r) == 0:
        raise EmptyInput("signal and impulse response must be non-empty")
    y = ssignal.convolve(x, r, mode="full")[: len(x)]
    peak_in = np.max(np.abs(x))
    peak_out = np.max(np.abs(y))
    if peak_out == 0.0:
        return y
    return y * (peak_in / peak_out)


# --------------------------------------------------------------------------
# spectral features


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, rate: int, fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular HTK-style filterbank, shape ``(n_mels, n_fft // 2 + 1)``."""
    fmax = rate / 2 if fmax is None else fmax
    freqs = np.linspace(0.0, rate / 2, n_fft // 2 + 1)
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    fb = np.zeros((n_mels, len(freqs)))
    for m in range(n_mels):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        up = (freqs - lo) / (mid - lo)
        down = (hi - freqs) / (hi - mid)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    return fb


def frame_count(n_samples: int, frame_length: int, hop: int) -> int:
    return 1 + (n_samples - frame_length) // hop


def _frames(x: np.ndarray, frame_length: int, hop: int) -> np.ndarray:
    if len(x) < frame_length:
        raise TooShort(f"signal of {len(x)} samples is shorter than one frame ({frame_length})")
    n = frame_count(len(x), frame_length, hop)
    idx = np.arange(frame_length)[None, :] + hop * np.arange(n)[:, None]
    return x[idx]


def spectrogram(signal, frame_length: int, hop: int, window: str = "hann") -> np.ndarray:
    """Short-time magnitude spectrum, shape ``(frames, frame_length // 2 + 1)``."""
    x = _as_1d(signal)
    frames = _frames(x, frame_length, hop)
    win = ssignal.get_window(window, frame_length, fftbins=True)
    return np.abs(np.fft.rfft(frames * win, axis=1))


@dataclass(frozen=True)
class MfccConfig:
    n_coeffs: int = 13
    frame_length: int = 400
    hop: int = 160
    n_mels: int = 40
    fmin: float = 0.0
    fmax: float = 8000.0
    rate: int = CANONICAL_RATE
    log_floor: float = 1e-10

    def __post_init__(self):
        if not 0 < self.n_coeffs <= self.n_mels:
            raise ValueError("need 0 < n_coeffs <= n_mels")
        if self.hop > self.frame_length or self.hop < 1:
            raise ValueError("need 1 <= hop <= frame_length")


def mfcc(signal, config: MfccConfig = MfccConfig()) -> np.ndarray:
    """Mel-frequency cepstral coefficients, shape ``(frames, n_coeffs)``."""
    x = _as_1d(signal)
    frames = _frames(x, config.frame_length, config.hop)
    n_fft = 1 << (config.frame_length - 1).bit_length()
    win = ssignal.get_window("hann", config.frame_length, fftbins=True)
    power = np.abs(np.fft.rfft(frames * win, n=n_fft, axis=1)) ** 2
    fb = mel_filterbank(config.n_mels, n_fft, config.rate, config.fmin, config.fmax)
    log_mel = np.log(np.maximum(power @ fb.T, config.log_floor))
    return sfft.dct(log_mel, type=2, axis=1, norm="ortho")[:, : config.n_coeffs]


# --------------------------------------------------------------------------
# density estimation


def silverman_bandwidth(values) -> float:
    v = np.asarray(values, dtype=np.float64)
    if len(v) == 0:
        raise EmptyValues("no values")
    std = np.std(v, ddof=1) if len(v) > 1 else 0.0
    iqr = np.subtract(*np.percentile(v, [75, 25])) / 1.34
    spread = min(std, iqr) if iqr > 0 else std
    if spread <= 0:
        spread = max(abs(float(v.mean())), 1.0) * 1e-3
    return 0.9 * spread * len(v) ** (-0.2)


def kde_density(values, bandwidth: float | None, grid) -> np.ndarray:
    """Gaussian kernel density estimate evaluated on ``grid``.

    ``bandwidth=None`` selects Silverman's rule.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    if len(v) == 0:
        raise EmptyValues("kde needs at least one value")
    if bandwidth is None:
        bandwidth = silverman_bandwidth(v)
    if not bandwidth > 0:
        raise InvalidBandwidth(f"bandwidth must be positive, got {bandwidth}")
    g = np.asarray(grid, dtype=np.float64)
    out = np.zeros(g.shape)
    # chunked so memory stays bounded for large samples
    for start in range(0, len(v), 4096):
        u = (g[..., None] - v[start : start + 4096]) / bandwidth
        out += np.exp(-0.5 * u * u).sum(axis=-1)
    return out / (len(v) * bandwidth * math.sqrt(2.0 * math.pi))


def overlap_coefficient(p, q, grid) -> float:
    """Integral of ``min(p, q)`` over ``grid`` (trapezoidal)."""
    return float(np.trapezoid(np.minimum(p, q), grid))


# --------------------------------------------------------------------------
# impulse responses


@dataclass
class RIRBank:
    responses: list[np.ndarray]
    source_tags: list[str] = field(default_factory=list)
    rate: int = CANONICAL_RATE

    def __post_init__(self):
        if not self.responses:
            raise EmptyInput("an RIR bank needs at least one response")
        self.responses = [_as_1d(r) for r in self.responses]
        for r in self.responses:
            if len(r) == 0 or not np.all(np.isfinite(r)):
                raise ValueError("impulse responses must be non-empty and finite")
        if not self.source_tags:
            self.source_tags = ["unknown"] * len(self.responses)
        if len(self.source_tags) != len(self.responses):
            raise ValueError("one source tag per response")

    def __len__(self):
        return len(self.responses)

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        return self.responses[int(rng.integers(len(self.responses)))]


def synthetic_rir_bank(n: int = 16, seed: int = 0, rate: int = CANONICAL_RATE) -> RIRBank:
    """Exponentially decaying noise tails with a unit direct path.

    RT60 values are spread over 0.1-0.6 s.
    """
    rng = np.random.default_rng(seed)
    responses, tags = [], []
    for i, rt60 in enumerate(np.linspace(0.1, 0.6, n)):
        length = int(rt60 * rate)
        t = np.arange(length) / rate
        tail = rng.standard_normal(length) * np.exp(-6.9078 * t / rt60)
        # direct path dominates, early reflections follow a short pre-delay
        predelay = int(rng.integers(rate // 500, rate // 100))
        tail[:predelay] = 0.0
        tail *= 0.3 / max(np.max(np.abs(tail)), 1e-12)
        tail[0] = 1.0
        responses.append(tail)
        tags.append(f"synthetic-rt60-{rt60:.2f}-{i}")
    return RIRBank(responses, tags, rate)


def load_rir_directory(path, rate: int = CANONICAL_RATE) -> RIRBank:
    """Load a directory holding ``index.jsonl`` (``{"file": ..., "tag": ...}``
    per line) and one waveform file per response."""
    from .audio_io import read_wav

    root = Path(path)
    index = root / "index.jsonl"
    responses, tags = [], []
    with index.open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            samples, sr = read_wav(root / rec["file"], downmix=True)
            responses.append(resample(samples, sr, rate))
            tags.append(rec.get("tag", rec["file"]))
    return RIRBank(responses, tags, rate)


def rms(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.sqrt(np.mean(x * x))) if x.size else 0.0


def relative_l2(estimate, reference) -> float:
    ref = np.asarray(reference, dtype=np.float64)
    est = np.asarray(estimate, dtype=np.float64)
    return float(np.linalg.norm(est - ref) / max(np.linalg.norm(ref), 1e-12))


__all__ = [
    "CANONICAL_RATE",
    "MfccConfig",
    "RIRBank",
    "downsample_defense",
    "frame_count",
    "kde_density",
    "load_rir_directory",
    "local_smooth",
    "mel_filterbank",
    "mfcc",
    "overlap_coefficient",
    "relative_l2",
    "resample",
    "rir_convolve",
    "silverman_bandwidth",
    "spectrogram",
    "synthetic_rir_bank",
]
