"""Eavesdropper-side defences: waveform filters, temporal-dependency detection, latent purification."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import dsp, metrics
from .audio_io import AudioClip
from .errors import ShapeError, TooShort, WrongKind

WAVEFORM_KINDS = ("smooth", "downsample")
KINDS = ("smooth", "downsample", "td-detect", "latent-recon")
LATENT_MODES = ("recon", "ls-ls", "ls-rn")


@dataclass
class DefenseConfig:
    kind: str
    h: int | None = None
    dr: int | None = None
    k: float | None = None
    latent_mode: str = "recon"
    latent_h: int = 1
    latent_noise_std: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown defence kind {self.kind!r}")
        if self.kind == "smooth" and (self.h is None or int(self.h) != self.h or self.h < 1):
            raise ValueError("smooth needs an integer window h >= 1")
        if self.kind == "downsample" and (self.dr is None or not 0 < self.dr < dsp.CANONICAL_RATE):
            raise ValueError("downsample needs 0 < dr < 16000")
        if self.kind == "td-detect" and (self.k is None or not 0 < self.k < 1):
            raise ValueError("td-detect needs 0 < k < 1")
        if self.kind == "latent-recon":
            if self.latent_mode not in LATENT_MODES:
                raise ValueError(f"unknown latent mode {self.latent_mode!r}")
            if self.latent_mode == "ls-ls" and (int(self.latent_h) != self.latent_h or self.latent_h < 1):
                raise ValueError("latent smoothing needs latent_h >= 1")
            if self.latent_noise_std is not None and self.latent_noise_std < 0:
                raise ValueError("latent_noise_std must be non-negative")

    @property
    def label(self) -> str:
        if self.kind == "smooth":
            return f"smooth-h{self.h}"
        if self.kind == "downsample":
            return f"downsample-{self.dr // 1000}k" if self.dr % 1000 == 0 else f"downsample-{self.dr}"
        if self.kind == "td-detect":
            return f"td-k{self.k}"
        return f"latent-{self.latent_mode}"

    @classmethod
    def from_dict(cls, d: dict) -> "DefenseConfig":
        return cls(**d)


def defend(x: AudioClip, cfg: DefenseConfig) -> AudioClip:
    """Apply a waveform defence; the output has the input's length."""
    if cfg.kind == "smooth":
        y = dsp.local_smooth(x.samples, cfg.h)
    elif cfg.kind == "downsample":
        y = dsp.downsample_defense(x.samples, cfg.dr, x.sample_rate)
    else:
        raise WrongKind(f"defend handles waveform defences only, got {cfg.kind!r}")
    return x.with_samples(y, f"-{cfg.label}")


# -- temporal dependency ------------------------------------------------------


def prefix_similarity(prefix_text: str, full_text: str) -> float:
    """Agreement of the prefix transcription with the same-length start of the full one."""
    p = metrics.normalize_text(prefix_text)
    f = metrics.normalize_text(full_text)
    if not p and not f:
        return 1.0
    if not p or not f:
        return 0.0
    head = f[: len(p)]
    return max(0.0, 1.0 - metrics.cer(p, head) / 100.0)


def td_score(x: AudioClip, k: float, asr, similarity: Callable[[str, str], float] = prefix_similarity, min_samples: int = 400) -> float:
    """Temporal-dependency consistency score in [0, 1]; low values suggest tampering.

    ``asr`` is anything with ``transcribe(clip) -> Transcription`` (or a
    plain callable returning text).
    """
    if not 0 < k < 1:
        raise ValueError("k must lie in (0, 1)")
    n = int(round(k * len(x.samples)))
    if n < min_samples:
        raise TooShort(f"{k:.2f} prefix of {len(x.samples)} samples is shorter than one recogniser frame")
    prefix = x.with_samples(x.samples[:n], f"-prefix{k}")
    return float(similarity(_text(asr, prefix), _text(asr, x)))


def _text(asr, clip) -> str:
    out = asr.transcribe(clip) if hasattr(asr, "transcribe") else asr(clip)
    return getattr(out, "text", out)


def td_evaluate(benign, adversarial, k: float, asr, similarity=prefix_similarity) -> tuple[float, list[float], list[float]]:
    """AUC of the score with benign clips as the positive class, plus raw scores."""
    if not benign or not adversarial:
        raise ValueError("both clip sets must be non-empty")
    sb = [td_score(c, k, asr, similarity) for c in benign]
    sa = [td_score(c, k, asr, similarity) for c in adversarial]
    value = metrics.auc(sb + sa, [True] * len(sb) + [False] * len(sa))
    return value, sb, sa


# -- latent purification ------------------------------------------------------


def latent_countermeasure(x_adv: AudioClip, cfg: DefenseConfig, bundle, default_noise_std: float = 1.0) -> AudioClip:
    """Re-encode the clip, optionally smooth or noise its latent, and decode."""
    if cfg.kind != "latent-recon":
        raise WrongKind(f"latent countermeasure needs kind 'latent-recon', got {cfg.kind!r}")
    z = bundle.encode(x_adv).values
    if z.shape[0] != bundle.latent_channels:
        raise ShapeError("latent geometry does not match the bundle")
    if cfg.latent_mode == "ls-ls":
        z = np.stack([dsp.local_smooth(row, cfg.latent_h) for row in z])
    elif cfg.latent_mode == "ls-rn":
        std = default_noise_std if cfg.latent_noise_std is None else cfg.latent_noise_std
        if std > 0:
            rng = np.random.default_rng([cfg.seed, len(x_adv.samples)])
            z = z + rng.normal(0.0, std, size=z.shape)
    y = bundle.decode(z).samples[: len(x_adv.samples)]
    return x_adv.with_samples(y, f"-{cfg.label}")
