"""Scoring protected audio against the surrogate recogniser and comparing MFCC distributions."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dsp, metrics
from .audio_io import AudioClip, PerturbationArtifact
from .runtime import apply_artifact


def protect_clips(clips, artifact: PerturbationArtifact, bundle) -> list[AudioClip]:
    return [c.with_samples(apply_artifact(c, artifact, bundle), "-protected") for c in clips]


def evaluate_clips(bundle, clips, references=None) -> list[metrics.EvalRecord]:
    """Transcribe ``clips`` and score them against their references (default: own transcripts)."""
    refs = references if references is not None else [c.transcript for c in clips]
    hyps = [bundle.transcribe(c) for c in clips]
    return metrics.make_records([c.id for c in clips], refs, hyps)


def mean_cer(records) -> float:
    return metrics.summarize(records)["cer"]


def mean_wer(records) -> float:
    return metrics.summarize(records)["wer"]


# -- MFCC distribution comparison -----------------------------------------------


def mfcc_means(clips, cfg: dsp.MfccConfig | None = None) -> np.ndarray:
    """One scalar per clip: the mean of its MFCC matrix."""
    cfg = cfg or dsp.MfccConfig()
    return np.array([float(np.mean(dsp.mfcc(c.samples, cfg))) for c in clips])


@dataclass
class DistributionReport:
    grid: np.ndarray
    curves: dict[str, np.ndarray]
    values: dict[str, np.ndarray]
    overlap: dict[str, float]  # overlap of each set with the reference set
    reference: str = "original"

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        names = list(self.curves)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["mfcc_mean"] + names)
            for i, g in enumerate(self.grid):
                w.writerow([f"{g:.8g}"] + [f"{self.curves[n][i]:.8g}" for n in names])
        return path

    def write_overlap_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["set", "overlap_with_" + self.reference, "n_clips"])
            for name, v in self.overlap.items():
                w.writerow([name, f"{v:.8g}", len(self.values[name])])
        return path


def distribution_report(sets: dict[str, np.ndarray], reference: str = "original", n_grid: int = 2001) -> DistributionReport:
    """KDE curve per set on a common grid and each set's overlap with ``reference``."""
    if reference not in sets:
        raise KeyError(f"reference set {reference!r} missing")
    bws = {k: dsp.silverman_bandwidth(v) for k, v in sets.items()}
    lo = min(float(np.min(v)) - 5 * bws[k] for k, v in sets.items())
    hi = max(float(np.max(v)) + 5 * bws[k] for k, v in sets.items())
    grid = np.linspace(lo, hi, n_grid)
    curves = {k: dsp.kde_density(v, bws[k], grid) for k, v in sets.items()}
    overlap = {k: dsp.overlap_coefficient(curves[reference], c, grid) for k, c in curves.items()}
    return DistributionReport(grid, curves, {k: np.asarray(v) for k, v in sets.items()}, overlap, reference)


def add_white_noise(clips, std: float, seed: int = 0) -> list[AudioClip]:
    out = []
    for i, c in enumerate(clips):
        rng = np.random.default_rng([seed, i])
        out.append(c.with_samples(np.clip(c.samples + std * rng.standard_normal(len(c.samples)), -1.0, 1.0), "-noise"))
    return out


def noise_at_matched_cer(bundle, clips, target_cer: float, seed: int = 0, lo: float = 1e-4, hi: float = 4.0, iters: int = 14):
    """Smallest white-noise std (bisected on a log scale) whose mean CER reaches ``target_cer``.

    Returns ``(std, noisy_clips, mean_cer)``.
    """

    def score(std):
        noisy = add_white_noise(clips, std, seed)
        return noisy, float(np.mean([metrics.cer(c.transcript, bundle.transcribe(n).text) for c, n in zip(clips, noisy)]))

    noisy_hi, cer_hi = score(hi)
    if cer_hi < target_cer:
        return hi, noisy_hi, cer_hi
    best = (hi, noisy_hi, cer_hi)
    a, b = np.log(lo), np.log(hi)
    for _ in range(iters):
        mid = 0.5 * (a + b)
        noisy, c = score(float(np.exp(mid)))
        if c >= target_cer:
            b = mid
            best = (float(np.exp(mid)), noisy, c)
        else:
            a = mid
    return best
