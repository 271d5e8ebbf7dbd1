"""Empirical check of the decoder robustness bound.

For a decoder with Lipschitz constant ``a`` (l-infinity to l-infinity)
and latent pairs ``z2 = z1 + d`` with ``|d|_inf <= tau`` the claimed bound is

    P[ |D(z1) - D(z2)|_inf <= r ]  >=  1 - min(1, a^2 tau / r^2).

``a`` is estimated from sampled pairs (a lower bound on the true
constant) and the probability by Monte Carlo.
"""
from __future__ import annotations

import csv
import hashlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from .errors import DegeneratePair

Decoder = Callable[[np.ndarray], np.ndarray]  # (B, C, F) -> (B, L)
Sampler = Callable[[np.random.Generator, int], np.ndarray]  # (rng, n) -> (n, C, F)


@dataclass
class LipschitzEstimate:
    a_hat: float
    n_pairs: int
    max_ratio_pair: tuple[str, str]
    tau: float = 0.0
    # running maximum after each batch, useful for monotonicity checks
    history: list[float] = field(default_factory=list)
    label: str = "sampled lower bound"


@dataclass
class BoundReport:
    tau: float
    a_hat: float
    r_grid: list[float]
    empirical_prob: list[float]
    theoretical_bound: list[float]
    margins: list[float]
    violations: list[float]
    raw_shortfalls: list[float]
    n_trials: int

    def as_dict(self) -> dict:
        return asdict(self)

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["r", "empirical", "theoretical", "margin"])
            for row in zip(self.r_grid, self.empirical_prob, self.theoretical_bound, self.margins):
                w.writerow([f"{v:.10g}" for v in row])
        return path


def theoretical_bound(a: float, tau: float, r) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    return 1.0 - np.minimum(1.0, a * a * tau / (r * r))


def _digest(z: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(z, dtype=np.float64).tobytes()).hexdigest()[:12]


def _inf_norm(x: np.ndarray) -> np.ndarray:
    return np.abs(x.reshape(len(x), -1)).max(axis=1)


def estimate_lipschitz(decoder: Decoder, latent_sampler: Sampler, n_pairs: int, tau: float = 0.5, seed: int = 0, batch: int = 250, max_resample: int = 100) -> LipschitzEstimate:
    """Largest observed ``|D(z1)-D(z2)|_inf / |z1-z2|_inf`` over ``n_pairs`` sampled pairs."""
    if n_pairs < 100:
        raise ValueError("n_pairs must be >= 100")
    rng = np.random.default_rng([seed, 0x11B5])
    best, best_pair, history = 0.0, ("", ""), []
    done = 0
    while done < n_pairs:
        m = min(batch, n_pairs - done)
        z1 = latent_sampler(rng, m)
        d = rng.uniform(-tau, tau, size=z1.shape)
        den = _inf_norm(d)
        tries = 0
        while np.any(den == 0):
            # a zero offset carries no information about the slope
            tries += 1
            if tries > max_resample:
                raise DegeneratePair("could not draw a non-degenerate latent pair")
            bad = den == 0
            d[bad] = rng.uniform(-tau, tau, size=d[bad].shape)
            den = _inf_norm(d)
        z2 = z1 + d
        num = _inf_norm(decoder(z1) - decoder(z2))
        ratios = num / den
        i = int(np.argmax(ratios))
        if ratios[i] > best:
            best = float(ratios[i])
            best_pair = (_digest(z1[i]), _digest(z2[i]))
        done += m
        history.append(best)
    return LipschitzEstimate(best, n_pairs, best_pair, tau, history)


def wilson_upper(p_hat: float, n: int, z: float = 1.959964) -> float:
    den = 1 + z * z / n
    centre = p_hat + z * z / (2 * n)
    half = z * np.sqrt(p_hat * (1 - p_hat) / n + z * z / (4 * n * n))
    return float(min(1.0, (centre + half) / den))


def verify_bound(decoder: Decoder, tau: float, a_hat: float, r_grid, n_trials: int, seed: int, latent_sampler: Sampler, safety: float = 1.0, batch: int = 250) -> BoundReport:
    """Monte-Carlo probability of staying within ``r`` against the bound, per radius.

    A radius counts as a violation only when the upper end of the 95%
    Wilson interval of the empirical probability still falls below the
    bound.
    """
    r_grid = [float(r) for r in r_grid]
    if not r_grid or any(r <= 0 for r in r_grid):
        raise ValueError("r_grid must be non-empty with positive radii")
    if n_trials < 1000:
        raise ValueError("n_trials must be >= 1000")
    rng = np.random.default_rng([seed, 0xB0D])
    dists = []
    done = 0
    while done < n_trials:
        m = min(batch, n_trials - done)
        z1 = latent_sampler(rng, m)
        d = rng.uniform(-tau, tau, size=z1.shape)
        dists.append(_inf_norm(decoder(z1) - decoder(z1 + d)))
        done += m
    dist = np.concatenate(dists)
    a = a_hat * safety
    theo = theoretical_bound(a, tau, r_grid)
    emp, margins, viol, short = [], [], [], []
    for r, b in zip(r_grid, theo):
        p = float(np.mean(dist <= r))
        up = wilson_upper(p, n_trials)
        emp.append(p)
        margins.append(up - p)
        if p < b:
            short.append(r)
            if up < b:
                viol.append(r)
    return BoundReport(tau, a_hat, r_grid, emp, [float(v) for v in theo], margins, viol, short, n_trials)


def default_r_grid(a_hat: float, tau: float) -> list[float]:
    return [c * a_hat * np.sqrt(tau) for c in (0.1, 0.5, 1.0, 2.0, 5.0)]


# -- adapters for the toy stack ----------------------------------------------


def bundle_decoder(bundle) -> Decoder:
    def decode(z: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            y = bundle.decode_tensor(torch.as_tensor(z, dtype=torch.float32))
        return y.double().numpy()

    return decode


def encoder_crop_sampler(bundle, clips, frames: int = 32) -> Sampler:
    """Random ``frames``-long windows of encoder outputs of ``clips``."""
    latents = [bundle.encode(c).values for c in clips]
    latents = [z for z in latents if z.shape[1] >= frames] or latents

    def sample(rng: np.random.Generator, n: int) -> np.ndarray:
        out = np.empty((n, latents[0].shape[0], frames))
        for i in range(n):
            z = latents[int(rng.integers(len(latents)))]
            if z.shape[1] < frames:
                z = np.pad(z, ((0, 0), (0, frames - z.shape[1])))
            s = int(rng.integers(0, z.shape[1] - frames + 1))
            out[i] = z[:, s : s + frames]
        return out

    return sample


def identity_decoder(z: np.ndarray) -> np.ndarray:
    return z.reshape(len(z), -1).copy()


def scaling_decoder(factor: float) -> Decoder:
    def decode(z: np.ndarray) -> np.ndarray:
        return factor * z.reshape(len(z), -1)

    return decode


def gaussian_sampler(channels: int, frames: int) -> Sampler:
    def sample(rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.standard_normal((n, channels, frames))

    return sample
