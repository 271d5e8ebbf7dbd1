"""Parametric formant synthesizer used as the one-to-many toy TTS.

Every letter is rendered as a short harmonic burst shaped by two
formant resonances taken from a fixed per-letter table; spaces become
pauses. ``style_seed`` controls pitch, vocal-tract scale, tempo,
loudness and phase, so one text maps to many distinct waveforms.
"""
from __future__ import annotations

import zlib

import numpy as np

from ..errors import AlphabetError

ALPHABET = " abcdefghijklmnopqrstuvwxyz"
RATE = 16000

_F1 = (200.0, 290.0, 380.0, 470.0, 560.0, 650.0)
_F2 = (800.0, 950.0, 1100.0, 1250.0, 1400.0)
# band-limited so 32 latent channels per 256 samples can carry it
HARMONIC_CEIL_HZ = 1600.0
# letter -> (F1, F2); the grid is walked diagonally so neighbours in the
# alphabet do not share both formants
FORMANTS = {
    ch: (_F1[i % len(_F1)], _F2[(i // len(_F1) + 2 * i) % len(_F2)])
    for i, ch in enumerate(ALPHABET[1:])
}

LETTER_MS = 75.0
GAP_MS = 28.0
SPACE_MS = 85.0
EDGE_MS = 12.0


def check_text(text: str) -> str:
    bad = sorted({c for c in text if c not in ALPHABET})
    if bad:
        raise AlphabetError(f"characters outside the toy alphabet: {bad!r}")
    return text


def _style(seed: int) -> dict:
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, 0x7775])
    return {
        "f0": rng.uniform(95.0, 210.0),
        "tract": rng.uniform(0.96, 1.04),
        "tempo": rng.uniform(0.85, 1.2),
        "peak": rng.uniform(0.35, 0.75),
        "lead": rng.uniform(0.10, 0.20),
        "tail": rng.uniform(0.10, 0.20),
        "decline": rng.uniform(0.0, 0.15),
        "rng": rng,
    }


def _letter(ch: str, n: int, f0: float, tract: float, rng: np.random.Generator) -> np.ndarray:
    f1, f2 = FORMANTS[ch]
    f1 *= tract * rng.uniform(0.985, 1.015)
    f2 *= tract * rng.uniform(0.985, 1.015)
    t = np.arange(n) / RATE
    # slow vibrato, integrated to phase
    f0_track = f0 * (1.0 + 0.01 * np.sin(2 * np.pi * rng.uniform(4, 6) * t + rng.uniform(0, 2 * np.pi)))
    phase = 2 * np.pi * np.cumsum(f0_track) / RATE
    k = np.arange(1, int(HARMONIC_CEIL_HZ // f0) + 1)
    freqs = k * f0
    amp = (
        np.exp(-0.5 * ((freqs - f1) / 70.0) ** 2)
        + 0.3 * np.exp(-0.5 * ((freqs - f2) / 100.0) ** 2)
        + 0.01
    )
    offsets = rng.uniform(0, 2 * np.pi, size=len(k))
    wave = (amp[:, None] * np.sin(k[:, None] * phase[None, :] + offsets[:, None])).sum(axis=0)
    edge = min(int(EDGE_MS * RATE / 1000), n // 2)
    env = np.ones(n)
    ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(edge) / edge)
    env[:edge] = ramp
    env[n - edge :] = ramp[::-1]
    return wave * env


def synthesize(text: str, style_seed: int = 0) -> np.ndarray:
    """Render ``text`` at 16 kHz; deterministic given ``(text, style_seed)``."""
    check_text(text)
    st = _style(style_seed)
    # per-text stream so different texts under one seed are independent
    rng = np.random.default_rng([int(style_seed) & 0xFFFFFFFF, zlib.crc32(text.encode())])
    tempo = st["tempo"]
    pieces = [np.zeros(int(st["lead"] * RATE))]
    n_letters = max(sum(c != " " for c in text), 1)
    pos = 0
    for ch in text:
        if ch == " ":
            pieces.append(np.zeros(int(SPACE_MS * tempo * rng.uniform(0.9, 1.1) * RATE / 1000)))
            continue
        n = int(LETTER_MS * tempo * rng.uniform(0.9, 1.1) * RATE / 1000)
        f0 = st["f0"] * (1.0 - st["decline"] * pos / n_letters) * rng.uniform(0.97, 1.03)
        seg = _letter(ch, n, f0, st["tract"], rng)
        pieces.append(seg / max(np.max(np.abs(seg)), 1e-9) * rng.uniform(0.8, 1.0))
        pieces.append(np.zeros(int(GAP_MS * tempo * RATE / 1000)))
        pos += 1
    pieces.append(np.zeros(int(st["tail"] * RATE)))
    wave = np.concatenate(pieces)
    wave = wave / max(np.max(np.abs(wave)), 1e-9) * st["peak"]
    wave += 1e-3 * rng.standard_normal(len(wave))
    return np.clip(wave, -1.0, 1.0)


def estimated_duration(text: str) -> float:
    letters = sum(c != " " for c in text)
    spaces = len(text) - letters
    return (letters * (LETTER_MS + GAP_MS) + spaces * SPACE_MS) / 1000.0 + 0.3


class FormantTTS:
    """Callable wrapper exposing the synthesizer behind the TTS interface."""

    model_id = "formant-tts-v1"
    alphabet = ALPHABET
    rate = RATE

    def __call__(self, text: str, style_seed: int = 0) -> np.ndarray:
        return synthesize(text, style_seed)
