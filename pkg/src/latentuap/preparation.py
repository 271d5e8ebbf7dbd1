"""Protection preparation: autoencoder screening and the target-audio scale search."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import dsp
from .audio_io import AudioClip
from .errors import NoViableCandidate
from .models.bundle import LatentCode, normalize_transcript

log = logging.getLogger(__name__)

# style seeds for target renderings live far away from corpus seeds
TARGET_SEED_BASE = 1_000_000


@dataclass
class ScreeningReport:
    model_id: str
    param_count: int
    inference_ms: float
    quality_proxy: float
    zero_shot: bool


@dataclass
class TargetSpec:
    target_text: str
    target_audio: AudioClip
    target_latent: LatentCode
    scale: float
    search_loss: float
    w_last_ok: float | None = None
    style_seed: int = 0
    candidates: list[dict] = field(default_factory=list)

    def __post_init__(self):
        if not 0 < self.scale <= 1:
            raise ValueError(f"scale must lie in (0, 1], got {self.scale}")


def log_mel(samples: np.ndarray, rate: int = dsp.CANONICAL_RATE, n_fft: int = 512, hop: int = 160, n_mels: int = 40) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    if len(x) < n_fft:
        x = np.pad(x, (0, n_fft - len(x)))
    spec = dsp.spectrogram(x, n_fft, hop)
    fb = dsp.mel_filterbank(n_mels, n_fft, rate, 0.0, rate / 2)
    return np.log(spec**2 @ fb.T + 1e-8)


def mel_distance(x: np.ndarray, y: np.ndarray, rate: int = dsp.CANONICAL_RATE) -> float:
    """Mean absolute log-mel difference over the common length."""
    n = min(len(x), len(y))
    return float(np.mean(np.abs(log_mel(x[:n], rate) - log_mel(y[:n], rate))))


def screen_autoencoder(bundle, eval_clips) -> ScreeningReport:
    """Latency, size and reconstruction quality of the bundle's autoencoder."""
    if len(eval_clips) < 5:
        raise ValueError("screening needs at least 5 clips")
    times, dists = [], []
    for clip in eval_clips:
        t0 = time.perf_counter()
        y = bundle.decode(bundle.encode(clip)).samples[: len(clip.samples)]
        times.append(1000.0 * (time.perf_counter() - t0))
        dists.append(mel_distance(clip.samples, y, clip.sample_rate))
    return ScreeningReport(
        bundle.encoder_id,
        int(bundle.param_count()),
        max(float(np.mean(times)), 1e-6),
        float(np.mean(dists)),
        bool(bundle.zero_shot),
    )


def _matches(bundle, audio: AudioClip, t: str) -> bool:
    hyp = bundle.transcribe(audio)
    return normalize_transcript(hyp.text) == normalize_transcript(t)


def search_target_audio(
    t: str,
    bundle,
    n: int = 10,
    s: float = 0.9,
    seeds=None,
    scale_rule: str = "as-written",
    strict: bool = False,
    max_decays: int = 400,
) -> TargetSpec:
    """Pick the TTS rendering of ``t`` whose scaled latent gives the lowest ASR loss.

    For every candidate the scale starts at 1 and is multiplied by ``s``
    while the decoded scaled latent still transcribes as ``t``; the loop
    therefore stops at the first scale that breaks transcription.
    ``scale_rule="last-ok"`` keeps the last scale that still transcribed
    correctly instead.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0 < s < 1:
        raise ValueError("decay rate must lie in (0, 1)")
    if scale_rule not in ("as-written", "last-ok"):
        raise ValueError(f"unknown scale rule {scale_rule!r}")
    seeds = list(seeds) if seeds is not None else [TARGET_SEED_BASE + i for i in range(n)]
    if len(seeds) != n:
        raise ValueError("need one style seed per candidate")

    candidates = []
    for i, seed in enumerate(seeds):
        audio = bundle.tts_sample(t, seed)
        z = bundle.encode(audio).values
        w, decays = 1.0, 0
        while decays < max_decays and _matches(bundle, bundle.decode(w * z), t):
            w *= s
            decays += 1
        last_ok = w / s if decays else None
        if scale_rule == "last-ok" and last_ok is not None:
            w = last_ok
        z_i = w * z
        loss = bundle.asr_loss(bundle.decode(z_i), t)
        candidates.append({"index": i, "style_seed": seed, "scale": w, "w_last_ok": last_ok, "decays": decays, "loss": loss, "_audio": audio, "_z": z_i})

    if not any(c["decays"] for c in candidates):
        diag = [{k: v for k, v in c.items() if not k.startswith("_")} for c in candidates]
        if strict:
            raise NoViableCandidate(f"no rendering of {t!r} transcribes correctly at scale 1", diagnostics=diag)
        log.warning("no rendering of %r transcribes correctly at scale 1; using unscaled candidates", t)

    best = min(candidates, key=lambda c: (c["loss"], c["index"]))
    public = [{k: v for k, v in c.items() if not k.startswith("_")} for c in candidates]
    return TargetSpec(
        t,
        best["_audio"],
        LatentCode(best["_z"], bundle.frame_hop),
        best["scale"],
        best["loss"],
        best["w_last_ok"],
        best["style_seed"],
        public,
    )


def save_target(spec: TargetSpec, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "target_text": spec.target_text,
        "scale": spec.scale,
        "search_loss": spec.search_loss,
        "w_last_ok": spec.w_last_ok,
        "style_seed": spec.style_seed,
        "frame_hop": spec.target_latent.frame_hop,
        "rate": spec.target_audio.sample_rate,
        "candidates": spec.candidates,
    }
    with path.open("wb") as fh:
        np.savez(fh, latent=spec.target_latent.values, audio=spec.target_audio.samples, meta=np.array(json.dumps(meta, sort_keys=True)))
    return path


def load_target(path) -> TargetSpec:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        audio = AudioClip(data["audio"], meta["rate"], meta["target_text"], f"target-{meta['style_seed']}")
        latent = LatentCode(data["latent"], meta["frame_hop"])
    return TargetSpec(meta["target_text"], audio, latent, meta["scale"], meta["search_loss"], meta["w_last_ok"], meta["style_seed"], meta["candidates"])


def target_report(spec: TargetSpec) -> str:
    lines = [
        f"target text: {spec.target_text}",
        f"selected style seed: {spec.style_seed}",
        f"scale: {spec.scale:.6g} (last transcribing scale: {spec.w_last_ok})",
        f"search loss: {spec.search_loss:.6g}",
        "candidates:",
    ]
    for c in spec.candidates:
        lines.append(f"  #{c['index']} seed={c['style_seed']} scale={c['scale']:.6g} decays={c['decays']} loss={c['loss']:.6g}")
    return "\n".join(lines) + "\n"


def screening_dict(report: ScreeningReport) -> dict:
    return asdict(report)
