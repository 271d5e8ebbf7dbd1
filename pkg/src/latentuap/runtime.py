"""Applying trained perturbations to audio, per clip or as a chunked stream."""
from __future__ import annotations

import struct
import time
from dataclasses import dataclass
from typing import BinaryIO, Iterable, Iterator

import numpy as np

from .audio_io import AudioClip, PerturbationArtifact, to_pcm16
from .errors import GeometryMismatch

STREAM_MAGIC = b"LUAPPCM1"
STREAM_HEADER = struct.Struct("<8sII")


def tile_perturbation(delta: np.ndarray, target_frames: int) -> np.ndarray:
    """Repeat ``delta`` along frames and cut to ``target_frames``."""
    delta = np.asarray(delta)
    if delta.ndim != 2 or delta.shape[1] < 1:
        raise ValueError("delta must be (channels, frames) with at least one frame")
    if target_frames < 1:
        raise ValueError("target_frames must be >= 1")
    reps = -(-target_frames // delta.shape[1])
    return np.tile(delta, (1, reps))[:, :target_frames]


class UapPool:
    """Artifacts sharing one latent geometry, with a seeded uniform selector."""

    def __init__(self, artifacts: list[PerturbationArtifact], selector_seed: int = 0):
        if not artifacts:
            raise ValueError("pool needs at least one artifact")
        enc = {a.encoder_id for a in artifacts}
        ch = {a.channels for a in artifacts}
        if len(enc) != 1 or len(ch) != 1:
            raise GeometryMismatch("pool artifacts disagree on encoder or channel count")
        self.artifacts = list(artifacts)
        self.selector_seed = selector_seed
        self._rng = np.random.default_rng([selector_seed, 0x5E1])

    def __len__(self):
        return len(self.artifacts)

    @property
    def encoder_id(self) -> str:
        return self.artifacts[0].encoder_id

    @property
    def channels(self) -> int:
        return self.artifacts[0].channels

    def select_index(self) -> int:
        return int(self._rng.integers(len(self.artifacts)))

    def select(self) -> PerturbationArtifact:
        return self.artifacts[self.select_index()]

    def check(self, bundle) -> None:
        if self.channels != bundle.latent_channels:
            raise GeometryMismatch(f"pool has {self.channels} channels, bundle expects {bundle.latent_channels}")
        if self.encoder_id != bundle.encoder_id:
            raise GeometryMismatch(f"pool trained for encoder {self.encoder_id!r}, bundle has {bundle.encoder_id!r}")


@dataclass
class ProtectionResult:
    protected: AudioClip
    artifact_id: str
    latency_ms: float


def apply_artifact(x: AudioClip, artifact: PerturbationArtifact, bundle) -> np.ndarray:
    """``decode(encode(x) + tile(delta))`` cut to the input length."""
    z = bundle.encode(x).values
    y = bundle.decode(z + tile_perturbation(artifact.delta, z.shape[1])).samples
    return y[: len(x.samples)]


def protect(x: AudioClip, pool: UapPool, bundle, artifact: PerturbationArtifact | None = None) -> ProtectionResult:
    pool.check(bundle)
    art = artifact if artifact is not None else pool.select()
    t0 = time.perf_counter()
    y = apply_artifact(x, art, bundle)
    latency = 1000.0 * (time.perf_counter() - t0)
    return ProtectionResult(x.with_samples(y, "-protected"), art.artifact_id, max(latency, 1e-6))


def _fade(n: int) -> np.ndarray:
    # raised-cosine ramp from the carried tail into the new chunk
    return 0.5 - 0.5 * np.cos(np.pi * (np.arange(n) + 0.5) / n)


def protect_stream(chunks: Iterable, pool: UapPool, bundle, crossfade_ms: float = 10.0, rate: int | None = None) -> Iterator[ProtectionResult]:
    """Protect a chunked stream with one artifact for the whole stream.

    Each chunk is protected on its own, exactly as :func:`protect` would.
    With ``crossfade_ms > 0`` the first samples of every chunk after the
    first are blended with the continuation of the previous chunk
    (decoded from its latent with the last frame held), which hides the
    seam without delaying output.
    """
    pool.check(bundle)
    art = pool.select()
    rate = rate or bundle.rate
    n_fade = int(round(crossfade_ms * rate / 1000.0))
    hop = bundle.frame_hop
    tail = None
    for i, chunk in enumerate(chunks):
        clip = chunk if isinstance(chunk, AudioClip) else AudioClip(np.asarray(chunk, dtype=np.float64), rate, None, f"chunk-{i}")
        t0 = time.perf_counter()
        z = bundle.encode(clip).values + tile_perturbation(art.delta, bundle.n_frames(len(clip.samples)))
        y = bundle.decode(z).samples[: len(clip.samples)].copy()
        if n_fade > 0:
            if tail is not None:
                m = min(n_fade, len(y), len(tail))
                ramp = _fade(n_fade)[:m]
                y[:m] = (1.0 - ramp) * tail[:m] + ramp * y[:m]
            extra = -(-n_fade // hop) + 1
            z_ext = np.concatenate([z, np.repeat(z[:, -1:], extra, axis=1)], axis=1)
            tail = bundle.decode(z_ext).samples[len(clip.samples) : len(clip.samples) + n_fade]
        latency = 1000.0 * (time.perf_counter() - t0)
        yield ProtectionResult(clip.with_samples(y, "-protected"), art.artifact_id, max(latency, 1e-6))


# -- raw PCM pipe framing -----------------------------------------------------


def write_stream_header(fh: BinaryIO, rate: int, chunk_samples: int) -> None:
    fh.write(STREAM_HEADER.pack(STREAM_MAGIC, rate, chunk_samples))


def read_stream_header(fh: BinaryIO) -> tuple[int, int]:
    raw = fh.read(STREAM_HEADER.size)
    if len(raw) != STREAM_HEADER.size:
        raise ValueError("stream ended before the header was complete")
    magic, rate, chunk = STREAM_HEADER.unpack(raw)
    if magic != STREAM_MAGIC:
        raise ValueError(f"bad stream magic {magic!r}")
    return rate, chunk


def read_pcm_chunks(fh: BinaryIO, chunk_samples: int) -> Iterator[np.ndarray]:
    """16-bit little-endian mono chunks as float64 in [-1, 1)."""
    size = 2 * chunk_samples
    while True:
        raw = fh.read(size)
        if not raw:
            return
        if len(raw) % 2:
            raw = raw[:-1]
        yield np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0


def write_pcm_chunk(fh: BinaryIO, samples: np.ndarray) -> None:
    fh.write(to_pcm16(samples).astype("<i2").tobytes())
    fh.flush()
