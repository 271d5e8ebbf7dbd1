"""Audio clip ingestion, manifests and perturbation artifact persistence."""
from __future__ import annotations

import datetime as _dt
import hashlib
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from . import dsp
from .errors import MultiChannelUnsupported, SchemaMismatch, UnreadableFile

ARTIFACT_FORMAT = "latentuap-artifact"
ARTIFACT_VERSION = 1


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int = dsp.CANONICAL_RATE
    transcript: str | None = None
    id: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError("AudioClip holds mono samples only")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples must be finite")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self):
        return len(self.samples)

    def with_samples(self, samples, suffix: str = "") -> "AudioClip":
        return AudioClip(samples, self.sample_rate, self.transcript, self.id + suffix)


def read_wav(path, downmix: bool = False) -> tuple[np.ndarray, int]:
    """Read a PCM waveform file as float64 in ``[-1, 1]``."""
    path = Path(path)
    try:
        rate, data = wavfile.read(path)
    except (OSError, ValueError, EOFError) as exc:
        raise UnreadableFile(f"{path}: {exc}") from exc
    if data.size == 0:
        raise UnreadableFile(f"{path}: no samples")
    if data.ndim == 2:
        if data.shape[1] == 1:
            data = data[:, 0]
        elif not downmix:
            raise MultiChannelUnsupported(f"{path}: {data.shape[1]} channels")
        else:
            data = data.mean(axis=1) if data.dtype.kind == "f" else data.astype(np.float64).mean(axis=1).astype(data.dtype)
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype.kind == "f":
        x = np.clip(data.astype(np.float64), -1.0, 1.0)
    else:
        raise UnreadableFile(f"{path}: unsupported sample type {data.dtype}")
    return x, int(rate)


def load_clip(path, expect_rate: int = dsp.CANONICAL_RATE, downmix: bool = False, transcript: str | None = None) -> AudioClip:
    samples, rate = read_wav(path, downmix=downmix)
    if rate != expect_rate:
        samples = dsp.resample(samples, rate, expect_rate)
    return AudioClip(samples, expect_rate, transcript, Path(path).stem)


def to_pcm16(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    return np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")


def save_clip(clip: AudioClip, path) -> Path:
    """Write 16-bit PCM; reading the file back and saving again is lossless."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(path, clip.sample_rate, to_pcm16(clip.samples))
    return path


# --------------------------------------------------------------------------
# manifests


@dataclass
class ManifestEntry:
    path: str
    transcript: str
    duration: float


@dataclass
class Manifest:
    entries: list[ManifestEntry]
    split: str = "train"
    root: Path | None = None
    min_duration: float = 0.0
    max_duration: float = float("inf")

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def resolve(self, entry: ManifestEntry) -> Path:
        p = Path(entry.path)
        if not p.is_absolute() and self.root is not None:
            p = self.root / p
        return p

    def load(self, index: int, expect_rate: int = dsp.CANONICAL_RATE) -> AudioClip:
        entry = self.entries[index]
        clip = load_clip(self.resolve(entry), expect_rate, transcript=entry.transcript)
        return clip

    def load_all(self, expect_rate: int = dsp.CANONICAL_RATE) -> list[AudioClip]:
        return [self.load(i, expect_rate) for i in range(len(self.entries))]

    def validate(self) -> None:
        for e in self.entries:
            if not self.resolve(e).exists():
                raise UnreadableFile(f"manifest entry not found: {e.path}")
            if not self.min_duration <= e.duration <= self.max_duration:
                raise ValueError(f"{e.path}: duration {e.duration} outside declared bounds")


def write_manifest(manifest: Manifest, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for e in manifest.entries:
            rec = {"path": e.path, "transcript": e.transcript, "duration": round(e.duration, 6), "split": manifest.split}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return path


def read_manifest(path, split: str | None = None) -> Manifest:
    """Read a line-delimited manifest; relative paths resolve against its directory."""
    path = Path(path)
    entries, splits = [], set()
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            if split is not None and rec.get("split", split) != split:
                continue
            splits.add(rec.get("split", "train"))
            entries.append(ManifestEntry(rec["path"], rec["transcript"], float(rec["duration"])))
    name = split or (splits.pop() if len(splits) == 1 else "mixed")
    return Manifest(entries, name, root=path.parent)


# --------------------------------------------------------------------------
# perturbation artifacts


@dataclass
class PerturbationArtifact:
    delta: np.ndarray
    tau: float
    target_text: str
    encoder_id: str
    train_config_digest: str = ""
    created_at: str = field(default_factory=lambda: _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"))
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.delta = np.asarray(self.delta)
        if self.delta.ndim != 2:
            raise ValueError("delta must be (channels, frames)")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if np.max(np.abs(self.delta)) > self.tau:
            raise ValueError(f"max |delta| = {np.max(np.abs(self.delta))} exceeds tau = {self.tau}")

    @property
    def channels(self) -> int:
        return self.delta.shape[0]

    @property
    def frames(self) -> int:
        return self.delta.shape[1]

    @property
    def artifact_id(self) -> str:
        h = hashlib.sha256(np.ascontiguousarray(self.delta).tobytes())
        h.update(f"{self.tau}|{self.target_text}|{self.encoder_id}".encode())
        return h.hexdigest()[:12]


def save_artifact(artifact: PerturbationArtifact, path) -> Path:
    """Write a zip archive holding ``meta.json`` and the raw little-endian delta."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dtype = np.dtype(artifact.delta.dtype).newbyteorder("<")
    meta = {
        "format": ARTIFACT_FORMAT,
        "version": ARTIFACT_VERSION,
        "dtype": dtype.str,
        "shape": list(artifact.delta.shape),
        "tau": artifact.tau,
        "target_text": artifact.target_text,
        "encoder_id": artifact.encoder_id,
        "train_config_digest": artifact.train_config_digest,
        "created_at": artifact.created_at,
        "extra": artifact.extra,
    }
    payload = np.ascontiguousarray(artifact.delta, dtype=dtype).tobytes(order="C")
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        zf.writestr(_zinfo("meta.json"), json.dumps(meta, indent=2, sort_keys=True))
        zf.writestr(_zinfo("delta.bin"), payload)
    return path


def _zinfo(name: str) -> zipfile.ZipInfo:
    # fixed timestamp keeps archives byte-identical across runs
    return zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))


def load_artifact(path, expect_encoder_id: str | None = None, expect_channels: int | None = None) -> PerturbationArtifact:
    path = Path(path)
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("meta.json"))
            payload = zf.read("delta.bin")
    except (OSError, KeyError, zipfile.BadZipFile) as exc:
        raise UnreadableFile(f"{path}: {exc}") from exc
    if meta.get("format") != ARTIFACT_FORMAT or meta.get("version") != ARTIFACT_VERSION:
        raise SchemaMismatch(f"{path}: unsupported format {meta.get('format')} v{meta.get('version')}")
    dtype = np.dtype(meta["dtype"])
    shape = tuple(meta["shape"])
    if len(shape) != 2 or int(np.prod(shape)) * dtype.itemsize != len(payload):
        raise SchemaMismatch(f"{path}: payload does not match declared shape {shape}")
    delta = np.frombuffer(payload, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
    if expect_encoder_id is not None and meta["encoder_id"] != expect_encoder_id:
        raise SchemaMismatch(f"{path}: artifact trained for encoder {meta['encoder_id']!r}, runtime uses {expect_encoder_id!r}")
    if expect_channels is not None and shape[0] != expect_channels:
        raise SchemaMismatch(f"{path}: {shape[0]} latent channels, expected {expect_channels}")
    try:
        return PerturbationArtifact(
            delta,
            float(meta["tau"]),
            meta["target_text"],
            meta["encoder_id"],
            meta.get("train_config_digest", ""),
            meta.get("created_at", ""),
            meta.get("extra", {}),
        )
    except ValueError as exc:
        raise SchemaMismatch(f"{path}: {exc}") from exc


def digest(obj) -> str:
    """Stable short hash of a JSON-serialisable object."""
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def write_jsonl(records, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not serialisable: {type(o)}")


def read_jsonl(path) -> list[dict]:
    with Path(path).open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


__all__ = [
    "AudioClip",
    "Manifest",
    "ManifestEntry",
    "PerturbationArtifact",
    "digest",
    "load_artifact",
    "load_clip",
    "read_jsonl",
    "read_manifest",
    "read_wav",
    "save_artifact",
    "save_clip",
    "write_jsonl",
    "write_manifest",
]
