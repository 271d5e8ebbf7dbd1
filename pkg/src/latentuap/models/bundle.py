"""Model bundle: encoder/decoder, surrogate recogniser and TTS behind one handle.

The bundle speaks numpy at its public surface (``encode``, ``decode``,
``transcribe``, ``asr_loss``, ``tts_sample``) and exposes the torch
graph (``decode_tensor``, ``asr_loss_tensor``) to the optimizer. External
models can be plugged in through :class:`LatentAutoencoder` and
:class:`Recognizer` as long as they honour the same geometry contract.
"""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F

from ..audio_io import AudioClip
from ..errors import AlphabetError, SchemaMismatch, ShapeError
from ..metrics import Transcription
from . import tts as tts_mod
from .networks import ConvAutoencoder, CTCRecognizer, param_count

BLANK = 0
CHECKPOINT_VERSION = 1


@dataclass
class LatentCode:
    values: np.ndarray
    frame_hop: int

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2:
            raise ShapeError("latent values must be (channels, frames)")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("latent values must be finite")

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def frames(self) -> int:
        return self.values.shape[1]


class LatentAutoencoder:
    """Interface for encoder/decoder pairs operating on ``(B, L)`` waveforms."""

    latent_channels: int
    frame_hop: int

    def encode_tensor(self, wave: torch.Tensor) -> torch.Tensor:  # (B, L) -> (B, C, F)
        raise NotImplementedError

    def decode_tensor(self, z: torch.Tensor) -> torch.Tensor:  # (B, C, F) -> (B, F * hop)
        raise NotImplementedError

    def param_count(self) -> int:
        return 0


class Recognizer:
    """Interface for CTC recognisers: waveform batch -> ``(B, T, classes)`` log-probs."""

    alphabet: str

    def log_probs(self, wave: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def n_frames(self, n_samples: int) -> int:
        raise NotImplementedError


class TorchAutoencoder(LatentAutoencoder):
    def __init__(self, net: ConvAutoencoder):
        self.net = net.eval()
        self.latent_channels = net.latent_channels
        self.frame_hop = net.frame_hop

    def encode_tensor(self, wave):
        return self.net.encode(wave.to(self._dtype))

    def decode_tensor(self, z):
        return self.net.decode(z.to(self._dtype))

    @property
    def _dtype(self):
        return next(self.net.parameters()).dtype

    def param_count(self):
        return param_count(self.net)


class TorchRecognizer(Recognizer):
    def __init__(self, net: CTCRecognizer, alphabet: str = tts_mod.ALPHABET):
        self.net = net.eval()
        self.alphabet = alphabet

    def log_probs(self, wave):
        return self.net(wave.to(next(self.net.parameters()).dtype))

    def n_frames(self, n_samples):
        return self.net.n_frames(n_samples)

    def param_count(self):
        return param_count(self.net)


def encode_text(text: str, alphabet: str = tts_mod.ALPHABET) -> list[int]:
    bad = sorted({c for c in text if c not in alphabet})
    if bad:
        raise AlphabetError(f"characters outside the recogniser alphabet: {bad!r}")
    return [alphabet.index(c) + 1 for c in text]


def greedy_decode(log_probs: np.ndarray, alphabet: str = tts_mod.ALPHABET) -> str:
    """Collapse repeats and drop blanks from the per-frame argmax path."""
    best = np.asarray(log_probs).argmax(axis=-1)
    out, prev = [], None
    for idx in best:
        if idx != prev and idx != BLANK:
            out.append(alphabet[idx - 1])
        prev = idx
    return " ".join("".join(out).split())


def normalize_transcript(text: str) -> str:
    return " ".join(text.lower().split())


@dataclass
class ModelBundle:
    """Handle on the four learned components plus their geometry header."""

    autoencoder: LatentAutoencoder
    recognizer: Recognizer
    tts: Callable[[str, int], np.ndarray] = field(default_factory=tts_mod.FormantTTS)
    encoder_id: str = "toy-conv-ae"
    decoder_id: str = "toy-conv-ae"
    asr_id: str = "toy-ctc-asr"
    tts_id: str = tts_mod.FormantTTS.model_id
    zero_shot: bool = True
    rate: int = tts_mod.RATE
    info: dict = field(default_factory=dict)

    @property
    def latent_channels(self) -> int:
        return self.autoencoder.latent_channels

    @property
    def frame_hop(self) -> int:
        return self.autoencoder.frame_hop

    @property
    def alphabet(self) -> str:
        return self.recognizer.alphabet

    def header(self) -> dict:
        return {
            "encoder_id": self.encoder_id,
            "decoder_id": self.decoder_id,
            "asr_id": self.asr_id,
            "tts_id": self.tts_id,
            "latent_channels": self.latent_channels,
            "frame_hop": self.frame_hop,
            "alphabet": self.alphabet,
            "rate": self.rate,
        }

    def param_count(self) -> int:
        return int(self.autoencoder.param_count())

    def n_frames(self, n_samples: int) -> int:
        return max(1, -(-n_samples // self.frame_hop))

    # -- numpy surface ---------------------------------------------------

    def _wave(self, x) -> torch.Tensor:
        samples = x.samples if isinstance(x, AudioClip) else np.asarray(x)
        if isinstance(x, AudioClip) and x.sample_rate != self.rate:
            raise ShapeError(f"clip at {x.sample_rate} Hz, models expect {self.rate} Hz")
        return torch.as_tensor(samples, dtype=torch.float32)[None]

    def encode(self, x) -> LatentCode:
        wave = self._wave(x)
        if wave.shape[-1] < 1:
            raise ShapeError("clip shorter than one latent frame")
        with torch.no_grad():
            z = self.autoencoder.encode_tensor(wave)[0]
        return LatentCode(z.double().numpy(), self.frame_hop)

    def decode(self, z, clip_id: str = "") -> AudioClip:
        values = z.values if isinstance(z, LatentCode) else np.asarray(z)
        if values.ndim != 2 or values.shape[0] != self.latent_channels:
            raise ShapeError(f"latent shape {values.shape} does not match {self.latent_channels} channels")
        with torch.no_grad():
            y = self.autoencoder.decode_tensor(torch.as_tensor(values, dtype=torch.float32)[None])[0]
        return AudioClip(y.double().numpy(), self.rate, None, clip_id)

    def reconstruct(self, x: AudioClip) -> AudioClip:
        y = self.decode(self.encode(x)).samples[: len(x.samples)]
        return x.with_samples(y, "-recon")

    def log_probs(self, x) -> np.ndarray:
        with torch.no_grad():
            return self.recognizer.log_probs(self._wave(x))[0].double().numpy()

    def transcribe(self, x) -> Transcription:
        wave = self._wave(x)
        if wave.shape[-1] < getattr(self.recognizer, "hop", 1) or not torch.any(wave != 0):
            return Transcription("", True)
        text = greedy_decode(self.log_probs(x), self.alphabet)
        return Transcription.from_text(text)

    def transcribe_batch(self, clips) -> list[Transcription]:
        return [self.transcribe(c) for c in clips]

    def asr_loss(self, x, text: str) -> float:
        with torch.no_grad():
            return float(self.asr_loss_tensor(self._wave(x), [text], [len(self._wave(x)[0])]))

    def tts_sample(self, text: str, style_seed: int = 0) -> AudioClip:
        tts_mod.check_text(text)
        return AudioClip(self.tts(text, style_seed), self.rate, text, f"tts-{style_seed}")

    # -- torch surface for optimisation ---------------------------------

    def encode_tensor(self, wave: torch.Tensor) -> torch.Tensor:
        return self.autoencoder.encode_tensor(wave)

    def decode_tensor(self, z: torch.Tensor) -> torch.Tensor:
        return self.autoencoder.decode_tensor(z)

    def asr_loss_tensor(self, wave: torch.Tensor, texts: list[str], lengths: list[int]) -> torch.Tensor:
        """Per-example CTC negative log-likelihood, shape ``(B,)``."""
        if not all(texts):
            raise AlphabetError("target text must be non-empty")
        targets = [torch.tensor(encode_text(t, self.alphabet)) for t in texts]
        lp = self.recognizer.log_probs(wave)
        in_lens = torch.tensor([min(self.recognizer.n_frames(n), lp.shape[1]) for n in lengths])
        tgt_lens = torch.tensor([len(t) for t in targets])
        return F.ctc_loss(
            lp.transpose(0, 1),
            torch.cat(targets),
            in_lens,
            tgt_lens,
            blank=BLANK,
            reduction="none",
            zero_infinity=False,
        )

    def to_double(self) -> "ModelBundle":
        """Float64 copy used for finite-difference checks."""
        import copy

        ae = copy.deepcopy(self.autoencoder)
        rec = copy.deepcopy(self.recognizer)
        if hasattr(ae, "net"):
            ae.net.double()
        if hasattr(rec, "net"):
            rec.net.double()
        return ModelBundle(ae, rec, self.tts, self.encoder_id, self.decoder_id, self.asr_id, self.tts_id, self.zero_shot, self.rate, dict(self.info))


# --------------------------------------------------------------------------
# persistence


def save_bundle(bundle: ModelBundle, root) -> Path:
    """Write ``bundle.json`` plus one checkpoint per network.

    Each checkpoint embeds the geometry header so it can be validated on
    its own.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    header = bundle.header()
    ae, rec = bundle.autoencoder, bundle.recognizer
    if not isinstance(ae, TorchAutoencoder) or not isinstance(rec, TorchRecognizer):
        raise TypeError("only toy torch models can be persisted")
    torch.save(
        {"version": CHECKPOINT_VERSION, "header": header, "hidden": ae.net.hidden, "state": ae.net.state_dict()},
        root / "autoencoder.pt",
    )
    torch.save(
        {"version": CHECKPOINT_VERSION, "header": header, "hidden": rec.net.convs[0].out_channels, "dilations": list(rec.net.dilations), "state": rec.net.state_dict()},
        root / "asr.pt",
    )
    meta = dict(header)
    meta.update(
        {
            "version": CHECKPOINT_VERSION,
            "zero_shot": bundle.zero_shot,
            "ae_param_count": ae.param_count(),
            "asr_param_count": rec.param_count(),
            "info": bundle.info,
        }
    )
    (root / "bundle.json").write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")
    return root


def load_bundle(root) -> ModelBundle:
    root = Path(root)
    meta = json.loads((root / "bundle.json").read_text(encoding="utf-8"))
    if meta.get("version") != CHECKPOINT_VERSION:
        raise SchemaMismatch(f"{root}: unsupported bundle version {meta.get('version')}")
    ae_ck = torch.load(root / "autoencoder.pt", weights_only=True)
    asr_ck = torch.load(root / "asr.pt", weights_only=True)
    for name, ck in (("autoencoder", ae_ck), ("asr", asr_ck)):
        h = ck["header"]
        if h["latent_channels"] != meta["latent_channels"] or h["frame_hop"] != meta["frame_hop"] or h["alphabet"] != meta["alphabet"]:
            raise SchemaMismatch(f"{root}: {name} checkpoint geometry disagrees with bundle.json")
    ae = ConvAutoencoder(meta["latent_channels"], meta["frame_hop"], ae_ck["hidden"])
    ae.load_state_dict(ae_ck["state"])
    rec = CTCRecognizer(len(meta["alphabet"]) + 1, hidden=asr_ck["hidden"], dilations=asr_ck["dilations"])
    rec.load_state_dict(asr_ck["state"])
    return ModelBundle(
        TorchAutoencoder(ae),
        TorchRecognizer(rec, meta["alphabet"]),
        tts_mod.FormantTTS(),
        meta["encoder_id"],
        meta["decoder_id"],
        meta["asr_id"],
        meta["tts_id"],
        meta.get("zero_shot", True),
        meta["rate"],
        meta.get("info", {}),
    )


def timed(fn, *args, **kwargs):
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, 1000.0 * (time.perf_counter() - t0)
