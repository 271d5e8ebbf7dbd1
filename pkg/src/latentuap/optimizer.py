"""Latent-space universal perturbation training.

One perturbation ``delta`` (channels x frames) is tiled along time and
added to the latent code of every training clip. The decoded audio is
pushed toward the target transcription with a CTC loss, while a cosine
term against the target latent is minimised alongside. Updates are
sign-gradient steps projected onto the l-infinity ball of radius tau.
"""
from __future__ import annotations

import datetime as _dt
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import dsp
from .audio_io import Manifest, PerturbationArtifact, digest
from .errors import ShapeError, ZeroVector
from .preparation import TargetSpec

log = logging.getLogger(__name__)

# latent length of a 3 s clip at hop 256
DEFAULT_DELTA_FRAMES = 188


@dataclass
class TrainConfig:
    tau: float = 0.5
    sigma: float = 1.0
    lam: float = 50.0
    alpha: float = 0.001
    batch_size: int = 16
    max_epoch: int = 40
    max_iter: int = 50
    decay_rate: float = 0.9
    n_targets: int = 10
    use_rir: bool = False
    seed: int = 0
    optimizer: str = "sign-pgd"
    delta_frames: int = DEFAULT_DELTA_FRAMES
    per_example_noise: bool = False
    # multiply the similarity term by zero instead of dropping it
    keep_zero_sim: bool = False

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.sigma < 0 or self.lam < 0:
            raise ValueError("sigma and lambda must be non-negative")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not 0 < self.decay_rate < 1:
            raise ValueError("decay_rate must lie in (0, 1)")
        if self.batch_size < 1 or self.max_epoch < 1 or self.max_iter < 1 or self.delta_frames < 1:
            raise ValueError("batch_size, max_epoch, max_iter and delta_frames must be >= 1")
        if self.optimizer not in ("sign-pgd", "adam-clip"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)

    def digest(self) -> str:
        return digest(asdict(self))


@dataclass
class TraceRecord:
    epoch: int
    iter: int
    l_asr: float
    l_sim: float
    l_total: float
    max_abs_delta: float


@dataclass
class TrainTrace:
    records: list[TraceRecord] = field(default_factory=list)

    def append(self, rec: TraceRecord):
        self.records.append(rec)

    def totals(self) -> np.ndarray:
        return np.array([r.l_total for r in self.records])

    def write_jsonl(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as fh:
            for r in self.records:
                fh.write(json.dumps(asdict(r)) + "\n")
        return path


# -- building blocks ----------------------------------------------------------


def tile_frames(x, target_frames: int):
    """Repeat along the last axis and truncate; works for numpy and torch."""
    n = x.shape[-1]
    reps = -(-target_frames // n)
    if isinstance(x, torch.Tensor):
        return x.repeat(*([1] * (x.dim() - 1)), reps)[..., :target_frames]
    return np.tile(x, (1,) * (x.ndim - 1) + (reps,))[..., :target_frames]


def cosine_similarity_loss(delta, z_t):
    """Cosine of the flattened arrays; raises ZeroVector for all-zero input."""
    is_torch = isinstance(delta, torch.Tensor)
    if tuple(delta.shape) != tuple(z_t.shape):
        raise ShapeError(f"shapes differ: {tuple(delta.shape)} vs {tuple(z_t.shape)}")
    if is_torch:
        a, b = delta.flatten(), torch.as_tensor(z_t, dtype=delta.dtype).flatten()
        na, nb = torch.linalg.vector_norm(a), torch.linalg.vector_norm(b)
        if na.item() == 0 or nb.item() == 0:
            raise ZeroVector("cosine similarity of an all-zero vector")
        return torch.clamp(torch.dot(a, b) / (na * nb), -1.0, 1.0)
    a, b = np.ravel(delta).astype(np.float64), np.ravel(z_t).astype(np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroVector("cosine similarity of an all-zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def pgd_step(delta, grad, alpha: float, tau: float):
    """``clip(delta - alpha * sign(grad), -tau, tau)`` elementwise."""
    if tuple(delta.shape) != tuple(grad.shape):
        raise ShapeError("delta and gradient shapes differ")
    if isinstance(delta, torch.Tensor):
        return torch.clamp(delta - alpha * torch.sign(grad), -tau, tau)
    return np.clip(delta - alpha * np.sign(grad), -tau, tau)


def rir_convolve_tensor(wave: torch.Tensor, rir, lengths=None) -> torch.Tensor:
    """Differentiable counterpart of :func:`dsp.rir_convolve` for a ``(B, L)`` batch."""
    h = torch.as_tensor(np.asarray(rir, dtype=np.float64), dtype=wave.dtype)
    n = wave.shape[-1]
    # causal full convolution truncated to the input length
    y = F.conv1d(F.pad(wave[:, None], (len(h) - 1, 0)), h.flip(0)[None, None])[:, 0, :n]
    if lengths is None:
        peak_in = wave.abs().amax(dim=-1, keepdim=True)
        peak_out = y.abs().amax(dim=-1, keepdim=True)
    else:
        mask = torch.arange(n)[None, :] < torch.as_tensor(lengths)[:, None]
        peak_in = (wave.abs() * mask).amax(dim=-1, keepdim=True)
        peak_out = (y.abs() * mask).amax(dim=-1, keepdim=True)
    scale = torch.where(peak_out > 0, peak_in / peak_out.clamp_min(1e-30), torch.ones_like(peak_out))
    return y * scale


@dataclass
class LatentBatch:
    """Encoded, zero-padded training batch."""

    z: torch.Tensor  # (B, C, Fmax)
    frames: list[int]
    lengths: list[int]
    texts: list[str] = field(default_factory=list)

    @property
    def mask(self) -> torch.Tensor:
        f = self.z.shape[-1]
        return (torch.arange(f)[None, :] < torch.tensor(self.frames)[:, None]).to(self.z.dtype)[:, None, :]


def encode_batch(bundle, clips) -> LatentBatch:
    lengths = [len(c.samples) for c in clips]
    wave = np.zeros((len(clips), max(lengths)), np.float64)
    for i, c in enumerate(clips):
        wave[i, : lengths[i]] = c.samples
    dtype = bundle_dtype(bundle)
    with torch.no_grad():
        z = bundle.encode_tensor(torch.as_tensor(wave, dtype=dtype))
    frames = [bundle.n_frames(n) for n in lengths]
    return LatentBatch(z.detach(), frames, lengths, [c.transcript for c in clips])


def bundle_dtype(bundle) -> torch.dtype:
    net = getattr(bundle.autoencoder, "net", None)
    if net is not None:
        return next(net.parameters()).dtype
    return getattr(bundle.autoencoder, "dtype", torch.float32)


def total_loss(delta: torch.Tensor, batch: LatentBatch, t: str, target_latent, noise, bundle, lam: float, rir=None, keep_zero_sim: bool = False):
    """``(L_total, L_ASR, L_Sim)`` for one batch.

    ``noise`` matches ``delta`` in shape (shared across the batch) or has
    a leading batch axis for per-example noise.
    """
    if noise is not None and tuple(noise.shape[-2:]) != tuple(delta.shape):
        raise ShapeError("noise shape must equal delta shape")
    dtype = batch.z.dtype
    d = delta.to(dtype)
    pert = d if noise is None else d + torch.as_tensor(noise, dtype=dtype)
    fmax = batch.z.shape[-1]
    tiled = tile_frames(pert, fmax)
    if tiled.dim() == 2:
        tiled = tiled[None]
    z_adv = batch.z + tiled * batch.mask
    wave = bundle.decode_tensor(z_adv)[:, : max(batch.lengths)]
    if rir is not None:
        wave = rir_convolve_tensor(wave, rir, batch.lengths)
    # keep padding silent so every clip is scored on its own extent
    keep = (torch.arange(wave.shape[-1])[None, :] < torch.tensor(batch.lengths)[:, None]).to(dtype)
    wave = wave * keep
    l_asr = bundle.asr_loss_tensor(wave, [t] * wave.shape[0], batch.lengths).mean()
    if lam == 0 and not keep_zero_sim:
        if target_latent is None:
            return l_asr, l_asr, torch.zeros((), dtype=delta.dtype)
        with torch.no_grad():
            l_sim = cosine_similarity_loss(delta, tile_frames(_as_tensor(target_latent, delta.dtype), delta.shape[-1]))
        return l_asr, l_asr, l_sim.detach()
    zt = tile_frames(_as_tensor(target_latent, delta.dtype), delta.shape[-1])
    l_sim = cosine_similarity_loss(delta, zt)
    return l_asr + lam * l_sim.to(l_asr.dtype), l_asr, l_sim


def _as_tensor(x, dtype):
    values = getattr(x, "values", x)
    return torch.as_tensor(np.asarray(values), dtype=dtype)


def loss_and_grad(delta: np.ndarray, batch: LatentBatch, t: str, target_latent, noise, bundle, lam: float, rir=None):
    """Scalar ``L_total`` and its gradient with respect to ``delta`` as numpy."""
    d = torch.tensor(np.asarray(delta, dtype=np.float64), requires_grad=True)
    lt, _, _ = total_loss(d, batch, t, target_latent, noise, bundle, lam, rir)
    lt.backward()
    return float(lt.detach()), d.grad.numpy().copy()


def initial_delta(target: TargetSpec, frames: int, tau: float) -> np.ndarray:
    """Scaled target latent tiled to the perturbation extent, projected into the tau ball."""
    z = np.asarray(target.target_latent.values, dtype=np.float64)
    return np.clip(tile_frames(z, frames), -tau, tau)


# -- training loop ------------------------------------------------------------


def _load_clips(dataset):
    if isinstance(dataset, Manifest):
        return dataset.load_all()
    return list(dataset)


def train(config: TrainConfig, dataset, target: TargetSpec, bundle, rir_bank=None, created_at: str | None = None, progress_every: int = 0):
    """Run ``max_epoch x max_iter`` projected sign-gradient iterations.

    Returns ``(PerturbationArtifact, TrainTrace)``. One batch is drawn per
    epoch and encoded once; the Gaussian noise is redrawn every iteration.
    """
    clips = _load_clips(dataset)
    if not clips:
        raise ValueError("training dataset is empty")
    if target.target_latent.channels != bundle.latent_channels:
        raise ShapeError("target latent does not match the bundle geometry")
    if config.use_rir and rir_bank is None:
        rir_bank = dsp.synthetic_rir_bank(seed=config.seed)
    torch.manual_seed(config.seed)
    rng = np.random.default_rng([config.seed, 0x0DE17A])
    delta = torch.tensor(initial_delta(target, config.delta_frames, config.tau), requires_grad=True)
    adam = torch.optim.Adam([delta], lr=config.alpha) if config.optimizer == "adam-clip" else None
    trace = TrainTrace()
    shape = tuple(delta.shape)
    for epoch in range(config.max_epoch):
        idx = rng.choice(len(clips), size=min(config.batch_size, len(clips)), replace=False)
        batch = encode_batch(bundle, [clips[i] for i in sorted(idx)])
        for it in range(config.max_iter):
            if config.per_example_noise:
                noise = rng.normal(0.0, config.sigma, size=(len(idx),) + shape) if config.sigma > 0 else None
            else:
                noise = rng.normal(0.0, config.sigma, size=shape) if config.sigma > 0 else None
            rir = rir_bank.draw(rng) if config.use_rir else None
            lt, la, ls = total_loss(delta, batch, target.target_text, target.target_latent, noise, bundle, config.lam, rir, config.keep_zero_sim)
            if delta.grad is not None:
                delta.grad = None
            lt.backward()
            with torch.no_grad():
                if adam is None:
                    delta.copy_(pgd_step(delta, delta.grad, config.alpha, config.tau))
                else:
                    adam.step()
                    delta.clamp_(-config.tau, config.tau)
            rec = TraceRecord(epoch, it, float(la.detach()), float(ls.detach()), float(lt.detach()), float(delta.detach().abs().max()))
            trace.append(rec)
            if progress_every and len(trace.records) % progress_every == 0:
                log.info("epoch %d iter %d L_total %.4f L_ASR %.4f L_Sim %.4f", epoch, it, rec.l_total, rec.l_asr, rec.l_sim)
    final = delta.detach().numpy().astype(np.float64)
    artifact = PerturbationArtifact(
        final,
        config.tau,
        target.target_text,
        bundle.encoder_id,
        config.digest(),
        created_at or _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        {"config": asdict(config), "target_scale": target.scale, "target_seed": target.style_seed},
    )
    return artifact, trace


def moving_average(values, window: int = 50) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if len(v) < window:
        return v.copy()
    c = np.cumsum(np.concatenate([[0.0], v]))
    return (c[window:] - c[:-window]) / window
