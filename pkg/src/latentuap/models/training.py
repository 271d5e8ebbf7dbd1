"""Training loops for the toy autoencoder and toy CTC recogniser."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from ..audio_io import Manifest, read_manifest
from ..errors import ConvergenceFailure
from . import corpus as corpus_mod
from . import tts as tts_mod
from .bundle import BLANK, ModelBundle, TorchAutoencoder, TorchRecognizer, encode_text, save_bundle
from .networks import ConvAutoencoder, CTCRecognizer

log = logging.getLogger(__name__)


@dataclass
class ToyTrainConfig:
    seed: int = 0
    ae_steps: int = 1500
    ae_batch: int = 32
    ae_crop: int = 8192
    ae_lr: float = 1e-3
    spectral_weight: float = 0.05
    asr_steps: int = 5000
    asr_batch: int = 16
    asr_lr: float = 1e-3
    asr_hidden: int = 128
    asr_dilations: tuple = (2, 4, 1)
    # extra phrases rendered on the side so the recogniser generalises to unseen text
    extra_phrases: int = 600
    recon_fraction: float = 0.4
    ae_gate: float = 0.3
    asr_gate: float = 0.95
    roundtrip_gate: float = 0.9
    log_every: int = 250


def relative_l2(y: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    return torch.linalg.vector_norm(y - x) / torch.linalg.vector_norm(x).clamp_min(1e-12)


def _stft_mag(x: torch.Tensor, n_fft: int) -> torch.Tensor:
    win = torch.hann_window(n_fft, dtype=x.dtype)
    spec = torch.stft(x, n_fft, n_fft // 4, window=win, return_complex=True)
    return spec.abs()


def spectral_loss(y: torch.Tensor, x: torch.Tensor, sizes=(256, 1024)) -> torch.Tensor:
    total = 0.0
    for n in sizes:
        total = total + F.l1_loss(torch.log(_stft_mag(y, n) + 1e-5), torch.log(_stft_mag(x, n) + 1e-5))
    return total / len(sizes)


def _crop_batch(waves, n, length, rng) -> torch.Tensor:
    out = np.zeros((n, length), np.float32)
    for i in range(n):
        w = waves[int(rng.integers(len(waves)))]
        start = int(rng.integers(0, len(w) - length)) if len(w) > length else 0
        seg = w[start : start + length]
        out[i, : len(seg)] = seg
    return torch.from_numpy(out)


def reconstruction_error(net: ConvAutoencoder, clips) -> float:
    """Mean per-clip relative L2 of ``decode(encode(x))`` against ``x``."""
    errs = []
    with torch.no_grad():
        for c in clips:
            x = torch.as_tensor(c.samples, dtype=torch.float32)[None]
            y = net.decode(net.encode(x))[:, : x.shape[-1]]
            errs.append(float(relative_l2(y, x)))
    return float(np.mean(errs))


def train_autoencoder(train, val, cfg: ToyTrainConfig) -> tuple[ConvAutoencoder, float]:
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng([cfg.seed, 1])
    net = ConvAutoencoder()
    opt = torch.optim.Adam(net.parameters(), cfg.ae_lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, cfg.ae_steps)
    waves = [c.samples.astype(np.float32) for c in train]
    net.train()
    for step in range(cfg.ae_steps):
        x = _crop_batch(waves, cfg.ae_batch, cfg.ae_crop, rng)
        y = net.decode(net.encode(x), clamp=False)
        loss = ((y - x) ** 2).sum() / (x**2).sum() + cfg.spectral_weight * spectral_loss(y, x)
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.step()
        if cfg.log_every and step % cfg.log_every == 0:
            log.info("ae step %d loss %.4f", step, loss.item())
    net.eval()
    # unit-variance latents so tau and sigma have a fixed meaning
    with torch.no_grad():
        zs = [net.encode(torch.as_tensor(c.samples, dtype=torch.float32)[None]) for c in train[:200]]
        net.latent_scale.fill_(float(torch.cat([z.flatten() for z in zs]).std()))
    return net, reconstruction_error(net, val)


@dataclass
class _Utterance:
    wave: np.ndarray
    text: str


def _pad(waves) -> tuple[torch.Tensor, list[int]]:
    lengths = [len(w) for w in waves]
    out = np.zeros((len(waves), max(lengths)), np.float32)
    for i, w in enumerate(waves):
        out[i, : len(w)] = w
    return torch.from_numpy(out), lengths


def _augment(wave: np.ndarray, rng) -> np.ndarray:
    w = wave * rng.uniform(0.5, 1.4)
    if rng.random() < 0.5:
        w = w + rng.uniform(0.0, 0.01) * rng.standard_normal(len(w))
    return np.clip(w, -1.0, 1.0).astype(np.float32)


def _reconstruct(net: ConvAutoencoder, wave: np.ndarray) -> np.ndarray:
    with torch.no_grad():
        x = torch.as_tensor(wave, dtype=torch.float32)[None]
        return net.decode(net.encode(x))[0, : len(wave)].numpy()


def train_recognizer(pool: list[_Utterance], ae: ConvAutoencoder, cfg: ToyTrainConfig) -> CTCRecognizer:
    torch.manual_seed(cfg.seed + 7)
    rng = np.random.default_rng([cfg.seed, 2])
    recon = [_reconstruct(ae, u.wave) for u in pool]
    net = CTCRecognizer(len(tts_mod.ALPHABET) + 1, hidden=cfg.asr_hidden, dilations=cfg.asr_dilations)
    opt = torch.optim.Adam(net.parameters(), cfg.asr_lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, cfg.asr_steps)
    net.train()
    for step in range(cfg.asr_steps):
        idx = rng.integers(len(pool), size=cfg.asr_batch)
        waves, texts = [], []
        for i in idx:
            src = recon[i] if rng.random() < cfg.recon_fraction else pool[i].wave
            waves.append(_augment(src, rng))
            texts.append(pool[i].text)
        x, lengths = _pad(waves)
        lp = net(x)
        targets = [torch.tensor(encode_text(t)) for t in texts]
        loss = F.ctc_loss(
            lp.transpose(0, 1),
            torch.cat(targets),
            torch.tensor([net.n_frames(n) for n in lengths]),
            torch.tensor([len(t) for t in targets]),
            blank=BLANK,
            zero_infinity=True,
        )
        opt.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(net.parameters(), 5.0)
        opt.step()
        sched.step()
        if cfg.log_every and step % cfg.log_every == 0:
            log.info("asr step %d ctc %.4f", step, loss.item())
    return net.eval()


def exact_match_rate(bundle: ModelBundle, clips) -> float:
    hits = [bundle.transcribe(c).text == c.transcript for c in clips]
    return float(np.mean(hits))


def roundtrip_rate(bundle: ModelBundle, texts, seeds) -> float:
    hits = [bundle.transcribe(bundle.tts_sample(t, s)).text == t for t in texts for s in seeds]
    return float(np.mean(hits))


def train_toy_models(corpus: Manifest, seed: int = 0, cfg: ToyTrainConfig | None = None, out_dir=None, check_gates: bool = True) -> ModelBundle:
    """Train the toy autoencoder and recogniser on ``corpus`` and check the quality gates.

    ``corpus`` is the train manifest; a sibling ``test.jsonl`` is used for
    autoencoder validation when present, otherwise a held-out tail of
    the train split.
    """
    cfg = cfg or ToyTrainConfig(seed=seed)
    cfg.seed = seed
    torch.set_num_threads(1)
    train = corpus.load_all()
    missing = set(tts_mod.ALPHABET[1:]) - set("".join(c.transcript for c in train))
    if missing:
        raise ConvergenceFailure(f"corpus does not cover the alphabet: {sorted(missing)}")
    val_path = Path(corpus.root) / "test.jsonl" if corpus.root else None
    if val_path is not None and val_path.exists():
        val = read_manifest(val_path).load_all()[:100]
    else:
        train, val = train[:-50], train[-50:]

    ae, val_err = train_autoencoder(train, val, cfg)
    log.info("autoencoder validation relative L2 %.4f", val_err)

    rng = np.random.default_rng([seed, 3])
    known = {c.transcript for c in train} | {c.transcript for c in val} | set(corpus_mod.TARGET_TEXTS)
    extra = corpus_mod.phrase_list(cfg.extra_phrases, seed + 101, exclude=known)
    pool = [_Utterance(c.samples.astype(np.float32), c.transcript) for c in train]
    for i, text in enumerate(extra):
        pool.append(_Utterance(tts_mod.synthesize(text, int(rng.integers(1 << 30))).astype(np.float32), text))
    rec = train_recognizer(pool, ae, cfg)

    bundle = ModelBundle(TorchAutoencoder(ae), TorchRecognizer(rec))
    train_acc = exact_match_rate(bundle, train)
    # round trip uses seeds disjoint from every corpus seed
    rt = roundtrip_rate(bundle, corpus_mod.TARGET_TEXTS, range(900_000, 900_005))
    bundle.info = {
        "seed": seed,
        "config": asdict(cfg),
        "ae_val_rel_l2": val_err,
        "asr_train_exact": train_acc,
        "tts_roundtrip": rt,
    }
    log.info("asr train exact match %.3f, tts round trip %.3f", train_acc, rt)
    if out_dir is not None:
        save_bundle(bundle, out_dir)
    if check_gates:
        failed = []
        if val_err > cfg.ae_gate:
            failed.append(f"autoencoder relative L2 {val_err:.3f} > {cfg.ae_gate}")
        if train_acc < cfg.asr_gate:
            failed.append(f"ASR exact match {train_acc:.3f} < {cfg.asr_gate}")
        if rt < cfg.roundtrip_gate:
            failed.append(f"TTS round trip {rt:.3f} < {cfg.roundtrip_gate}")
        if failed:
            raise ConvergenceFailure("; ".join(failed))
    return bundle
