"""Torch modules for the toy autoencoder and the toy CTC recogniser."""
from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from .. import dsp


class ConvAutoencoder(nn.Module):
    """Strided 1-D conv encoder / transposed-conv decoder.

    One latent frame covers ``frame_hop`` samples, so a clip of ``L``
    samples maps to ``ceil(L / frame_hop)`` frames and decodes to
    ``frames * frame_hop`` samples.
    """

    def __init__(self, latent_channels: int = 32, frame_hop: int = 256, hidden: int = 192):
        super().__init__()
        self.latent_channels = latent_channels
        self.frame_hop = frame_hop
        self.hidden = hidden
        k = 2 * frame_hop
        self.enc_in = nn.Conv1d(1, hidden, k, stride=frame_hop, padding=frame_hop // 2)
        self.enc_mid = nn.Conv1d(hidden, hidden, 3, padding=1)
        self.enc_out = nn.Conv1d(hidden, latent_channels, 3, padding=1)
        self.dec_in = nn.Conv1d(latent_channels, hidden, 3, padding=1)
        self.dec_mid = nn.Conv1d(hidden, hidden, 3, padding=1)
        self.dec_out = nn.ConvTranspose1d(hidden, 1, k, stride=frame_hop, padding=frame_hop // 2)
        # latents are rescaled to unit variance after training
        self.register_buffer("latent_scale", torch.ones(()))

    def n_frames(self, n_samples: int) -> int:
        return max(1, math.ceil(n_samples / self.frame_hop))

    def encode(self, wave: torch.Tensor) -> torch.Tensor:
        """``(B, L)`` waveform -> ``(B, C, ceil(L / hop))`` latent."""
        n = self.n_frames(wave.shape[-1])
        x = F.pad(wave, (0, n * self.frame_hop - wave.shape[-1])).unsqueeze(1)
        h = torch.tanh(self.enc_in(x))
        h = h + F.gelu(self.enc_mid(h))
        return self.enc_out(h)[..., :n] / self.latent_scale

    def decode(self, z: torch.Tensor, clamp: bool = True) -> torch.Tensor:
        """``(B, C, F)`` latent -> ``(B, F * hop)`` waveform in ``[-1, 1]``."""
        h = F.gelu(self.dec_in(z * self.latent_scale))
        h = h + F.gelu(self.dec_mid(h))
        y = self.dec_out(h).squeeze(1)
        return torch.clamp(y, -1.0, 1.0) if clamp else y


class LogMel(nn.Module):
    def __init__(self, n_mels: int = 40, n_fft: int = 512, win: int = 400, hop: int = 160, rate: int = dsp.CANONICAL_RATE):
        super().__init__()
        self.n_fft, self.win, self.hop = n_fft, win, hop
        fb = dsp.mel_filterbank(n_mels, n_fft, rate, 0.0, rate / 2)
        self.register_buffer("fb", torch.tensor(fb, dtype=torch.float32))
        self.register_buffer("window", torch.hann_window(win))

    def n_frames(self, n_samples: int) -> int:
        return 1 + n_samples // self.hop

    def forward(self, wave: torch.Tensor) -> torch.Tensor:
        """``(B, L)`` -> ``(B, n_mels, 1 + L // hop)``."""
        spec = torch.stft(
            wave,
            self.n_fft,
            self.hop,
            self.win,
            window=self.window.to(wave.dtype),
            center=True,
            pad_mode="constant",
            return_complex=True,
        )
        power = spec.real**2 + spec.imag**2
        mel = torch.matmul(self.fb.to(wave.dtype), power)
        return (torch.log(mel + 1e-6) + 4.0) / 4.0


class CTCRecognizer(nn.Module):
    """Log-mel front end and a small dilated conv stack with a CTC head.

    Features are mean-normalised per utterance and every conv is
    followed by batch norm; without both, CTC training sits on the
    all-blank plateau for a long time.
    """

    def __init__(self, n_classes: int, n_mels: int = 40, hidden: int = 128, dilations=(2, 4, 1)):
        super().__init__()
        self.n_classes = n_classes
        self.dilations = tuple(int(d) for d in dilations)
        self.frontend = LogMel(n_mels)
        self.convs = nn.ModuleList(
            [nn.Conv1d(n_mels, hidden, 5, padding=2)] + [nn.Conv1d(hidden, hidden, 3, padding=d, dilation=d) for d in self.dilations]
        )
        self.norms = nn.ModuleList([nn.BatchNorm1d(hidden) for _ in self.convs])
        self.head = nn.Conv1d(hidden, n_classes, 1)

    def n_frames(self, n_samples: int) -> int:
        return self.frontend.n_frames(n_samples)

    def forward(self, wave: torch.Tensor) -> torch.Tensor:
        """``(B, L)`` -> log-probabilities ``(B, T, n_classes)``."""
        h = self.frontend(wave)
        h = h - h.mean(dim=-1, keepdim=True)
        h = F.gelu(self.norms[0](self.convs[0](h)))
        for conv, norm in zip(self.convs[1:], self.norms[1:]):
            h = h + F.gelu(norm(conv(h)))
        return F.log_softmax(self.head(h), dim=1).transpose(1, 2)


def param_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
