"""Waveform discriminators: multi-period plus multi-band multi-scale STFT.

Each sub-discriminator returns a logit map and its intermediate feature
maps; the losses module consumes both. Channel widths are configurable so
tests can run a small stack.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import torch
import torch.nn.functional as F
from torch import nn

BAND_SPLITS = ((0.0, 0.1), (0.1, 0.25), (0.25, 0.5), (0.5, 0.75), (0.75, 1.0))


@dataclass(frozen=True)
class DiscriminatorConfig:
    periods: Tuple[int, ...] = (2, 3, 5, 7, 11)
    stft_fft_sizes: Tuple[int, ...] = (2048, 1024, 512)
    period_channels: Tuple[int, ...] = (32, 128, 512, 1024)
    stft_channels: int = 32
    seed: int = 0


def tiny_discriminator_config(seed: int = 0) -> DiscriminatorConfig:
    return DiscriminatorConfig(
        periods=(2, 3),
        stft_fft_sizes=(512,),
        period_channels=(8, 16, 32),
        stft_channels=8,
        seed=seed,
    )


class PeriodDiscriminator(nn.Module):
    def __init__(self, period: int, channels: Tuple[int, ...]):
        super().__init__()
        self.period = period
        convs = []
        in_ch = 1
        for ch in channels:
            convs.append(nn.Conv2d(in_ch, ch, (5, 1), (3, 1), padding=(2, 0)))
            in_ch = ch
        convs.append(nn.Conv2d(in_ch, in_ch, (5, 1), 1, padding=(2, 0)))
        self.convs = nn.ModuleList(convs)
        self.post = nn.Conv2d(in_ch, 1, (3, 1), 1, padding=(1, 0))

    def forward(self, x):
        # x: (B, 1, T)
        b, c, t = x.shape
        if t % self.period != 0:
            pad = self.period - t % self.period
            x = F.pad(x, (0, pad), mode="reflect")
            t = t + pad
        x = x.view(b, c, t // self.period, self.period)
        fmaps = []
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.1)
            fmaps.append(x)
        logits = self.post(x)
        fmaps.append(logits)
        return logits, fmaps


class BandedStftDiscriminator(nn.Module):
    """2D convs over real/imag STFT, applied per frequency band."""

    def __init__(self, fft_size: int, channels: int):
        super().__init__()
        self.fft_size = fft_size
        self.hop = fft_size // 4
        n_bins = fft_size // 2 + 1
        self.bands = [
            (int(lo * n_bins), max(int(hi * n_bins), int(lo * n_bins) + 1))
            for lo, hi in BAND_SPLITS
        ]
        ch = channels

        def band_stack():
            return nn.ModuleList([
                nn.Conv2d(2, ch, (3, 9), padding=(1, 4)),
                nn.Conv2d(ch, ch, (3, 9), stride=(1, 2), padding=(1, 4)),
                nn.Conv2d(ch, ch, (3, 9), stride=(1, 2), padding=(1, 4)),
                nn.Conv2d(ch, ch, (3, 3), padding=(1, 1)),
            ])

        self.band_convs = nn.ModuleList(band_stack() for _ in self.bands)
        self.post = nn.Conv2d(ch, 1, (3, 3), padding=(1, 1))
        self.register_buffer("window", torch.hann_window(fft_size), persistent=False)

    def _spectrogram(self, x):
        spec = torch.stft(
            x.squeeze(1), self.fft_size, hop_length=self.hop,
            window=self.window, center=True, return_complex=True,
        )
        return torch.view_as_real(spec)  # (B, F, T, 2)

    def forward(self, x):
        spec = self._spectrogram(x).permute(0, 3, 2, 1)  # (B, 2, T, F)
        fmaps = []
        outs = []
        for (lo, hi), convs in zip(self.bands, self.band_convs):
            h = spec[..., lo:hi]
            for conv in convs:
                h = F.leaky_relu(conv(h), 0.1)
                fmaps.append(h)
            outs.append(h)
        h = torch.cat(outs, dim=-1)
        logits = self.post(h)
        fmaps.append(logits)
        return logits, fmaps


class Discriminator(nn.Module):
    """Ensemble of period and banded-STFT sub-discriminators."""

    def __init__(self, cfg: DiscriminatorConfig = DiscriminatorConfig()):
        super().__init__()
        torch.manual_seed(cfg.seed + 1)
        self.cfg = cfg
        subs = [PeriodDiscriminator(p, cfg.period_channels) for p in cfg.periods]
        subs += [
            BandedStftDiscriminator(n, cfg.stft_channels) for n in cfg.stft_fft_sizes
        ]
        self.subs = nn.ModuleList(subs)

    def forward(self, wave: torch.Tensor):
        """wave: (B, 1, T) or (T,) -> (list of logits, list of feature-map lists)."""
        if wave.dim() == 1:
            wave = wave.view(1, 1, -1)
        elif wave.dim() == 2:
            wave = wave.unsqueeze(1)
        logits, fmaps = [], []
        for sub in self.subs:
            l, f = sub(wave)
            logits.append(l)
            fmaps.append(f)
        return logits, fmaps
