"""CVAE generator networks.

The posterior encoder reads a 5 ms-hop linear spectrogram; the prior side
fuses linguistic, energy and style branches; an invertible flow maps the
posterior latent toward the prior. The style vector conditions only the
prior fusion and the flow: the posterior encoder and decoder take no style
input anywhere in their graphs, which is the architectural point of this
model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Tuple

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError

N_LINEAR_BINS = 442
LOG_SIGMA_CLAMP = 9.0


@dataclass(frozen=True)
class ModelConfig:
    hidden_dim: int = 192
    style_dim: int = 128
    d_ling: int = 192
    latent_dim: int = 192
    ssl_dim: int = 1024
    n_linear_bins: int = N_LINEAR_BINS
    n_mels_ref: int = 128
    upsample_rates: Tuple[int, ...] = (11, 5, 2, 2)
    decoder_initial_channels: int = 1024
    resblock_kernel_sizes: Tuple[int, ...] = (3, 7, 11)
    resblock_dilations: Tuple[Tuple[int, ...], ...] = ((1, 3, 5), (1, 3, 5), (1, 3, 5))
    flow_layers: int = 4
    flow_hidden: int = 192
    flow_mean_only: bool = False
    posterior_layers: int = 16
    seed: int = 0

    def __post_init__(self):
        if math.prod(self.upsample_rates) != 220:
            raise ConfigError(
                f"upsample rates {self.upsample_rates} must multiply to 220"
            )
        if self.latent_dim != self.hidden_dim:
            raise ConfigError("latent_dim must equal hidden_dim")
        if self.latent_dim % 2 != 0:
            raise ConfigError("latent_dim must be even (flow channel split)")
        if len(self.resblock_kernel_sizes) != len(self.resblock_dilations):
            raise ConfigError("resblock kernel/dilation lists must align")

    @property
    def hop_samples(self) -> int:
        return math.prod(self.upsample_rates)


def tiny_model_config(seed: int = 0) -> ModelConfig:
    """Small CPU-friendly configuration for tests and the overfit smoke."""
    return ModelConfig(
        hidden_dim=64,
        style_dim=64,
        d_ling=64,
        latent_dim=64,
        n_mels_ref=80,
        decoder_initial_channels=128,
        resblock_kernel_sizes=(3, 7),
        resblock_dilations=((1, 3), (1, 3)),
        flow_layers=2,
        flow_hidden=64,
        posterior_layers=4,
        seed=seed,
    )


class GaussianFrames(NamedTuple):
    mu: torch.Tensor  # (B, C, T)
    sigma: torch.Tensor  # (B, C, T)


def _sigma_from_logs(logs: torch.Tensor) -> torch.Tensor:
    return torch.exp(logs.clamp(-LOG_SIGMA_CLAMP, LOG_SIGMA_CLAMP))


class WaveNetStack(nn.Module):
    """Non-causal gated dilated conv stack with optional global conditioning."""

    def __init__(self, channels, layers, kernel_size=5, dilation_base=2,
                 dilation_cycle=4, cond_dim=0):
        super().__init__()
        self.layers = layers
        self.channels = channels
        self.in_convs = nn.ModuleList()
        self.res_skip = nn.ModuleList()
        for i in range(layers):
            dilation = dilation_base ** (i % dilation_cycle)
            pad = (kernel_size - 1) * dilation // 2
            self.in_convs.append(
                nn.Conv1d(channels, 2 * channels, kernel_size,
                          dilation=dilation, padding=pad)
            )
            out_ch = 2 * channels if i < layers - 1 else channels
            self.res_skip.append(nn.Conv1d(channels, out_ch, 1))
        self.cond = (
            nn.Conv1d(cond_dim, 2 * channels * layers, 1) if cond_dim > 0 else None
        )

    def forward(self, x, g=None):
        # x: (B, C, T); g: (B, cond_dim, 1) or None
        output = torch.zeros_like(x)
        g_all = self.cond(g) if (self.cond is not None and g is not None) else None
        for i in range(self.layers):
            h = self.in_convs[i](x)
            if g_all is not None:
                off = 2 * self.channels * i
                h = h + g_all[:, off : off + 2 * self.channels]
            a, b = h.chunk(2, dim=1)
            acts = torch.tanh(a) * torch.sigmoid(b)
            rs = self.res_skip[i](acts)
            if i < self.layers - 1:
                x = x + rs[:, : self.channels]
                output = output + rs[:, self.channels :]
            else:
                output = output + rs
        return output


class PosteriorEncoder(nn.Module):
    """q(z | x_linear): dilated residual conv stack over spectrogram frames."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.n_bins = cfg.n_linear_bins
        self.pre = nn.Conv1d(cfg.n_linear_bins, cfg.hidden_dim, 1)
        self.stack = WaveNetStack(cfg.hidden_dim, cfg.posterior_layers)
        self.proj = nn.Conv1d(cfg.hidden_dim, 2 * cfg.latent_dim, 1)

    def forward(self, x_linear: torch.Tensor) -> GaussianFrames:
        if x_linear.shape[1] != self.n_bins:
            raise ValueError(
                f"expected {self.n_bins} linear bins, got {x_linear.shape[1]}"
            )
        h = self.pre(x_linear)
        h = self.stack(h)
        mu, logs = self.proj(h).chunk(2, dim=1)
        return GaussianFrames(mu, _sigma_from_logs(logs))


class ReferenceEncoder(nn.Module):
    """Mel-style encoder: spectral MLP, temporal convs, self-attention,
    then temporal mean pooling to one style vector per utterance.

    Temporal convs use replicate padding so a time-constant mel maps to the
    same style vector regardless of its length.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.style_dim
        self.spectral = nn.Sequential(
            nn.Linear(cfg.n_mels_ref, d), nn.GELU(), nn.Linear(d, d), nn.GELU()
        )
        self.conv1 = nn.Conv1d(d, d, 5, padding=2, padding_mode="replicate")
        self.conv2 = nn.Conv1d(d, d, 5, padding=2, padding_mode="replicate")
        self.attn = nn.MultiheadAttention(d, num_heads=2, batch_first=True)
        self.out = nn.Linear(d, d)

    def forward(self, x_mel: torch.Tensor) -> torch.Tensor:
        # x_mel: (B, n_mels, T) -> (B, style_dim)
        if x_mel.shape[2] < 1:
            raise ValueError("empty mel spectrogram")
        h = self.spectral(x_mel.transpose(1, 2))  # (B, T, d)
        c = h.transpose(1, 2)
        c = c + F.gelu(self.conv2(F.gelu(self.conv1(c))))
        h = c.transpose(1, 2)
        attn_out, _ = self.attn(h, h, h, need_weights=False)
        h = h + attn_out
        return self.out(h).mean(dim=1)


class EnergyEncoder(nn.Module):
    """Per-frame embedding of the normalized energy contour (1D CNN)."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.hidden_dim
        self.net = nn.Sequential(
            nn.Conv1d(1, d, 5, padding=2),
            nn.LeakyReLU(0.1),
            nn.Conv1d(d, d, 5, padding=2),
            nn.LeakyReLU(0.1),
            nn.Conv1d(d, d, 1),
        )

    def forward(self, energy: torch.Tensor) -> torch.Tensor:
        # energy: (B, T) or (B, 1, T) -> (B, hidden, T)
        if energy.dim() == 2:
            energy = energy.unsqueeze(1)
        return self.net(energy)


class FeatureFusion(nn.Module):
    """Single conv layer estimating prior (mu, sigma) from the concatenated
    linguistic, energy and broadcast style channels."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        in_ch = cfg.d_ling + cfg.hidden_dim + cfg.style_dim
        self.conv = nn.Conv1d(in_ch, 2 * cfg.latent_dim, 5, padding=2)

    def forward(self, ling, energy, style) -> GaussianFrames:
        if ling.shape[2] != energy.shape[2]:
            raise ValueError(
                f"linguistic T={ling.shape[2]} != energy T={energy.shape[2]}"
            )
        s = style.unsqueeze(2).expand(-1, -1, ling.shape[2])
        mu, logs = self.conv(torch.cat([ling, energy, s], dim=1)).chunk(2, dim=1)
        return GaussianFrames(mu, _sigma_from_logs(logs))


class ResidualCouplingLayer(nn.Module):
    """Affine coupling over a channel-half split, style-conditioned context.

    Initialized to the identity (zero shift, unit scale).
    """

    def __init__(self, channels, hidden, cond_dim, mean_only=False):
        super().__init__()
        self.half = channels // 2
        self.mean_only = mean_only
        self.pre = nn.Conv1d(self.half, hidden, 1)
        self.stack = WaveNetStack(hidden, layers=4, cond_dim=cond_dim)
        out_ch = self.half if mean_only else 2 * self.half
        self.post = nn.Conv1d(hidden, out_ch, 1)
        nn.init.zeros_(self.post.weight)
        nn.init.zeros_(self.post.bias)

    def _params(self, z0, g):
        h = self.stack(self.pre(z0), g)
        out = self.post(h)
        if self.mean_only:
            return out, torch.zeros_like(out)
        m, logs = out.chunk(2, dim=1)
        return m, logs.clamp(-LOG_SIGMA_CLAMP, LOG_SIGMA_CLAMP)

    def forward(self, z, g):
        z0, z1 = z[:, : self.half], z[:, self.half :]
        m, logs = self._params(z0, g)
        z1 = z1 * torch.exp(logs) + m
        logdet = logs.sum(dim=(1, 2))
        return torch.cat([z0, z1], dim=1), logdet

    def inverse(self, z, g):
        z0, z1 = z[:, : self.half], z[:, self.half :]
        m, logs = self._params(z0, g)
        z1 = (z1 - m) * torch.exp(-logs)
        return torch.cat([z0, z1], dim=1)


class Flow(nn.Module):
    """Stack of coupling layers with channel flips in between."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.couplings = nn.ModuleList(
            ResidualCouplingLayer(
                cfg.latent_dim, cfg.flow_hidden, cfg.style_dim,
                mean_only=cfg.flow_mean_only,
            )
            for _ in range(cfg.flow_layers)
        )

    def forward(self, z, style):
        g = style.unsqueeze(2)
        total = torch.zeros(z.shape[0], device=z.device, dtype=z.dtype)
        for layer in self.couplings:
            z, logdet = layer(z, g)
            z = z.flip(1)
            total = total + logdet
        return z, total

    def inverse(self, z, style):
        g = style.unsqueeze(2)
        for layer in reversed(self.couplings):
            z = z.flip(1)
            z = layer.inverse(z, g)
        return z


class ResBlock(nn.Module):
    def __init__(self, channels, kernel_size, dilations):
        super().__init__()
        self.convs1 = nn.ModuleList(
            nn.Conv1d(channels, channels, kernel_size, dilation=d,
                      padding=(kernel_size - 1) * d // 2)
            for d in dilations
        )
        self.convs2 = nn.ModuleList(
            nn.Conv1d(channels, channels, kernel_size,
                      padding=(kernel_size - 1) // 2)
            for _ in dilations
        )

    def forward(self, x):
        for c1, c2 in zip(self.convs1, self.convs2):
            h = c2(F.leaky_relu(c1(F.leaky_relu(x, 0.1)), 0.1))
            x = x + h
        return x


class Decoder(nn.Module):
    """Transposed-conv waveform generator; no style input by design.

    Output length is exactly T * prod(upsample_rates) samples.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        ch = cfg.decoder_initial_channels
        self.pre = nn.Conv1d(cfg.latent_dim, ch, 7, padding=3)
        self.ups = nn.ModuleList()
        self.blocks = nn.ModuleList()
        self.n_kernels = len(cfg.resblock_kernel_sizes)
        for i, r in enumerate(cfg.upsample_rates):
            in_ch, out_ch = ch // (2**i), ch // (2 ** (i + 1))
            self.ups.append(
                nn.ConvTranspose1d(
                    in_ch, out_ch, 2 * r, stride=r,
                    padding=r // 2 + r % 2, output_padding=r % 2,
                )
            )
            for k, d in zip(cfg.resblock_kernel_sizes, cfg.resblock_dilations):
                self.blocks.append(ResBlock(out_ch, k, d))
        self.post = nn.Conv1d(ch // (2 ** len(cfg.upsample_rates)), 1, 7, padding=3)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        # z: (B, latent, T) -> (B, 1, T*220)
        x = self.pre(z)
        for i, up in enumerate(self.ups):
            x = up(F.leaky_relu(x, 0.1))
            acc = 0.0
            for j in range(self.n_kernels):
                acc = acc + self.blocks[i * self.n_kernels + j](x)
            x = acc / self.n_kernels
        return torch.tanh(self.post(F.leaky_relu(x, 0.1)))


def _ensure_batched(x: torch.Tensor, dims: int):
    if x.dim() == dims - 1:
        return x.unsqueeze(0), True
    return x, False


class Generator(nn.Module):
    """All generator-side networks behind one module.

    Every public method accepts either batched (B, C, T) tensors or single
    instances (C, T) / (T,) and returns outputs with matching batching.
    """

    def __init__(self, cfg: ModelConfig = ModelConfig()):
        super().__init__()
        torch.manual_seed(cfg.seed)
        self.cfg = cfg
        self.posterior = PosteriorEncoder(cfg)
        self.reference = ReferenceEncoder(cfg)
        self.energy = EnergyEncoder(cfg)
        self.ling_proj = nn.Conv1d(cfg.ssl_dim, cfg.d_ling, 1)
        self.fusion = FeatureFusion(cfg)
        self.flow = Flow(cfg)
        self.decoder = Decoder(cfg)

    def posterior_encode(self, x_linear) -> GaussianFrames:
        x, squeezed = _ensure_batched(x_linear, 3)
        out = self.posterior(x)
        if squeezed:
            return GaussianFrames(out.mu[0], out.sigma[0])
        return out

    def reference_encode(self, x_mel) -> torch.Tensor:
        x, squeezed = _ensure_batched(x_mel, 3)
        out = self.reference(x)
        return out[0] if squeezed else out

    def energy_encode(self, energy) -> torch.Tensor:
        x, squeezed = _ensure_batched(energy, 2)
        out = self.energy(x)
        return out[0] if squeezed else out

    def linguistic_project(self, feats) -> torch.Tensor:
        x, squeezed = _ensure_batched(feats, 3)
        out = self.ling_proj(x)
        return out[0] if squeezed else out

    def fuse_prior(self, ling, energy_emb, style) -> GaussianFrames:
        ling, squeezed = _ensure_batched(ling, 3)
        energy_emb, _ = _ensure_batched(energy_emb, 3)
        style, _ = _ensure_batched(style, 2)
        out = self.fusion(ling, energy_emb, style)
        if squeezed:
            return GaussianFrames(out.mu[0], out.sigma[0])
        return out

    def flow_forward(self, z, style):
        z, squeezed = _ensure_batched(z, 3)
        style, _ = _ensure_batched(style, 2)
        z_prime, logdet = self.flow(z, style)
        if squeezed:
            return z_prime[0], logdet[0]
        return z_prime, logdet

    def flow_inverse(self, z_prime, style):
        z_prime, squeezed = _ensure_batched(z_prime, 3)
        style, _ = _ensure_batched(style, 2)
        z = self.flow.inverse(z_prime, style)
        return z[0] if squeezed else z

    def decode(self, z) -> torch.Tensor:
        z, squeezed = _ensure_batched(z, 3)
        wave = self.decoder(z)
        return wave[0] if squeezed else wave

    @staticmethod
    def sample(frames: GaussianFrames, temperature: float = 1.0,
               generator=None) -> torch.Tensor:
        noise = torch.randn(
            frames.mu.shape, generator=generator,
            device=frames.mu.device, dtype=frames.mu.dtype,
        )
        return frames.mu + temperature * frames.sigma * noise
