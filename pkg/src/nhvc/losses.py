"""Training objectives.

Generator loss = lambda_kl * L_KL + lambda_rec * L_rec + lambda_fm * L_fm
+ lambda_adv * L_adv, where L_rec is a multi-hop log-mel reconstruction
distance, L_adv is least-squares GAN, and lambda_kl follows a cosine ramp
from 0 to 1 over the annealing horizon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
import torch

from .dsp import MEL_EPS, StftConfig, mel_filterbank


@dataclass(frozen=True)
class LossWeights:
    lambda_rec: float = 45.0
    lambda_fm: float = 2.0
    lambda_adv: float = 1.0
    lambda_kl: float = 1.0

    def __post_init__(self):
        for name in ("lambda_rec", "lambda_fm", "lambda_adv", "lambda_kl"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass(frozen=True)
class FdrlConfig:
    hops: Tuple[int, ...] = (882, 441, 220, 110, 55)
    window_factor: int = 4
    n_mels: int = 80
    sample_rate: int = 44100
    include_linear_term: bool = False

    @property
    def windows(self) -> Tuple[int, ...]:
        return tuple(self.window_factor * h for h in self.hops)


def kl_anneal_weight(t_cur: int, t_anneal: int) -> float:
    """Cosine ramp 0 -> 1 over t_anneal steps, then held at 1.

    lambda(t) = 0.5 * (cos(pi * (min(t, t_anneal)/t_anneal - 1)) + 1)
    """
    if t_anneal <= 0:
        raise ValueError("t_anneal must be positive")
    if t_cur < 0:
        raise ValueError("t_cur must be >= 0")
    frac = min(t_cur, t_anneal) / t_anneal
    return 0.5 * (math.cos(math.pi * (frac - 1.0)) + 1.0)


def _gauss_log_density(x, mu, sigma):
    return (
        -0.5 * math.log(2.0 * math.pi)
        - torch.log(sigma)
        - 0.5 * ((x - mu) / sigma) ** 2
    )


def kl_loss(post, z, prior, z_prime, log_det) -> torch.Tensor:
    """One-sample Monte-Carlo KL(q || p) with flow change of variables.

    Mean over frames and dims so the value is segment-length independent;
    the flow log-determinant is spread over the same element count.
    """
    if (post.sigma <= 0).any() or (prior.sigma <= 0).any():
        raise ValueError("sigma must be strictly positive")
    log_q = _gauss_log_density(z, post.mu, post.sigma)
    log_p = _gauss_log_density(z_prime, prior.mu, prior.sigma)
    n_elem = z.shape[-1] * z.shape[-2]
    log_det = torch.as_tensor(log_det, dtype=log_q.dtype, device=log_q.device)
    return (log_q - log_p).mean() - log_det.mean() / n_elem


class MultiScaleMelLoss(torch.nn.Module):
    """L1 distance between log-mel spectrograms at several hop lengths.

    Differentiable in both waveform arguments; scales weighted equally.
    """

    def __init__(self, cfg: FdrlConfig = FdrlConfig()):
        super().__init__()
        self.cfg = cfg
        self._banks = {}
        for hop, win in zip(cfg.hops, cfg.windows):
            stft_cfg = StftConfig(
                sample_rate=cfg.sample_rate, win_samples=win,
                hop_samples=hop, fft_size=win,
            )
            fb = mel_filterbank(stft_cfg, cfg.n_mels)
            self.register_buffer(
                f"_fb_{hop}", torch.from_numpy(fb.weights), persistent=False
            )
            self.register_buffer(
                f"_win_{hop}", torch.hann_window(win, dtype=torch.float64),
                persistent=False,
            )

    def _log_mel(self, wave: torch.Tensor, hop: int, win: int) -> torch.Tensor:
        window = getattr(self, f"_win_{hop}").to(wave.dtype)
        fb = getattr(self, f"_fb_{hop}").to(wave.dtype)
        spec = torch.stft(
            wave, n_fft=win, hop_length=hop, win_length=win, window=window,
            center=True, pad_mode="reflect", return_complex=True,
        )
        mag = torch.sqrt(spec.real**2 + spec.imag**2 + 1e-14)
        return torch.log(fb @ mag + MEL_EPS), mag, fb

    def forward(self, ref: torch.Tensor, gen: torch.Tensor) -> torch.Tensor:
        if ref.shape != gen.shape:
            raise ValueError(f"length mismatch: {ref.shape} vs {gen.shape}")
        if ref.dim() == 1:
            ref, gen = ref.unsqueeze(0), gen.unsqueeze(0)
        total = ref.new_zeros(())
        for hop, win in zip(self.cfg.hops, self.cfg.windows):
            lm_ref, mag_ref, fb = self._log_mel(ref, hop, win)
            lm_gen, mag_gen, _ = self._log_mel(gen, hop, win)
            total = total + (lm_ref - lm_gen).abs().mean()
            if self.cfg.include_linear_term:
                total = total + (fb @ mag_ref - fb @ mag_gen).abs().mean()
        return total


def fdrl(ref, gen, cfg: FdrlConfig = FdrlConfig()) -> torch.Tensor:
    """Functional wrapper around MultiScaleMelLoss; accepts numpy or torch."""
    if isinstance(ref, np.ndarray):
        ref = torch.from_numpy(ref)
    if isinstance(gen, np.ndarray):
        gen = torch.from_numpy(gen)
    return MultiScaleMelLoss(cfg).to(ref.device)(ref, gen)


def adversarial_losses(real_logits: Sequence[torch.Tensor],
                       fake_logits: Sequence[torch.Tensor]):
    """Least-squares GAN terms, summed over sub-discriminators.

    Returns (generator term, discriminator term).
    """
    gen_loss = fake_logits[0].new_zeros(())
    disc_loss = fake_logits[0].new_zeros(())
    for fake in fake_logits:
        gen_loss = gen_loss + ((fake - 1.0) ** 2).mean()
    for real, fake in zip(real_logits, fake_logits):
        disc_loss = disc_loss + ((real - 1.0) ** 2).mean() + (fake**2).mean()
    return gen_loss, disc_loss


def feature_matching_loss(real_feats, fake_feats) -> torch.Tensor:
    """Scale-free L1 between discriminator feature maps.

    Per layer: mean |real - fake| / mean |real|, summed over layers and
    sub-discriminators.
    """
    if len(real_feats) != len(fake_feats):
        raise ValueError("feature map structure mismatch")
    total = None
    for sub_real, sub_fake in zip(real_feats, fake_feats):
        if len(sub_real) != len(sub_fake):
            raise ValueError("feature map structure mismatch")
        for r, f in zip(sub_real, sub_fake):
            if r.shape != f.shape:
                raise ValueError("feature map shape mismatch")
            term = (r.detach() - f).abs().mean() / (r.detach().abs().mean() + 1e-8)
            total = term if total is None else total + term
    if total is None:
        raise ValueError("empty feature maps")
    return total


@dataclass
class GeneratorLossParts:
    kl: torch.Tensor
    rec: torch.Tensor
    fm: torch.Tensor
    adv: torch.Tensor


def total_generator_loss(parts: GeneratorLossParts,
                         weights: LossWeights) -> torch.Tensor:
    terms = [parts.kl, parts.rec, parts.fm, parts.adv]
    for t in terms:
        if not torch.isfinite(torch.as_tensor(t)):
            raise FloatingPointError("non-finite loss part; aborting training")
    return (
        weights.lambda_kl * parts.kl
        + weights.lambda_rec * parts.rec
        + weights.lambda_fm * parts.fm
        + weights.lambda_adv * parts.adv
    )
