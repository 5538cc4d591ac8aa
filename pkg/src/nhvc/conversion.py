"""Inference: source content + reference timbre -> converted waveform.

The source is analyzed for linguistic and energy tracks (no timbre
perturbation at inference time), the reference supplies the style vector,
and the latent is drawn from the prior, pulled back through the inverse
flow, and decoded. Output length is always source-frame-count * 220.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from . import dsp, linguistic
from .dsp import AudioClip
from .errors import ModelStateError
from .model import Generator


@dataclass
class ConversionRequest:
    source: AudioClip
    reference: AudioClip
    temperature: float = 0.667
    seed: int = 0

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


def _style_vector(gen: Generator, reference: AudioClip, run_cfg) -> torch.Tensor:
    if len(reference) == 0:
        raise ValueError("empty reference clip")
    if reference.sample_rate != run_cfg.stft.sample_rate:
        reference = dsp.resample(reference, run_cfg.stft.sample_rate)
    spec = dsp.stft(reference, run_cfg.stft)
    fb = dsp.mel_filterbank(run_cfg.stft, run_cfg.model.n_mels_ref)
    mel = dsp.mel_spectrogram(spec, fb, log_scale=True)
    with torch.no_grad():
        return gen.reference_encode(torch.from_numpy(mel.frames).float())


def _source_tracks(gen: Generator, source: AudioClip, backend, run_cfg):
    if len(source) == 0:
        raise ValueError("empty source clip")
    if source.sample_rate != run_cfg.stft.sample_rate:
        source = dsp.resample(source, run_cfg.stft.sample_rate)
    spec = dsp.stft(source, run_cfg.stft)
    t = spec.n_frames
    energy = dsp.normalize_energy(dsp.frame_energy(spec))
    clip16k = dsp.resample(source, linguistic.SSL_RATE)
    feats = linguistic.extract_features(clip16k, backend)
    ling = linguistic.retime_to_hop(feats, t)
    with torch.no_grad():
        energy_emb = gen.energy_encode(torch.from_numpy(energy.values).float())
        ling_emb = gen.linguistic_project(torch.from_numpy(ling).float())
    return ling_emb, energy_emb, t


def convert(req: ConversionRequest, gen: Generator, backend, run_cfg) -> AudioClip:
    """Full conversion pipeline of the trained model."""
    if gen is None:
        raise ModelStateError("no model provided")
    gen.eval()
    style = _style_vector(gen, req.reference, run_cfg)
    ling_emb, energy_emb, t = _source_tracks(gen, req.source, backend, run_cfg)
    rng = torch.Generator().manual_seed(req.seed)
    with torch.no_grad():
        prior = gen.fuse_prior(ling_emb, energy_emb, style)
        noise = torch.randn(prior.mu.shape, generator=rng)
        z_prime = prior.mu + req.temperature * prior.sigma * noise
        z = gen.flow_inverse(z_prime, style)
        wave = gen.decode(z).squeeze(0).numpy()
    assert len(wave) == t * run_cfg.stft.hop_samples
    return AudioClip(
        samples=np.clip(wave.astype(np.float64), -1.0, 1.0),
        sample_rate=run_cfg.stft.sample_rate,
        source_path=req.source.source_path,
    )


def reconstruct(clip: AudioClip, gen: Generator, run_cfg,
                temperature: float = 1.0, seed: Optional[int] = None) -> AudioClip:
    """Posterior -> decoder round trip (diagnostic path, no style involved)."""
    if gen is None:
        raise ModelStateError("no model provided")
    gen.eval()
    if clip.sample_rate != run_cfg.stft.sample_rate:
        clip = dsp.resample(clip, run_cfg.stft.sample_rate)
    if len(clip) == 0:
        raise ValueError("empty clip")
    spec = dsp.stft(clip, run_cfg.stft)
    with torch.no_grad():
        post = gen.posterior_encode(torch.from_numpy(spec.frames).float())
        if temperature == 0.0:
            z = post.mu
        else:
            rng = torch.Generator().manual_seed(0 if seed is None else seed)
            noise = torch.randn(post.mu.shape, generator=rng)
            z = post.mu + temperature * post.sigma * noise
        wave = gen.decode(z).squeeze(0).numpy()
    return AudioClip(
        samples=np.clip(wave.astype(np.float64), -1.0, 1.0),
        sample_rate=run_cfg.stft.sample_rate,
        source_path=clip.source_path,
    )
