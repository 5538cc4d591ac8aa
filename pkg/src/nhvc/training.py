"""Alternating discriminator/generator optimization.

One training step = one discriminator update on detached generator output
followed by one generator update with the cosine-annealed KL weight for
that step. Checkpoints are versioned, self-describing and written
atomically; metrics go to a newline-delimited JSON log.
"""

from __future__ import annotations

import json
import logging
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import torch

from .data import ClipFeatures
from .discriminator import Discriminator
from .errors import DataError, ModelStateError
from .losses import (
    GeneratorLossParts,
    LossWeights,
    MultiScaleMelLoss,
    adversarial_losses,
    feature_matching_loss,
    kl_anneal_weight,
    kl_loss,
    total_generator_loss,
)
from .model import Generator

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 4
    max_steps: int = 400000
    segment_frames: int = 100
    lr: float = 2e-4
    betas: Tuple[float, float] = (0.8, 0.99)
    weight_decay: float = 0.01
    lr_decay: float = 0.999875
    t_anneal: int = 50000
    checkpoint_every: int = 1000
    log_every: int = 1
    seed: int = 0


class ClipTooShort(DataError):
    """Raised when a clip has fewer frames than one training segment."""


def sample_segment(feats: ClipFeatures, segment_frames: int,
                   rng: np.random.Generator) -> dict:
    """Aligned random crop of all four tracks; start frame is uniform."""
    t = feats.frames
    if t < segment_frames:
        raise ClipTooShort(
            f"{feats.path or 'clip'}: {t} frames < segment of {segment_frames}"
        )
    start = int(rng.integers(0, t - segment_frames + 1))
    hop = len(feats.wave) // t
    return {
        "start": start,
        "wave": feats.wave[start * hop : (start + segment_frames) * hop],
        "linear": feats.linear[:, start : start + segment_frames],
        "energy": feats.energy[start : start + segment_frames],
        "ling": feats.ling[:, start : start + segment_frames],
        "mel": feats.mel,  # style is utterance-level: never cropped
    }


@dataclass
class TrainState:
    generator: Generator
    discriminator: Discriminator
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    sched_g: torch.optim.lr_scheduler.ExponentialLR
    sched_d: torch.optim.lr_scheduler.ExponentialLR
    rng: np.random.Generator
    config_hash: str
    step: int = 0


def init_state(run_cfg, config_hash: str = "") -> TrainState:
    torch.manual_seed(run_cfg.train.seed)
    gen = Generator(run_cfg.model)
    disc = Discriminator(run_cfg.discriminator)
    tc = run_cfg.train
    opt_g = torch.optim.AdamW(
        gen.parameters(), lr=tc.lr, betas=tc.betas, weight_decay=tc.weight_decay
    )
    opt_d = torch.optim.AdamW(
        disc.parameters(), lr=tc.lr, betas=tc.betas, weight_decay=tc.weight_decay
    )
    sched_g = torch.optim.lr_scheduler.ExponentialLR(opt_g, gamma=tc.lr_decay)
    sched_d = torch.optim.lr_scheduler.ExponentialLR(opt_d, gamma=tc.lr_decay)
    return TrainState(
        generator=gen,
        discriminator=disc,
        opt_g=opt_g,
        opt_d=opt_d,
        sched_g=sched_g,
        sched_d=sched_d,
        rng=np.random.default_rng(tc.seed),
        config_hash=config_hash,
    )


def make_batch(features: list[ClipFeatures], train_cfg: TrainConfig,
               rng: np.random.Generator) -> dict:
    """Sample batch_size aligned segments; short clips are skipped with a warning."""
    usable = [f for f in features if f.frames >= train_cfg.segment_frames]
    if len(usable) < len(features):
        warnings.warn(
            f"skipping {len(features) - len(usable)} clip(s) shorter than "
            f"{train_cfg.segment_frames} frames"
        )
    if not usable:
        raise DataError("no clip is long enough for a training segment")
    picks = rng.integers(0, len(usable), size=train_cfg.batch_size)
    segs = [sample_segment(usable[i], train_cfg.segment_frames, rng) for i in picks]
    index_of = {id(f): i for i, f in enumerate(features)}
    return {
        "wave": torch.from_numpy(np.stack([s["wave"] for s in segs])).float(),
        "linear": torch.from_numpy(np.stack([s["linear"] for s in segs])).float(),
        "energy": torch.from_numpy(np.stack([s["energy"] for s in segs])).float(),
        "ling": torch.from_numpy(np.stack([s["ling"] for s in segs])).float(),
        "mels": [torch.from_numpy(s["mel"]).float() for s in segs],
        "clip_ids": [index_of[id(usable[i])] for i in picks],
        "starts": [s["start"] for s in segs],
    }


def train_step(batch: dict, state: TrainState, run_cfg,
               rec_loss: MultiScaleMelLoss) -> dict:
    """One discriminator update then one generator update; returns the loss report."""
    gen, disc = state.generator, state.discriminator
    tc = run_cfg.train
    t0 = time.monotonic()

    post = gen.posterior(batch["linear"])
    z = post.mu + post.sigma * torch.randn_like(post.mu)
    fake = gen.decoder(z)  # (B, 1, seg*220)
    real = batch["wave"].unsqueeze(1)

    # discriminator phase (generator output detached)
    state.opt_d.zero_grad()
    real_logits, _ = disc(real)
    fake_logits, _ = disc(fake.detach())
    _, loss_d = adversarial_losses(real_logits, fake_logits)
    if not torch.isfinite(loss_d):
        raise FloatingPointError(
            f"non-finite discriminator loss at step {state.step}, "
            f"clips {batch.get('clip_ids')}, starts {batch.get('starts')}"
        )
    loss_d.backward()
    state.opt_d.step()

    # generator phase
    state.opt_g.zero_grad()
    styles = torch.stack([gen.reference(m.unsqueeze(0))[0] for m in batch["mels"]])
    prior = gen.fusion(
        gen.ling_proj(batch["ling"]), gen.energy(batch["energy"]), styles
    )
    z_prime, log_det = gen.flow(z, styles)
    loss_kl = kl_loss(post, z, prior, z_prime, log_det)
    loss_rec = rec_loss(real.squeeze(1), fake.squeeze(1))
    real_logits_g, real_fmaps = disc(real)
    fake_logits_g, fake_fmaps = disc(fake)
    loss_adv_g, _ = adversarial_losses(real_logits_g, fake_logits_g)
    loss_fm = feature_matching_loss(real_fmaps, fake_fmaps)

    lam_kl = kl_anneal_weight(state.step, tc.t_anneal)
    weights = LossWeights(
        lambda_rec=run_cfg.weights.lambda_rec,
        lambda_fm=run_cfg.weights.lambda_fm,
        lambda_adv=run_cfg.weights.lambda_adv,
        lambda_kl=lam_kl,
    )
    parts = GeneratorLossParts(kl=loss_kl, rec=loss_rec, fm=loss_fm, adv=loss_adv_g)
    try:
        loss_g = total_generator_loss(parts, weights)
    except FloatingPointError as exc:
        raise FloatingPointError(
            f"{exc} (step {state.step}, clips {batch.get('clip_ids')}, "
            f"starts {batch.get('starts')})"
        ) from exc
    loss_g.backward()
    state.opt_g.step()
    state.sched_g.step()
    state.sched_d.step()

    report = {
        "step": state.step,
        "lambda_kl": lam_kl,
        "kl": loss_kl.detach().item(),
        "rec": loss_rec.detach().item(),
        "fm": loss_fm.detach().item(),
        "adv_gen": loss_adv_g.detach().item(),
        "disc": loss_d.detach().item(),
        "gen_total": loss_g.detach().item(),
        "wall_time_s": time.monotonic() - t0,
    }
    state.step += 1
    return report


def save_checkpoint(state: TrainState, path, run_cfg=None) -> None:
    """Atomic, versioned checkpoint carrying the full training state."""
    from .config import to_dict

    payload = {
        "version": CHECKPOINT_VERSION,
        "config_hash": state.config_hash,
        "config": to_dict(run_cfg) if run_cfg is not None else None,
        "step": state.step,
        "generator": state.generator.state_dict(),
        "discriminator": state.discriminator.state_dict(),
        "opt_g": state.opt_g.state_dict(),
        "opt_d": state.opt_d.state_dict(),
        "sched_g": state.sched_g.state_dict(),
        "sched_d": state.sched_d.state_dict(),
        "torch_rng": torch.get_rng_state(),
        "numpy_rng": state.rng.bit_generator.state,
    }
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)


def load_checkpoint(path, run_cfg, expected_hash: Optional[str] = None) -> TrainState:
    """Restore a TrainState; refuses version mismatches, warns on hash drift."""
    path = Path(path)
    if not path.exists():
        raise ModelStateError(f"no checkpoint at {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("version")
    if version != CHECKPOINT_VERSION:
        raise ModelStateError(
            f"checkpoint version {version} != supported {CHECKPOINT_VERSION}"
        )
    if expected_hash and payload.get("config_hash") != expected_hash:
        warnings.warn(
            f"checkpoint config hash {payload.get('config_hash')} does not match "
            f"current config {expected_hash}"
        )
    state = init_state(run_cfg, config_hash=payload.get("config_hash", ""))
    state.generator.load_state_dict(payload["generator"])
    state.discriminator.load_state_dict(payload["discriminator"])
    state.opt_g.load_state_dict(payload["opt_g"])
    state.opt_d.load_state_dict(payload["opt_d"])
    state.sched_g.load_state_dict(payload["sched_g"])
    state.sched_d.load_state_dict(payload["sched_d"])
    torch.set_rng_state(payload["torch_rng"])
    state.rng.bit_generator.state = payload["numpy_rng"]
    state.step = payload["step"]
    return state


def train(run_cfg, features: list[ClipFeatures], out_dir,
          max_steps: Optional[int] = None,
          resume: Optional[str] = None) -> TrainState:
    """Run the optimization loop, writing checkpoints and a metrics log."""
    from .config import config_hash

    cfg_hash = config_hash(run_cfg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if resume:
        state = load_checkpoint(resume, run_cfg, expected_hash=cfg_hash)
    else:
        state = init_state(run_cfg, config_hash=cfg_hash)

    tc = run_cfg.train
    total_steps = max_steps if max_steps is not None else tc.max_steps
    rec_loss = MultiScaleMelLoss(run_cfg.fdrl)
    metrics_path = out_dir / "metrics.jsonl"

    with open(metrics_path, "a") as metrics:
        while state.step < total_steps:
            batch = make_batch(features, tc, state.rng)
            report = train_step(batch, state, run_cfg, rec_loss)
            if report["step"] % tc.log_every == 0:
                metrics.write(json.dumps(report) + "\n")
                metrics.flush()
            if state.step % tc.checkpoint_every == 0 or state.step >= total_steps:
                save_checkpoint(state, out_dir / "checkpoint.pt", run_cfg)
    save_checkpoint(state, out_dir / "checkpoint.pt", run_cfg)
    return state
