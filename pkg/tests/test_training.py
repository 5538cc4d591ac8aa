import copy

import numpy as np
import pytest
import torch

from nhvc import data, training
from nhvc.config import tiny_run_config
from nhvc.linguistic import StubBackend
from nhvc.losses import MultiScaleMelLoss, kl_anneal_weight
from nhvc.errors import DataError, ModelStateError

from conftest import speechlike


@pytest.fixture(scope="module")
def run_cfg():
    return tiny_run_config(seed=0)


@pytest.fixture(scope="module")
def features(run_cfg):
    clip = speechlike(dur_s=1.0, seed=9)
    clip.source_path = "train-clip"
    clip.category = "designed"
    return [data.compute_features(clip, run_cfg, StubBackend())]


class TestSampleSegment:
    def test_crop_shapes(self, features):
        rng = np.random.default_rng(0)
        seg = training.sample_segment(features[0], 100, rng)
        assert seg["wave"].shape == (22000,)
        assert seg["linear"].shape == (442, 100)
        assert seg["energy"].shape == (100,)
        assert seg["ling"].shape == (1024, 100)

    def test_exact_fit_forces_start_zero(self, features):
        f = features[0]
        cropped = data.ClipFeatures(
            wave=f.wave[: 100 * 220], linear=f.linear[:, :100],
            mel=f.mel, energy=f.energy[:100], ling=f.ling[:, :100],
        )
        rng = np.random.default_rng(1)
        for _ in range(5):
            assert training.sample_segment(cropped, 100, rng)["start"] == 0

    def test_too_short_raises(self, features):
        f = features[0]
        short = data.ClipFeatures(
            wave=f.wave[: 10 * 220], linear=f.linear[:, :10],
            mel=f.mel, energy=f.energy[:10], ling=f.ling[:, :10],
        )
        with pytest.raises(training.ClipTooShort):
            training.sample_segment(short, 100, np.random.default_rng(0))

    def test_deterministic_given_seed(self, features):
        starts_a = [
            training.sample_segment(features[0], 100, np.random.default_rng(7))["start"]
            for _ in range(3)
        ]
        starts_b = [
            training.sample_segment(features[0], 100, np.random.default_rng(7))["start"]
            for _ in range(3)
        ]
        assert starts_a == starts_b

    def test_wave_window_matches_frames(self, features):
        rng = np.random.default_rng(2)
        seg = training.sample_segment(features[0], 100, rng)
        start = seg["start"]
        assert np.array_equal(
            seg["wave"], features[0].wave[start * 220 : (start + 100) * 220]
        )


class TestTrainStep:
    def test_determinism(self, run_cfg, features):
        reports = []
        for _ in range(2):
            torch.manual_seed(123)
            state = training.init_state(run_cfg, "h")
            rec = MultiScaleMelLoss(run_cfg.fdrl)
            batch = training.make_batch(features, run_cfg.train, np.random.default_rng(0))
            reports.append(training.train_step(batch, state, run_cfg, rec))
        for key in ("kl", "rec", "fm", "adv_gen", "disc", "gen_total"):
            assert reports[0][key] == reports[1][key]

    def test_step_zero_lambda(self, run_cfg, features):
        state = training.init_state(run_cfg, "h")
        rec = MultiScaleMelLoss(run_cfg.fdrl)
        batch = training.make_batch(features, run_cfg.train, state.rng)
        report = training.train_step(batch, state, run_cfg, rec)
        assert report["lambda_kl"] == 0.0
        assert report["step"] == 0
        assert state.step == 1

    def test_optimizer_partition(self, run_cfg, features):
        # D update must not move G params and vice versa; verified by
        # snapshotting around a full step and checking both moved only once
        state = training.init_state(run_cfg, "h")
        rec = MultiScaleMelLoss(run_cfg.fdrl)
        g_before = copy.deepcopy(state.generator.state_dict())
        d_before = copy.deepcopy(state.discriminator.state_dict())

        moved_g, moved_d = {}, {}
        orig_d_step, orig_g_step = state.opt_d.step, state.opt_g.step

        def d_step(*a, **k):
            out = orig_d_step(*a, **k)
            moved_g["after_d"] = any(
                not torch.equal(g_before[k2], v)
                for k2, v in state.generator.state_dict().items()
            )
            return out

        state.opt_d.step = d_step
        batch = training.make_batch(features, run_cfg.train, state.rng)
        training.train_step(batch, state, run_cfg, rec)
        assert moved_g["after_d"] is False  # generator untouched by D phase
        d_after = state.discriminator.state_dict()
        assert any(not torch.equal(d_before[k], v) for k, v in d_after.items())

    def test_schedule_matches_oracle(self, run_cfg, features):
        state = training.init_state(run_cfg, "h")
        rec = MultiScaleMelLoss(run_cfg.fdrl)
        for expected_step in range(3):
            batch = training.make_batch(features, run_cfg.train, state.rng)
            report = training.train_step(batch, state, run_cfg, rec)
            assert report["lambda_kl"] == kl_anneal_weight(
                expected_step, run_cfg.train.t_anneal
            )


class TestCheckpointing:
    def _one_step_state(self, run_cfg, features):
        state = training.init_state(run_cfg, "confhash")
        rec = MultiScaleMelLoss(run_cfg.fdrl)
        batch = training.make_batch(features, run_cfg.train, state.rng)
        training.train_step(batch, state, run_cfg, rec)
        return state

    def test_roundtrip_exact_forward(self, run_cfg, features, tmp_path):
        state = self._one_step_state(run_cfg, features)
        path = tmp_path / "ckpt.pt"
        training.save_checkpoint(state, path, run_cfg)
        torch.manual_seed(0)
        x = torch.randn(442, 30)
        state.generator.eval()
        before = state.generator.posterior_encode(x)
        restored = training.load_checkpoint(path, run_cfg)
        restored.generator.eval()
        after = restored.generator.posterior_encode(x)
        assert torch.equal(before.mu, after.mu)
        assert torch.equal(before.sigma, after.sigma)
        assert restored.step == state.step

    def test_version_mismatch_refused(self, run_cfg, features, tmp_path):
        state = self._one_step_state(run_cfg, features)
        path = tmp_path / "ckpt.pt"
        training.save_checkpoint(state, path, run_cfg)
        payload = torch.load(path, weights_only=False)
        payload["version"] = 999
        torch.save(payload, path)
        with pytest.raises(ModelStateError, match="version"):
            training.load_checkpoint(path, run_cfg)

    def test_hash_mismatch_warns(self, run_cfg, features, tmp_path):
        state = self._one_step_state(run_cfg, features)
        path = tmp_path / "ckpt.pt"
        training.save_checkpoint(state, path, run_cfg)
        with pytest.warns(UserWarning, match="hash"):
            training.load_checkpoint(path, run_cfg, expected_hash="other")

    def test_resume_continues_schedule(self, run_cfg, features, tmp_path):
        state = self._one_step_state(run_cfg, features)
        state.step = 25000  # pretend we are mid-anneal
        path = tmp_path / "ckpt.pt"
        training.save_checkpoint(state, path, run_cfg)
        restored = training.load_checkpoint(path, run_cfg)
        rec = MultiScaleMelLoss(run_cfg.fdrl)
        batch = training.make_batch(features, run_cfg.train, restored.rng)
        report = training.train_step(batch, restored, run_cfg, rec)
        assert report["lambda_kl"] == kl_anneal_weight(25000, run_cfg.train.t_anneal)

    def test_missing_checkpoint(self, run_cfg, tmp_path):
        with pytest.raises(ModelStateError):
            training.load_checkpoint(tmp_path / "none.pt", run_cfg)


class TestTrainLoop:
    def test_smoke_writes_artifacts(self, run_cfg, features, tmp_path):
        out = tmp_path / "run"
        state = training.train(run_cfg, features, out, max_steps=3)
        assert state.step == 3
        assert (out / "checkpoint.pt").exists()
        lines = (out / "metrics.jsonl").read_text().strip().splitlines()
        assert len(lines) == 3  # log_every=1

    def test_no_usable_clip(self, run_cfg, features):
        f = features[0]
        short = data.ClipFeatures(
            wave=f.wave[:2200], linear=f.linear[:, :10], mel=f.mel,
            energy=f.energy[:10], ling=f.ling[:, :10],
        )
        with pytest.raises(DataError):
            with pytest.warns(UserWarning):
                training.make_batch([short], run_cfg.train, np.random.default_rng(0))


class TestGradientLiveness:
    def test_all_generator_params_receive_grad(self, run_cfg, features):
        state = training.init_state(run_cfg, "h")
        rec = MultiScaleMelLoss(run_cfg.fdrl)
        gen = state.generator
        # move the flow off its zero-initialized identity: at init the
        # coupling's zero output conv blocks gradient to its inner layers
        with torch.no_grad():
            for p in gen.flow.parameters():
                p.add_(0.05 * torch.randn_like(p))
        batch = training.make_batch(features, run_cfg.train, state.rng)

        post = gen.posterior(batch["linear"])
        z = post.mu + post.sigma * torch.randn_like(post.mu)
        fake = gen.decoder(z)
        styles = torch.stack(
            [gen.reference(m.unsqueeze(0))[0] for m in batch["mels"]]
        )
        prior = gen.fusion(
            gen.ling_proj(batch["ling"]), gen.energy(batch["energy"]), styles
        )
        z_prime, log_det = gen.flow(z, styles)
        from nhvc.losses import kl_loss

        loss = (
            kl_loss(post, z, prior, z_prime, log_det)
            + rec(batch["wave"], fake.squeeze(1))
        )
        loss.backward()
        dead = [
            name
            for name, p in gen.named_parameters()
            if p.grad is None or p.grad.abs().sum() == 0
        ]
        assert not dead, f"parameters without gradient: {dead}"
