"""Content-feature extraction from 16 kHz audio.

A pluggable backend produces frame-level hidden representations at the SSL
convention of a 25 ms window and 20 ms stride (400/320 samples at 16 kHz);
`retime_to_hop` then linearly interpolates them onto the model's 5 ms grid.

Two backends ship: a pretrained wav2vec2-family model (layer 12, optional,
needs downloaded weights) and a hermetic stub that projects per-frame mel
energies through a fixed seeded random matrix, so the test suite never
touches model weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .dsp import AudioClip
from .errors import ConfigError, ModelStateError

SSL_RATE = 16000
SSL_WIN = 400  # 25 ms
SSL_HOP = 320  # 20 ms
SSL_DIM = 1024
SSL_LAYER = 12


def ssl_num_frames(n_samples: int) -> int:
    """Frame count at the 25 ms / 20 ms convention."""
    if n_samples < SSL_WIN:
        raise ValueError(f"need at least {SSL_WIN} samples, got {n_samples}")
    return (n_samples - SSL_WIN) // SSL_HOP + 1


@dataclass
class LinguisticFeatures:
    frames: np.ndarray  # (D_ssl, T_ssl)
    backend_id: str
    stride_ms: float = 20.0
    window_ms: float = 25.0

    @property
    def n_frames(self) -> int:
        return self.frames.shape[1]


class SslBackend(Protocol):
    feature_dim: int

    def extract(self, clip16k: AudioClip) -> LinguisticFeatures: ...


class StubBackend:
    """Deterministic, weight-free backend for tests and CI.

    Linear in the input spectrum: per-frame linear-scale mel energies are
    projected through a fixed random matrix, so zero audio maps to zero
    features and outputs are identical across processes for a given seed.
    """

    def __init__(self, feature_dim: int = SSL_DIM, n_mels: int = 40, seed: int = 1234):
        self.feature_dim = feature_dim
        self.n_mels = n_mels
        rng = np.random.default_rng(seed)
        self._projection = rng.standard_normal((feature_dim, n_mels)) / np.sqrt(n_mels)
        self._filterbank = self._make_filterbank(n_mels)

    @staticmethod
    def _make_filterbank(n_mels):
        from .dsp import StftConfig, mel_filterbank

        cfg = StftConfig(
            sample_rate=SSL_RATE, win_samples=SSL_WIN, hop_samples=SSL_HOP,
            fft_size=512, center_pad=False,
        )
        return mel_filterbank(cfg, n_mels).weights  # (n_mels, 257)

    def extract(self, clip16k: AudioClip) -> LinguisticFeatures:
        if clip16k.sample_rate != SSL_RATE:
            raise ConfigError(f"backend expects {SSL_RATE} Hz audio")
        x = clip16k.samples
        t = ssl_num_frames(len(x))
        window = np.hanning(SSL_WIN)
        idx = np.arange(SSL_WIN)[None, :] + SSL_HOP * np.arange(t)[:, None]
        mag = np.abs(np.fft.rfft(x[idx] * window, n=512, axis=1))  # (T, 257)
        mels = mag @ self._filterbank.T  # (T, n_mels)
        frames = self._projection @ mels.T  # (D, T)
        return LinguisticFeatures(frames=frames, backend_id="stub")


class Wav2Vec2Backend:
    """Pretrained SSL backend: hidden states of an intermediate layer.

    Requires the `transformers` package and downloadable weights; kept out
    of the default test path.
    """

    def __init__(self, model_name: str = "facebook/wav2vec2-xls-r-300m",
                 layer: int = SSL_LAYER):
        try:
            import torch
            from transformers import Wav2Vec2Model
        except ImportError as exc:
            raise ModelStateError("transformers is required for this backend") from exc
        try:
            self._model = Wav2Vec2Model.from_pretrained(model_name)
        except Exception as exc:
            raise ModelStateError(
                f"could not load SSL weights '{model_name}': {exc}"
            ) from exc
        self._model.eval()
        self._torch = torch
        self.layer = layer
        self.feature_dim = self._model.config.hidden_size
        self._name = model_name

    def extract(self, clip16k: AudioClip) -> LinguisticFeatures:
        if clip16k.sample_rate != SSL_RATE:
            raise ConfigError(f"backend expects {SSL_RATE} Hz audio")
        torch = self._torch
        with torch.no_grad():
            wav = torch.from_numpy(clip16k.samples).float().unsqueeze(0)
            out = self._model(wav, output_hidden_states=True)
        hidden = out.hidden_states[self.layer][0].T.cpu().numpy()  # (D, T)
        return LinguisticFeatures(frames=hidden, backend_id=self._name)


def extract_features(clip16k: AudioClip, backend: SslBackend) -> LinguisticFeatures:
    """Run the backend at the 25 ms / 20 ms convention."""
    if clip16k.sample_rate != SSL_RATE:
        raise ConfigError(
            f"linguistic extraction needs {SSL_RATE} Hz, got {clip16k.sample_rate}"
        )
    return backend.extract(clip16k)


def retime_to_hop(feats: LinguisticFeatures, target_t: int) -> np.ndarray:
    """Linearly interpolate features onto `target_t` uniform positions."""
    if target_t < 1:
        raise ValueError("target_t must be >= 1")
    t_ssl = feats.n_frames
    if t_ssl < 1:
        raise ValueError("empty features")
    if t_ssl == 1:
        return np.repeat(feats.frames, target_t, axis=1)
    src = np.arange(t_ssl, dtype=np.float64)
    dst = np.linspace(0.0, t_ssl - 1.0, target_t)
    lo = np.clip(np.floor(dst).astype(int), 0, t_ssl - 2)
    frac = dst - lo
    return feats.frames[:, lo] * (1.0 - frac) + feats.frames[:, lo + 1] * frac
