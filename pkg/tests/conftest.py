import numpy as np
import pytest

from nhvc.dsp import AudioClip, save_wav


def speechlike(dur_s=1.0, rate=44100, seed=0, f0=160.0):
    """Synthetic voiced signal: harmonic stack with an amplitude envelope."""
    rng = np.random.default_rng(seed)
    t = np.arange(int(dur_s * rate)) / rate
    x = np.zeros_like(t)
    for k in range(1, 9):
        x += np.sin(2 * np.pi * k * f0 * t + rng.uniform(0, 2 * np.pi)) / k
    envelope = 0.5 + 0.5 * np.sin(2 * np.pi * 2.3 * t + 1.0)
    x = 0.4 * x / np.max(np.abs(x)) * envelope
    x += 0.01 * rng.standard_normal(len(t))
    return AudioClip(np.clip(x, -1, 1), rate)


@pytest.fixture
def speech_clip():
    return speechlike()


@pytest.fixture
def wav_file(tmp_path):
    path = tmp_path / "clip.wav"
    save_wav(path, speechlike())
    return path
