"""Signal-processing kernels shared by the whole pipeline.

All functions here are pure: framing, STFT, mel projection, frame energy
and resampling. The canonical analysis setting is 44.1 kHz audio with an
882-sample (20 ms) window and 220-sample hop; 220 equals the decoder's
total upsampling factor, so spectrogram frames and generated samples stay
aligned by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.io.wavfile
import scipy.signal

from .errors import AudioFormatError, ConfigError, UnsupportedCodecError

SAMPLE_RATE = 44100
WIN_SAMPLES = 882
HOP_SAMPLES = 220
ENERGY_EPS = 1e-5
MEL_EPS = 1e-5

CATEGORIES = ("exclamation", "designed", "animal")


@dataclass
class AudioClip:
    """A mono waveform with amplitudes in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int
    source_path: Optional[str] = None
    category: Optional[str] = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.samples.ndim != 1:
            raise ValueError("AudioClip samples must be 1-D (mono)")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("AudioClip samples must be finite")

    def __len__(self):
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class StftConfig:
    sample_rate: int = SAMPLE_RATE
    win_samples: int = WIN_SAMPLES
    hop_samples: int = HOP_SAMPLES
    fft_size: int = WIN_SAMPLES
    window: str = "hann"
    center_pad: bool = True

    def __post_init__(self):
        if not (0 < self.hop_samples <= self.win_samples <= self.fft_size):
            raise ConfigError(
                "require 0 < hop <= win <= fft_size, got "
                f"hop={self.hop_samples} win={self.win_samples} fft={self.fft_size}"
            )

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    def num_frames(self, n_samples: int) -> int:
        if n_samples < 1:
            raise ValueError("need at least one sample")
        return 1 + n_samples // self.hop_samples


@dataclass
class LinearSpectrogram:
    """Magnitude (not power) spectrogram, shape (n_bins, T)."""

    frames: np.ndarray
    config: StftConfig

    @property
    def n_frames(self) -> int:
        return self.frames.shape[1]


@dataclass
class MelFilterbank:
    weights: np.ndarray  # (n_mels, n_linear_bins)
    f_min: float
    f_max: float
    n_mels: int


@dataclass
class MelSpectrogram:
    frames: np.ndarray  # (n_mels, T)
    filterbank: MelFilterbank
    log_scaled: bool


@dataclass
class EnergyContour:
    values: np.ndarray  # (T,)
    normalized: bool = False
    epsilon: float = ENERGY_EPS

    def __len__(self):
        return len(self.values)


def load_wav(path) -> AudioClip:
    """Read a PCM WAV file as a mono AudioClip in [-1, 1].

    16/32-bit integer and 32/64-bit float encodings are supported;
    multichannel audio is mixed down by averaging.
    """
    try:
        rate, data = scipy.io.wavfile.read(path)
    except FileNotFoundError:
        raise
    except ValueError as exc:
        raise UnsupportedCodecError(f"{path}: {exc}") from exc
    except Exception as exc:
        raise AudioFormatError(f"{path}: unreadable WAV ({exc})") from exc

    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    elif data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    else:
        raise UnsupportedCodecError(f"{path}: unsupported sample dtype {data.dtype}")

    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    samples = np.clip(samples, -1.0, 1.0)
    return AudioClip(samples=samples, sample_rate=int(rate), source_path=str(path))


def save_wav(path, clip: AudioClip) -> None:
    """Write a clip as 16-bit PCM WAV."""
    pcm = np.clip(clip.samples, -1.0, 1.0)
    pcm = (pcm * 32767.0).astype(np.int16)
    scipy.io.wavfile.write(path, clip.sample_rate, pcm)


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Band-limited resampling; identity when rates match."""
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    if target_rate == clip.sample_rate:
        return clip
    g = np.gcd(clip.sample_rate, target_rate)
    up, down = target_rate // g, clip.sample_rate // g
    out = scipy.signal.resample_poly(clip.samples, up, down)
    n_out = int(round(len(clip) * target_rate / clip.sample_rate))
    if len(out) < n_out:
        out = np.pad(out, (0, n_out - len(out)))
    else:
        out = out[:n_out]
    return AudioClip(
        samples=np.clip(out, -1.0, 1.0),
        sample_rate=target_rate,
        source_path=clip.source_path,
        category=clip.category,
    )


def _hann(n: int) -> np.ndarray:
    # periodic Hann, matching torch.hann_window
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def reflect_pad(x: np.ndarray, pad: int) -> np.ndarray:
    """Reflection-pad both ends, tolerating pad >= len(x)."""
    if pad == 0:
        return x
    if len(x) == 1:
        return np.pad(x, pad, mode="edge")
    out = x
    remaining = pad
    while remaining > 0:
        step = min(remaining, len(out) - 1)
        out = np.pad(out, step, mode="reflect")
        remaining -= step
    return out


def frame_signal(x: np.ndarray, win: int, hop: int) -> np.ndarray:
    """Strided view of overlapping frames, shape (n_frames, win)."""
    n_frames = 1 + (len(x) - win) // hop
    shape = (n_frames, win)
    strides = (x.strides[0] * hop, x.strides[0])
    return np.lib.stride_tricks.as_strided(x, shape=shape, strides=strides)


def stft(clip: AudioClip, cfg: StftConfig = StftConfig()) -> LinearSpectrogram:
    """Magnitude STFT with center reflection padding.

    Frame count is exactly 1 + floor(len / hop) for every input length.
    """
    if clip.sample_rate != cfg.sample_rate:
        raise ConfigError(
            f"clip rate {clip.sample_rate} != config rate {cfg.sample_rate}"
        )
    if len(clip) < 1:
        raise ValueError("empty clip")

    x = clip.samples
    if cfg.center_pad:
        x = reflect_pad(x, cfg.fft_size // 2)
    window = _hann(cfg.win_samples)
    if cfg.win_samples < cfg.fft_size:
        lpad = (cfg.fft_size - cfg.win_samples) // 2
        window = np.pad(window, (lpad, cfg.fft_size - cfg.win_samples - lpad))
        frames = frame_signal(x, cfg.fft_size, cfg.hop_samples)
    else:
        frames = frame_signal(x, cfg.win_samples, cfg.hop_samples)
    spec = np.abs(np.fft.rfft(frames * window, n=cfg.fft_size, axis=1)).T
    expected = cfg.num_frames(len(clip))
    # strided framing of the padded signal can yield one extra frame; trim
    spec = spec[:, :expected]
    if spec.shape[1] < expected:
        raise RuntimeError(
            f"frame-count mismatch: got {spec.shape[1]}, expected {expected}"
        )
    return LinearSpectrogram(frames=spec, config=cfg)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(
    cfg: StftConfig,
    n_mels: int,
    f_min: float = 0.0,
    f_max: Optional[float] = None,
    area_normalize: bool = False,
) -> MelFilterbank:
    """Triangular HTK-scale mel filterbank over the linear STFT bins."""
    if f_max is None:
        f_max = cfg.sample_rate / 2
    if not (0 <= f_min < f_max <= cfg.sample_rate / 2):
        raise ConfigError(f"bad mel range [{f_min}, {f_max}]")
    if n_mels > cfg.n_bins:
        raise ConfigError(f"n_mels={n_mels} exceeds {cfg.n_bins} linear bins")

    mel_pts = np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    bin_freqs = np.arange(cfg.n_bins) * cfg.sample_rate / cfg.fft_size

    weights = np.zeros((n_mels, cfg.n_bins))
    for m in range(n_mels):
        lo, center, hi = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        up = (bin_freqs - lo) / max(center - lo, 1e-12)
        down = (hi - bin_freqs) / max(hi - center, 1e-12)
        weights[m] = np.maximum(0.0, np.minimum(up, down))
        if area_normalize:
            weights[m] *= 2.0 / max(hi - lo, 1e-12)
    return MelFilterbank(weights=weights, f_min=f_min, f_max=f_max, n_mels=n_mels)


def mel_spectrogram(
    linear: LinearSpectrogram, fb: MelFilterbank, log_scale: bool = True
) -> MelSpectrogram:
    """Project a linear spectrogram through a mel filterbank."""
    if fb.weights.shape[1] != linear.frames.shape[0]:
        raise ValueError(
            f"filterbank expects {fb.weights.shape[1]} bins, "
            f"spectrogram has {linear.frames.shape[0]}"
        )
    frames = fb.weights @ linear.frames
    if log_scale:
        frames = np.log(frames + MEL_EPS)
    return MelSpectrogram(frames=frames, filterbank=fb, log_scaled=log_scale)


def frame_energy(linear: LinearSpectrogram) -> EnergyContour:
    """Per-frame L2 norm of the magnitude spectrogram."""
    values = np.sqrt(np.sum(linear.frames**2, axis=0))
    return EnergyContour(values=values, normalized=False)


def normalize_energy(e: EnergyContour, epsilon: float = ENERGY_EPS) -> EnergyContour:
    """Log-mean subtraction: log(x + eps) - log(mean(x) + eps).

    Cancels global gain while keeping local prosody.
    """
    if e.normalized:
        raise ValueError("contour already normalized")
    if len(e.values) == 0:
        raise ValueError("empty contour")
    mu = float(np.mean(e.values))
    values = np.log(e.values + epsilon) - np.log(mu + epsilon)
    return EnergyContour(values=values, normalized=True, epsilon=epsilon)


def energy_from_clip(clip: AudioClip, cfg: StftConfig = StftConfig()) -> EnergyContour:
    """stft -> frame_energy -> normalize_energy in one call."""
    return normalize_energy(frame_energy(stft(clip, cfg)))
