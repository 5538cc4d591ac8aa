"""Timbre perturbation for content-feature extraction.

Strips speaker/timbre cues from a waveform before SSL feature extraction by
applying, in order: random parametric EQ, formant shift, pitch shift and
pitch-range scaling. Ratios are drawn log-uniformly from [1/max, max] with
widened defaults (formant 1.8, pitch 3, range 2). Every stage preserves
length exactly, and a stage whose ratio is 1 (or zero EQ gain) is skipped,
so the identity configuration is an exact no-op.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.signal

from .dsp import AudioClip

_PV_FFT = 2048
_PV_HOP = 512


@dataclass(frozen=True)
class PerturbConfig:
    formant_shift_max: float = 1.8
    pitch_shift_max: float = 3.0
    pitch_range_max: float = 2.0
    peq_bands: int = 8
    peq_gain_db_range: float = 12.0
    seed: int = 0

    def __post_init__(self):
        for name in ("formant_shift_max", "pitch_shift_max", "pitch_range_max"):
            if getattr(self, name) < 1.0:
                raise ValueError(f"{name} must be >= 1")


def sample_ratios(cfg: PerturbConfig, rng: np.random.Generator):
    """Draw (formant, pitch, range) ratios log-uniformly from [1/max, max]."""

    def draw(max_ratio):
        if max_ratio == 1.0:
            return 1.0
        return float(np.exp(rng.uniform(-np.log(max_ratio), np.log(max_ratio))))

    return (
        draw(cfg.formant_shift_max),
        draw(cfg.pitch_shift_max),
        draw(cfg.pitch_range_max),
    )


def _peaking_biquad(f0: float, gain_db: float, q: float, rate: int):
    # RBJ audio-EQ cookbook peaking filter
    a_gain = 10.0 ** (gain_db / 40.0)
    w0 = 2.0 * np.pi * f0 / rate
    alpha = np.sin(w0) / (2.0 * q)
    b = np.array([1 + alpha * a_gain, -2 * np.cos(w0), 1 - alpha * a_gain])
    a = np.array([1 + alpha / a_gain, -2 * np.cos(w0), 1 - alpha / a_gain])
    return b / a[0], a / a[0]


def sample_eq(cfg: PerturbConfig, rng: np.random.Generator, rate: int):
    """Random peaking-filter parameters: (center_hz, gain_db, q) per band."""
    f_hi = min(10000.0, 0.45 * rate)
    centers = np.exp(rng.uniform(np.log(60.0), np.log(f_hi), cfg.peq_bands))
    gains = rng.uniform(-cfg.peq_gain_db_range, cfg.peq_gain_db_range, cfg.peq_bands)
    qs = np.exp(rng.uniform(np.log(0.5), np.log(3.0), cfg.peq_bands))
    return list(zip(centers, gains, qs))


def apply_eq(x: np.ndarray, bands, rate: int) -> np.ndarray:
    for f0, gain_db, q in bands:
        b, a = _peaking_biquad(f0, gain_db, q, rate)
        x = scipy.signal.lfilter(b, a, x)
    return x


def _stft(x, n_fft=_PV_FFT, hop=_PV_HOP):
    window = np.hanning(n_fft)
    pad = n_fft // 2
    xp = np.pad(x, pad, mode="reflect" if len(x) > pad else "constant")
    n_frames = 1 + (len(xp) - n_fft) // hop
    idx = np.arange(n_fft)[None, :] + hop * np.arange(n_frames)[:, None]
    return np.fft.rfft(xp[idx] * window, axis=1).T


def _istft(spec, length, n_fft=_PV_FFT, hop=_PV_HOP):
    window = np.hanning(n_fft)
    frames = np.fft.irfft(spec.T, n=n_fft, axis=1) * window
    n_frames = frames.shape[0]
    out = np.zeros(n_fft + hop * (n_frames - 1))
    wsum = np.zeros_like(out)
    for i in range(n_frames):
        out[i * hop : i * hop + n_fft] += frames[i]
        wsum[i * hop : i * hop + n_fft] += window**2
    out = out / np.maximum(wsum, 1e-8)
    pad = n_fft // 2
    out = out[pad : pad + length]
    if len(out) < length:
        out = np.pad(out, (0, length - len(out)))
    return out


def time_stretch(x: np.ndarray, rate: float) -> np.ndarray:
    """Phase-vocoder time stretch; rate > 1 shortens, pitch unchanged."""
    if rate == 1.0:
        return x.copy()
    spec = _stft(x)
    n_bins, n_frames = spec.shape
    steps = np.arange(0, n_frames, rate)
    omega = 2.0 * np.pi * np.arange(n_bins) * _PV_HOP / _PV_FFT

    out = np.zeros((n_bins, len(steps)), dtype=complex)
    phase = np.angle(spec[:, 0])
    spec_pad = np.concatenate([spec, np.zeros((n_bins, 2), dtype=complex)], axis=1)
    for t, step in enumerate(steps):
        i = int(step)
        frac = step - i
        mag = (1 - frac) * np.abs(spec_pad[:, i]) + frac * np.abs(spec_pad[:, i + 1])
        out[:, t] = mag * np.exp(1j * phase)
        dphase = np.angle(spec_pad[:, i + 1]) - np.angle(spec_pad[:, i]) - omega
        dphase -= 2.0 * np.pi * np.round(dphase / (2.0 * np.pi))
        phase += omega + dphase
    return _istft(out, int(round(len(x) / rate)))


def pitch_shift(x: np.ndarray, ratio: float) -> np.ndarray:
    """Shift pitch by a multiplicative ratio, preserving length."""
    if ratio == 1.0:
        return x.copy()
    stretched = time_stretch(x, 1.0 / ratio)
    from fractions import Fraction

    frac = Fraction(ratio).limit_denominator(1000)
    out = scipy.signal.resample_poly(stretched, frac.denominator, frac.numerator)
    if len(out) < len(x):
        out = np.pad(out, (0, len(x) - len(out)))
    return out[: len(x)]


def formant_shift(x: np.ndarray, ratio: float, lifter: int = 60) -> np.ndarray:
    """Warp the cepstrally-smoothed spectral envelope by `ratio` (>1 = up)."""
    if ratio == 1.0:
        return x.copy()
    spec = _stft(x)
    mag = np.abs(spec)
    phase = np.angle(spec)
    n_bins = mag.shape[0]

    log_mag = np.log(mag + 1e-10)
    ceps = np.fft.rfft(log_mag, axis=0)
    ceps[lifter:] = 0.0
    env = np.real(np.fft.irfft(ceps, n=n_bins, axis=0))

    src_bins = np.arange(n_bins) / ratio
    env_warp = np.empty_like(env)
    for t in range(env.shape[1]):
        env_warp[:, t] = np.interp(src_bins, np.arange(n_bins), env[:, t])

    new_mag = mag * np.exp(env_warp - env)
    return _istft(new_mag * np.exp(1j * phase), len(x))


def estimate_f0(
    x: np.ndarray,
    rate: int,
    f_lo: float = 50.0,
    f_hi: float = 1100.0,
    frame: int = 2048,
    hop: int = 512,
):
    """Autocorrelation f0 track; returns (f0_hz, voiced) per frame, 0 when unvoiced."""
    if len(x) < frame:
        x = np.pad(x, (0, frame - len(x)))
    n_frames = 1 + (len(x) - frame) // hop
    f0 = np.zeros(n_frames)
    voiced = np.zeros(n_frames, dtype=bool)
    lag_lo = max(2, int(rate / f_hi))
    lag_hi = min(frame - 1, int(rate / f_lo))
    rms_all = np.sqrt(np.mean(x**2)) + 1e-12
    for i in range(n_frames):
        seg = x[i * hop : i * hop + frame]
        seg = seg - seg.mean()
        if np.sqrt(np.mean(seg**2)) < 0.05 * rms_all:
            continue
        ac = np.fft.irfft(np.abs(np.fft.rfft(seg, n=2 * frame)) ** 2)[: frame]
        if ac[0] <= 0:
            continue
        window = ac[lag_lo:lag_hi]
        peak = int(np.argmax(window)) + lag_lo
        if ac[peak] / ac[0] > 0.45:
            f0[i] = rate / peak
            voiced[i] = True
    return f0, voiced


def pitch_range_scale(
    x: np.ndarray, rate: int, ratio: float, chunk: int = 16384
) -> np.ndarray:
    """Scale f0 deviations about the utterance median pitch by `ratio`.

    Applied as chunked pitch shifts with per-chunk transposition
    (f0/median)^(ratio-1), crossfaded with Hann windows.
    """
    if ratio == 1.0:
        return x.copy()
    f0, voiced = estimate_f0(x, rate)
    if not voiced.any():
        return x.copy()
    median = float(np.median(f0[voiced]))
    frame_ratio = np.ones_like(f0)
    frame_ratio[voiced] = (f0[voiced] / median) ** (ratio - 1.0)
    frame_ratio = np.clip(frame_ratio, 0.25, 4.0)

    hop = chunk // 2
    window = np.hanning(chunk)
    n_chunks = max(1, int(np.ceil(len(x) / hop)) - 1)
    out = np.zeros(len(x) + chunk)
    wsum = np.zeros_like(out)
    f0_hop = 512
    for c in range(n_chunks):
        start = c * hop
        seg = x[start : start + chunk]
        if len(seg) < chunk:
            seg = np.pad(seg, (0, chunk - len(seg)))
        lo = start // f0_hop
        hi = min(len(frame_ratio), (start + chunk) // f0_hop + 1)
        r = float(np.exp(np.mean(np.log(frame_ratio[lo:hi])))) if hi > lo else 1.0
        shifted = pitch_shift(seg, r) if abs(r - 1.0) > 1e-3 else seg
        out[start : start + chunk] += shifted * window
        wsum[start : start + chunk] += window
    return (out / np.maximum(wsum, 1e-8))[: len(x)]


def apply_perturbation(
    clip: AudioClip,
    eq_bands,
    r_formant: float,
    r_pitch: float,
    r_range: float,
) -> AudioClip:
    """Deterministic perturbation with explicit parameters (EQ -> formant -> pitch -> range)."""
    x = clip.samples
    if eq_bands:
        x = apply_eq(x, eq_bands, clip.sample_rate)
    x = formant_shift(x, r_formant)
    x = pitch_shift(x, r_pitch)
    x = pitch_range_scale(x, clip.sample_rate, r_range)
    peak = np.max(np.abs(x))
    if peak > 1.0:
        x = x / peak
    assert len(x) == len(clip)
    return AudioClip(
        samples=x,
        sample_rate=clip.sample_rate,
        source_path=clip.source_path,
        category=clip.category,
    )


def perturb_timbre(clip: AudioClip, cfg: PerturbConfig) -> AudioClip:
    """Randomly perturb timbre; deterministic given cfg.seed."""
    if len(clip) == 0:
        raise ValueError("empty clip")
    rng = np.random.default_rng(cfg.seed)
    eq_bands = (
        sample_eq(cfg, rng, clip.sample_rate) if cfg.peq_gain_db_range > 0 else []
    )
    r_formant, r_pitch, r_range = sample_ratios(cfg, rng)
    return apply_perturbation(clip, eq_bands, r_formant, r_pitch, r_range)
