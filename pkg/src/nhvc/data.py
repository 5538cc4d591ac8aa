"""Dataset manifests and the per-clip feature cache.

A manifest is newline-delimited JSON with exactly the fields {path,
category, duration_s}. There are deliberately no style or speaker labels:
the schema rejects them, since style is extracted from reference audio at
run time rather than annotated.

The cache stores one .npz per clip holding the four aligned feature tracks
(waveform, linear spectrogram, reference mel, normalized energy, retimed
SSL features) plus the config hash that produced them.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import dsp, linguistic, perturb
from .dsp import CATEGORIES, AudioClip
from .errors import DataError

logger = logging.getLogger(__name__)

MANIFEST_FIELDS = {"path", "category", "duration_s"}


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    category: str
    duration_s: Optional[float] = None


def load_manifest(path, check_paths: bool = True) -> list[ManifestEntry]:
    entries = []
    base = Path(path).parent
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            if not isinstance(record, dict):
                raise DataError(f"{path}:{lineno}: record must be an object")
            extra = set(record) - MANIFEST_FIELDS
            if extra:
                labelish = [k for k in extra if "style" in k.lower()
                            or "speaker" in k.lower() or k.lower() in ("sid", "spk")]
                if labelish:
                    raise DataError(
                        f"{path}:{lineno}: style/speaker label fields are not "
                        f"allowed in manifests: {sorted(labelish)}"
                    )
                raise DataError(f"{path}:{lineno}: unknown fields {sorted(extra)}")
            if "path" not in record or "category" not in record:
                raise DataError(f"{path}:{lineno}: need 'path' and 'category'")
            if record["category"] not in CATEGORIES:
                raise DataError(
                    f"{path}:{lineno}: category must be one of {CATEGORIES}, "
                    f"got {record['category']!r}"
                )
            clip_path = Path(record["path"])
            if not clip_path.is_absolute():
                clip_path = base / clip_path
            if check_paths and not clip_path.exists():
                raise DataError(f"{path}:{lineno}: no such file {clip_path}")
            entries.append(
                ManifestEntry(
                    path=str(clip_path),
                    category=record["category"],
                    duration_s=record.get("duration_s"),
                )
            )
    return entries


@dataclass
class ClipFeatures:
    """Frame-aligned feature tracks for one clip (T frames, hop 220)."""

    wave: np.ndarray      # (T*220,) zero-padded tail
    linear: np.ndarray    # (442, T)
    mel: np.ndarray       # (n_mels_ref, T) log mel
    energy: np.ndarray    # (T,) log-mean normalized
    ling: np.ndarray      # (ssl_dim, T) retimed SSL features
    path: str = ""
    category: str = ""

    @property
    def frames(self) -> int:
        return self.linear.shape[1]


def _clip_seed(base_seed: int, path: str) -> int:
    digest = hashlib.sha1(path.encode()).digest()
    return (base_seed * 1000003 + int.from_bytes(digest[:4], "little")) % (2**31)


def compute_features(clip: AudioClip, run_cfg, backend) -> ClipFeatures:
    """All four training feature tracks, frame-aligned on the 220-sample hop."""
    if clip.sample_rate != run_cfg.stft.sample_rate:
        clip = dsp.resample(clip, run_cfg.stft.sample_rate)

    spec = dsp.stft(clip, run_cfg.stft)
    t = spec.n_frames

    fb = dsp.mel_filterbank(run_cfg.stft, run_cfg.model.n_mels_ref)
    mel = dsp.mel_spectrogram(spec, fb, log_scale=True)
    energy = dsp.normalize_energy(dsp.frame_energy(spec))

    pcfg = perturb.PerturbConfig(
        **{
            **run_cfg.perturb.__dict__,
            "seed": _clip_seed(run_cfg.perturb.seed, clip.source_path or ""),
        }
    )
    perturbed = perturb.perturb_timbre(clip, pcfg)
    clip16k = dsp.resample(perturbed, linguistic.SSL_RATE)
    feats = linguistic.extract_features(clip16k, backend)
    ling = linguistic.retime_to_hop(feats, t)

    hop = run_cfg.stft.hop_samples
    wave = clip.samples
    if len(wave) < t * hop:
        wave = np.pad(wave, (0, t * hop - len(wave)))
    else:
        wave = wave[: t * hop]

    return ClipFeatures(
        wave=wave.astype(np.float32),
        linear=spec.frames.astype(np.float32),
        mel=mel.frames.astype(np.float32),
        energy=energy.values.astype(np.float32),
        ling=ling.astype(np.float32),
        path=clip.source_path or "",
        category=clip.category or "",
    )


class FeatureCache:
    """One .npz per clip, keyed by source path, tagged with a config hash."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _file(self, clip_path: str) -> Path:
        key = hashlib.sha1(str(clip_path).encode()).hexdigest()[:16]
        return self.root / f"{key}.npz"

    def has(self, clip_path: str, cfg_hash: str) -> bool:
        f = self._file(clip_path)
        if not f.exists():
            return False
        try:
            with np.load(f, allow_pickle=False) as data:
                return str(data["config_hash"]) == cfg_hash
        except Exception:
            return False

    def store(self, feats: ClipFeatures, cfg_hash: str) -> Path:
        f = self._file(feats.path)
        tmp = f.with_suffix(".tmp.npz")
        np.savez(
            tmp,
            wave=feats.wave,
            linear=feats.linear,
            mel=feats.mel,
            energy=feats.energy,
            ling=feats.ling,
            config_hash=np.str_(cfg_hash),
            path=np.str_(feats.path),
            category=np.str_(feats.category),
            frames=np.int64(feats.frames),
        )
        tmp.replace(f)
        return f

    def load(self, clip_path: str) -> ClipFeatures:
        f = self._file(clip_path)
        if not f.exists():
            raise DataError(f"no cached features for {clip_path}")
        with np.load(f, allow_pickle=False) as data:
            return ClipFeatures(
                wave=data["wave"],
                linear=data["linear"],
                mel=data["mel"],
                energy=data["energy"],
                ling=data["ling"],
                path=str(data["path"]),
                category=str(data["category"]),
            )

    def load_all(self, entries) -> list[ClipFeatures]:
        return [self.load(e.path) for e in entries]


def preprocess(entries, run_cfg, backend, cache: FeatureCache, cfg_hash: str):
    """Populate the cache; idempotent for an unchanged config hash.

    Returns (computed, skipped, failed) counts.
    """
    computed = skipped = failed = 0
    for entry in entries:
        if cache.has(entry.path, cfg_hash):
            skipped += 1
            continue
        try:
            clip = dsp.load_wav(entry.path)
            clip.category = entry.category
            feats = compute_features(clip, run_cfg, backend)
            cache.store(feats, cfg_hash)
            computed += 1
        except Exception as exc:
            logger.warning("skipping %s: %s", entry.path, exc)
            failed += 1
    return computed, skipped, failed
