"""Objective metrics: energy-contour correlation (PCC-E) and RMSE (RMSE-E),
plus an optional external-ASR hook for character/word error rates.

Energy contours are computed with the same 882/220 magnitude STFT and
log-mean normalization as training.
"""

from __future__ import annotations

import json
import logging
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import dsp
from .dsp import AudioClip, EnergyContour

logger = logging.getLogger(__name__)


def pcc_energy(a: EnergyContour, b: EnergyContour) -> Optional[float]:
    """Pearson r between two contours; None when either has zero variance."""
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    if len(a) < 2:
        raise ValueError("need at least 2 frames")
    x, y = np.asarray(a.values, float), np.asarray(b.values, float)
    sx, sy = x.std(), y.std()
    if sx == 0.0 or sy == 0.0:
        return None
    return float(np.mean((x - x.mean()) * (y - y.mean())) / (sx * sy))


def rmse_energy(a: EnergyContour, b: EnergyContour) -> float:
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    x, y = np.asarray(a.values, float), np.asarray(b.values, float)
    return float(np.sqrt(np.mean((x - y) ** 2)))


def _levenshtein(a: Sequence, b: Sequence) -> int:
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def cer(reference: str, hypothesis: str) -> float:
    ref = reference.replace(" ", "")
    hyp = hypothesis.replace(" ", "")
    if not ref:
        return 0.0 if not hyp else 1.0
    return _levenshtein(ref, hyp) / len(ref)


def wer(reference: str, hypothesis: str) -> float:
    ref, hyp = reference.split(), hypothesis.split()
    if not ref:
        return 0.0 if not hyp else 1.0
    return _levenshtein(ref, hyp) / len(ref)


class CommandAsrPlugin:
    """External transcriber: runs `command <wav-path>` and reads stdout."""

    def __init__(self, command: Sequence[str], timeout_s: float = 120.0):
        self.command = list(command)
        self.timeout_s = timeout_s

    def transcribe(self, clip: AudioClip) -> str:
        with tempfile.NamedTemporaryFile(suffix=".wav") as tmp:
            dsp.save_wav(tmp.name, clip)
            out = subprocess.run(
                self.command + [tmp.name],
                capture_output=True, text=True, timeout=self.timeout_s, check=True,
            )
        return out.stdout.strip()


@dataclass
class EvalPair:
    source: AudioClip
    converted: AudioClip
    linguistic: bool = False  # has phonemic content -> eligible for CER/WER


@dataclass
class EvalReport:
    records: list = field(default_factory=list)
    count: int = 0
    mean_pcc_e: Optional[float] = None
    mean_rmse_e: Optional[float] = None
    mean_cer: Optional[float] = None
    mean_wer: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "mean_pcc_e": self.mean_pcc_e,
            "mean_rmse_e": self.mean_rmse_e,
            "mean_cer": self.mean_cer,
            "mean_wer": self.mean_wer,
            "records": self.records,
        }


def evaluate_pairs(pairs: Sequence[EvalPair], asr_plugin=None,
                   stft_cfg: dsp.StftConfig = dsp.StftConfig()) -> EvalReport:
    """Energy metrics per pair; ASR-based CER/WER only where configured
    and flagged. ASR failures degrade gracefully to an energy-only report."""
    report = EvalReport()
    pccs, rmses, cers, wers = [], [], [], []
    for i, pair in enumerate(pairs):
        e_src = dsp.energy_from_clip(pair.source, stft_cfg)
        e_cnv = dsp.energy_from_clip(pair.converted, stft_cfg)
        t = min(len(e_src), len(e_cnv))
        e_src = EnergyContour(e_src.values[:t], normalized=True)
        e_cnv = EnergyContour(e_cnv.values[:t], normalized=True)
        record = {"index": i}
        record["pcc_e"] = pcc_energy(e_src, e_cnv)
        record["rmse_e"] = rmse_energy(e_src, e_cnv)
        if record["pcc_e"] is not None:
            pccs.append(record["pcc_e"])
        rmses.append(record["rmse_e"])

        if asr_plugin is not None and pair.linguistic:
            try:
                ref_text = asr_plugin.transcribe(pair.source)
                hyp_text = asr_plugin.transcribe(pair.converted)
                record["cer"] = cer(ref_text, hyp_text)
                record["wer"] = wer(ref_text, hyp_text)
                cers.append(record["cer"])
                wers.append(record["wer"])
            except Exception as exc:
                logger.warning("ASR plug-in failed on pair %d: %s", i, exc)
        report.records.append(record)

    report.count = len(pairs)
    if pccs:
        report.mean_pcc_e = float(np.mean(pccs))
    if rmses:
        report.mean_rmse_e = float(np.mean(rmses))
    if cers:
        report.mean_cer = float(np.mean(cers))
        report.mean_wer = float(np.mean(wers))
    return report


def write_report(report: EvalReport, path, config_hash: str = "") -> None:
    payload = {"config_hash": config_hash, **report.to_dict()}
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")
