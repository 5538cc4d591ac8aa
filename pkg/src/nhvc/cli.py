"""Command-line surface: preprocess, train, convert, evaluate, plot.

Exit codes: 0 ok, 2 config error, 3 data error, 4 model-state error.
Every command prints the hash of the configuration it ran with.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import config as config_mod
from . import conversion, data, dsp, evaluation, linguistic, training
from .errors import ConfigError, DataError, ModelStateError
from .model import Generator

logger = logging.getLogger(__name__)

CACHE_ENV_VAR = "NHVC_CACHE_ROOT"


def _load_run_config(path):
    if path:
        return config_mod.load_config(path)
    return config_mod.RunConfig()


def _make_backend(run_cfg):
    if run_cfg.ssl_backend == "stub":
        return linguistic.StubBackend()
    return linguistic.Wav2Vec2Backend(run_cfg.ssl_backend)


def _cache_dir(args) -> Path:
    if getattr(args, "cache_dir", None):
        return Path(args.cache_dir)
    root = os.environ.get(CACHE_ENV_VAR)
    if not root:
        raise ConfigError(
            f"no cache directory: pass --cache-dir or set {CACHE_ENV_VAR}"
        )
    return Path(root)


def cmd_preprocess(args) -> int:
    run_cfg = _load_run_config(args.config)
    cfg_hash = config_mod.config_hash(run_cfg)
    print(f"config hash: {cfg_hash}")
    entries = data.load_manifest(args.manifest)
    cache = data.FeatureCache(_cache_dir(args))
    backend = _make_backend(run_cfg)
    computed, skipped, failed = data.preprocess(
        entries, run_cfg, backend, cache, cfg_hash
    )
    print(f"computed {computed}, skipped {skipped} (cached), failed {failed}")
    return 0 if failed == 0 else 3


def cmd_train(args) -> int:
    run_cfg = _load_run_config(args.config)
    cfg_hash = config_mod.config_hash(run_cfg)
    print(f"config hash: {cfg_hash}")
    entries = data.load_manifest(args.manifest)
    cache = data.FeatureCache(_cache_dir(args))
    features = cache.load_all(entries)
    state = training.train(
        run_cfg, features, args.out_dir,
        max_steps=args.max_steps, resume=args.resume,
    )
    print(f"trained to step {state.step}; checkpoint in {args.out_dir}")
    return 0


def _load_model_from_checkpoint(path, config_path=None):
    import torch

    ckpt_path = Path(path)
    if not ckpt_path.exists():
        raise ModelStateError(f"no checkpoint at {path}")
    payload = torch.load(ckpt_path, map_location="cpu", weights_only=False)
    if config_path:
        run_cfg = config_mod.load_config(config_path)
    elif payload.get("config"):
        run_cfg = config_mod.from_dict(
            {k: v for k, v in payload["config"].items()}
        )
    else:
        raise ModelStateError("checkpoint carries no config; pass --config")
    state = training.load_checkpoint(
        ckpt_path, run_cfg, expected_hash=config_mod.config_hash(run_cfg)
    )
    return state.generator, run_cfg


def cmd_convert(args) -> int:
    gen, run_cfg = _load_model_from_checkpoint(args.checkpoint, args.config)
    print(f"config hash: {config_mod.config_hash(run_cfg)}")
    source = dsp.load_wav(args.source)
    reference = dsp.load_wav(args.reference)
    backend = _make_backend(run_cfg)
    req = conversion.ConversionRequest(
        source=source, reference=reference,
        temperature=args.temperature, seed=args.seed,
    )
    out = conversion.convert(req, gen, backend, run_cfg)
    dsp.save_wav(args.out, out)
    print(f"wrote {args.out} ({out.duration_s:.2f} s)")
    return 0


def cmd_evaluate(args) -> int:
    run_cfg = _load_run_config(args.config)
    cfg_hash = config_mod.config_hash(run_cfg)
    print(f"config hash: {cfg_hash}")
    pairs = []
    with open(args.pairs_manifest) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                pairs.append(
                    evaluation.EvalPair(
                        source=dsp.load_wav(rec["source"]),
                        converted=dsp.load_wav(rec["converted"]),
                        linguistic=bool(rec.get("linguistic", False)),
                    )
                )
            except (KeyError, json.JSONDecodeError) as exc:
                raise DataError(f"{args.pairs_manifest}:{lineno}: {exc}") from exc
    plugin = None
    if args.asr_command:
        plugin = evaluation.CommandAsrPlugin(args.asr_command.split())
    report = evaluation.evaluate_pairs(pairs, asr_plugin=plugin,
                                       stft_cfg=run_cfg.stft)
    evaluation.write_report(report, args.out_report, config_hash=cfg_hash)
    print(
        f"{report.count} pairs; mean PCC-E {report.mean_pcc_e}, "
        f"mean RMSE-E {report.mean_rmse_e}"
    )
    return 0


def cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    run_cfg = _load_run_config(args.config)
    print(f"config hash: {config_mod.config_hash(run_cfg)}")
    clip = dsp.load_wav(args.audio)
    if clip.sample_rate != run_cfg.stft.sample_rate:
        clip = dsp.resample(clip, run_cfg.stft.sample_rate)
    spec = dsp.stft(clip, run_cfg.stft)
    f_max = args.max_freq or run_cfg.stft.sample_rate / 2
    fb = dsp.mel_filterbank(run_cfg.stft, run_cfg.model.n_mels_ref, 0.0, f_max)
    mel = dsp.mel_spectrogram(spec, fb, log_scale=True)

    fig, ax = plt.subplots(figsize=(10, 4))
    ax.imshow(
        mel.frames, origin="lower", aspect="auto",
        extent=[0, clip.duration_s, 0, f_max / 1000.0],
    )
    ax.set_xlabel("time (s)")
    ax.set_ylabel("mel frequency (kHz)")
    fig.tight_layout()
    fig.savefig(args.out_image)
    plt.close(fig)
    print(f"wrote {args.out_image}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nhvc", description="44.1 kHz human-to-non-human voice conversion"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="compute and cache clip features")
    p.add_argument("manifest")
    p.add_argument("--config")
    p.add_argument("--cache-dir")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="run the training loop")
    p.add_argument("manifest")
    p.add_argument("--config")
    p.add_argument("--cache-dir")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--resume")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("convert", help="convert source content to reference timbre")
    p.add_argument("checkpoint")
    p.add_argument("source")
    p.add_argument("reference")
    p.add_argument("out")
    p.add_argument("--config")
    p.add_argument("--temperature", type=float, default=0.667)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("evaluate", help="energy metrics over (source, converted) pairs")
    p.add_argument("pairs_manifest")
    p.add_argument("out_report")
    p.add_argument("--config")
    p.add_argument("--asr-endpoint", dest="asr_command",
                   help="external transcription command; appended with a wav path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("plot", help="write a mel-spectrogram image")
    p.add_argument("audio")
    p.add_argument("out_image")
    p.add_argument("--config")
    p.add_argument("--max-freq", type=float)
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except ModelStateError as exc:
        print(f"model-state error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
