"""Command-line entry point for data generation, training, inference,
streaming, evaluation, and benchmarking.

Flags override config-file values; every file-producing run writes a
resolved-config snapshot beside its outputs. Relative checkpoint paths
resolve under $SPECWAVE_CKPT_DIR when it is set. Logs go to stderr as
line-delimited events.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch

from .config import ConfigError, load_run_config, save_config_snapshot
from .conditioner import build_hybrid
from .data import generate_dataset, read_wav, write_wav
from .dsp import MagnitudeSpectrogram, Waveform, istft_with_phase, stft
from .evaluation import evaluate_testset, rtf_benchmark
from .streaming import DenoiserStream
from .training import (
    CheckpointError,
    TrainingDivergedError,
    hybrid_from_checkpoint,
    load_checkpoint,
    save_checkpoint,
    specnet_from_checkpoint,
    train_hybrid,
    train_specnet,
)

logger = logging.getLogger("specwave.cli")

CKPT_DIR_ENV = "SPECWAVE_CKPT_DIR"


def _ckpt_path(path) -> Path:
    p = Path(path)
    if not p.is_absolute() and CKPT_DIR_ENV in os.environ:
        return Path(os.environ[CKPT_DIR_ENV]) / p
    return p


def _snapshot_beside(cfg, out_path) -> None:
    out_path = Path(out_path)
    target = (
        out_path / "run_config.yaml"
        if out_path.is_dir()
        else out_path.with_name(out_path.name + ".config.yaml")
    )
    save_config_snapshot(cfg, target)


def _overrides(args, mapping) -> dict:
    out = {}
    for attr, dotted in mapping.items():
        value = getattr(args, attr, None)
        if value is not None:
            out[dotted] = value
    return out


def cmd_gen_data(args) -> int:
    cfg = load_run_config(
        args.config,
        _overrides(
            args,
            {
                "n_clips": "data.n_clips",
                "clip_seconds": "data.clip_seconds",
                "seed": "seed",
            },
        ),
    )
    manifest = generate_dataset(
        args.out,
        n_clips=cfg.data.n_clips,
        clip_seconds=cfg.data.clip_seconds,
        sample_rate=cfg.data.sample_rate,
        seed=cfg.seed,
        noise_kinds=cfg.data.noise_kinds,
        snr_grid_db=cfg.data.snr_grid(),
    )
    _snapshot_beside(cfg, args.out)
    logger.info("wrote %s", manifest)
    print(manifest)
    return 0


def cmd_train_spec(args) -> int:
    cfg = load_run_config(
        args.config,
        _overrides(
            args,
            {
                "iters": "optim_spec.total_iters",
                "batch": "optim_spec.batch_size",
                "seed": "seed",
                "clip_seconds": "train_clip_seconds",
            },
        ),
    )
    resume = load_checkpoint(_ckpt_path(args.resume)) if args.resume else None
    result = train_specnet(
        args.manifest,
        cfg=cfg.specnet,
        optim=cfg.optim_spec,
        seed=cfg.seed,
        clip_seconds=cfg.train_clip_seconds,
        sample_rate=cfg.data.sample_rate,
        ckpt_dir=_ckpt_path(args.out).parent,
        resume_from=resume,
    )
    out = _ckpt_path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.checkpoint, out)
    _snapshot_beside(cfg, out)
    logger.info("saved checkpoint %s", out)
    return 0


def cmd_train_full(args) -> int:
    cfg = load_run_config(
        args.config,
        _overrides(
            args,
            {
                "iters": "optim_full.total_iters",
                "batch": "optim_full.batch_size",
                "seed": "seed",
                "clip_seconds": "train_clip_seconds",
                "method": "conditioner.method",
                "band": "loss.band",
            },
        ),
    )
    spec_ckpt = load_checkpoint(_ckpt_path(args.spec_ckpt))
    result = train_hybrid(
        args.manifest,
        spec_ckpt,
        unet_cfg=cfg.unet,
        cond_cfg=cfg.conditioner,
        band=cfg.loss.band,
        optim=cfg.optim_full,
        seed=cfg.seed,
        clip_seconds=cfg.train_clip_seconds,
        sample_rate=cfg.data.sample_rate,
        resolutions=cfg.loss.stft_params(),
        log_norm=cfg.loss.log_norm,
        ckpt_dir=_ckpt_path(args.out).parent,
    )
    out = _ckpt_path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.checkpoint, out)
    _snapshot_beside(cfg, out)
    logger.info("saved checkpoint %s", out)
    return 0


def _denoise_with_checkpoint(ckpt, noisy: Waveform) -> Waveform:
    x = torch.from_numpy(noisy.samples.astype(np.float32))[None, None, :]
    if ckpt.kind == "hybrid":
        model = hybrid_from_checkpoint(ckpt).eval()
        with torch.no_grad():
            est = model(x)[0, 0].numpy()
        return Waveform(est.astype(np.float64), noisy.sample_rate)
    # spectrogram-only checkpoint: denoise magnitudes, reuse the noisy phase
    model = specnet_from_checkpoint(ckpt).eval()
    from .modules import magnitude_stft

    with torch.no_grad():
        mag = magnitude_stft(x[:, 0], model.cfg.stft)
        y_hat = model(mag)[0].numpy().astype(np.float64)
    noisy_spec = stft(noisy, model.cfg.stft)
    return istft_with_phase(
        MagnitudeSpectrogram(y_hat, model.cfg.stft),
        noisy_spec,
        len(noisy),
        sample_rate=noisy.sample_rate,
    )


def cmd_denoise(args) -> int:
    cfg = load_run_config(args.config)
    ckpt = load_checkpoint(_ckpt_path(args.ckpt))
    noisy = read_wav(args.infile)
    est = _denoise_with_checkpoint(ckpt, noisy)
    write_wav(args.outfile, est, fmt=args.format)
    _snapshot_beside(cfg, args.outfile)
    logger.info("wrote %s (%d samples)", args.outfile, len(est))
    return 0


def cmd_stream(args) -> int:
    cfg = load_run_config(args.config)
    ckpt = load_checkpoint(_ckpt_path(args.ckpt))
    if ckpt.kind != "hybrid":
        raise ConfigError("stream mode needs a hybrid checkpoint")
    model = hybrid_from_checkpoint(ckpt).eval()
    stream = DenoiserStream(model, attn_window=cfg.streaming.attn_window)

    stdin = sys.stdin.buffer
    stdout = sys.stdout.buffer
    chunk_bytes = 4 * cfg.streaming.chunk_samples
    while True:
        raw = stdin.read(chunk_bytes)
        if not raw:
            break
        chunk = np.frombuffer(raw, dtype="<f4")
        out = stream.push(chunk)
        if out.size:
            stdout.write(out.astype("<f4").tobytes())
            stdout.flush()
    tail = stream.close()
    if tail.size:
        stdout.write(tail.astype("<f4").tobytes())
    stdout.flush()
    return 0


def cmd_eval(args) -> int:
    cfg = load_run_config(args.config)
    ckpt = load_checkpoint(_ckpt_path(args.ckpt))
    if ckpt.kind != "hybrid":
        raise ConfigError("eval mode needs a hybrid checkpoint")
    model = hybrid_from_checkpoint(ckpt).eval()
    report = evaluate_testset(
        args.manifest,
        model,
        out_path=args.out,
        lsd_params=cfg.eval.lsd_params(),
        external_metrics=cfg.eval.metrics(),
        config_blob=ckpt.config,
    )
    _snapshot_beside(cfg, args.out)
    logger.info("evaluated %d items", report.aggregates["count"])
    print(json.dumps(report.aggregates, indent=2))
    return 0


def cmd_bench_rtf(args) -> int:
    cfg = load_run_config(args.config)
    if args.ckpt:
        model = hybrid_from_checkpoint(load_checkpoint(_ckpt_path(args.ckpt))).eval()
    else:
        model = build_hybrid(cfg.specnet, cfg.conditioner, cfg.unet, cfg.seed).eval()
    report = rtf_benchmark(
        model,
        batch=args.batch,
        seconds=args.seconds,
        sample_rate=cfg.data.sample_rate,
        trials=args.trials,
    )
    payload = json.dumps(report.as_dict(), indent=2)
    if args.out:
        Path(args.out).write_text(payload + "\n", encoding="utf-8")
        _snapshot_beside(cfg, args.out)
    print(payload)
    return 0


def cmd_inspect_ckpt(args) -> int:
    ckpt = load_checkpoint(_ckpt_path(args.ckpt))
    n_values = sum(int(np.prod(t.shape)) if t.shape else 1 for t in ckpt.tensors.values())
    info = {
        "kind": ckpt.kind,
        "format_version": ckpt.format_version,
        "iteration": ckpt.iteration,
        "n_tensors": len(ckpt.tensors),
        "n_values": n_values,
        "config": ckpt.config,
    }
    print(json.dumps(info, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="specwave",
        description="Two-stage hybrid speech denoiser: tools for synthetic "
        "data, training, file and streaming inference, evaluation, and "
        "benchmarking.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", default=None, help="YAML config file")
        p.set_defaults(func=fn)
        return p

    p = add("gen-data", cmd_gen_data, "synthesize a clean/noisy corpus + manifest")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n-clips", type=int, dest="n_clips")
    p.add_argument("--clip-seconds", type=float, dest="clip_seconds")
    p.add_argument("--seed", type=int)

    p = add("train-spec", cmd_train_spec, "stage 1: train the spectrogram denoiser")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--iters", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--clip-seconds", type=float, dest="clip_seconds")
    p.add_argument("--seed", type=int)
    p.add_argument("--resume", default=None, help="checkpoint to resume from")

    p = add("train-full", cmd_train_full, "stage 2: train the hybrid denoiser")
    p.add_argument("--manifest", required=True)
    p.add_argument("--spec-ckpt", required=True, dest="spec_ckpt")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--iters", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--clip-seconds", type=float, dest="clip_seconds")
    p.add_argument("--seed", type=int)
    p.add_argument("--method", choices=["addition", "concatenation", "film"])
    p.add_argument("--band", choices=["full", "high"])

    p = add("denoise", cmd_denoise, "denoise a WAV file")
    p.add_argument("--in", required=True, dest="infile")
    p.add_argument("--out", required=True, dest="outfile")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--format", choices=["float32", "pcm16"], default="float32")

    p = add("stream", cmd_stream, "raw float32 PCM stdin -> denoised stdout")
    p.add_argument("--ckpt", required=True)

    p = add("eval", cmd_eval, "evaluate a checkpoint on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True, help="JSON report path")

    p = add("bench-rtf", cmd_bench_rtf, "measure per-submodule real-time factors")
    p.add_argument("--ckpt", default=None)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--seconds", type=float, default=10.0)
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--out", default=None)

    p = add("inspect-ckpt", cmd_inspect_ckpt, "print checkpoint metadata")
    p.add_argument("ckpt")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
    )
    try:
        return args.func(args)
    except (ConfigError, CheckpointError) as e:
        logger.error("%s", e)
        return 1
    except TrainingDivergedError as e:
        logger.error("training diverged: %s", e)
        return 1
    except (FileNotFoundError, ValueError) as e:
        logger.error("%s", e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
