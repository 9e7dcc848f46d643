"""Two-stage optimization with warmup-cosine scheduling and checkpoints.

Stage 1 trains the spectrogram denoiser on (noisy, clean) magnitude pairs.
Stage 2 freezes it (by default) and trains the upsampler, conditioner, and
waveform U-Net on the predicted spectrograms, not the ground truth.

Checkpoint files are a JSON metadata header (format version, configs,
iteration, RNG states) followed by named raw little-endian float32 tensors
with a shape index; reloading reproduces forward outputs bit-exactly and
resuming reproduces the next iteration exactly.
"""

import base64
import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .conditioner import ConditionerConfig, HybridDenoiser, build_hybrid
from .data import read_wav, validate_manifest
from .losses import DEFAULT_RESOLUTIONS, hybrid_loss, spec_loss_breakdown
from .modules import magnitude_stft
from .specnet import SpecNet, SpecNetConfig, specnet_init
from .unet import UNetConfig

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"SWCK"
CHECKPOINT_FORMAT_VERSION = 1


class TrainingDivergedError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class OptimConfig:
    """Adam + warmup-cosine settings. Defaults are the stage-1 full-scale
    values; pass desk-scale overrides for local runs."""

    beta1: float = 0.9
    beta2: float = 0.999
    lr_max: float = 2e-4
    warmup_ratio: float = 0.05
    total_iters: int = 1_000_000
    batch_size: int = 64
    grad_clip: float = 5.0

    def __post_init__(self):
        if not (0.0 < self.warmup_ratio < 1.0):
            raise ValueError("warmup_ratio must be in (0, 1)")
        if self.lr_max <= 0:
            raise ValueError("lr_max must be positive")
        if self.total_iters < 1 or self.batch_size < 1:
            raise ValueError("total_iters and batch_size must be positive")


STAGE2_OPTIM_DEFAULTS = OptimConfig(total_iters=500_000, batch_size=32)


def lr_schedule(t: float, cfg: OptimConfig) -> float:
    """Linear warmup to lr_max over warmup_ratio * total, then cosine to 0."""
    if t < 0 or t > cfg.total_iters:
        raise ValueError(f"iteration {t} outside [0, {cfg.total_iters}]")
    warmup = cfg.warmup_ratio * cfg.total_iters
    if t <= warmup:
        return cfg.lr_max * t / warmup
    progress = (t - warmup) / (cfg.total_iters - warmup)
    return cfg.lr_max * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class Checkpoint:
    kind: str
    config: dict
    iteration: int
    tensors: dict
    torch_rng: bytes = None
    numpy_rng: dict = None
    format_version: int = CHECKPOINT_FORMAT_VERSION


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    index = []
    offset = 0
    blobs = []
    for name, tensor in ckpt.tensors.items():
        arr = np.asarray(tensor, dtype="<f4")
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blob = arr.tobytes()
        blobs.append(blob)
        offset += len(blob)
    header = {
        "format_version": ckpt.format_version,
        "kind": ckpt.kind,
        "config": ckpt.config,
        "iteration": ckpt.iteration,
        "torch_rng": base64.b64encode(ckpt.torch_rng).decode("ascii")
        if ckpt.torch_rng is not None
        else None,
        "numpy_rng": ckpt.numpy_rng,
        "tensors": index,
    }
    header_bytes = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 8 or raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file")
    (header_len,) = struct.unpack("<I", raw[4:8])
    if len(raw) < 8 + header_len:
        raise CheckpointError(f"{path} is truncated (incomplete header)")
    try:
        header = json.loads(raw[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path} has a corrupt header: {e}") from e
    if header.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format_version {header.get('format_version')}; "
            f"expected {CHECKPOINT_FORMAT_VERSION}"
        )
    payload = raw[8 + header_len :]
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + 4 * count
        if end > len(payload):
            raise CheckpointError(f"{path} is truncated (tensor {entry['name']})")
        arr = np.frombuffer(payload[start:end], dtype="<f4").reshape(shape)
        tensors[entry["name"]] = arr.copy()
    torch_rng = (
        base64.b64decode(header["torch_rng"]) if header.get("torch_rng") else None
    )
    return Checkpoint(
        kind=header["kind"],
        config=header["config"],
        iteration=header["iteration"],
        tensors=tensors,
        torch_rng=torch_rng,
        numpy_rng=header.get("numpy_rng"),
        format_version=header["format_version"],
    )


def _model_tensors(model: torch.nn.Module, prefix: str) -> dict:
    return {
        f"{prefix}{name}": param.detach().cpu().numpy()
        for name, param in model.state_dict().items()
    }


def _load_model_tensors(model: torch.nn.Module, tensors: dict, prefix: str) -> None:
    state = {}
    for name, param in model.state_dict().items():
        key = f"{prefix}{name}"
        if key not in tensors:
            raise CheckpointError(f"checkpoint is missing tensor {key}")
        arr = tensors[key]
        if tuple(arr.shape) != tuple(param.shape):
            raise CheckpointError(
                f"tensor {key} has shape {tuple(arr.shape)}, "
                f"model expects {tuple(param.shape)}"
            )
        state[name] = torch.from_numpy(arr.copy())
    model.load_state_dict(state)


def _optimizer_tensors(optimizer, named_params, prefix="optim.") -> dict:
    out = {}
    for name, param in named_params:
        state = optimizer.state.get(param)
        if not state:
            continue
        out[f"{prefix}{name}.step"] = np.asarray(float(state["step"]), dtype=np.float32)
        out[f"{prefix}{name}.exp_avg"] = state["exp_avg"].detach().cpu().numpy()
        out[f"{prefix}{name}.exp_avg_sq"] = state["exp_avg_sq"].detach().cpu().numpy()
    return out


def _load_optimizer_tensors(optimizer, named_params, tensors, prefix="optim.") -> None:
    for name, param in named_params:
        key = f"{prefix}{name}.step"
        if key not in tensors:
            continue
        optimizer.state[param] = {
            "step": torch.tensor(float(tensors[key])),
            "exp_avg": torch.from_numpy(tensors[f"{prefix}{name}.exp_avg"].copy()),
            "exp_avg_sq": torch.from_numpy(
                tensors[f"{prefix}{name}.exp_avg_sq"].copy()
            ),
        }


def _rng_snapshot(np_rng: np.random.Generator):
    return torch.get_rng_state().numpy().tobytes(), np_rng.bit_generator.state


def _restore_rng(ckpt: Checkpoint) -> np.random.Generator:
    if ckpt.torch_rng is not None:
        torch.set_rng_state(torch.frombuffer(bytearray(ckpt.torch_rng), dtype=torch.uint8).clone())
    rng = np.random.default_rng()
    if ckpt.numpy_rng is not None:
        rng.bit_generator.state = ckpt.numpy_rng
    return rng


class ClipSampler:
    """Draws hop-aligned training clips from the manifest's waveform pairs."""

    def __init__(self, manifest_path, hop: int, clip_len: int):
        records = validate_manifest(manifest_path)
        if not records:
            raise ValueError(f"manifest {manifest_path} is empty")
        base = Path(manifest_path).parent
        self.clean = []
        self.noisy = []
        for rec in records:
            clean = read_wav(base / rec.clean_path)
            noisy = read_wav(base / rec.noisy_path)
            if len(clean) < clip_len:
                raise ValueError(
                    f"{rec.clean_path} is shorter ({len(clean)}) than the "
                    f"training clip ({clip_len})"
                )
            self.clean.append(clean.samples.astype(np.float32))
            self.noisy.append(noisy.samples.astype(np.float32))
        self.hop = hop
        self.clip_len = clip_len

    def batch(self, rng: np.random.Generator, batch_size: int):
        idx = rng.integers(0, len(self.clean), size=batch_size)
        clean = np.empty((batch_size, self.clip_len), dtype=np.float32)
        noisy = np.empty((batch_size, self.clip_len), dtype=np.float32)
        for row, i in enumerate(idx):
            max_start = (len(self.clean[i]) - self.clip_len) // self.hop
            start = self.hop * int(rng.integers(0, max_start + 1))
            clean[row] = self.clean[i][start : start + self.clip_len]
            noisy[row] = self.noisy[i][start : start + self.clip_len]
        return torch.from_numpy(clean), torch.from_numpy(noisy)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list = field(default_factory=list)


def _make_adam(params, cfg: OptimConfig):
    return torch.optim.Adam(params, lr=cfg.lr_max, betas=(cfg.beta1, cfg.beta2))


def _diagnostic_path(ckpt_dir):
    return Path(ckpt_dir) / "diverged.ckpt" if ckpt_dir is not None else None


def train_specnet(
    manifest_path,
    cfg: SpecNetConfig = SpecNetConfig(),
    optim: OptimConfig = OptimConfig(),
    seed: int = 0,
    clip_seconds: float = 10.0,
    sample_rate: int = 16000,
    ckpt_dir=None,
    resume_from: Checkpoint = None,
    log_every: int = 100,
) -> TrainResult:
    """Stage 1: minimize the spectrogram loss on (noisy, clean) pairs."""
    from .config import encode_config

    clip_len = round(clip_seconds * sample_rate)
    sampler = ClipSampler(manifest_path, cfg.stft.hop, clip_len)

    if resume_from is not None:
        model = specnet_from_checkpoint(resume_from)
        if model.cfg != cfg:
            raise CheckpointError("resume checkpoint config differs from requested config")
        opt = _make_adam(model.parameters(), optim)
        _load_optimizer_tensors(opt, list(model.named_parameters()), resume_from.tensors)
        rng = _restore_rng(resume_from)
        start_iter = resume_from.iteration
    else:
        model = specnet_init(cfg, seed)
        opt = _make_adam(model.parameters(), optim)
        rng = np.random.default_rng(seed)
        start_iter = 0

    config_blob = {
        "specnet": encode_config(cfg),
        "optim": encode_config(optim),
        "clip_seconds": clip_seconds,
        "seed": seed,
    }

    def snapshot(iteration):
        torch_rng, np_rng = _rng_snapshot(rng)
        return Checkpoint(
            kind="specnet",
            config=config_blob,
            iteration=iteration,
            tensors={
                **_model_tensors(model, "model."),
                **_optimizer_tensors(opt, list(model.named_parameters())),
            },
            torch_rng=torch_rng,
            numpy_rng=np_rng,
        )

    history = []
    model.train()
    for it in range(start_iter + 1, optim.total_iters + 1):
        clean, noisy = sampler.batch(rng, optim.batch_size)
        y = magnitude_stft(clean, cfg.stft)
        y_noisy = magnitude_stft(noisy, cfg.stft)

        breakdown = spec_loss_breakdown(y, model(y_noisy))
        if not torch.isfinite(breakdown.total):
            diag = _diagnostic_path(ckpt_dir)
            if diag is not None:
                save_checkpoint(snapshot(it - 1), diag)
            raise TrainingDivergedError(
                f"non-finite loss at iteration {it}"
                + (f"; diagnostic checkpoint at {diag}" if diag else "")
            )

        lr = lr_schedule(it, optim)
        for group in opt.param_groups:
            group["lr"] = lr
        opt.zero_grad()
        breakdown.total.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), optim.grad_clip)
        opt.step()

        record = {"iteration": it, "lr": lr, **breakdown.detach_floats()}
        history.append(record)
        if it % log_every == 0 or it == 1:
            logger.info("train-spec %s", json.dumps(record))

    return TrainResult(checkpoint=snapshot(optim.total_iters), history=history)


def specnet_from_checkpoint(ckpt: Checkpoint) -> SpecNet:
    from .config import decode_config

    if ckpt.kind != "specnet":
        raise CheckpointError(f"expected a specnet checkpoint, got kind={ckpt.kind!r}")
    cfg = decode_config(SpecNetConfig, ckpt.config["specnet"])
    model = SpecNet(cfg)
    _load_model_tensors(model, ckpt.tensors, "model.")
    return model


def train_hybrid(
    manifest_path,
    specnet_ckpt: Checkpoint,
    unet_cfg: UNetConfig = UNetConfig(),
    cond_cfg: ConditionerConfig = None,
    band: str = "full",
    optim: OptimConfig = STAGE2_OPTIM_DEFAULTS,
    seed: int = 0,
    clip_seconds: float = 10.0,
    sample_rate: int = 16000,
    resolutions=DEFAULT_RESOLUTIONS,
    log_norm: str = "waveform",
    freeze_specnet: bool = True,
    ckpt_dir=None,
    resume_from: Checkpoint = None,
    log_every: int = 100,
) -> TrainResult:
    """Stage 2: train upsampler + conditioner + U-Net on frozen predictions."""
    from .config import encode_config

    if resume_from is not None:
        model = hybrid_from_checkpoint(resume_from)
        opt = _make_adam(_trainable_params(model, freeze_specnet), optim)
        _load_optimizer_tensors(
            opt, _trainable_named_params(model, freeze_specnet), resume_from.tensors
        )
        rng = _restore_rng(resume_from)
        start_iter = resume_from.iteration
    else:
        specnet = specnet_from_checkpoint(specnet_ckpt)
        if cond_cfg is None:
            cond_cfg = ConditionerConfig(n_bins=specnet.cfg.n_bins)
        model = build_hybrid(specnet.cfg, cond_cfg, unet_cfg, seed)
        model.specnet.load_state_dict(specnet.state_dict())
        opt = _make_adam(_trainable_params(model, freeze_specnet), optim)
        rng = np.random.default_rng(seed)
        start_iter = 0

    clip_len = round(clip_seconds * sample_rate)
    sampler = ClipSampler(manifest_path, model.specnet.cfg.stft.hop, clip_len)

    if freeze_specnet:
        model.specnet.requires_grad_(False)
        model.specnet.eval()

    config_blob = {
        "specnet": encode_config(model.specnet.cfg),
        "unet": encode_config(model.unet.cfg),
        "conditioner": encode_config(model.upsampler.cfg),
        "optim": encode_config(optim),
        "band": band,
        "log_norm": log_norm,
        "resolutions": [[p.hop, p.win_length, p.n_fft] for p in resolutions],
        "clip_seconds": clip_seconds,
        "freeze_specnet": freeze_specnet,
        "seed": seed,
    }

    def snapshot(iteration):
        torch_rng, np_rng = _rng_snapshot(rng)
        return Checkpoint(
            kind="hybrid",
            config=config_blob,
            iteration=iteration,
            tensors={
                **_model_tensors(model, "model."),
                **_optimizer_tensors(opt, _trainable_named_params(model, freeze_specnet)),
            },
            torch_rng=torch_rng,
            numpy_rng=np_rng,
        )

    history = []
    model.train()
    if freeze_specnet:
        model.specnet.eval()
    for it in range(start_iter + 1, optim.total_iters + 1):
        clean, noisy = sampler.batch(rng, optim.batch_size)
        noisy_in = noisy[:, None, :]

        mag = magnitude_stft(noisy, model.specnet.cfg.stft)
        if freeze_specnet:
            with torch.no_grad():
                y_hat = model.specnet(mag)
        else:
            y_hat = model.specnet(mag)
        cond = model.upsampler(y_hat, noisy_in.shape[2])
        merged = model.conditioner(noisy_in, cond)
        x_hat = model.unet(merged)[:, 0]

        breakdown = hybrid_loss(clean, x_hat, resolutions, band, log_norm=log_norm)
        if not torch.isfinite(breakdown.total):
            diag = _diagnostic_path(ckpt_dir)
            if diag is not None:
                save_checkpoint(snapshot(it - 1), diag)
            raise TrainingDivergedError(
                f"non-finite loss at iteration {it}"
                + (f"; diagnostic checkpoint at {diag}" if diag else "")
            )

        lr = lr_schedule(it, optim)
        for group in opt.param_groups:
            group["lr"] = lr
        opt.zero_grad()
        breakdown.total.backward()
        torch.nn.utils.clip_grad_norm_(
            _trainable_params(model, freeze_specnet), optim.grad_clip
        )
        opt.step()

        record = {"iteration": it, "lr": lr, **breakdown.detach_floats()}
        history.append(record)
        if it % log_every == 0 or it == 1:
            logger.info("train-full %s", json.dumps(record))

    return TrainResult(checkpoint=snapshot(optim.total_iters), history=history)


def _trainable_named_params(model: HybridDenoiser, freeze_specnet: bool):
    return [
        (name, p)
        for name, p in model.named_parameters()
        if not (freeze_specnet and name.startswith("specnet."))
    ]


def _trainable_params(model: HybridDenoiser, freeze_specnet: bool):
    return [p for _, p in _trainable_named_params(model, freeze_specnet)]


def hybrid_from_checkpoint(ckpt: Checkpoint) -> HybridDenoiser:
    from .config import decode_config

    if ckpt.kind != "hybrid":
        raise CheckpointError(f"expected a hybrid checkpoint, got kind={ckpt.kind!r}")
    spec_cfg = decode_config(SpecNetConfig, ckpt.config["specnet"])
    unet_cfg = decode_config(UNetConfig, ckpt.config["unet"])
    cond_cfg = decode_config(ConditionerConfig, ckpt.config["conditioner"])
    model = build_hybrid(spec_cfg, cond_cfg, unet_cfg, seed=0)
    _load_model_tensors(model, ckpt.tensors, "model.")
    return model


def model_from_checkpoint(ckpt: Checkpoint):
    if ckpt.kind == "specnet":
        return specnet_from_checkpoint(ckpt)
    if ckpt.kind == "hybrid":
        return hybrid_from_checkpoint(ckpt)
    raise CheckpointError(f"unknown checkpoint kind {ckpt.kind!r}")
