"""Run configuration: one nested document covering every module's settings.

Configs are frozen dataclasses; YAML documents mirror their nesting. Unknown
keys are rejected so typos fail loudly. Defaults equal the full-scale values
from the source system (desk-scale runs override iteration counts and batch
sizes on the command line or in the file).
"""

import dataclasses
from dataclasses import dataclass, field, fields, is_dataclass

import yaml

from .conditioner import ConditionerConfig
from .dsp import StftParams
from .specnet import SpecNetConfig
from .training import STAGE2_OPTIM_DEFAULTS, OptimConfig
from .unet import UNetConfig


class ConfigError(ValueError):
    pass


def _tuplify(value):
    if isinstance(value, list):
        return tuple(_tuplify(v) for v in value)
    return value


def encode_config(obj):
    """Dataclass (possibly nested) -> plain dict/list structure."""
    if is_dataclass(obj):
        return {f.name: encode_config(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [encode_config(v) for v in obj]
    return obj


def decode_config(cls, data):
    """Plain dict -> dataclass ``cls``, rejecting unknown keys recursively."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"expected a mapping for {cls.__name__}, got {type(data).__name__}")
    field_map = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(field_map))
    if unknown:
        raise ConfigError(f"unknown keys for {cls.__name__}: {unknown}")
    kwargs = {}
    for name, value in data.items():
        f = field_map[name]
        if is_dataclass(f.type) and isinstance(value, dict):
            kwargs[name] = decode_config(f.type, value)
        elif f.type is tuple:
            kwargs[name] = _tuplify(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid {cls.__name__}: {e}") from e


@dataclass(frozen=True)
class LossConfig:
    resolutions: tuple = ((50, 240, 512), (120, 600, 1024), (240, 1200, 2048))
    band: str = "full"
    log_norm: str = "waveform"
    eps: float = 1e-5

    def __post_init__(self):
        if self.band not in ("full", "high"):
            raise ValueError(f"band must be 'full' or 'high', got {self.band!r}")
        if self.log_norm not in ("waveform", "frames"):
            raise ValueError(
                f"log_norm must be 'waveform' or 'frames', got {self.log_norm!r}"
            )
        if not self.resolutions:
            raise ValueError("resolutions must be nonempty")

    def stft_params(self):
        return tuple(StftParams(hop=r[0], win_length=r[1], n_fft=r[2]) for r in self.resolutions)


@dataclass(frozen=True)
class DataConfig:
    n_clips: int = 200
    clip_seconds: float = 10.0
    sample_rate: int = 16000
    noise_kinds: tuple = ("white", "pink", "babble")
    snr_min_db: float = -5.0
    snr_max_db: float = 25.0
    snr_step_db: float = 1.0

    def snr_grid(self):
        import numpy as np

        return np.arange(self.snr_min_db, self.snr_max_db + self.snr_step_db / 2, self.snr_step_db)


@dataclass(frozen=True)
class StreamConfig:
    attn_window: int = 1024
    chunk_samples: int = 4096


@dataclass(frozen=True)
class EvalConfig:
    lsd_resolution: tuple = (256, 1024, 1024)
    external_metrics: tuple = ()  # entries: {name, command, pattern}

    def lsd_params(self) -> StftParams:
        r = self.lsd_resolution
        return StftParams(hop=r[0], win_length=r[1], n_fft=r[2])

    def metrics(self):
        from .evaluation import ExternalMetric

        return tuple(ExternalMetric(**m) for m in self.external_metrics)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    train_clip_seconds: float = 10.0
    specnet: SpecNetConfig = field(default_factory=SpecNetConfig)
    unet: UNetConfig = field(default_factory=UNetConfig)
    conditioner: ConditionerConfig = field(default_factory=ConditionerConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optim_spec: OptimConfig = field(default_factory=OptimConfig)
    optim_full: OptimConfig = field(default_factory=lambda: STAGE2_OPTIM_DEFAULTS)
    data: DataConfig = field(default_factory=DataConfig)
    streaming: StreamConfig = field(default_factory=StreamConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def harmonized(self) -> "RunConfig":
        """Propagate derived fields across sections.

        The conditioner's frequency bins follow the spectrogram config and
        the U-Net input channel count follows the conditioning method, so a
        config file never has to repeat them consistently.
        """
        cond = dataclasses.replace(
            self.conditioner,
            n_bins=self.specnet.n_bins,
            causal=self.specnet.causal and self.unet.causal,
        )
        unet = dataclasses.replace(self.unet, in_channels=cond.in_channels)
        return dataclasses.replace(self, conditioner=cond, unet=unet)


def load_run_config(path=None, overrides=None) -> RunConfig:
    """Load a YAML config file (optional) and apply override mappings.

    ``overrides`` is a mapping of dotted keys ("optim_spec.total_iters") to
    values, applied after the file so flags win over file contents.
    """
    data = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as f:
            loaded = yaml.safe_load(f)
        if loaded is not None:
            if not isinstance(loaded, dict):
                raise ConfigError(f"config file {path} must contain a mapping")
            data = loaded
    for dotted, value in (overrides or {}).items():
        parts = dotted.split(".")
        node = data
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot override {dotted}: {part} is not a section")
        node[parts[-1]] = value
    return decode_config(RunConfig, data).harmonized()


def save_config_snapshot(cfg: RunConfig, path) -> None:
    """Write the fully resolved configuration next to a run's outputs."""
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(encode_config(cfg), f, sort_keys=False)
