"""Glue between the spectrogram denoiser and the waveform U-Net.

The predicted magnitude spectrogram is upsampled 256x in time by two
transposed 2-D convolutions (each 16x, leaky ReLU after each), the frequency
axis is collapsed to a fixed channel count by a 1x1 projection, and the result
is merged with the noisy waveform by one of three conditioning methods:
element-wise addition, channel concatenation, or FiLM.

In causal mode the upsampled stream is additionally delayed by one hop so
that conditioner samples in 256-sample block b depend only on spectrogram
frames <= b - 1; together with the centered analysis window this keeps the
whole pipeline causal at 256-sample block granularity.
"""

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .modules import init_projections, magnitude_stft
from .specnet import SpecNet
from .unet import WaveformUNet

CONDITIONING_METHODS = ("addition", "concatenation", "film")


@dataclass(frozen=True)
class ConditionerConfig:
    method: str = "addition"
    n_bins: int = 513
    cond_channels: int = 64
    n_stages: int = 2
    time_stride: int = 16
    time_kernel: int = 32
    freq_kernel: int = 3
    leaky_slope: float = 0.4
    swap_kernel_axes: bool = False
    causal: bool = True

    def __post_init__(self):
        if self.method not in CONDITIONING_METHODS:
            raise ValueError(
                f"unknown conditioning method {self.method!r}; "
                f"expected one of {CONDITIONING_METHODS}"
            )
        if self.n_stages < 1 or self.time_stride < 1:
            raise ValueError("n_stages and time_stride must be positive")

    @property
    def upsample_factor(self) -> int:
        return self.time_stride**self.n_stages

    @property
    def in_channels(self) -> int:
        """Waveform channels fed to the U-Net for this conditioning method."""
        return 2 if self.method == "concatenation" else 1


class TimeUpsample2d(nn.Module):
    """Transposed 2-D conv upsampling time by ``stride``, preserving F rows.

    The frequency axis is symmetrically cropped back to F. The raw time axis
    has stride*T + (kernel - stride) samples; causal mode keeps the first
    stride*T (output m depends on frames <= m // stride), non-causal mode
    crops half the overlap from each side.
    """

    def __init__(self, time_kernel, time_stride, freq_kernel, causal):
        super().__init__()
        self.conv = nn.ConvTranspose2d(
            1, 1, (freq_kernel, time_kernel), stride=(1, time_stride)
        )
        self.stride = time_stride
        self.overlap = time_kernel - time_stride
        self.freq_crop_left = (freq_kernel - 1) // 2
        self.freq_crop_right = freq_kernel - 1 - self.freq_crop_left
        self.causal = causal

    def _crop_freq(self, z):
        f = z.shape[2] - self.freq_crop_left - self.freq_crop_right
        return z[:, :, self.freq_crop_left : self.freq_crop_left + f]

    def forward(self, x):
        # x: [B, 1, F, T] -> [B, 1, F, stride*T]
        t = x.shape[3]
        z = self._crop_freq(self.conv(x))
        target = self.stride * t
        if self.causal:
            z = z[:, :, :, :target]
        else:
            lead = (z.shape[3] - target) // 2
            z = z[:, :, :, lead : lead + target]
        if z.shape[3] < target:
            z = F.pad(z, (0, target - z.shape[3]))
        return z

    def init_carry(self, batch, n_bins, dtype=torch.float32, device=None):
        return torch.zeros(
            batch, 1, n_bins, max(self.overlap, 0), dtype=dtype, device=device
        )

    def step(self, x_new, carry):
        if not self.causal:
            raise RuntimeError("step mode requires a causal upsampler")
        t = x_new.shape[3]
        z = F.conv_transpose2d(
            x_new, self.conv.weight, bias=None, stride=(1, self.stride)
        )
        z = self._crop_freq(z)
        if self.overlap > 0:
            z = torch.cat(
                [z[:, :, :, : self.overlap] + carry, z[:, :, :, self.overlap :]], dim=3
            )
        target = self.stride * t
        out = z[:, :, :, :target]
        if out.shape[3] < target:
            out = F.pad(out, (0, target - out.shape[3]))
        if self.conv.bias is not None:
            out = out + self.conv.bias[None, :, None, None]
        return out, z[:, :, :, target:]


class SpectrogramUpsampler(nn.Module):
    """Maps magnitudes [B, F, T_spec] to conditioner features at sample rate."""

    def __init__(self, cfg: ConditionerConfig):
        super().__init__()
        self.cfg = cfg
        tk, fk = cfg.time_kernel, cfg.freq_kernel
        if cfg.swap_kernel_axes:
            tk, fk = fk, tk
        self.stages = nn.ModuleList(
            TimeUpsample2d(tk, cfg.time_stride, fk, cfg.causal)
            for _ in range(cfg.n_stages)
        )
        self.collapse = nn.Conv1d(cfg.n_bins, cfg.cond_channels, 1)

    def upsample_raw(self, y_hat: torch.Tensor) -> torch.Tensor:
        """Pre-alignment features [B, C_cond, upsample_factor * T_spec]."""
        if y_hat.shape[1] != self.cfg.n_bins:
            raise ValueError(
                f"expected {self.cfg.n_bins} frequency bins, got {y_hat.shape[1]}"
            )
        h = y_hat[:, None]
        for stage in self.stages:
            h = F.leaky_relu(stage(h), self.cfg.leaky_slope)
        return self.collapse(h[:, 0])

    def forward(self, y_hat: torch.Tensor, target_len: int) -> torch.Tensor:
        """Aligned conditioner [B, C_cond, target_len].

        Causal mode delays the raw stream by one hop (one spectrogram frame's
        worth of samples); the stream is then truncated, or right-zero-padded
        by at most one hop, to the waveform length.
        """
        raw = self.upsample_raw(y_hat)
        hop = self.cfg.upsample_factor
        if target_len > raw.shape[2] + hop:
            raise ValueError(
                f"conditioner length {raw.shape[2]} too short for target "
                f"{target_len} (more than one hop of mismatch)"
            )
        if self.cfg.causal:
            raw = F.pad(raw, (hop, 0))
        if target_len <= raw.shape[2]:
            return raw[:, :, :target_len]
        return F.pad(raw, (0, target_len - raw.shape[2]))

    def init_stream_state(self, batch, dtype=torch.float32, device=None):
        return [
            stage.init_carry(batch, self.cfg.n_bins, dtype, device)
            for stage in self.stages
        ]

    def step(self, y_new: torch.Tensor, state):
        """Raw conditioner samples for new spectrogram columns [B, F, n]."""
        h = y_new[:, None]
        for i, stage in enumerate(self.stages):
            h, state[i] = stage.step(h, state[i])
            h = F.leaky_relu(h, self.cfg.leaky_slope)
        return self.collapse(h[:, 0]), state


class Conditioner(nn.Module):
    """Merges the noisy waveform with the upsampled spectrogram features."""

    def __init__(self, cfg: ConditionerConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.cond_channels
        if cfg.method == "film":
            self.gamma = nn.Conv1d(c, 1, 1)
            self.beta = nn.Conv1d(c, 1, 1)
        else:
            self.proj = nn.Conv1d(c, 1, 1)

    def forward(self, w: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        """[B, 1, T] waveform + [B, C_cond, T] features -> [B, C_in, T]."""
        if w.shape[2] != cond.shape[2]:
            raise ValueError(
                f"length mismatch: waveform {w.shape[2]} vs conditioner {cond.shape[2]}"
            )
        if self.cfg.method == "addition":
            return w + self.proj(cond)
        if self.cfg.method == "concatenation":
            return torch.cat([w, self.proj(cond)], dim=1)
        return self.gamma(cond) * w + self.beta(cond)


class HybridDenoiser(nn.Module):
    """Full pipeline: spectrogram denoiser -> upsampler -> conditioned U-Net."""

    def __init__(self, specnet: SpecNet, upsampler: SpectrogramUpsampler,
                 conditioner: Conditioner, unet: WaveformUNet):
        super().__init__()
        cond_cfg = upsampler.cfg
        if cond_cfg.n_bins != specnet.cfg.n_bins:
            raise ValueError("upsampler frequency bins do not match the spectrogram")
        if cond_cfg.upsample_factor != specnet.cfg.stft.hop:
            raise ValueError(
                f"upsampling factor {cond_cfg.upsample_factor} must equal the "
                f"spectrogram hop {specnet.cfg.stft.hop}"
            )
        if unet.cfg.in_channels != cond_cfg.in_channels:
            raise ValueError(
                f"U-Net expects {unet.cfg.in_channels} input channels but the "
                f"{cond_cfg.method!r} conditioning produces {cond_cfg.in_channels}"
            )
        self.specnet = specnet
        self.upsampler = upsampler
        self.conditioner = conditioner
        self.unet = unet

    @property
    def causal(self) -> bool:
        return (
            self.specnet.cfg.causal
            and self.unet.cfg.causal
            and self.upsampler.cfg.causal
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Denoise noisy waveforms [B, 1, T] -> [B, 1, T]."""
        if x.dim() != 3 or x.shape[1] != 1:
            raise ValueError(f"expected [B, 1, T] input, got shape {tuple(x.shape)}")
        t = x.shape[2]
        mag = magnitude_stft(x[:, 0], self.specnet.cfg.stft)
        y_hat = self.specnet(mag)
        cond = self.upsampler(y_hat, t)
        merged = self.conditioner(x, cond)
        return self.unet(merged)

    def denoise(self, x: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            return self.forward(x)


def build_hybrid(spec_cfg, cond_cfg: ConditionerConfig, unet_cfg, seed: int) -> HybridDenoiser:
    """Deterministically initialized end-to-end model."""
    from .specnet import specnet_init
    from .unet import unet_init

    specnet = specnet_init(spec_cfg, seed)
    torch.manual_seed(seed + 1)
    upsampler = SpectrogramUpsampler(cond_cfg)
    conditioner = Conditioner(cond_cfg)
    init_projections(upsampler)
    init_projections(conditioner)
    if cond_cfg.method == "film":
        # bias the scale toward 1 so the waveform passes through at init
        nn.init.ones_(conditioner.gamma.bias)
    unet = unet_init(unet_cfg, seed + 2)
    return HybridDenoiser(specnet, upsampler, conditioner, unet)
