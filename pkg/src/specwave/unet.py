"""Waveform-domain U-Net with a self-attention bottleneck.

Eight strided encoder layers downsample the waveform 256x, attention blocks
refine the bottleneck sequence, and mirrored transposed-conv decoder layers
restore the waveform, with encoder activations added back through skip
connections. Inputs of arbitrary length are zero-padded on the right to a
multiple of the total downsampling factor and cropped after decoding.
"""

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .modules import (
    AttentionStack,
    CausalConv1d,
    CausalConvTranspose1d,
    init_projections,
)


@dataclass(frozen=True)
class UNetConfig:
    n_layers: int = 8
    hidden: int = 64
    stride: int = 2
    kernel: int = 4
    n_attn_blocks: int = 5
    attn_heads: int = 8
    attn_dim: int = 512
    channel_cap: int = 512
    ff_inner: int = 2048
    causal: bool = True
    in_channels: int = 1

    def __post_init__(self):
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.kernel < self.stride:
            raise ValueError("kernel must be >= stride")
        if self.channels(self.n_layers) != self.attn_dim:
            raise ValueError(
                f"bottleneck channels {self.channels(self.n_layers)} must equal "
                f"attn_dim {self.attn_dim}"
            )
        if self.attn_dim % self.attn_heads != 0:
            raise ValueError("attn_dim must be divisible by attn_heads")

    @property
    def downsample_factor(self) -> int:
        return self.stride**self.n_layers

    def channels(self, level: int) -> int:
        """Output channels of encoder level 1..n_layers (doubling, capped)."""
        if level == 0:
            return self.in_channels
        return min(self.hidden * 2 ** (level - 1), self.channel_cap)


class EncoderLayer(nn.Module):
    """Strided causal conv, ReLU, 1x1 doubling conv, GLU."""

    def __init__(self, ch_in, ch_out, kernel, stride):
        super().__init__()
        self.down = CausalConv1d(ch_in, ch_out, kernel, stride)
        self.expand = nn.Conv1d(ch_out, 2 * ch_out, 1)

    def forward(self, x):
        return F.glu(self.expand(F.relu(self.down(x))), dim=1)

    def init_cache(self, batch, dtype, device):
        return self.down.init_cache(batch, dtype, device)

    def step(self, x_new, cache):
        h, cache = self.down.step(x_new, cache)
        return F.glu(self.expand(F.relu(h)), dim=1), cache


class DecoderLayer(nn.Module):
    """1x1 doubling conv, GLU, causal transposed conv, optional ReLU."""

    def __init__(self, ch_in, ch_out, kernel, stride, final):
        super().__init__()
        self.expand = nn.Conv1d(ch_in, 2 * ch_in, 1)
        self.up = CausalConvTranspose1d(ch_in, ch_out, kernel, stride)
        self.final = final

    def forward(self, x):
        h = self.up(F.glu(self.expand(x), dim=1))
        return h if self.final else F.relu(h)

    def init_carry(self, batch, dtype, device):
        return self.up.init_carry(batch, dtype, device)

    def step(self, x_new, carry):
        h, carry = self.up.step(F.glu(self.expand(x_new), dim=1), carry)
        return (h if self.final else F.relu(h)), carry


class WaveformUNet(nn.Module):
    def __init__(self, cfg: UNetConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = nn.ModuleList(
            EncoderLayer(cfg.channels(i - 1), cfg.channels(i), cfg.kernel, cfg.stride)
            for i in range(1, cfg.n_layers + 1)
        )
        self.attention = AttentionStack(
            cfg.n_attn_blocks, cfg.attn_dim, cfg.attn_heads, cfg.ff_inner, cfg.causal
        )
        self.decoder = nn.ModuleList(
            DecoderLayer(
                cfg.channels(i),
                cfg.channels(i - 1) if i > 1 else 1,
                cfg.kernel,
                cfg.stride,
                final=(i == 1),
            )
            for i in range(cfg.n_layers, 0, -1)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Denoise [B, C_in, T] -> [B, 1, T] for arbitrary T >= 1."""
        if x.dim() != 3:
            raise ValueError(f"expected [B, C, T] input, got shape {tuple(x.shape)}")
        t = x.shape[2]
        factor = self.cfg.downsample_factor
        t_pad = -(-t // factor) * factor
        if t_pad > t:
            x = F.pad(x, (0, t_pad - t))

        skips = []
        for layer in self.encoder:
            x = layer(x)
            skips.append(x)

        s = self.attention(x.transpose(1, 2)).transpose(1, 2)

        x = s
        for layer in self.decoder:
            x = x + skips.pop()
            x = layer(x)
        return x[:, :, :t]

    def init_stream_state(self, batch, dtype=torch.float32, device=None):
        return {
            "enc": [l.init_cache(batch, dtype, device) for l in self.encoder],
            "attn": self.attention.init_cache(),
            "dec": [l.init_carry(batch, dtype, device) for l in self.decoder],
        }

    def step(self, x_new: torch.Tensor, state, attn_window):
        """Incremental forward over [B, C_in, n*factor] samples."""
        if x_new.shape[2] % self.cfg.downsample_factor != 0:
            raise ValueError("step chunks must be a multiple of the downsampling factor")
        skips = []
        h = x_new
        for i, layer in enumerate(self.encoder):
            h, state["enc"][i] = layer.step(h, state["enc"][i])
            skips.append(h)

        s, state["attn"] = self.attention.step(
            h.transpose(1, 2), state["attn"], attn_window
        )
        h = s.transpose(1, 2)

        for i, layer in enumerate(self.decoder):
            h = h + skips.pop()
            h, state["dec"][i] = layer.step(h, state["dec"][i])
        return h, state


def unet_init(cfg: UNetConfig, seed: int) -> WaveformUNet:
    """Deterministically initialized model for a given seed."""
    torch.manual_seed(seed)
    model = WaveformUNet(cfg)
    init_projections(model)
    return model
