"""Spectrogram-domain denoiser: causal conv stack followed by self-attention.

The network maps a noisy magnitude spectrogram [F x T] to a clean magnitude
estimate of the same shape. Frequency bins enter a 1x1 projection to the conv
hidden width, five conv/GLU layers refine per-frame features, a 1x1 projection
lifts them to the attention width, and a linear head with softplus produces
nonnegative magnitudes.
"""

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from .dsp import StftParams
from .modules import AttentionStack, ConvGluLayer, init_projections


@dataclass(frozen=True)
class SpecNetConfig:
    stft: StftParams = field(default_factory=lambda: StftParams(256, 1024, 1024))
    n_conv_layers: int = 5
    conv_hidden: int = 64
    kernel: int = 4
    n_attn_blocks: int = 5
    attn_heads: int = 8
    attn_dim: int = 512
    ff_inner: int = 2048
    causal: bool = True

    def __post_init__(self):
        if self.kernel < 1:
            raise ValueError("kernel must be >= 1")
        if self.attn_dim % self.attn_heads != 0:
            raise ValueError("attn_dim must be divisible by attn_heads")
        if min(self.n_conv_layers, self.conv_hidden, self.n_attn_blocks) < 1:
            raise ValueError("layer counts and widths must be positive")

    @property
    def n_bins(self) -> int:
        return self.stft.n_bins


class SpecNet(nn.Module):
    def __init__(self, cfg: SpecNetConfig):
        super().__init__()
        self.cfg = cfg
        f = cfg.n_bins
        self.input_proj = nn.Conv1d(f, cfg.conv_hidden, 1)
        self.conv_layers = nn.ModuleList(
            ConvGluLayer(cfg.conv_hidden, cfg.kernel) for _ in range(cfg.n_conv_layers)
        )
        self.pre_attn = nn.Conv1d(cfg.conv_hidden, cfg.attn_dim, 1)
        self.attention = AttentionStack(
            cfg.n_attn_blocks, cfg.attn_dim, cfg.attn_heads, cfg.ff_inner, cfg.causal
        )
        self.head = nn.Linear(cfg.attn_dim, f)

    def _check_bins(self, y):
        if y.shape[1] != self.cfg.n_bins:
            raise ValueError(
                f"expected {self.cfg.n_bins} frequency bins, got {y.shape[1]}"
            )

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        """Denoise magnitudes [B, F, T] (or [F, T]) -> same shape, >= 0."""
        squeeze = y.dim() == 2
        if squeeze:
            y = y[None]
        self._check_bins(y)
        h = self.input_proj(y)
        for layer in self.conv_layers:
            h = layer(h)
        s = self.pre_attn(h).transpose(1, 2)
        s = self.attention(s)
        out = F.softplus(self.head(s)).transpose(1, 2)
        return out[0] if squeeze else out

    def init_stream_state(self, batch, dtype=torch.float32, device=None):
        return {
            "conv": [l.init_cache(batch, dtype, device) for l in self.conv_layers],
            "attn": self.attention.init_cache(),
        }

    def step(self, y_new: torch.Tensor, state, attn_window):
        """Incremental forward over new spectrogram columns [B, F, n]."""
        self._check_bins(y_new)
        h = self.input_proj(y_new)
        for i, layer in enumerate(self.conv_layers):
            h, state["conv"][i] = layer.step(h, state["conv"][i])
        s = self.pre_attn(h).transpose(1, 2)
        s, state["attn"] = self.attention.step(s, state["attn"], attn_window)
        return F.softplus(self.head(s)).transpose(1, 2), state


def specnet_init(cfg: SpecNetConfig, seed: int) -> SpecNet:
    """Deterministically initialized model for a given seed."""
    torch.manual_seed(seed)
    model = SpecNet(cfg)
    init_projections(model)
    return model
