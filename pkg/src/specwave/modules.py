"""Shared torch building blocks for the spectrogram and waveform models.

Every time-dependent block has a ``forward`` for whole sequences and a
``step`` for incremental inference. ``step`` consumes explicit state (conv
left-context caches, transposed-conv overlap carries, attention key/value
history) and reproduces ``forward`` exactly up to float accumulation order.
"""

import math

import torch
import torch.nn.functional as F
from torch import nn

from .dsp import StftParams


def torch_hann(win_length: int, dtype=None, device=None) -> torch.Tensor:
    return torch.hann_window(win_length, periodic=True, dtype=dtype, device=device)


def magnitude_stft(x: torch.Tensor, p: StftParams) -> torch.Tensor:
    """Magnitude spectrogram [B, F, T_spec] of waveforms [B, T].

    Same convention as :mod:`specwave.dsp`: half-sample reflection padding of
    win_length//2, periodic Hann window, frame count floor(T/hop). A tiny
    additive guard inside the square root keeps gradients finite at silent
    bins without moving magnitudes above 1e-12.
    """
    squeeze = x.dim() == 1
    if squeeze:
        x = x[None]
    t = x.shape[-1]
    if t < p.win_length:
        raise ValueError(f"input too short: {t} samples < win_length {p.win_length}")
    pad = p.win_length // 2
    if pad > 0:
        xp = torch.cat([x[:, :pad].flip(1), x, x[:, -pad:].flip(1)], dim=1)
    else:
        xp = x
    t_spec = t // p.hop
    frames = xp.unfold(1, p.win_length, p.hop)[:, :t_spec]
    win = torch_hann(p.win_length, dtype=x.dtype, device=x.device)
    spec = torch.fft.rfft(frames * win, n=p.n_fft, dim=2)
    mag = torch.sqrt(spec.real**2 + spec.imag**2 + 1e-24)
    mag = mag.transpose(1, 2)
    return mag[0] if squeeze else mag


def stft_frame_mag(frame: torch.Tensor, p: StftParams) -> torch.Tensor:
    """Magnitude of already-extracted frames [B, n, win_length] -> [B, F, n]."""
    win = torch_hann(p.win_length, dtype=frame.dtype, device=frame.device)
    spec = torch.fft.rfft(frame * win, n=p.n_fft, dim=2)
    mag = torch.sqrt(spec.real**2 + spec.imag**2 + 1e-24)
    return mag.transpose(1, 2)


class CausalConv1d(nn.Module):
    """Conv1d padded on the left only; output t never sees inputs after t.

    For stride S and kernel K the left padding is K - S, so an input whose
    length is a multiple of S yields exactly length // S outputs.
    """

    def __init__(self, in_channels, out_channels, kernel_size, stride=1):
        super().__init__()
        self.conv = nn.Conv1d(in_channels, out_channels, kernel_size, stride=stride)
        self.left_pad = kernel_size - stride
        if self.left_pad < 0:
            raise ValueError("kernel_size must be >= stride")

    def forward(self, x):
        return self.conv(F.pad(x, (self.left_pad, 0)))

    def init_cache(self, batch, dtype=torch.float32, device=None):
        return torch.zeros(
            batch, self.conv.in_channels, self.left_pad, dtype=dtype, device=device
        )

    def step(self, x_new, cache):
        """Convolve a new chunk (length multiple of stride) with cached context."""
        buf = torch.cat([cache, x_new], dim=2)
        y = self.conv(buf)
        keep = buf.shape[2] - self.left_pad
        return y, buf[:, :, keep:]


class CausalConvTranspose1d(nn.Module):
    """Transposed Conv1d with the trailing kernel - stride outputs dropped.

    Output sample m then depends only on inputs t <= m // stride, which keeps
    the upsampling path causal at the coarse-frame granularity.
    """

    def __init__(self, in_channels, out_channels, kernel_size, stride):
        super().__init__()
        self.conv = nn.ConvTranspose1d(in_channels, out_channels, kernel_size, stride=stride)
        self.stride = stride
        self.overlap = kernel_size - stride
        if self.overlap < 0:
            raise ValueError("kernel_size must be >= stride")

    def forward(self, x):
        t = x.shape[2]
        return self.conv(x)[:, :, : self.stride * t]

    def init_carry(self, batch, dtype=torch.float32, device=None):
        return torch.zeros(
            batch, self.conv.out_channels, self.overlap, dtype=dtype, device=device
        )

    def step(self, x_new, carry):
        m = x_new.shape[2]
        z = F.conv_transpose1d(x_new, self.conv.weight, bias=None, stride=self.stride)
        z = torch.cat([z[:, :, : self.overlap] + carry, z[:, :, self.overlap :]], dim=2)
        out = z[:, :, : self.stride * m]
        if self.conv.bias is not None:
            out = out + self.conv.bias[None, :, None]
        return out, z[:, :, self.stride * m :]


class ConvGluLayer(nn.Module):
    """Channel-preserving causal conv, ReLU, channel-doubling conv, GLU."""

    def __init__(self, channels, kernel_size):
        super().__init__()
        self.keep = CausalConv1d(channels, channels, kernel_size)
        self.grow = CausalConv1d(channels, 2 * channels, kernel_size)

    def forward(self, x):
        h = F.relu(self.keep(x))
        return F.glu(self.grow(h), dim=1)

    def init_cache(self, batch, dtype=torch.float32, device=None):
        return [
            self.keep.init_cache(batch, dtype, device),
            self.grow.init_cache(batch, dtype, device),
        ]

    def step(self, x_new, cache):
        h, cache[0] = self.keep.step(x_new, cache[0])
        h = F.relu(h)
        h, cache[1] = self.grow.step(h, cache[1])
        return F.glu(h, dim=1), cache


class SelfAttentionBlock(nn.Module):
    """Pre-norm residual block: multi-head self-attention + feed-forward."""

    def __init__(self, d_model, n_heads, ff_inner, causal=True):
        super().__init__()
        if d_model % n_heads != 0:
            raise ValueError(f"d_model {d_model} not divisible by n_heads {n_heads}")
        self.d_model = d_model
        self.n_heads = n_heads
        self.causal = causal
        self.norm_attn = nn.LayerNorm(d_model)
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.proj = nn.Linear(d_model, d_model)
        self.norm_ff = nn.LayerNorm(d_model)
        self.ff1 = nn.Linear(d_model, ff_inner)
        self.ff2 = nn.Linear(ff_inner, d_model)

    def _split_heads(self, x):
        b, t, _ = x.shape
        return x.view(b, t, self.n_heads, self.d_model // self.n_heads).transpose(1, 2)

    def _attend(self, q, k, v, offset):
        # q: [B, H, Tq, dh]; k, v: [B, H, Tk, dh]; query i sits at global
        # position offset + i and may look at keys 0 .. offset + i.
        dh = q.shape[-1]
        scores = q @ k.transpose(2, 3) / math.sqrt(dh)
        if self.causal:
            tq, tk = q.shape[2], k.shape[2]
            pos_q = torch.arange(tq, device=q.device)[:, None] + offset
            pos_k = torch.arange(tk, device=q.device)[None, :]
            scores = scores.masked_fill(pos_k > pos_q, float("-inf"))
        attn = torch.softmax(scores, dim=-1) @ v
        b, _, tq, _ = attn.shape
        return attn.transpose(1, 2).reshape(b, tq, self.d_model)

    def _ff(self, x):
        return x + self.ff2(F.relu(self.ff1(self.norm_ff(x))))

    def forward(self, x):
        h = self.norm_attn(x)
        q, k, v = self.qkv(h).chunk(3, dim=-1)
        x = x + self.proj(self._attend(self._split_heads(q), self._split_heads(k), self._split_heads(v), 0))
        return self._ff(x)

    def step(self, x_new, cache, window):
        """Process new positions against cached keys/values.

        cache is (k, v) of shape [B, H, T_past, dh] or None. The cache is
        trimmed to the most recent ``window`` positions after appending.
        """
        if not self.causal:
            raise RuntimeError("step mode requires a causal block")
        h = self.norm_attn(x_new)
        q, k, v = self.qkv(h).chunk(3, dim=-1)
        q, k, v = self._split_heads(q), self._split_heads(k), self._split_heads(v)
        if cache is not None:
            k = torch.cat([cache[0], k], dim=2)
            v = torch.cat([cache[1], v], dim=2)
        offset = k.shape[2] - x_new.shape[1]
        out = x_new + self.proj(self._attend(q, k, v, offset))
        if window is not None and k.shape[2] > window:
            k = k[:, :, -window:]
            v = v[:, :, -window:]
        return self._ff(out), (k, v)


class AttentionStack(nn.Module):
    """Stack of self-attention blocks with a final layer norm."""

    def __init__(self, n_blocks, d_model, n_heads, ff_inner, causal=True):
        super().__init__()
        self.blocks = nn.ModuleList(
            SelfAttentionBlock(d_model, n_heads, ff_inner, causal) for _ in range(n_blocks)
        )
        self.norm = nn.LayerNorm(d_model)

    def forward(self, x):
        for block in self.blocks:
            x = block(x)
        return self.norm(x)

    def init_cache(self):
        return [None] * len(self.blocks)

    def step(self, x_new, caches, window):
        for i, block in enumerate(self.blocks):
            x_new, caches[i] = block.step(x_new, caches[i], window)
        return self.norm(x_new), caches


def init_projections(model: nn.Module) -> None:
    """Xavier-uniform weights and zero biases for projection layers.

    Projections are linear layers and 1x1 convolutions; wider convolutions
    keep torch's default fan-in uniform initialization.
    """
    for m in model.modules():
        is_proj = isinstance(m, nn.Linear) or (
            isinstance(m, (nn.Conv1d, nn.ConvTranspose1d)) and m.kernel_size == (1,)
        )
        if is_proj:
            nn.init.xavier_uniform_(m.weight)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
