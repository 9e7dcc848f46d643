"""Chunked causal inference with 256-sample algorithmic latency.

The stream consumes arbitrary-size chunks and emits denoised audio in
256-sample blocks: block b is emitted as soon as input sample 256*(b+1)
arrives. Internally each block triggers one spectrogram frame (frame b-1,
whose centered analysis window ends exactly at the end of block b), one
incremental pass through the spectrogram denoiser and upsampler, and one
256-sample step of the waveform U-Net. Feeding a whole signal in any chunk
partition reproduces the offline causal forward.

Attention history is truncated to the most recent ``attn_window`` frames
(default 1024, about 16 s), so memory stays bounded for unbounded streams;
beyond that horizon the streamed output is an approximation of the offline
forward, which attends to the full past.
"""

import numpy as np
import torch

from .conditioner import HybridDenoiser
from .modules import stft_frame_mag

DEFAULT_ATTN_WINDOW = 1024


class StreamClosedError(RuntimeError):
    pass


class DenoiserStream:
    """Single-stream stateful wrapper around a causal hybrid denoiser."""

    def __init__(self, model: HybridDenoiser, attn_window: int = DEFAULT_ATTN_WINDOW):
        if not model.causal:
            raise ValueError("streaming requires causal models")
        p = model.specnet.cfg.stft
        if model.unet.cfg.downsample_factor != p.hop:
            raise ValueError(
                "U-Net downsampling factor must equal the spectrogram hop "
                "for block streaming"
            )
        if attn_window < 1:
            raise ValueError("attn_window must be positive")
        self.model = model.eval()
        self.attn_window = attn_window
        self.params = p
        self.hop = p.hop
        self.win = p.win_length
        self.pad = p.win_length // 2

        self.spec_state = model.specnet.init_stream_state(1)
        self.up_state = model.upsampler.init_stream_state(1)
        self.unet_state = model.unet.init_stream_state(1)
        self._cond_zero = torch.zeros(1, model.upsampler.cfg.cond_channels, self.hop)

        self.total = 0          # samples consumed
        self.blocks_done = 0    # complete input blocks processed
        self.closed = False
        self._pending = np.zeros(0, dtype=np.float32)
        # first `pad` samples for start reflection; rolling recent tail
        self._head = np.zeros(0, dtype=np.float32)
        self._recent = np.zeros(0, dtype=np.float32)
        self._recent_keep = self.win + 2 * self.hop

    def _absorb(self, samples: np.ndarray) -> None:
        self.total += samples.size
        if self._head.size < self.pad:
            need = self.pad - self._head.size
            self._head = np.concatenate([self._head, samples[:need]])
        self._recent = np.concatenate([self._recent, samples])[-self._recent_keep :]

    def _frame(self, t: int) -> torch.Tensor:
        """Windowless analysis frame t as float32 [1, 1, win_length].

        Indices outside [0, total) fold back with half-sample reflection,
        matching numpy's "symmetric" padding (periodic with period 2*total).
        """
        idx = t * self.hop - self.pad + np.arange(self.win)
        idx = np.mod(idx, 2 * self.total)
        idx = np.where(idx >= self.total, 2 * self.total - 1 - idx, idx)

        out = np.empty(self.win, dtype=np.float32)
        in_head = idx < self._head.size
        out[in_head] = self._head[idx[in_head]]
        rest = ~in_head
        base = self.total - self._recent.size
        if np.any(idx[rest] < base):
            raise RuntimeError("frame window fell out of the retained history")
        out[rest] = self._recent[idx[rest] - base]
        return torch.from_numpy(out)[None, None, :]

    def _cond_block(self, b: int) -> torch.Tensor:
        """Conditioner features for output block b (uses frame b-1; block 0
        sees only the one-hop causal delay padding)."""
        if b == 0:
            return self._cond_zero
        mag = stft_frame_mag(self._frame(b - 1), self.params)
        col, self.spec_state = self.model.specnet.step(
            mag, self.spec_state, self.attn_window
        )
        raw, self.up_state = self.model.upsampler.step(col, self.up_state)
        return raw

    def _process_block(self, block: np.ndarray) -> np.ndarray:
        b = self.blocks_done
        cond = self._cond_block(b)
        w = torch.from_numpy(block)[None, None, :]
        valid = block.size
        merged = self.model.conditioner(w, cond[:, :, :valid])
        if valid < self.hop:
            merged = torch.nn.functional.pad(merged, (0, self.hop - valid))
        out, self.unet_state = self.model.unet.step(
            merged, self.unet_state, self.attn_window
        )
        self.blocks_done += 1
        return out[0, 0, :valid].numpy()

    def push(self, chunk) -> np.ndarray:
        """Feed samples; returns any newly completed 256-sample blocks."""
        if self.closed:
            raise StreamClosedError("push on a closed stream")
        chunk = np.asarray(chunk, dtype=np.float32).reshape(-1)
        self._pending = np.concatenate([self._pending, chunk])

        outputs = []
        with torch.no_grad():
            while self._pending.size >= self.hop:
                block = self._pending[: self.hop]
                self._pending = self._pending[self.hop :]
                self._absorb(block)
                outputs.append(self._process_block(block))
        if outputs:
            return np.concatenate(outputs)
        return np.zeros(0, dtype=np.float32)

    def close(self) -> np.ndarray:
        """Flush the final partial block; total output equals total input."""
        if self.closed:
            raise StreamClosedError("stream already closed")
        self.closed = True
        if self._pending.size == 0:
            return np.zeros(0, dtype=np.float32)
        with torch.no_grad():
            tail = self._pending
            self._pending = np.zeros(0, dtype=np.float32)
            self._absorb(tail)
            return self._process_block(tail)


def open_stream(model: HybridDenoiser, attn_window: int = DEFAULT_ATTN_WINDOW) -> DenoiserStream:
    return DenoiserStream(model, attn_window)
