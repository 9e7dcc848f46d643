"""Short-time Fourier analysis/synthesis and band splitting.

Conventions used throughout the package:

- Analysis frames are centered: the input is padded by ``win_length // 2``
  on both sides with half-sample reflection (numpy's "symmetric" mode),
  frame ``t`` starts at padded index ``t * hop`` (so it is centered on
  original sample ``t * hop``), and the frame count is truncated to
  ``floor(T / hop)``. Half-sample reflection keeps frame ``t`` free of any
  dependence on samples after ``t * hop + win_length // 2 - 1``, which the
  causal streaming path relies on.
- The window is a periodic Hann of ``win_length``; frames are windowed,
  right zero-padded to ``n_fft``, and transformed with a real FFT.
- Synthesis uses the same window with overlap-add and pointwise
  normalization by the summed squared window.

All functions are pure and operate on float64 numpy arrays.
"""

from dataclasses import dataclass

import numpy as np

DEFAULT_SAMPLE_RATE = 16000


def hann_window(win_length: int) -> np.ndarray:
    """Periodic Hann window of the given length (float64)."""
    n = np.arange(win_length, dtype=np.float64)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * n / win_length))


@dataclass(frozen=True)
class StftParams:
    """Hop size, window length, and FFT size of one spectral transform."""

    hop: int
    win_length: int
    n_fft: int

    def __post_init__(self):
        if self.hop < 1:
            raise ValueError(f"hop must be >= 1, got {self.hop}")
        if self.win_length > self.n_fft:
            raise ValueError(
                f"win_length {self.win_length} exceeds n_fft {self.n_fft}"
            )
        if self.hop > self.win_length:
            raise ValueError(
                f"hop {self.hop} exceeds win_length {self.win_length}"
            )

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1

    def frame_count(self, n_samples: int) -> int:
        return n_samples // self.hop


@dataclass
class Waveform:
    """Mono audio samples with a sample rate."""

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError(f"expected mono 1-D samples, got shape {self.samples.shape}")
        if self.samples.size < 1:
            raise ValueError("waveform must contain at least one sample")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class ComplexSpectrogram:
    """Complex STFT matrix [F x T_spec] tied to its StftParams."""

    values: np.ndarray
    params: StftParams

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.values.ndim != 2:
            raise ValueError(f"expected 2-D spectrogram, got shape {self.values.shape}")
        if self.values.shape[0] != self.params.n_bins:
            raise ValueError(
                f"frequency axis {self.values.shape[0]} does not match "
                f"n_fft//2+1 = {self.params.n_bins}"
            )

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


@dataclass
class MagnitudeSpectrogram:
    """Nonnegative magnitude matrix [F x T_spec] tied to its StftParams.

    The frequency axis is n_fft//2 + 1 rows for a full-band spectrogram but
    may be a sub-band slice (see :func:`high_band`).
    """

    values: np.ndarray
    params: StftParams

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"expected 2-D spectrogram, got shape {self.values.shape}")
        if self.values.shape[0] > self.params.n_bins:
            raise ValueError(
                f"frequency axis {self.values.shape[0]} exceeds "
                f"n_fft//2+1 = {self.params.n_bins}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("magnitude spectrogram contains non-finite entries")
        if np.any(self.values < 0):
            raise ValueError("magnitude spectrogram contains negative entries")

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


def frame_signal(x: np.ndarray, p: StftParams) -> np.ndarray:
    """Center-padded analysis frames [T_spec x win_length], not windowed."""
    x = np.asarray(x, dtype=np.float64)
    if x.size < p.win_length:
        raise ValueError(
            f"input too short: {x.size} samples < win_length {p.win_length}"
        )
    pad = p.win_length // 2
    xp = np.pad(x, pad, mode="symmetric")
    t_spec = p.frame_count(x.size)
    idx = np.arange(p.win_length)[None, :] + p.hop * np.arange(t_spec)[:, None]
    return xp[idx]


def stft(w: Waveform, p: StftParams) -> ComplexSpectrogram:
    """Short-time Fourier transform with floor(T/hop) centered frames."""
    frames = frame_signal(w.samples, p) * hann_window(p.win_length)[None, :]
    spec = np.fft.rfft(frames, n=p.n_fft, axis=1)
    return ComplexSpectrogram(values=spec.T, params=p)


def magnitude(c: ComplexSpectrogram) -> MagnitudeSpectrogram:
    """Elementwise complex modulus."""
    return MagnitudeSpectrogram(values=np.abs(c.values), params=c.params)


def istft_with_phase(
    mag: MagnitudeSpectrogram,
    phase_source: ComplexSpectrogram,
    target_len: int,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
) -> Waveform:
    """Inverse STFT of a magnitude combined with the phase of another STFT.

    Reconstructs ``target_len`` samples by overlap-add with squared-window
    normalization. Samples not covered by any frame are zero.
    """
    if mag.values.shape != phase_source.values.shape:
        raise ValueError(
            f"shape mismatch: magnitude {mag.values.shape} vs "
            f"phase source {phase_source.values.shape}"
        )
    if mag.params != phase_source.params:
        raise ValueError("magnitude and phase source use different STFT params")
    if target_len < 1:
        raise ValueError("target_len must be positive")

    p = mag.params
    phase = np.angle(phase_source.values)
    spec = mag.values * np.exp(1j * phase)

    frames = np.fft.irfft(spec.T, n=p.n_fft, axis=1)[:, : p.win_length]
    window = hann_window(p.win_length)
    frames = frames * window[None, :]

    t_spec = mag.n_frames
    pad = p.win_length // 2
    buf_len = max((t_spec - 1) * p.hop + p.win_length, pad + target_len)
    acc = np.zeros(buf_len, dtype=np.float64)
    wsq = np.zeros(buf_len, dtype=np.float64)
    for t in range(t_spec):
        start = t * p.hop
        acc[start : start + p.win_length] += frames[t]
        wsq[start : start + p.win_length] += window**2

    out = np.where(wsq > 1e-13, acc / np.maximum(wsq, 1e-13), 0.0)
    out = out[pad : pad + target_len]
    if out.size < target_len:
        out = np.pad(out, (0, target_len - out.size))
    return Waveform(samples=out, sample_rate=sample_rate)


def high_band(mag: MagnitudeSpectrogram) -> MagnitudeSpectrogram:
    """Upper half of the frequency axis (4-8 kHz for 16 kHz audio).

    F = n_fft/2 + 1 is odd, so the split keeps the larger upper piece:
    rows F//2 .. F-1, which includes the Nyquist bin.
    """
    f = mag.values.shape[0]
    if f < 2:
        raise ValueError("need at least 2 frequency bins to split")
    return MagnitudeSpectrogram(values=mag.values[f // 2 :, :], params=mag.params)
