import numpy as np
import pytest

from specwave import (
    ComplexSpectrogram,
    MagnitudeSpectrogram,
    StftParams,
    Waveform,
    high_band,
    istft_with_phase,
    magnitude,
    stft,
)
from specwave.dsp import frame_signal, hann_window


def naive_dft_frames(x, p):
    """Direct per-frame DFT oracle: O(T_spec * win * F), no FFT."""
    frames = frame_signal(x, p) * hann_window(p.win_length)
    n_bins = p.n_fft // 2 + 1
    out = np.zeros((n_bins, frames.shape[0]), dtype=np.complex128)
    n = np.arange(p.win_length)
    for t in range(frames.shape[0]):
        for k in range(n_bins):
            out[k, t] = np.sum(frames[t] * np.exp(-2j * np.pi * k * n / p.n_fft))
    return out


def test_zero_waveform_gives_zero_spectrogram():
    p = StftParams(64, 128, 128)
    c = stft(Waveform(np.zeros(1000)), p)
    assert np.all(c.values == 0)


def test_frame_count_law():
    p = StftParams(256, 1024, 1024)
    c = stft(Waveform(np.zeros(160000)), p)
    assert c.values.shape == (513, 625)


@pytest.mark.parametrize(
    "p,n",
    [
        (StftParams(256, 1024, 1024), 10000),
        (StftParams(80, 320, 320), 4000),
        (StftParams(50, 240, 512), 2000),
    ],
)
def test_frame_count_for_paper_resolutions(p, n):
    c = stft(Waveform(np.zeros(n)), p)
    assert c.values.shape == (p.n_fft // 2 + 1, n // p.hop)


def test_stft_matches_naive_dft_oracle(rng):
    p = StftParams(32, 64, 64)
    x = rng.uniform(-1, 1, 400)
    got = stft(Waveform(x), p).values
    want = naive_dft_frames(x, p)
    assert np.max(np.abs(got - want)) < 1e-9


def test_pure_tone_energy_in_expected_bin(rng):
    # rectangular-window-free check: cosine at an exact bin frequency of the
    # frame length concentrates energy at that bin (Hann spreads +-1 bin)
    p = StftParams(128, 512, 512)
    fs = 16000
    k = 16  # bin index: freq = k*fs/n_fft = 500 Hz
    t = np.arange(8000) / fs
    x = np.cos(2 * np.pi * (k * fs / p.n_fft) * t)
    mag = magnitude(stft(Waveform(x), p)).values
    interior = mag[:, 4:-4]
    peak_bins = np.argmax(interior, axis=0)
    assert np.all(np.abs(peak_bins - k) <= 1)
    # energy within k +- 1 dominates
    band = interior[k - 1 : k + 2].sum(axis=0)
    assert np.all(band / interior.sum(axis=0) > 0.95)


def test_stft_linearity(rng):
    p = StftParams(50, 240, 512)
    x = rng.uniform(-1, 1, 1500)
    z = rng.uniform(-1, 1, 1500)
    a, b = 0.7, -1.3
    lhs = stft(Waveform(a * x + b * z), p).values
    rhs = a * stft(Waveform(x), p).values + b * stft(Waveform(z), p).values
    scale = np.max(np.abs(rhs)) + 1e-30
    assert np.max(np.abs(lhs - rhs)) / scale < 1e-6


def test_stft_too_short_input():
    p = StftParams(256, 1024, 1024)
    with pytest.raises(ValueError, match="too short"):
        stft(Waveform(np.zeros(1023)), p)


def test_magnitude_pythagorean_and_oracle(rng):
    p = StftParams(64, 128, 128)
    c = ComplexSpectrogram(np.full((65, 4), 3 + 4j), p)
    assert np.allclose(magnitude(c).values, 5.0)

    vals = rng.normal(size=(65, 9)) + 1j * rng.normal(size=(65, 9))
    got = magnitude(ComplexSpectrogram(vals, p)).values
    want = np.sqrt(vals.real**2 + vals.imag**2)
    assert np.max(np.abs(got - want)) < 1e-12
    assert np.all(got >= 0)


def test_magnitude_of_zero_matrix():
    p = StftParams(64, 128, 128)
    m = magnitude(ComplexSpectrogram(np.zeros((65, 3), dtype=complex), p))
    assert np.all(m.values == 0)


@pytest.mark.parametrize(
    "p", [StftParams(256, 1024, 1024), StftParams(80, 320, 320)]
)
def test_istft_round_trip(rng, p):
    x = rng.uniform(-0.9, 0.9, 16000)
    c = stft(Waveform(x), p)
    back = istft_with_phase(magnitude(c), c, 16000)
    assert np.max(np.abs(back.samples - x)) <= 1e-4


def test_istft_zero_magnitude_gives_zero(rng):
    p = StftParams(256, 1024, 1024)
    c = stft(Waveform(rng.uniform(-1, 1, 4096)), p)
    zero = MagnitudeSpectrogram(np.zeros_like(c.values, dtype=float), p)
    out = istft_with_phase(zero, c, 4096)
    assert np.all(out.samples == 0)


def test_istft_shape_mismatch_rejected(rng):
    p = StftParams(256, 1024, 1024)
    c = stft(Waveform(rng.uniform(-1, 1, 4096)), p)
    bad = MagnitudeSpectrogram(np.abs(c.values[:, :-1]), p)
    with pytest.raises(ValueError, match="mismatch"):
        istft_with_phase(bad, c, 4096)


def test_high_band_split_sizes():
    p = StftParams(256, 1024, 1024)
    m = MagnitudeSpectrogram(np.arange(513 * 4, dtype=float).reshape(513, 4), p)
    hb = high_band(m)
    assert hb.values.shape == (257, 4)
    assert np.array_equal(hb.values, m.values[256:])

    p2 = StftParams(1, 2, 2)
    m2 = MagnitudeSpectrogram(np.array([[1.0], [2.0]]), p2)
    assert np.array_equal(high_band(m2).values, [[2.0]])


def test_high_band_energy_of_low_tone():
    fs = 16000
    t = np.arange(fs) / fs
    x = 0.8 * np.sin(2 * np.pi * 1000.0 * t)
    m = magnitude(stft(Waveform(x), StftParams(256, 1024, 1024)))
    full = np.linalg.norm(m.values)
    high = np.linalg.norm(high_band(m).values)
    assert high / full < 0.05


def test_waveform_validation():
    with pytest.raises(ValueError):
        Waveform(np.array([np.nan]))
    with pytest.raises(ValueError):
        Waveform(np.zeros(0))
    with pytest.raises(ValueError):
        Waveform(np.zeros((2, 3)))


def test_stft_params_validation():
    with pytest.raises(ValueError):
        StftParams(0, 10, 10)
    with pytest.raises(ValueError):
        StftParams(5, 20, 10)  # win > fft
    with pytest.raises(ValueError):
        StftParams(30, 20, 32)  # hop > win
