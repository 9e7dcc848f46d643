import math

import numpy as np
import pytest
import torch

from specwave import (
    DEFAULT_RESOLUTIONS,
    StftParams,
    Waveform,
    hybrid_loss,
    magnitude,
    mrstft,
    spec_loss,
    spec_loss_breakdown,
    stft,
    stft_resolution_term,
    waveform_l1,
)
from specwave.losses import EPS_MAG

from conftest import rand_wave_t


def loop_spec_loss(y, y_hat, eps=EPS_MAG):
    """Independent loop-based reference for the spectrogram loss."""
    f, t_spec = y.shape
    log_term = 0.0
    for i in range(f):
        for j in range(t_spec):
            log_term += abs(
                math.log(max(y[i, j], eps)) - math.log(max(y_hat[i, j], eps))
            )
    log_term /= t_spec
    sc = np.linalg.norm(y - y_hat) / np.linalg.norm(y)
    return log_term + sc


def numpy_resolution_term(x, x_hat, p, band="full", eps=EPS_MAG):
    """Reference for one STFT-loss resolution built on the numpy DSP path."""
    s_x = magnitude(stft(Waveform(x), p)).values
    s_hat = magnitude(stft(Waveform(x_hat), p)).values
    if band == "high":
        s_x = s_x[s_x.shape[0] // 2 :]
        s_hat = s_hat[s_hat.shape[0] // 2 :]
    sc = np.linalg.norm(s_x - s_hat) / np.linalg.norm(s_x)
    log_term = np.abs(
        np.log(np.maximum(s_x, eps)) - np.log(np.maximum(s_hat, eps))
    ).sum() / len(x)
    return sc + log_term


def test_spec_loss_identity(rng):
    y = torch.tensor(rng.uniform(0.1, 2.0, (33, 16)))
    assert float(spec_loss(y, y.clone())) == 0.0


def test_spec_loss_1x1_hand_value():
    y = torch.tensor([[math.e]], dtype=torch.float64)
    y_hat = torch.tensor([[1.0]], dtype=torch.float64)
    want = 1.0 + (math.e - 1.0) / math.e  # = 1.63212...
    assert float(spec_loss(y, y_hat)) == pytest.approx(want, rel=1e-9)
    assert float(spec_loss(y, y_hat)) == pytest.approx(1.63212, abs=1e-5)


def test_spec_loss_matches_loop_oracle(rng):
    for _ in range(5):
        y = rng.uniform(0.0, 3.0, (5, 7))
        y_hat = rng.uniform(0.0, 3.0, (5, 7))
        got = float(spec_loss(torch.tensor(y), torch.tensor(y_hat)))
        assert got == pytest.approx(loop_spec_loss(y, y_hat), rel=1e-6)


def test_spec_loss_degenerate_target():
    zero = torch.zeros(4, 5)
    with pytest.raises(ValueError, match="degenerate clean target"):
        spec_loss(zero, torch.rand(4, 5))


def test_spec_loss_breakdown_sums():
    y = torch.rand(6, 9) + 0.1
    y_hat = torch.rand(6, 9) + 0.1
    b = spec_loss_breakdown(y, y_hat)
    assert float(b.total) == pytest.approx(
        float(b.terms["log_mag"] + b.terms["sc"]), rel=1e-6
    )


def test_resolution_term_identity(rng):
    x = rand_wave_t(rng, 2000)
    b = stft_resolution_term(x, x.clone(), StftParams(50, 240, 512))
    assert float(b.total) == 0.0


def test_resolution_term_scaling_closed_form(rng):
    # x_hat = 0.5 x: spectral convergence is exactly 0.5 and the log term is
    # log(2) * F * T_spec / T, provided no magnitude hits the eps floor
    p = StftParams(50, 240, 512)
    x = rand_wave_t(rng, 2000, amp=0.9)
    s_x = magnitude(stft(Waveform(x.numpy()), p)).values
    assert s_x.min() > 2 * EPS_MAG  # precondition for the closed form
    b = stft_resolution_term(x, 0.5 * x, p)
    f, t_spec = s_x.shape
    assert float(b.terms["sc"]) == pytest.approx(0.5, abs=1e-9)
    want_log = math.log(2.0) * f * t_spec / 2000
    assert float(b.terms["log_mag"]) == pytest.approx(want_log, rel=1e-6)


@pytest.mark.parametrize("alpha", [0.25, 0.5, 0.75, 1.0])
def test_spectral_convergence_scaling_law(rng, alpha):
    x = rand_wave_t(rng, 1500, amp=0.8)
    b = stft_resolution_term(x, alpha * x, StftParams(50, 240, 512))
    assert float(b.terms["sc"]) == pytest.approx(abs(1 - alpha), abs=1e-6)


def test_resolution_term_matches_numpy_oracle(rng):
    p = StftParams(120, 600, 1024)
    for _ in range(3):
        x = rand_wave_t(rng, 2048, amp=0.7)
        x_hat = x + 0.1 * rand_wave_t(rng, 2048)
        got = float(stft_resolution_term(x, x_hat, p).total)
        want = numpy_resolution_term(x.numpy(), x_hat.numpy(), p)
        assert got == pytest.approx(want, rel=1e-5)


def test_resolution_term_log_norm_frames(rng):
    p = StftParams(120, 600, 1024)
    x = rand_wave_t(rng, 2048, amp=0.7)
    x_hat = x + 0.05 * rand_wave_t(rng, 2048)
    by_wave = stft_resolution_term(x, x_hat, p, log_norm="waveform")
    by_frame = stft_resolution_term(x, x_hat, p, log_norm="frames")
    t, t_spec = 2048, 2048 // p.hop
    assert float(by_frame.terms["log_mag"]) == pytest.approx(
        float(by_wave.terms["log_mag"]) * t / t_spec, rel=1e-6
    )


def test_resolution_term_silent_target(rng):
    x = torch.zeros(2000, dtype=torch.float64)
    with pytest.raises(ValueError, match="degenerate clean target"):
        stft_resolution_term(x, rand_wave_t(rng, 2000), StftParams(50, 240, 512))


def test_mrstft_identity_and_singleton(rng):
    x = rand_wave_t(rng, 2048)
    assert float(mrstft(x, x.clone()).total) == 0.0

    p = StftParams(50, 240, 512)
    single = mrstft(x, 0.7 * x, resolutions=(p,))
    direct = stft_resolution_term(x, 0.7 * x, p)
    assert float(single.total) == pytest.approx(float(direct.total), rel=1e-9)


def test_mrstft_additivity_over_default_set(rng):
    x = rand_wave_t(rng, 2048, amp=0.8)
    x_hat = x + 0.1 * rand_wave_t(rng, 2048)
    total = mrstft(x, x_hat, DEFAULT_RESOLUTIONS)
    parts = [
        float(stft_resolution_term(x, x_hat, p).total) for p in DEFAULT_RESOLUTIONS
    ]
    assert float(total.total) == pytest.approx(sum(parts), rel=1e-6)


def test_mrstft_high_band_differs_and_matches_oracle(rng):
    x = rand_wave_t(rng, 2048, amp=0.8)
    x_hat = x + 0.2 * rand_wave_t(rng, 2048)
    full = float(mrstft(x, x_hat, band="full").total)
    high = float(mrstft(x, x_hat, band="high").total)
    assert full != pytest.approx(high, rel=1e-3)

    p = StftParams(50, 240, 512)
    got = float(stft_resolution_term(x, x_hat, p, band="high").total)
    want = numpy_resolution_term(x.numpy(), x_hat.numpy(), p, band="high")
    assert got == pytest.approx(want, rel=1e-5)


def test_mrstft_empty_resolution_set(rng):
    x = rand_wave_t(rng, 2048)
    with pytest.raises(ValueError, match="nonempty"):
        mrstft(x, x, resolutions=())


def test_waveform_l1():
    assert float(waveform_l1(torch.tensor([1.0, -1.0]), torch.tensor([0.0, 0.0]))) == 1.0
    x = torch.rand(100)
    assert float(waveform_l1(x, x.clone())) == 0.0


def test_waveform_l1_loop_oracle(rng):
    x = rand_wave_t(rng, 333)
    x_hat = rand_wave_t(rng, 333)
    want = sum(abs(float(a) - float(b)) for a, b in zip(x, x_hat)) / 333
    assert float(waveform_l1(x, x_hat)) == pytest.approx(want, abs=1e-7)


def test_hybrid_loss_composition(rng):
    x = rand_wave_t(rng, 2048, amp=0.8)
    x_hat = x + 0.1 * rand_wave_t(rng, 2048)
    b = hybrid_loss(x, x_hat)
    want = float(waveform_l1(x, x_hat)) + float(mrstft(x, x_hat).total)
    assert float(b.total) == pytest.approx(want, rel=1e-6)
    assert float(b.total) == pytest.approx(
        sum(float(v) for v in b.terms.values()), rel=1e-6
    )

    assert float(hybrid_loss(x, x.clone()).total) == 0.0

    high = hybrid_loss(x, x_hat, band="high")
    assert float(high.total) != pytest.approx(float(b.total), rel=1e-3)


def central_diff_grad(fn, x, h=1e-6):
    """Central finite-difference gradient oracle (float64)."""
    g = torch.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.numel()):
        orig = float(flat[i])
        flat[i] = orig + h
        fp = float(fn(x))
        flat[i] = orig - h
        fm = float(fn(x))
        flat[i] = orig
        gf[i] = (fp - fm) / (2 * h)
    return g


def assert_grad_matches(fn, x, rel=1e-4):
    x = x.clone().requires_grad_(True)
    fn(x).backward()
    analytic = x.grad.detach().clone()
    numeric = central_diff_grad(fn, x.detach().clone())
    denom = numeric.abs().max() + 1e-12
    assert float((analytic - numeric).abs().max() / denom) <= rel


def test_spec_loss_gradient(rng):
    y = torch.tensor(rng.uniform(0.2, 2.0, (9, 6)))
    y_hat0 = torch.tensor(rng.uniform(0.2, 2.0, (9, 6)))
    assert_grad_matches(lambda q: spec_loss(y, q), y_hat0)


def test_waveform_l1_gradient(rng):
    x = rand_wave_t(rng, 257)
    x_hat0 = x + 0.3 * rand_wave_t(rng, 257)
    assert_grad_matches(lambda q: waveform_l1(x, q), x_hat0)


@pytest.mark.parametrize("band", ["full", "high"])
def test_mrstft_gradient(rng, band):
    p = (StftParams(32, 120, 256),)
    x = rand_wave_t(rng, 600, amp=0.8)
    x_hat0 = x + 0.2 * rand_wave_t(rng, 600)
    assert_grad_matches(lambda q: mrstft(x, q, resolutions=p, band=band).total, x_hat0)
