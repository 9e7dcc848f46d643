import dataclasses

import numpy as np
import pytest
import torch

from specwave import (
    Conditioner,
    ConditionerConfig,
    SpectrogramUpsampler,
    build_hybrid,
    unet_init,
)
from specwave.modules import magnitude_stft


def make_upsampler(**kwargs):
    cfg = ConditionerConfig(n_bins=65, cond_channels=4, **kwargs)
    torch.manual_seed(0)
    return SpectrogramUpsampler(cfg)


def test_upsample_factor_is_256():
    cfg = ConditionerConfig()
    assert cfg.time_stride**cfg.n_stages == 256
    assert cfg.upsample_factor == 256


@pytest.mark.parametrize("t_spec", list(range(1, 21)))
def test_raw_upsampled_length_law(t_spec):
    up = make_upsampler()
    with torch.no_grad():
        raw = up.upsample_raw(torch.rand(1, 65, t_spec))
    assert raw.shape == (1, 4, 256 * t_spec)


def test_ten_second_clip_alignment():
    # hop 256 on a 10 s 16 kHz clip: 625 frames upsample back to 160000
    up = ConditionerConfig(n_bins=513)
    assert up.upsample_factor * (160000 // 256) == 160000


def test_zero_spectrogram_zero_bias_gives_zero_conditioner():
    up = make_upsampler()
    with torch.no_grad():
        for stage in up.stages:
            stage.conv.bias.zero_()
        up.collapse.bias.zero_()
        out = up(torch.zeros(1, 65, 8), 2048)
    assert torch.all(out == 0)


def test_alignment_crop_and_pad():
    up = make_upsampler()
    y = torch.rand(1, 65, 8)  # raw 2048, +256 causal delay
    with torch.no_grad():
        assert up(y, 2000).shape[2] == 2000
        assert up(y, 2048).shape[2] == 2048
        assert up(y, 2304).shape[2] == 2304  # exactly raw + one hop
        with pytest.raises(ValueError, match="one hop"):
            up(y, 2305)


def test_causal_delay_shifts_by_one_hop():
    up = make_upsampler()
    y = torch.rand(1, 65, 8)
    with torch.no_grad():
        raw = up.upsample_raw(y)
        aligned = up(y, 2048)
    assert torch.all(aligned[:, :, :256] == 0)
    assert torch.allclose(aligned[:, :, 256:], raw[:, :, : 2048 - 256])


def test_non_causal_has_no_delay():
    up = make_upsampler(causal=False)
    y = torch.rand(1, 65, 8)
    with torch.no_grad():
        raw = up.upsample_raw(y)
        aligned = up(y, 2048)
    assert torch.allclose(aligned, raw)


def test_swapped_kernel_axes_still_upsamples():
    up = make_upsampler(swap_kernel_axes=True)
    with torch.no_grad():
        raw = up.upsample_raw(torch.rand(1, 65, 5))
    assert raw.shape == (1, 4, 1280)


def test_condition_addition_identity():
    cfg = ConditionerConfig(n_bins=65, cond_channels=4, method="addition")
    torch.manual_seed(0)
    cond_mod = Conditioner(cfg)
    with torch.no_grad():
        cond_mod.proj.bias.zero_()
        w = torch.rand(1, 1, 100)
        out = cond_mod(w, torch.zeros(1, 4, 100))
    assert torch.allclose(out, w)


def test_condition_concatenation_shape():
    cfg = ConditionerConfig(n_bins=65, cond_channels=4, method="concatenation")
    torch.manual_seed(0)
    cond_mod = Conditioner(cfg)
    with torch.no_grad():
        out = cond_mod(torch.rand(1, 1, 50), torch.rand(1, 4, 50))
    assert out.shape == (1, 2, 50)
    assert cfg.in_channels == 2


def test_condition_film_identity_params():
    cfg = ConditionerConfig(n_bins=65, cond_channels=4, method="film")
    torch.manual_seed(0)
    cond_mod = Conditioner(cfg)
    with torch.no_grad():
        cond_mod.gamma.weight.zero_()
        cond_mod.gamma.bias.fill_(1.0)
        cond_mod.beta.weight.zero_()
        cond_mod.beta.bias.zero_()
        w = torch.rand(1, 1, 64)
        out = cond_mod(w, torch.rand(1, 4, 64))
    assert torch.equal(out, w)


def test_condition_length_mismatch():
    cfg = ConditionerConfig(n_bins=65, cond_channels=4)
    cond_mod = Conditioner(cfg)
    with pytest.raises(ValueError, match="length mismatch"):
        cond_mod(torch.rand(1, 1, 10), torch.rand(1, 4, 11))


def test_unknown_method_rejected():
    with pytest.raises(ValueError, match="unknown conditioning method"):
        ConditionerConfig(method="gating")


def test_pipeline_length_preservation(tiny_model):
    x = 0.2 * torch.randn(1, 1, 16000)
    with torch.no_grad():
        out = tiny_model(x)
    assert out.shape == (1, 1, 16000)


def test_end_to_end_block_causality(tiny_model):
    torch.manual_seed(2)
    for k in (2, 5, 13):
        t = 256 * k
        x = 0.4 * torch.randn(1, 1, 8192)
        x2 = x.clone()
        x2[:, :, t:] += 0.3 * torch.randn(1, 1, 8192 - t)
        with torch.no_grad():
            a, b = tiny_model(x), tiny_model(x2)
        assert float((a - b)[:, :, :t].abs().max()) <= 1e-5
        assert float((a - b)[:, :, t:].abs().max()) > 1e-6


def test_methods_produce_distinct_outputs(tiny_spec_cfg, tiny_unet_cfg):
    x = 0.3 * torch.randn(1, 1, 4096)
    outs = {}
    for method in ("addition", "concatenation", "film"):
        cond_cfg = ConditionerConfig(n_bins=513, cond_channels=4, method=method)
        unet_cfg = dataclasses.replace(tiny_unet_cfg, in_channels=cond_cfg.in_channels)
        model = build_hybrid(tiny_spec_cfg, cond_cfg, unet_cfg, seed=11)
        with torch.no_grad():
            outs[method] = model(x)
    assert not torch.allclose(outs["addition"], outs["concatenation"], atol=1e-6)
    assert not torch.allclose(outs["addition"], outs["film"], atol=1e-6)
    assert not torch.allclose(outs["film"], outs["concatenation"], atol=1e-6)


def test_film_identity_equals_unconditioned_unet(tiny_spec_cfg, tiny_unet_cfg):
    cond_cfg = ConditionerConfig(n_bins=513, cond_channels=4, method="film")
    model = build_hybrid(tiny_spec_cfg, cond_cfg, tiny_unet_cfg, seed=3)
    with torch.no_grad():
        model.conditioner.gamma.weight.zero_()
        model.conditioner.gamma.bias.fill_(1.0)
        model.conditioner.beta.weight.zero_()
        model.conditioner.beta.bias.zero_()
        x = 0.3 * torch.randn(1, 1, 4096)
        assert torch.equal(model(x), model.unet(x))


def test_mismatched_components_rejected(tiny_spec_cfg, tiny_unet_cfg):
    bad_cond = ConditionerConfig(n_bins=99, cond_channels=4)
    with pytest.raises(ValueError, match="frequency bins"):
        build_hybrid(tiny_spec_cfg, bad_cond, tiny_unet_cfg, seed=0)

    concat = ConditionerConfig(n_bins=513, cond_channels=4, method="concatenation")
    with pytest.raises(ValueError, match="input channels"):
        build_hybrid(tiny_spec_cfg, concat, tiny_unet_cfg, seed=0)

    stride8 = ConditionerConfig(n_bins=513, cond_channels=4, time_stride=8)
    with pytest.raises(ValueError, match="hop"):
        build_hybrid(tiny_spec_cfg, stride8, tiny_unet_cfg, seed=0)
