import numpy as np
import pytest
import torch

from specwave import ConditionerConfig, SpecNetConfig, StftParams, UNetConfig, build_hybrid

SPEC_PARAMS = StftParams(hop=256, win_length=1024, n_fft=1024)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_spec_cfg():
    return SpecNetConfig(
        stft=SPEC_PARAMS,
        n_conv_layers=2,
        conv_hidden=8,
        n_attn_blocks=2,
        attn_heads=2,
        attn_dim=16,
        ff_inner=32,
    )


@pytest.fixture
def tiny_unet_cfg():
    return UNetConfig(
        n_layers=8,
        hidden=2,
        channel_cap=16,
        attn_dim=16,
        attn_heads=2,
        n_attn_blocks=2,
        ff_inner=32,
    )


@pytest.fixture
def tiny_cond_cfg():
    return ConditionerConfig(n_bins=513, cond_channels=4)


@pytest.fixture
def tiny_model(tiny_spec_cfg, tiny_cond_cfg, tiny_unet_cfg):
    return build_hybrid(tiny_spec_cfg, tiny_cond_cfg, tiny_unet_cfg, seed=7)


def rand_wave(rng, n, amp=0.5):
    return rng.uniform(-amp, amp, n)


def rand_wave_t(rng, n, amp=0.5, dtype=torch.float64):
    return torch.tensor(rand_wave(rng, n, amp), dtype=dtype)
