"""Analytic gradients versus central finite differences (float64)."""

import numpy as np
import pytest

from emghand.handformer import (HandFormer, ModelConfig, grad_check,
                                sample_mask)

TINY = ModelConfig(d_model=16, n_heads=2, n_encoder_layers=2,
                   n_decoder_layers=1, ffn_multiplier=2, window_len=64,
                   n_queries=8, out_dims=6, mae_decoder_depth=1, seed=3)


@pytest.fixture(scope="module")
def setup():
    rng = np.random.default_rng(42)
    model = HandFormer(TINY, dtype=np.float64, rng=rng)
    windows = rng.uniform(-1, 1, (2, 8, 64))
    # residuals with random signs but bounded away from the L1 kink so
    # finite differences stay two-sided
    offsets = rng.uniform(0.1, 0.6, (2, 8, 6)) \
        * rng.choice([-1.0, 1.0], (2, 8, 6))
    targets = model.forward(windows) + offsets
    assert np.abs(model.forward(windows) - targets).min() > 1e-3
    return model, windows, targets


def test_l1_full_model_under_1e4(setup):
    model, windows, targets = setup
    err = grad_check(model, windows, targets=targets, loss="l1",
                     n_samples=250, rng=np.random.default_rng(7))
    assert err < 1e-4


def test_mae_full_model_under_1e4(setup):
    model, windows, _ = setup
    rng = np.random.default_rng(5)
    masks = np.stack([sample_mask(TINY.token_count, 0.7, rng)
                      for _ in range(2)])
    err = grad_check(model, windows, masks=masks, loss="mae",
                     n_samples=250, rng=np.random.default_rng(8))
    assert err < 1e-4


def test_linear_head_only_under_1e8(setup):
    model, windows, _ = setup
    # same-sign residuals: loss is exactly linear in the head parameters
    targets = model.forward(windows) - 0.5
    err = grad_check(model, windows, targets=targets, loss="l1",
                     n_samples=120, rng=np.random.default_rng(9),
                     param_names=["head.W", "head.b"])
    assert err < 1e-8


def test_grad_check_requires_float64():
    model = HandFormer(TINY, dtype=np.float32)
    with pytest.raises(ValueError):
        grad_check(model, np.zeros((1, 8, 64), np.float32),
                   targets=np.zeros((1, 8, 6), np.float32))
