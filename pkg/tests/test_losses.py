import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import central_differences, max_relative_error
from vidclearn.losses import (
    LossConfig,
    distillation_loss,
    kl_distillation,
    kl_distillation_grad,
    reconstruction_loss,
    reconstruction_loss_grad,
    temporal_consistency_loss,
    temporal_consistency_loss_grad,
    total_loss,
)


def scalar_frames(values):
    """``[1, T, 1, 1]`` tensor with one value per frame."""
    return np.asarray(values, dtype=float).reshape(1, -1, 1, 1)


def test_loss_config_defaults():
    c = LossConfig()
    assert (c.alpha, c.gamma, c.lambda_t, c.temperature) == (0.8, 1.0, 10.0, 4.0)
    with pytest.raises(ValueError):
        LossConfig(alpha=1.5)
    with pytest.raises(ValueError):
        LossConfig(temperature=0)


def test_reconstruction_examples(rng):
    y = rng.normal(size=(3, 4, 5, 5))
    assert reconstruction_loss(y, y) == 0.0
    assert reconstruction_loss([1.0, 2.0], [0.0, 0.0]) == 2.5
    yh = rng.normal(size=y.shape)
    assert reconstruction_loss(y + 3.0, yh + 3.0) == pytest.approx(reconstruction_loss(y, yh), rel=1e-12)
    with pytest.raises(ValueError):
        reconstruction_loss(y, yh[:, :2])


def test_kl_distillation_examples(rng):
    x = rng.normal(size=(3, 4, 5, 5))
    assert kl_distillation(x, x, 4.0) == 0.0
    assert kl_distillation(x, x, 8.0) == 0.0
    t = np.array([1.0, 0.0]).reshape(2, 1, 1, 1)
    s = np.array([0.0, 1.0]).reshape(2, 1, 1, 1)
    assert kl_distillation(t, s, 1.0) == pytest.approx(math.tanh(0.5), abs=1e-12)
    with pytest.raises(ValueError):
        kl_distillation(x, x[:1], 1.0)


def test_kl_distillation_per_frame_average():
    # frame 0 differs, frame 1 identical: result is half the single-frame value times T^2
    t = np.zeros((2, 2, 1, 1))
    s = np.zeros((2, 2, 1, 1))
    t[0, 0] = 1.0
    s[1, 0] = 1.0
    temp = 2.0
    p = np.exp(np.array([0.5, 0.0]))
    p /= p.sum()
    single = float(np.sum(p * np.log(p / p[::-1])))
    assert kl_distillation(t, s, temp) == pytest.approx(temp ** 2 * single / 2, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_kl_distillation_nonnegative(seed):
    r = np.random.default_rng(seed)
    a, b = r.normal(size=(2, 3, 2, 2)), r.normal(size=(2, 3, 2, 2))
    assert kl_distillation(a, b, 4.0) >= 0.0
    # per-frame constant shift leaves softmax, hence the loss, unchanged
    assert kl_distillation(a, a + r.normal(size=(1, 3, 1, 1)), 4.0) < 1e-12


def test_distillation_loss():
    assert distillation_loss(7.0, 2.0, 0.8, first_task=True) == 2.0
    assert distillation_loss(7.0, 2.0, 0.0) == 2.0
    assert distillation_loss(1.0, 2.0, 0.8) == pytest.approx(1.2, abs=1e-15)
    with pytest.raises(ValueError):
        distillation_loss(1.0, 1.0, -0.1)


@given(st.floats(0.01, 0.99), st.floats(0, 10), st.floats(0, 10), st.floats(0, 5))
def test_distillation_monotone(alpha, kl, ls, bump):
    base = distillation_loss(kl, ls, alpha)
    assert distillation_loss(kl + bump, ls, alpha) >= base
    assert distillation_loss(kl, ls + bump, alpha) >= base


def test_temporal_examples(rng):
    p = rng.normal(size=(3, 5, 4, 4))
    assert temporal_consistency_loss(p, p) == 0.0
    c = rng.normal(size=(3, 1, 4, 4))
    assert temporal_consistency_loss(p + c, p) < 1e-12
    assert temporal_consistency_loss(scalar_frames([0, 1, 3]), scalar_frames([0, 0, 0])) == 2.5
    with pytest.raises(ValueError):
        temporal_consistency_loss(p[:, :1], p[:, :1])


def test_temporal_offset_invariance_exact(rng):
    p = rng.normal(size=(3, 6, 4, 4))
    n = rng.normal(size=p.shape)
    c = rng.normal(size=(3, 1, 4, 4))
    base = temporal_consistency_loss(p, n)
    assert abs(temporal_consistency_loss(p + c, n) - base) <= 1e-12
    assert abs(temporal_consistency_loss(p, n + c) - base) <= 1e-12


def test_total_loss():
    assert total_loss(0.5, 0.05, 1.0, 10.0) == pytest.approx(1.0, abs=1e-15)
    assert total_loss(0.5, 123.0, 2.0, 0.0) == 1.0
    assert total_loss(0.0, 0.0, 1.0, 10.0) == 0.0
    with pytest.raises(ValueError):
        total_loss(1.0, 1.0, -1.0, 1.0)


@pytest.mark.parametrize("which", ["mse", "kl", "temporal"])
def test_loss_gradients_match_finite_differences(which, rng):
    a = rng.normal(size=(2, 3, 2, 2))
    b = rng.normal(size=a.shape)
    if which == "mse":
        f, g = (lambda x: reconstruction_loss(b, x)), reconstruction_loss_grad(b, a)
    elif which == "kl":
        f, g = (lambda x: kl_distillation(b, x, 4.0)), kl_distillation_grad(b, a, 4.0)
    else:
        f, g = (lambda x: temporal_consistency_loss(x, b)), temporal_consistency_loss_grad(a, b)
    fd = central_differences(lambda x: f(x.reshape(a.shape)), a.ravel().copy()).reshape(a.shape)
    assert max_relative_error(g, fd) < 1e-6
