import math

import numpy as np
import pytest

from vidclearn.diffusion import (
    CLEAN,
    ddim_invert,
    ddim_sample,
    ddim_step,
    forward_diffuse,
    make_linear_schedule,
    make_plan,
)


class ZeroPredictor:
    def predict(self, params, z, t, cond):
        return np.zeros_like(z)


class ConstantPredictor:
    def __init__(self, value):
        self.value = value

    def predict(self, params, z, t, cond):
        return np.broadcast_to(self.value, z.shape).copy()


@pytest.fixture
def sched():
    return make_linear_schedule(100, 1e-4, 0.02)


def test_schedule_two_steps():
    s = make_linear_schedule(2, 0.1, 0.1)
    assert np.allclose(s.alpha_bars, [0.9, 0.81], atol=1e-15)


def test_schedule_constant_beta_closed_form():
    s = make_linear_schedule(10, 0.05, 0.05)
    assert np.allclose(s.alpha_bars, 0.95 ** np.arange(1, 11), atol=1e-14)


def test_schedule_invariants(sched):
    assert np.all(np.diff(sched.alpha_bars) < 0)
    assert np.all((sched.alpha_bars > 0) & (sched.alpha_bars <= 1))
    prod = np.array([np.prod(1 - sched.betas[: t + 1]) for t in range(sched.steps)])
    assert np.allclose(sched.alpha_bars, prod, atol=1e-12)
    assert sched.betas[0] == 1e-4 and sched.betas[-1] == pytest.approx(0.02)


@pytest.mark.parametrize("args", [(1, 0.1, 0.2), (10, 0.0, 0.1), (10, 0.2, 0.1), (10, 0.1, 1.0)])
def test_schedule_rejects_invalid(args):
    with pytest.raises(ValueError):
        make_linear_schedule(*args)


def test_plans(sched):
    up = make_plan(sched, 20)
    assert up[0] == 0 and up[-1] == 99 and len(up) == 20
    assert all(b > a for a, b in zip(up, up[1:]))
    assert make_plan(sched, 30, descending=True) == make_plan(sched, 30)[::-1]
    assert make_plan(sched, 100) == list(range(100))
    with pytest.raises(ValueError):
        make_plan(sched, 101)


def test_forward_diffuse_cases(sched, rng):
    z0 = rng.normal(size=(3, 4, 5, 5))
    e = rng.normal(size=z0.shape)
    t = 37
    ab = sched.alpha_bars[t]
    assert np.allclose(forward_diffuse(z0, t, np.zeros_like(z0), sched), math.sqrt(ab) * z0)
    assert np.allclose(forward_diffuse(np.zeros_like(z0), t, e, sched), math.sqrt(1 - ab) * e)
    with pytest.raises(ValueError):
        forward_diffuse(z0, t, e[:, :2], sched)
    with pytest.raises(IndexError):
        forward_diffuse(z0, 100, e, sched)


def test_forward_diffuse_identity_when_alpha_bar_is_one():
    s = make_linear_schedule(3, 1e-300, 1e-300)
    z0 = np.arange(6.0).reshape(1, 2, 3, 1)
    assert np.array_equal(forward_diffuse(z0, 0, np.ones_like(z0), s), z0)


def test_forward_diffuse_norm_interpolates(sched, rng):
    z0 = rng.normal(size=(3, 4, 6, 6))
    e = rng.normal(size=z0.shape)
    for t in (0, 50, 99):
        ab = sched.alpha_bars[t]
        got = forward_diffuse(z0, t, e, sched)
        expected_sq = ab * np.sum(z0 ** 2) + (1 - ab) * np.sum(e ** 2) + 2 * math.sqrt(ab * (1 - ab)) * np.sum(z0 * e)
        assert np.sum(got ** 2) == pytest.approx(expected_sq, rel=1e-12)


def test_ddim_step_zero_predictor(sched, rng):
    z = rng.normal(size=(3, 2, 4, 4))
    out = ddim_step(z, np.zeros_like(z), 80, 40, sched)
    assert np.allclose(out, math.sqrt(sched.alpha_bars[40] / sched.alpha_bars[80]) * z, atol=1e-14)


def test_ddim_step_rejects_equal_and_out_of_range(sched):
    z = np.zeros((1, 2, 2, 2))
    with pytest.raises(ValueError):
        ddim_step(z, z, 10, 10, sched)
    with pytest.raises(IndexError):
        ddim_step(z, z, 10, 100, sched)


def test_ddim_step_down_up_inverse(sched, rng):
    z = rng.normal(size=(3, 4, 5, 5))
    eps = rng.normal(size=z.shape)
    down = ddim_step(z, eps, 70, 30, sched)
    up = ddim_step(down, eps, 30, 70, sched)
    assert np.max(np.abs(up - z)) < 1e-10
    clean = ddim_step(z, eps, 70, CLEAN, sched)
    assert np.max(np.abs(ddim_step(clean, eps, CLEAN, 70, sched) - z)) < 1e-10


def test_ddim_sample_zero_predictor_telescopes(sched, rng):
    z_T = rng.normal(size=(3, 2, 4, 4))
    plan = make_plan(sched, 10, descending=True)
    # product of per-step ratios sqrt(ab_to / ab_from), ending at ab = 1
    factor = 1.0
    for a, b in zip(plan, plan[1:]):
        factor *= math.sqrt(sched.alpha_bars[b] / sched.alpha_bars[a])
    factor *= math.sqrt(1.0 / sched.alpha_bars[plan[-1]])
    out = ddim_sample(ZeroPredictor(), None, z_T, None, plan, sched)
    assert np.allclose(out, factor * z_T, atol=1e-12)
    assert np.allclose(out, z_T / math.sqrt(sched.alpha_bars[99]), atol=1e-12)


def test_ddim_sample_single_step_and_determinism(sched, rng):
    z = rng.normal(size=(3, 2, 4, 4))
    m = ConstantPredictor(0.3)
    single = ddim_sample(m, None, z, None, [60], sched)
    assert np.array_equal(single, ddim_step(z, np.full(z.shape, 0.3), 60, CLEAN, sched))
    plan = make_plan(sched, 7, descending=True)
    a = ddim_sample(m, None, z, None, plan, sched)
    assert a.tobytes() == ddim_sample(m, None, z, None, plan, sched).tobytes()


def test_plans_validated(sched):
    z = np.zeros((1, 2, 2, 2))
    with pytest.raises(ValueError):
        ddim_sample(ZeroPredictor(), None, z, None, [], sched)
    with pytest.raises(ValueError):
        ddim_sample(ZeroPredictor(), None, z, None, [10, 20], sched)
    with pytest.raises(ValueError):
        ddim_invert(ZeroPredictor(), None, z, None, [], sched)
    with pytest.raises(ValueError):
        ddim_invert(ZeroPredictor(), None, z, None, [20, 10], sched)


@pytest.mark.parametrize("model", [ZeroPredictor(), ConstantPredictor(0.7), ConstantPredictor(-1.3)])
def test_invert_then_sample_round_trip(sched, rng, model):
    z0 = rng.uniform(size=(3, 4, 6, 6))
    plan = make_plan(sched, 20)
    z_T = ddim_invert(model, None, z0, None, plan, sched)
    assert z_T.shape == z0.shape
    back = ddim_sample(model, None, z_T, None, plan[::-1], sched)
    assert np.max(np.abs(back - z0)) < 1e-8


def test_invert_zero_video_zero_predictor(sched):
    z = np.zeros((3, 2, 4, 4))
    assert np.all(ddim_invert(ZeroPredictor(), None, z, None, make_plan(sched, 5), sched) == 0)
