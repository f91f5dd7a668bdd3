import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vidclearn.numerics import (
    Rng,
    kl_divergence,
    seeded_normal,
    softmax,
    temporal_delta,
    temporal_delta_adjoint,
)

finite = st.floats(-50, 50, allow_nan=False)


def test_softmax_examples():
    assert np.allclose(softmax([0.0, 0.0]), [0.5, 0.5], atol=0, rtol=1e-15)
    e = math.e
    assert np.allclose(softmax([1.0, 0.0]), [e / (1 + e), 1 / (1 + e)], atol=1e-15)
    assert np.allclose(softmax([3.0, 3.0, 3.0], temperature=7.5), [1 / 3] * 3)


def test_softmax_errors():
    with pytest.raises(ValueError):
        softmax([])
    with pytest.raises(ValueError):
        softmax([1.0], temperature=0)
    with pytest.raises(ValueError):
        softmax([1.0], temperature=-1)


def test_softmax_stable_for_large_logits():
    p = softmax([1000.0, 999.0])
    assert np.all(np.isfinite(p))
    assert p.sum() == pytest.approx(1.0, abs=1e-12)


@given(arrays(np.float64, st.integers(1, 12), elements=finite), st.floats(0.05, 20))
def test_softmax_sums_to_one_and_keeps_argmax(v, temp):
    p = softmax(v, temp)
    assert abs(p.sum() - 1.0) < 1e-9
    assert p[np.argmax(v)] == p.max()


def test_kl_examples():
    p = softmax([1.0, 0.0])
    assert kl_divergence(p, p) == 0.0
    # sum p ln(p/q) with q = reversed p collapses to tanh(1/2)
    assert kl_divergence(p, p[::-1]) == pytest.approx(math.tanh(0.5), abs=1e-12)
    assert kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-12)


def test_kl_length_mismatch():
    with pytest.raises(ValueError):
        kl_divergence([1.0], [0.5, 0.5])


def test_kl_floor_avoids_infinity():
    assert np.isfinite(kl_divergence([0.5, 0.5], [1.0, 0.0]))


@given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=8),
       st.lists(st.floats(0.0, 1.0), min_size=2, max_size=8))
def test_kl_nonnegative_on_simplex(a, b):
    n = min(len(a), len(b))
    a, b = np.array(a[:n]) + 1e-3, np.array(b[:n]) + 1e-3
    p, q = a / a.sum(), b / b.sum()
    assert kl_divergence(p, q) >= 0.0
    assert kl_divergence(p, p) == 0.0


def test_seeded_normal_determinism():
    a = seeded_normal((3, 4, 5), Rng(7))
    b = seeded_normal((3, 4, 5), Rng(7))
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, seeded_normal((3, 4, 5), Rng(8)))


def test_seeded_normal_moments():
    x = seeded_normal(100_000, Rng(0))
    assert abs(x.mean()) < 0.02
    assert abs(x.var() - 1.0) < 0.03


def test_seeded_normal_odd_size_and_errors():
    assert seeded_normal((3,), Rng(0)).shape == (3,)
    with pytest.raises(ValueError):
        seeded_normal((0, 3), Rng(0))


def test_derived_streams_are_independent():
    a = Rng.derive(5, 0).uniform(4)
    b = Rng.derive(5, 1).uniform(4)
    assert not np.array_equal(a, b)
    assert np.array_equal(a, Rng.derive(5, 0).uniform(4))


def test_temporal_delta_examples():
    assert np.array_equal(temporal_delta(np.array([1.0, 3.0, 6.0]), axis=0), [2.0, 3.0])
    const = np.ones((2, 5, 3, 3)) * 4.2
    assert np.all(temporal_delta(const) == 0)
    with pytest.raises(ValueError):
        temporal_delta(np.zeros((2, 1, 3, 3)))


def test_temporal_delta_offset_invariance(rng):
    x = rng.normal(size=(3, 6, 4, 4))
    c = rng.normal(size=(3, 1, 4, 4))
    assert np.allclose(temporal_delta(x + c), temporal_delta(x), atol=1e-12)


def test_temporal_delta_matches_loop(rng):
    x = rng.normal(size=(2, 5, 3, 2))
    out = temporal_delta(x)
    for t in range(4):
        assert np.array_equal(out[:, t], x[:, t + 1] - x[:, t])


def test_temporal_delta_adjoint(rng):
    x = rng.normal(size=(2, 5, 3, 3))
    g = rng.normal(size=(2, 4, 3, 3))
    assert np.sum(temporal_delta(x) * g) == pytest.approx(np.sum(x * temporal_delta_adjoint(g)), rel=1e-12)
