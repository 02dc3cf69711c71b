import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.optimize import linear_sum_assignment

from mvstab import ParticleEnsemble, RateSeries, decay_rate, w1
from mvstab.metrics import bootstrap_w1_se, order_noise_floor, w1_circle, write_rate_csv

floats = st.floats(-50, 50, allow_nan=False)


def samples(n):
    return arrays(np.float64, n, elements=floats)


def test_identity_and_point_masses():
    x = np.random.default_rng(0).normal(size=100)
    assert w1(x, x) == 0.0
    assert w1(np.zeros(10), np.ones(10)) == 1.0


def test_translated_gaussians():
    rng = np.random.default_rng(1)
    a = rng.standard_normal(100_000)
    b = 0.7 + rng.standard_normal(100_000)
    assert w1(a, b) == pytest.approx(0.7, abs=0.02)


def test_empty_and_mismatched():
    with pytest.raises(ValueError, match="empty"):
        w1(np.zeros((0, 1)), np.zeros((3, 1)))
    with pytest.raises(ValueError):
        w1(ParticleEnsemble(np.zeros((3, 1))), ParticleEnsemble(np.zeros((3, 1)), space="torus"))


def test_unequal_sizes_are_subsampled():
    rng = np.random.default_rng(2)
    assert w1(rng.normal(size=500), rng.normal(size=2000)) < 0.2


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 30).flatmap(lambda n: st.tuples(samples(n), samples(n), samples(n))))
def test_exact_1d_axioms(abc):
    a, b, c = abc
    assert w1(a, b) == w1(b, a)
    assert w1(a, b) >= 0
    assert w1(a, c) <= w1(a, b) + w1(b, c) + 1e-12
    assert w1(a, a) == 0.0


@settings(max_examples=100, deadline=None)
@given(samples(st.integers(1, 30)), st.floats(-10, 10, allow_nan=False))
def test_translation_exact(a, c):
    assert w1(a, a + c) == pytest.approx(abs(c), abs=1e-12 * (1 + np.max(np.abs(a))))


def _circle_oracle(a, b):
    d = np.abs(a[:, None] - b[None, :]) % (2 * np.pi)
    cost = np.minimum(d, 2 * np.pi - d)
    r, c = linear_sum_assignment(cost)
    return cost[r, c].mean()


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 12).flatmap(lambda n: st.tuples(
    arrays(np.float64, n, elements=st.floats(0, 6.28)), arrays(np.float64, n, elements=st.floats(0, 6.28)))))
def test_circle_matches_assignment_oracle(ab):
    a, b = ab
    assert w1_circle(a, b) == pytest.approx(_circle_oracle(a, b), abs=1e-9)


def test_circle_rotation_and_antipode():
    a = np.array([0.1, 2.0, 4.0])
    assert w1_circle(a, a + 0.3) == pytest.approx(0.3)
    assert w1_circle(np.array([0.0]), np.array([np.pi])) == pytest.approx(np.pi)
    assert w1_circle(np.array([0.1]), np.array([2 * np.pi - 0.1])) == pytest.approx(0.2)


def test_sliced_w1_translation_and_determinism():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(4000, 2))
    d = w1(a, a + np.array([0.5, 0.0]))
    # the sliced distance of a translation is the mean |<u, c>| over directions
    assert 0.25 < d < 0.4
    assert d == w1(a, a + np.array([0.5, 0.0]))


def test_torus_ensembles_use_circular_distance():
    a = ParticleEnsemble(np.array([[0.1], [3.0]]), space="torus")
    b = ParticleEnsemble(np.array([[2 * np.pi - 0.1], [3.0]]), space="torus")
    assert w1(a, b) == pytest.approx(0.1)


def test_bootstrap_se_shrinks_with_n():
    rng = np.random.default_rng(4)
    small = bootstrap_w1_se(rng.normal(size=200), 0.5 + rng.normal(size=200))
    large = bootstrap_w1_se(rng.normal(size=5000), 0.5 + rng.normal(size=5000))
    assert large < small


def test_decay_rate_exact():
    t = np.linspace(0, 10, 101)
    fit = decay_rate(RateSeries(t, 2.0 * np.exp(-0.8 * t)))
    assert fit.rate == pytest.approx(0.8, abs=1e-6)
    assert fit.prefactor == pytest.approx(2.0, rel=1e-6)
    assert not fit.flagged


def test_decay_rate_noise_floor():
    t = np.linspace(0, 10, 101)
    y = np.maximum(np.exp(-t), 1e-3)
    fit = decay_rate(RateSeries(t, y), floor=1e-3)
    assert fit.flagged and fit.rate == pytest.approx(1.0, abs=1e-6)
    flat = decay_rate(RateSeries(t, np.full_like(t, 1e-3)), floor=1e-3)
    assert flat.flagged and not flat.ok


def test_rate_series_invariants():
    with pytest.raises(ValueError):
        RateSeries([0, 1], [1.0, -0.1])
    with pytest.raises(ValueError):
        RateSeries([1, 0], [1.0, 0.5])


def test_noise_floor_value():
    rng = np.random.default_rng(5)
    r = [abs(np.exp(1j * rng.uniform(0, 2 * np.pi, 2000)).mean()) for _ in range(400)]
    assert np.mean(r) == pytest.approx(order_noise_floor(2000), rel=0.1)


def test_rate_csv(tmp_path):
    write_rate_csv(RateSeries([0.0, 1.0], [1.0, 0.5]), tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text() == "t,w1,se\n0.0,1.0,0.0\n1.0,0.5,0.0\n"
