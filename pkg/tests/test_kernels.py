import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvstab import AlphaProfile, DynamicsSpec, KernelSeries, estimate_theta, fit_decay, neumann_partial, resolvent
from mvstab.kernels import convolve, write_kernel_csv

from conftest import SQRT_E, cos_spec


def scalar_exp(a, b, step, T):
    return KernelSeries.from_function(lambda t: (a * np.exp(-b * t))[:, None, None], step, T)


def test_grid_validation():
    with pytest.raises(ValueError):
        KernelSeries(np.array([0.0, 0.1, 0.3]), np.zeros((3, 1, 1)))
    with pytest.raises(ValueError):
        KernelSeries(np.array([0.1, 0.2]), np.zeros((2, 1, 1)))
    with pytest.raises(ValueError):
        KernelSeries(np.array([0.0, 0.1]), np.array([[[0.0]], [[np.inf]]]))


def test_resolvent_scalar_exponential():
    om = resolvent(scalar_exp(0.5, 1.0, 1e-3, 10.0))
    exact = 0.5 * np.exp(-0.5 * om.t)
    assert np.max(np.abs(om.values[:, 0, 0] / exact - 1)) <= 1e-4


def test_resolvent_of_zero_is_zero():
    assert not np.any(resolvent(KernelSeries.zeros(2, 0.1, 2.0)).values)


def test_resolvent_singular_start_is_rejected():
    with pytest.raises(np.linalg.LinAlgError, match="reduce"):
        resolvent(scalar_exp(20.0, 1.0, 0.1, 1.0))


def test_resolvent_grid_refinement_second_order():
    errs = []
    for step in (2e-2, 1e-2):
        om = resolvent(scalar_exp(0.5, 1.0, step, 4.0))
        errs.append(np.max(np.abs(om.values[:, 0, 0] - 0.5 * np.exp(-0.5 * om.t))))
    assert 3.0 < errs[0] / errs[1] < 5.0


def test_neumann_terms():
    th = scalar_exp(0.5, 1.0, 1e-3, 5.0)
    assert np.array_equal(neumann_partial(th, 1).values, th.values)
    two = neumann_partial(th, 2).values[:, 0, 0] - th.values[:, 0, 0]
    exact = 0.25 * th.t * np.exp(-th.t)
    assert np.max(np.abs(two - exact)) < 1e-6


def test_neumann_converges_to_resolvent_cos(alpha_star_1):
    c = -math.sin(alpha_star_1) / SQRT_E
    th = scalar_exp(c, 1.0, 1e-2, 5.0)
    gap = np.max(np.abs(neumann_partial(th, 12).values - resolvent(th).values))
    assert gap <= 1e-3


def _random_kernel(seed, p, step=1e-2, T=3.0):
    rng = np.random.default_rng(seed)
    amp = rng.normal(scale=0.6, size=(p, p))
    rates = rng.uniform(0.5, 2.0, size=(p, p))
    freq = rng.uniform(0, 2, size=(p, p))
    return KernelSeries.from_function(
        lambda t: amp * np.exp(-rates * t[:, None, None]) * np.cos(freq * t[:, None, None]), step, T)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 3))
def test_resolvent_identity_both_ways(seed, p):
    th = _random_kernel(seed, p)
    om = resolvent(th)
    left = om.values - th.values - convolve(th, om).values
    right = om.values - th.values - convolve(om, th).values
    assert np.max(np.abs(left)) <= 5 * th.step
    assert np.max(np.abs(right)) <= 5 * th.step


def test_convolution_trapezoid():
    a = scalar_exp(1.0, 1.0, 1e-3, 2.0)
    b = scalar_exp(1.0, 2.0, 1e-3, 2.0)
    exact = np.exp(-a.t) - np.exp(-2 * a.t)
    assert np.max(np.abs(convolve(a, b).values[:, 0, 0] - exact)) < 1e-6


def test_fit_decay_exact_and_noisy():
    s = KernelSeries.from_function(lambda t: np.exp(-0.5 * t)[:, None, None], 1e-2, 10.0)
    fit = fit_decay(s)
    assert fit.rate == pytest.approx(0.5, abs=1e-6)
    assert fit.r2 == pytest.approx(1.0)
    noise = 1 + 0.01 * np.random.default_rng(0).standard_normal(s.t.size)
    fit = fit_decay(s.like(s.values * noise[:, None, None]))
    assert fit.rate == pytest.approx(0.5, rel=0.05)


def test_fit_decay_cos_resolvent(alpha_star_1):
    c = -math.sin(alpha_star_1) / SQRT_E
    fit = fit_decay(resolvent(scalar_exp(c, 1.0, 1e-2, 10.0)))
    assert fit.rate == pytest.approx(1 - c, rel=0.02)


def test_fit_decay_rejects_vanishing_norms():
    with pytest.raises(ValueError, match="increase T"):
        fit_decay(KernelSeries.zeros(1, 0.1, 2.0))


def test_theta_vanishes_for_constant_interaction():
    spec = DynamicsSpec.from_strings(1, ["-x0"], [("2", ["1"])], sigma=[[1.0]])
    th = estimate_theta(spec, AlphaProfile(spec, [2.0]), 0.1, 1.0, 500, 0, fd_check=False)
    assert not np.any(th.values)


def test_theta_identity_interaction_is_ou_first_variation():
    spec = DynamicsSpec.from_strings(1, ["-x0"], [("x0", ["1"])], sigma=[[math.sqrt(2)]])
    th = estimate_theta(spec, AlphaProfile(spec, [0.0]), 0.05, 2.0, 200, 0, dt=1e-3, fd_check=False)
    np.testing.assert_allclose(th.values[:, 0, 0], np.exp(-th.t), rtol=2e-3)


def test_theta_cos_example_and_fd_crosscheck(alpha_star_1):
    spec = cos_spec(1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        th = estimate_theta(spec, AlphaProfile(spec, [alpha_star_1]), 0.05, 3.0, 10000, 1, dt=5e-3,
                            fd_samples=10000)
    exact = -math.sin(alpha_star_1) / SQRT_E * np.exp(-th.t)
    z = (th.values[:, 0, 0] - exact) / th.se[:, 0, 0]
    assert np.max(np.abs(z[th.t <= 2])) < 4.5
    rows = th.diagnostics["fd_check"]
    assert len(rows) == 3
    assert all(abs(r["z"]) < 4 for r in rows)


def test_theta_seed_invariance(alpha_star_1):
    spec = cos_spec(1.0)
    alpha = AlphaProfile(spec, [alpha_star_1])
    a = estimate_theta(spec, alpha, 0.1, 2.0, 5000, 1, dt=1e-2, fd_check=False)
    b = estimate_theta(spec, alpha, 0.1, 2.0, 5000, 2, dt=1e-2, fd_check=False)
    comb = np.sqrt(a.se**2 + b.se**2)
    assert np.max(np.abs(a.values - b.values) / comb) < 4.0


def test_theta_high_noise_warns():
    spec = cos_spec(1.0)
    with pytest.warns(RuntimeWarning, match="20%"):
        estimate_theta(spec, AlphaProfile(spec, [0.5]), 0.5, 6.0, 40, 0, fd_check=False)


def test_kernel_csv_layout(tmp_path):
    th = _random_kernel(0, 2, step=0.5, T=1.0)
    write_kernel_csv(th, tmp_path / "k.csv")
    lines = (tmp_path / "k.csv").read_text().splitlines()
    assert lines[0] == "t,m00,m01,m10,m11,se_m00,se_m01,se_m10,se_m11"
    assert len(lines) == 4
