import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from mvstab import Field
from mvstab.torus import (
    diagonal_kernels,
    exp_rank_one,
    fourier_coefficients,
    order_parameter_experiment,
    stability_criterion,
    tilted_uniform,
    torus_spec,
    validate_diagonal_vs_volterra,
    write_criterion_csv,
)


def kuramoto(kappa, d=1, extra=""):
    return fourier_coefficients(Field.parse(f"-{kappa}*cos(x0){extra}", d))


def test_kuramoto_coefficients():
    tk = kuramoto(3.0)
    assert tk.coefficient(1) == pytest.approx(-1.5, abs=1e-12)
    assert tk.coefficient(-1) == pytest.approx(-1.5, abs=1e-12)
    others = [abs(c) for n, c in zip(tk.modes[:, 0], tk.coeffs) if abs(n) != 1]
    assert max(others) <= 1e-12


def test_zero_potential():
    tk = fourier_coefficients(Field.parse("0", 1))
    assert not np.any(tk.coeffs)
    rep = stability_criterion(tk, 2.0)
    assert rep.lambda_prime == 0.5 and sum(abs(v) for v in rep.n_star) == 1
    assert validate_diagonal_vs_volterra(tk, 2.0, modes=[[1]]) == 0.0
    th, om = diagonal_kernels(tk, 2.0, 0.1, 1.0, modes=[[1]])
    assert not np.any(th[(1,)].values) and not np.any(om[(1,)].values)


def test_two_dimensional_expansion():
    tk = fourier_coefficients(Field.parse("cos(x0) + cos(x1)", 2))
    for n in [(1, 0), (-1, 0), (0, 1), (0, -1)]:
        assert tk.coefficient(n) == pytest.approx(0.5, abs=1e-12)
    assert tk.coefficient((1, 1)) == pytest.approx(0.0, abs=1e-12)


def test_aliasing_guard_and_warning():
    with pytest.raises(ValueError, match="alias"):
        fourier_coefficients(Field.parse("cos(x0)", 1), n_max=8, q=16)
    with pytest.warns(RuntimeWarning, match="shell"):
        fourier_coefficients(Field.parse("cos(4*x0)", 1), n_max=4)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 5.0), st.floats(0.2, 5.0))
def test_kuramoto_criterion_closed_form(kappa, beta):
    rep = stability_criterion(kuramoto(kappa), beta)
    assert rep.lambda_prime == pytest.approx(1 / beta - kappa / 2, abs=1e-12)
    assert rep.lambda_prime == rep.values.min()
    assert rep.conclusive


def test_supercritical_verdict():
    assert stability_criterion(kuramoto(3.0), 1.0).verdict() == "criterion violated, λ′ = -0.5"
    assert stability_criterion(kuramoto(1.0), 1.0).verdict() == "stable, λ′ = 0.5"


def test_inconclusive_when_tail_bound_fails():
    tk = fourier_coefficients(Field.parse("-6*cos(3*x0)", 1), n_max=2, q=16)
    rep = stability_criterion(tk, 1.0)
    assert not rep.conclusive
    assert rep.verdict().startswith("inconclusive")


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(-3, 3))
def test_hermitian_symmetry_and_constant_shift(seed, shift):
    rng = np.random.default_rng(seed)
    a, b, c = rng.normal(size=3)
    text = f"({a})*cos(x0) + ({b})*sin(2*x0) + ({c})*cos(x0 + x1)"
    tk = fourier_coefficients(Field.parse(text, 2), n_max=4)
    assert tk.hermitian_error() <= 1e-12
    shifted = fourier_coefficients(Field.parse(f"{text} + ({shift})", 2), n_max=4)
    assert stability_criterion(shifted, 1.3).lambda_prime == pytest.approx(
        stability_criterion(tk, 1.3).lambda_prime, abs=1e-12)
    assert np.isrealobj(stability_criterion(tk, 1.3).values)


def test_kuramoto_resolvent_mode():
    kappa, beta = 1.0, 1.0
    _, om = diagonal_kernels(kuramoto(kappa), beta, 0.01, 5.0, modes=[[1]])
    o = om[(1,)]
    np.testing.assert_allclose(o.values[:, 0, 0], kappa / 2 * np.exp(-(1 - kappa / 2) * o.t), rtol=1e-12)


def test_diagonal_vs_volterra():
    assert validate_diagonal_vs_volterra(kuramoto(1.0), 1.0, 1e-3, 5.0) <= 1e-3
    tk2 = fourier_coefficients(Field.parse("-0.8*cos(x0) - 0.5*cos(x0 + x1)", 2), n_max=4)
    assert validate_diagonal_vs_volterra(tk2, 1.0, 1e-3, 5.0) <= 1e-3


@settings(max_examples=40, deadline=None)
@given(st.integers(-3, 3), st.integers(-3, 3), st.floats(-1.5, 1.5), st.floats(-1.0, 1.0))
def test_rank_one_exponential(n0, n1, re, im):
    n = np.array([n0, n1])
    theta = complex(re, im) / max(1, n0 * n0 + n1 * n1)
    np.testing.assert_allclose(exp_rank_one(n, theta), expm(theta * np.outer(n, n)), atol=1e-10, rtol=1e-10)


def test_separable_drift_matches_convolution():
    W = Field.parse("-1.3*cos(x0) + 0.4*sin(2*x0) + 0.2*cos(3*x0)", 1)
    tk = fourier_coefficients(W, n_max=8)
    spec = torus_spec(tk, 1.0)
    rng = np.random.default_rng(0)
    y = rng.uniform(0, 2 * np.pi, (200, 1))
    x = rng.uniform(0, 2 * np.pi, (5, 1))
    s = spec.interaction_values(y).mean(axis=0)
    sep = np.einsum("i,nid->nd", s, spec.interaction_directions(x))
    direct = -np.mean(W.grad((x[:, None, :] - y[None, :, :]).reshape(-1, 1)).reshape(5, 200), axis=1)
    np.testing.assert_allclose(sep[:, 0], direct, atol=1e-10)


def test_tilted_sampler():
    rng = np.random.default_rng(0)
    x = tilted_uniform(rng, 40000, 1, 0.6, (1,))
    assert np.mean(np.sin(x[:, 0])) == pytest.approx(0.3, abs=0.01)
    with pytest.raises(ValueError):
        tilted_uniform(rng, 10, 1, 1.0, (1,))


def test_unperturbed_uniform_stays_at_noise_floor():
    out = order_parameter_experiment(kuramoto(1.0), 1.0, N=2000, T=10.0, eps=0.0, seed=3, with_w1=False)
    assert np.all(out.r < 5 * out.noise_floor)


def test_subcritical_decay_and_supercritical_lock():
    sub = order_parameter_experiment(kuramoto(1.0), 1.0, N=2000, T=20.0, seed=0, with_w1=False)
    assert sub.r[0] > 0.3 and sub.r[-1] < 0.05
    sup = order_parameter_experiment(kuramoto(3.0), 1.0, N=2000, T=50.0, seed=0, with_w1=False)
    assert np.all(sup.r[sup.t >= 25] >= 0.2)


def test_criterion_csv(tmp_path):
    write_criterion_csv(stability_criterion(kuramoto(3.0), 1.0), tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0].startswith("n")
    assert lines[-1] == "# criterion violated, λ′ = -0.5"
