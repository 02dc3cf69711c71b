import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvstab import DynamicsSpec, KernelSeries, LaplaceKernel, find_roots, fit_decay, jacobian_criterion, laplace, resolvent
from mvstab.spectral import (
    default_window,
    fredholm_det,
    jacobian_kernel,
    weak_interaction_bound,
    write_roots_csv,
)

from conftest import SQRT_E, cos_root, linear_system


def exp_series(a, b, step=1e-3, T=20.0):
    return KernelSeries.from_function(lambda t: (a * np.exp(-b * t))[:, None, None], step, T)


def scalar_lk(a, b):
    return LaplaceKernel.from_function(lambda z: (a / (z + b))[..., None, None], 1, [-b])


def test_laplace_scalar_exponential():
    lk = laplace(exp_series(0.5, 1.0))
    assert abs(lk(0.0)[0, 0] / 0.5 - 1) <= 1e-4
    z = np.array([0.3 + 2j, -0.5 + 0.1j])
    np.testing.assert_allclose(lk(z)[:, 0, 0], 0.5 / (z + 1), rtol=1e-4)


def test_laplace_second_order_in_step():
    errs = [abs(laplace(exp_series(0.5, 1.0, step, 10.0))(0.5)[0, 0] - 0.5 / 1.5) for step in (2e-2, 1e-2)]
    assert 3.5 < errs[0] / errs[1] < 4.5


def test_laplace_of_zero_kernel():
    lk = laplace(KernelSeries.zeros(2, 0.1, 3.0))
    assert not np.any(lk(np.array([0.0, 1 + 1j])))
    assert fredholm_det(lk, 2.0 - 1j) == 1.0


def test_laplace_cos_closed_form(alpha_star_1):
    c = -math.sin(alpha_star_1) / SQRT_E
    lk = laplace(exp_series(c, 1.0, 1e-3, 10.0))
    for z in (0.0, 1 + 1j, -0.5):
        assert lk(z)[0, 0] == pytest.approx(c / (z + 1), rel=1e-4)


def test_laplace_rejects_growing_tail():
    with pytest.raises(ValueError, match="decay"):
        laplace(exp_series(1.0, -0.5, 0.01, 5.0))


def test_det_cos_and_diagonal(alpha_star_1):
    c = -math.sin(alpha_star_1) / SQRT_E
    lk = scalar_lk(c, 1.0)
    zs = cos_root(alpha_star_1, 1.0)
    assert abs(fredholm_det(lk, zs)) < 1e-15
    a, b = np.array([0.4, -0.7]), np.array([1.0, 2.5])
    diag = LaplaceKernel.from_function(lambda z: np.einsum("...i,ij->...ij", a / (z[..., None] + b), np.eye(2)),
                                       2, list(-b))
    z = np.array([0.2 + 0.3j, -0.4])
    np.testing.assert_allclose(diag.det(z), np.prod(1 - a / (z[:, None] + b), axis=1), rtol=1e-12)


def test_cos_root_analytic_path(alpha_star_1):
    c = -math.sin(alpha_star_1) / SQRT_E
    rep = find_roots(scalar_lk(c, 1.0))
    assert len(rep.roots) == 1
    root = rep.roots[0]
    assert abs(root.z - cos_root(alpha_star_1, 1.0)) <= 1e-3
    assert root.kind == "static" and root.residual <= 1e-8
    assert rep.verdict().startswith("stable, λ′ = ")
    assert rep.lambda_prime > 1


def test_zero_kernel_has_no_roots():
    rep = find_roots(laplace(KernelSeries.zeros(1, 0.1, 3.0)), (-1, 2, -5, 5))
    assert rep.roots == [] and rep.lambda_prime == math.inf
    assert "no root in window" in rep.verdict()


@settings(max_examples=15, deadline=None)
@given(st.floats(0.3, 3.0), st.floats(0.1, 2.0))
def test_scalar_root_location(b, gap):
    a = b + gap
    rep = find_roots(scalar_lk(a, b))
    assert len(rep.roots) == 1
    assert rep.roots[0].z == pytest.approx(a - b, abs=1e-8)
    assert not rep.stable
    assert rep.verdict().startswith("unstable, rightmost root = ")


def test_unstable_verdict_text():
    assert find_roots(scalar_lk(2.0, 1.0)).verdict() == "unstable, rightmost root = 1"


def test_double_root_multiplicity():
    lk = LaplaceKernel.from_function(lambda z: (0.5 / (z + 1))[..., None, None] * np.eye(2), 2, [-1.0])
    rep = find_roots(lk, (-2.0, 1.0, -2.0, 2.0))
    assert len(rep.roots) == 1
    assert rep.roots[0].multiplicity == 2
    assert rep.roots[0].z == pytest.approx(-0.5, abs=1e-6)
    assert rep.winding == 2


def _rotation_kernel(a, b, w):
    # K_t = a e^{-b t} R(w t), K(z) = a [[s, -w], [w, s]] / (s^2 + w^2) with s = z + b
    def fn(z):
        s = z + b
        den = s**2 + w**2
        return a * np.stack([np.stack([s, -w * np.ones_like(s)], -1), np.stack([w * np.ones_like(s), s], -1)], -2) \
            / den[..., None, None]
    return fn


def test_complex_pair_and_conjugate_symmetry():
    lk = LaplaceKernel.from_function(_rotation_kernel(0.3, 1.0, 0.8), 2, [-1 + 0.8j, -1 - 0.8j])
    rep = find_roots(lk)
    zs = sorted((r.z for r in rep.roots), key=lambda z: z.imag)
    # det(I - K) = ((s - a)^2 + w^2) / (s^2 + w^2)
    np.testing.assert_allclose(zs, [-0.7 - 0.8j, -0.7 + 0.8j], atol=1e-8)
    assert all(r.kind == "hopf" for r in rep.roots)
    assert zs[0] == zs[1].conjugate()
    assert sum(r.multiplicity for r in rep.roots) == rep.winding


def test_root_on_contour_is_handled():
    rep = find_roots(scalar_lk(0.5, 1.0), (-0.5, 1.0, -1.0, 1.0))
    assert len(rep.roots) == 1 and rep.roots[0].z == pytest.approx(-0.5, abs=1e-8)


def test_empty_rectangle_rejected():
    with pytest.raises(ValueError):
        find_roots(scalar_lk(0.5, 1.0), (1.0, 0.0, -1.0, 1.0))


def test_default_window_covers_right_half():
    lk = scalar_lk(0.5, 1.0)
    re0, re1, im0, im1 = default_window(lk)
    assert re0 < -0.5 < 0 < re1 and im0 == -20 and im1 == 20


@pytest.mark.parametrize("a, b", [(-0.3, 1.0), (0.6, 2.0)])
def test_paley_wiener_scalar(a, b):
    rep = find_roots(laplace(exp_series(a, b, 1e-2, 15.0)))
    fit = fit_decay(resolvent(exp_series(a, b, 1e-2, 15.0)))
    assert fit.rate == pytest.approx(rep.lambda_prime, rel=0.1)


def test_weak_interaction_examples():
    assert weak_interaction_bound(KernelSeries.zeros(1, 0.1, 2.0)).certified
    half = weak_interaction_bound(exp_series(0.5, 1.0, 1e-2, 15.0))
    assert half.certified and half.integral == pytest.approx(0.5, rel=1e-3)
    two = weak_interaction_bound(exp_series(2.0, 1.0, 1e-2, 15.0))
    assert not two.certified and two.integral == pytest.approx(2.0, rel=1e-3)
    assert find_roots(laplace(exp_series(2.0, 1.0, 1e-2, 15.0))).roots[0].z == pytest.approx(1.0, abs=1e-3)


def test_jacobian_criterion_scalar_cases():
    rep = jacobian_criterion(DynamicsSpec.from_strings(1, ["-x0"], sigma=[[0.0]]), [0.0])
    assert rep.stable and rep.eigenvalues[0] == -1
    rep = jacobian_criterion(DynamicsSpec.from_strings(1, ["x0"], sigma=[[0.0]]), [0.0])
    assert not rep.stable and rep.eigenvalues[0] == 1


def test_jacobian_criterion_preconditions():
    with pytest.raises(ValueError, match="sigma"):
        jacobian_criterion(DynamicsSpec.from_strings(1, ["-x0"], sigma=[[1.0]]), [0.0])
    with pytest.raises(ValueError, match="equilibrium"):
        jacobian_criterion(DynamicsSpec.from_strings(1, ["-x0"], sigma=[[0.0]]), [1.0])


@pytest.mark.parametrize("seed", range(3))
def test_jacobian_roots_match_eigenvalues(seed):
    rng = np.random.default_rng(seed)
    B, C = rng.normal(size=(2, 2)), 0.5 * rng.normal(size=(2, 2))
    spec = linear_system(B, C)
    eig = jacobian_criterion(spec, [0.0, 0.0]).eigenvalues
    R = 2 * (np.linalg.norm(B, 2) + np.linalg.norm(C, 2)) + 1
    rep = find_roots(jacobian_kernel(spec, [0.0, 0.0]), (-R, R, -R, R), 1e-12)
    roots = [r.z for r in rep.roots for _ in range(r.multiplicity)]
    assert len(roots) == 2
    for e in eig:
        assert min(abs(e - z) for z in roots) <= 1e-6


def test_roots_csv(tmp_path):
    rep = find_roots(scalar_lk(2.0, 1.0))
    write_roots_csv(rep, tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "re,im,multiplicity,class"
    assert lines[1].startswith("1.0") and lines[1].endswith(",1,static")
    assert lines[-1] == "# unstable, rightmost root = 1"


def test_oscillating_tail_continued_exactly():
    # K_t = a e^{-bt} R(wt) tabulated; roots of det(I - K) at -b + a +- i w
    a, b, w = 0.3, 1.0, 0.8

    def fn(t):
        c, s = np.cos(w * t), np.sin(w * t)
        return a * np.exp(-b * t)[:, None, None] * np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)

    lk = laplace(KernelSeries.from_function(fn, 1e-2, 15.0))
    assert lk.tail["reliable"]
    np.testing.assert_allclose(sorted(lk.poles, key=lambda z: z.imag), [-b - 1j * w, -b + 1j * w], atol=1e-8)
    rep = find_roots(lk)
    zs = sorted((r.z for r in rep.roots), key=lambda z: z.imag)
    np.testing.assert_allclose(zs, [-0.7 - 0.8j, -0.7 + 0.8j], atol=1e-5)


def test_root_close_to_pole():
    # zero at -0.99, pole at -1; the pole-order circle must not swallow the zero
    rep = find_roots(scalar_lk(0.01, 1.0), (-10.0, 10.0, -10.0, 10.0))
    assert len(rep.roots) == 1 and rep.roots[0].z == pytest.approx(-0.99, abs=1e-8)
