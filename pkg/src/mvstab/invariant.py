"""Invariant laws of the mean-field dynamics as fixed points of the
stationary-response map on interaction coefficients.

For a separable interaction the profile is ``alpha = sum_i a_i w_i`` and the
map reads ``Psi(a)_i = E f_i(Y)`` with ``Y`` stationary for the drift
``b + alpha``.  ``Psi`` is estimated with common random numbers: every
evaluation reuses one seed, so the estimate is a smooth deterministic
function of ``a`` and can be iterated, differentiated and bracketed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from .dynamics import AlphaProfile, DynamicsSpec
from .kernels import estimate_theta
from .sde import chain_mean_se, sample_invariant
from .spectral import LaplaceKernel, RootReport, find_roots, laplace

__all__ = [
    "FixedPointReport",
    "GreenKubo",
    "GreenKuboMismatch",
    "ScanPoint",
    "DissipativityReport",
    "psi",
    "solve_fixed_point",
    "find_fixed_points",
    "green_kubo_derivative",
    "green_kubo_fd",
    "bifurcation_scan",
    "classify",
    "check_dissipativity",
    "write_fixed_points_csv",
    "write_scan_csv",
]


@dataclass
class FixedPointReport:
    converged: bool
    a: np.ndarray
    residual: float
    iterations: int
    mc_se: np.ndarray
    mc_budget: int
    method: str = "damped"
    history: list = field(default_factory=list)

    def profile(self, spec: DynamicsSpec) -> AlphaProfile:
        return AlphaProfile(spec, self.a)


def psi(spec: DynamicsSpec, coeffs, M: int, dt: float, seed: int, kappa_hat: float = 1.0):
    """Monte-Carlo ``Psi`` and its standard error.

    ``coeffs`` of shape ``(B, p)`` evaluates ``B`` profiles in one batched
    simulation with shared noise; the outputs then have shape ``(B, p)``.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    zero = AlphaProfile.zero(spec)
    if coeffs.ndim == 1:
        smp = sample_invariant(spec, AlphaProfile(spec, coeffs), M, dt, seed, kappa_hat=kappa_hat)
    else:
        smp = sample_invariant(spec, zero, M, dt, seed, kappa_hat=kappa_hat, coefficients=coeffs)
    vals = spec.interaction_values(smp.positions)
    return chain_mean_se(vals, smp.chains, axis=-2)


def _trivial(spec: DynamicsSpec, method: str, M: int) -> FixedPointReport:
    return FixedPointReport(True, np.zeros(spec.p), 0.0, 1, np.zeros(spec.p), M, method)


def _interaction_free(spec: DynamicsSpec) -> bool:
    return spec.p == 0 or all(term.f.is_zero or term.w.is_zero for term in spec.interactions)


def solve_fixed_point(
    spec: DynamicsSpec,
    a0=None,
    damping: float = 0.5,
    tol: float = 1e-6,
    max_iter: int = 200,
    mc_budget: int = 20000,
    seed: int = 0,
    *,
    dt: float = 1e-2,
    kappa_hat: float = 1.0,
    method: str = "damped",
    max_doublings: int = 3,
) -> FixedPointReport:
    """Solve ``a = Psi(a)``.

    ``method="damped"`` iterates ``a <- (1 - damping) a + damping Psi(a)``
    and doubles the sample budget when the step stalls for five
    iterations.  ``method="newton"`` uses a forward-difference Jacobian of
    ``Psi`` and reaches repelling fixed points too.  Stops once
    ``max |Psi(a) - a| <= tol``.
    """
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    if method not in ("damped", "newton"):
        raise ValueError(f"unknown method {method!r}")
    if _interaction_free(spec):
        return _trivial(spec, method, mc_budget)
    a = np.zeros(spec.p) if a0 is None else np.asarray(a0, dtype=float).copy()
    if a.shape != (spec.p,):
        raise ValueError(f"a0 must have {spec.p} entries")
    if method == "newton":
        return _newton(spec, a, tol, max_iter, mc_budget, seed, dt, kappa_hat)

    M = mc_budget
    best = None
    prev = math.inf
    stall = doublings = 0
    history = []
    for it in range(1, max_iter + 1):
        val, se = psi(spec, a, M, dt, seed, kappa_hat)
        g = val - a
        res = float(np.max(np.abs(g)))
        history.append(res)
        if best is None or res < best[0]:
            best = (res, a.copy(), se, it)
        if res <= tol:
            return FixedPointReport(True, a, res, it, se, M, "damped", history)
        stall = stall + 1 if res > 0.9 * prev else 0
        prev = res
        if stall >= 5 and doublings < max_doublings:
            M *= 2
            doublings += 1
            stall = 0
            prev = math.inf
        a = a + damping * g
        if not np.all(np.isfinite(a)):
            break
    res, a_best, se, _ = best
    return FixedPointReport(False, a_best, res, len(history), se, M, "damped", history)


def _newton(spec, a, tol, max_iter, M, seed, dt, kappa_hat):
    p = spec.p
    eye = np.eye(p)
    history = []
    res = math.inf
    se = np.full(p, np.nan)
    for it in range(1, max_iter + 1):
        h = 1e-4 * (1.0 + np.abs(a))
        batch = np.vstack([a, a + np.diag(h)])
        vals, ses = psi(spec, batch, M, dt, seed, kappa_hat)
        g = vals[0] - a
        se = ses[0]
        res = float(np.max(np.abs(g)))
        history.append(res)
        if res <= tol:
            return FixedPointReport(True, a, res, it, se, M, "newton", history)
        jac = (vals[1:] - vals[0]).T / h - eye
        try:
            step = np.linalg.solve(jac, -g)
        except np.linalg.LinAlgError:
            step = -g
        trial = np.vstack([a + step * s for s in (1.0, 0.5, 0.25, 0.125)])
        tv, _ = psi(spec, trial, M, dt, seed, kappa_hat)
        tres = np.max(np.abs(tv - trial), axis=1)
        k = int(np.argmax(tres < res)) if np.any(tres < res) else int(np.argmin(tres))
        a = trial[k]
        if not np.all(np.isfinite(a)):
            break
    val, se = psi(spec, a, M, dt, seed, kappa_hat)
    res = float(np.max(np.abs(val - a)))
    return FixedPointReport(res <= tol, a, res, max_iter, se, M, "newton", history + [res])


def find_fixed_points(
    spec: DynamicsSpec,
    n_starts: int = 8,
    box: Optional[Sequence[float]] = None,
    tol: float = 1e-6,
    mc_budget: int = 20000,
    seed: int = 0,
    *,
    dt: float = 1e-2,
    kappa_hat: float = 1.0,
    grid: int = 65,
    max_iter: int = 50,
) -> list:
    """All fixed points reachable from a multi-start inside ``[-s_i, s_i]``
    with ``s_i = sup |f_i|``; results closer than ``2 tol`` are merged.

    For ``p = 1`` the map is bracketed on ``grid`` evenly spaced points and
    each sign change refined by Brent's method.  Otherwise ``n_starts``
    seeded uniform starts are solved by Newton.
    """
    if _interaction_free(spec):
        return [_trivial(spec, "newton", mc_budget)]
    s = np.asarray(box if box is not None else spec.interaction_sup(), dtype=float) * np.ones(spec.p)
    if spec.p == 1:
        return _bracket_1d(spec, float(s[0]), tol, mc_budget, seed, dt, kappa_hat, grid)
    rng = np.random.default_rng([seed, 77])
    starts = rng.uniform(-s, s, size=(n_starts, spec.p))
    found = []
    for a0 in starts:
        rep = solve_fixed_point(spec, a0, tol=tol, max_iter=max_iter, mc_budget=mc_budget, seed=seed,
                                dt=dt, kappa_hat=kappa_hat, method="newton")
        if rep.converged and not any(np.max(np.abs(rep.a - f.a)) <= 2 * tol for f in found):
            found.append(rep)
    return sorted(found, key=lambda r: tuple(r.a))


def _bracket_1d(spec, s, tol, M, seed, dt, kappa_hat, grid):
    if s == 0:
        s = 1.0
    xs = np.linspace(-s, s, grid)
    vals, _ = psi(spec, xs[:, None], M, dt, seed, kappa_hat)
    g = vals[:, 0] - xs
    calls = [0]

    def gfun(x):
        calls[0] += 1
        v, _ = psi(spec, np.array([x]), M, dt, seed, kappa_hat)
        return float(v[0] - x)

    roots = []
    for k in range(grid - 1):
        if g[k] == 0:
            roots.append(xs[k])
        elif g[k] * g[k + 1] < 0:
            slope = abs(g[k + 1] - g[k]) / (xs[k + 1] - xs[k])
            xtol = 0.25 * tol / max(1.0, slope)
            roots.append(brentq(gfun, xs[k], xs[k + 1], xtol=xtol, rtol=4 * np.finfo(float).eps))
    if g[-1] == 0:
        roots.append(xs[-1])
    out = []
    for r in roots:
        if out and abs(r - out[-1].a[0]) <= 2 * tol:
            continue
        v, se = psi(spec, np.array([r]), M, dt, seed, kappa_hat)
        res = float(abs(v[0] - r))
        out.append(FixedPointReport(res <= tol, np.array([r]), res, calls[0], se, M, "bracket"))
    return out


class GreenKuboMismatch(ArithmeticError):
    pass


@dataclass
class GreenKubo:
    matrix: np.ndarray
    fd: Optional[np.ndarray] = None
    fd_se: Optional[np.ndarray] = None
    z: Optional[np.ndarray] = None

    @property
    def consistent(self) -> bool:
        return self.z is None or bool(np.all(self.z <= 5.0))


def green_kubo_fd(spec: DynamicsSpec, a_star, eps: float = 1e-2, M: int = 20000, dt: float = 1e-2,
                  seed: int = 0, kappa_hat: float = 1.0):
    """Forward differences ``(Psi(a + eps e_j) - Psi(a)) / eps`` as columns,
    with standard errors from chain-blocked paired differences."""
    a = np.asarray(a_star, dtype=float)
    p = spec.p
    if p == 0:
        return np.zeros((0, 0)), np.zeros((0, 0))
    batch = np.vstack([a, a + eps * np.eye(p)])
    smp = sample_invariant(spec, AlphaProfile.zero(spec), M, dt, seed, kappa_hat=kappa_hat, coefficients=batch)
    vals = spec.interaction_values(smp.positions)  # (p+1, M, p)
    diffs = (vals[1:] - vals[0]) / eps  # (j, M, i)
    mean, se = chain_mean_se(diffs, smp.chains, axis=-2)
    return mean.T, se.T


def green_kubo_derivative(
    spec: DynamicsSpec,
    a_star,
    theta_hat_0,
    *,
    theta_hat_se=None,
    validate: bool = False,
    eps: float = 1e-2,
    M: int = 20000,
    dt: float = 1e-2,
    seed: int = 0,
    raise_on_mismatch: bool = True,
) -> GreenKubo:
    """Derivative of ``Psi`` at a fixed point, equal to the transformed kernel
    at ``z = 0`` restricted to the coefficient span.

    With ``validate`` the finite-difference quotient is computed and
    compared entrywise; a gap above five combined standard errors raises
    :class:`GreenKuboMismatch` unless ``raise_on_mismatch`` is false.
    """
    mat = np.real_if_close(np.asarray(theta_hat_0)).reshape(spec.p, spec.p)
    out = GreenKubo(mat)
    if validate:
        fd, fd_se = green_kubo_fd(spec, a_star, eps, M, dt, seed)
        th_se = np.zeros_like(fd_se) if theta_hat_se is None else np.asarray(theta_hat_se).reshape(fd_se.shape)
        comb = np.hypot(fd_se, th_se)
        gap = np.abs(fd - mat)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(comb > 0, gap / comb, np.where(gap < 1e-12, 0.0, np.inf))
        out = GreenKubo(mat, fd, fd_se, z)
        if raise_on_mismatch and not out.consistent:
            raise GreenKuboMismatch(f"finite-difference derivative differs from the kernel transform by {z.max():.2f} SE")
    return out


def theta_hat0_se(theta, lk: LaplaceKernel):
    """Standard error of the transform at 0, assuming fully correlated errors in ``t``."""
    if theta.se is None:
        return np.zeros((theta.p, theta.p))
    w = np.full(theta.t.size, theta.step)
    w[0] = w[-1] = 0.5 * theta.step
    se = np.tensordot(w, theta.se, axes=1)
    kap = lk.tail.get("kappa")
    if kap is not None:
        with np.errstate(divide="ignore", invalid="ignore"):
            se = se + np.where(np.isfinite(kap), theta.se[-1] / kap, 0.0)
    return se


@dataclass
class ScanPoint:
    parameter: float
    a: np.ndarray
    converged: bool
    det0: float
    roots: Optional[RootReport]
    label: str


def classify(det0: float, report: Optional[RootReport], crit_tol: float = 0.02) -> str:
    """``static-critical``, ``hopf-candidate``, ``stable`` or ``unstable``."""
    if abs(det0) <= crit_tol:
        return "static-critical"
    if report is None:
        return "stable" if det0 > 0 else "unstable"
    right = report.rightmost
    if right is not None and right.kind == "hopf" and abs(right.z.real) <= crit_tol:
        return "hopf-candidate"
    if right is not None and right.kind == "static" and abs(right.z.real) <= crit_tol:
        return "static-critical"
    return "stable" if report.lambda_prime > 0 else "unstable"


def bifurcation_scan(
    family: Callable[[float], DynamicsSpec],
    grid: Sequence[float],
    *,
    kernel: Optional[Callable[[DynamicsSpec, np.ndarray], LaplaceKernel]] = None,
    mc_budget: int = 20000,
    seed: int = 0,
    dt: float = 1e-2,
    tol: float = 1e-6,
    kernel_M: int = 20000,
    kernel_step: float = 2e-2,
    kernel_T: float = 5.0,
    rectangle=None,
    crit_tol: float = 0.02,
    roots: bool = True,
) -> list:
    """Fixed points, ``det(I - K(0))`` and the rightmost root along a
    monotone parameter grid.

    ``kernel(spec, a)`` may supply a closed-form transform; otherwise the
    kernel is estimated by Monte Carlo at every fixed point.
    """
    grid = list(grid)
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("parameter grid must be strictly increasing")
    out = []
    for lam in grid:
        spec = family(lam)
        for rep in find_fixed_points(spec, tol=tol, mc_budget=mc_budget, seed=seed, dt=dt):
            if spec.p == 0:
                out.append(ScanPoint(lam, rep.a, rep.converged, 1.0, None, "stable"))
                continue
            if kernel is not None:
                lk = kernel(spec, rep.a)
            else:
                theta = estimate_theta(spec, rep.profile(spec), kernel_step, kernel_T, kernel_M, seed,
                                       dt=min(dt, kernel_step), fd_check=False)
                lk = laplace(theta)
            det0 = float(np.real(lk.det(0.0)))
            report = find_roots(lk, rectangle) if roots else None
            out.append(ScanPoint(lam, rep.a, rep.converged, det0, report, classify(det0, report, crit_tol)))
    return out


@dataclass
class DissipativityReport:
    beta: float
    R: float
    worst_margin: float
    radii: np.ndarray
    max_rate: np.ndarray

    @property
    def dissipative(self) -> bool:
        return math.isfinite(self.R)


def check_dissipativity(
    spec: DynamicsSpec,
    alpha: Optional[AlphaProfile] = None,
    R_max: float = 10.0,
    M: int = 20000,
    seed: int = 0,
    n_bins: int = 50,
) -> DissipativityReport:
    """Sample ``q = (x - x') . (v(x) - v(x')) / |x - x'|^2`` for ``v = b + alpha``.

    Pairs are drawn with ``x`` uniform in ``[-R_max, R_max]^d`` and
    ``|x - x'|`` uniform in ``(0, R_max]``; the largest ``q`` per distance
    bin gives the profile.  ``R`` is the smallest bin edge beyond which
    every bin contracts and ``beta = -max q`` there.  Advisory only.
    """
    d = spec.dim
    alpha = alpha or AlphaProfile.zero(spec)
    rng = np.random.default_rng([seed, 31])
    x = rng.uniform(-R_max, R_max, size=(M, d))
    u = rng.standard_normal((M, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    r = rng.uniform(0.0, R_max, size=M) + 1e-9
    y = x + r[:, None] * u

    def v(z):
        out = spec.drift(z)
        return out + alpha(z) if spec.p else out

    q = np.einsum("md,md->m", x - y, v(x) - v(y)) / r**2
    edges = np.linspace(0.0, R_max, n_bins + 1)
    idx = np.clip(np.digitize(r, edges) - 1, 0, n_bins - 1)
    qmax = np.full(n_bins, -np.inf)
    np.maximum.at(qmax, idx, q)
    qmax = np.where(np.isfinite(qmax), qmax, np.nan)
    bad = np.where(~(qmax < 0))[0]  # NaN bins count as unknown, hence bad
    if bad.size == 0:
        R = 0.0
        start = 0
    elif bad[-1] == n_bins - 1:
        R, start = math.inf, n_bins
    else:
        start = int(bad[-1]) + 1
        R = float(edges[start])
    beta = float(-np.nanmax(qmax[start:])) if start < n_bins else float(-np.nanmax(qmax))
    return DissipativityReport(beta, R, float(np.nanmax(qmax)), edges[:-1], qmax)


def write_fixed_points_csv(reports: Sequence[FixedPointReport], path) -> None:
    p = max((r.a.size for r in reports), default=0)
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow([f"a{i}" for i in range(p)] + [f"se{i}" for i in range(p)]
                     + ["converged", "residual", "iterations", "mc_budget", "method"])
        for r in reports:
            out.writerow([repr(float(v)) for v in r.a] + [repr(float(v)) for v in r.mc_se]
                         + [int(r.converged), repr(r.residual), r.iterations, r.mc_budget, r.method])


def write_scan_csv(points: Sequence[ScanPoint], path) -> None:
    """One row per parameter and fixed point."""
    p = max((pt.a.size for pt in points), default=0)
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["parameter"] + [f"a{i}" for i in range(p)]
                     + ["converged", "det0", "rightmost_re", "rightmost_im", "lambda_prime", "label"])
        for pt in points:
            right = pt.roots.rightmost if pt.roots is not None else None
            out.writerow(
                [repr(float(pt.parameter))] + [repr(float(v)) for v in pt.a]
                + [int(pt.converged), repr(pt.det0),
                   repr(right.z.real) if right else "", repr(right.z.imag) if right else "",
                   repr(pt.roots.lambda_prime) if pt.roots is not None else "", pt.label]
            )
