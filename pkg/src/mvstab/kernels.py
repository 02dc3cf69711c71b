"""Matrix kernels on a uniform time grid: Monte-Carlo estimation of the
linear-response kernel, the Volterra resolvent, Neumann partial sums and
exponential decay fits.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.signal import fftconvolve

from .dynamics import AlphaProfile, DynamicsSpec
from .sde import TAG_INNER, chain_mean_se, integrate, sample_invariant, _linear_drift, _linear_jac, _steps

__all__ = [
    "KernelSeries",
    "DecayFit",
    "estimate_theta",
    "resolvent",
    "neumann_partial",
    "convolve",
    "fit_decay",
    "write_kernel_csv",
]


@dataclass
class KernelSeries:
    """``p x p`` matrices ``values[k]`` at times ``t_k = k * step``."""

    t: np.ndarray
    values: np.ndarray
    se: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        v = np.asarray(self.values)
        if v.ndim == 1:
            v = v[:, None, None]
        if v.dtype.kind not in "fc":
            v = v.astype(float)
        self.values = v
        if v.ndim != 3 or v.shape[1] != v.shape[2] or v.shape[0] != self.t.size:
            raise ValueError("values must have shape (K+1, p, p) matching the grid")
        if self.t.size < 2:
            raise ValueError("a kernel series needs at least two grid points")
        h = np.diff(self.t)
        if np.any(h <= 0) or not np.allclose(h, h[0], rtol=1e-9, atol=1e-12):
            raise ValueError("time grid must be uniform and strictly increasing")
        if abs(self.t[0]) > 1e-12 * max(1.0, h[0]):
            raise ValueError("time grid must start at 0")
        if not np.all(np.isfinite(v)):
            raise ValueError("kernel values must be finite")
        if self.se is not None:
            self.se = np.asarray(self.se, dtype=float).reshape(v.shape)

    @classmethod
    def from_function(cls, fn: Callable[[np.ndarray], np.ndarray], step: float, T: float) -> "KernelSeries":
        """Tabulate an analytic kernel; ``fn`` maps times ``(K+1,)`` to ``(K+1, p, p)``."""
        t = step * np.arange(_steps(T, step) + 1)
        return cls(t, fn(t))

    @classmethod
    def zeros(cls, p: int, step: float, T: float) -> "KernelSeries":
        return cls.from_function(lambda t: np.zeros((t.size, p, p)), step, T)

    @property
    def step(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def p(self) -> int:
        return self.values.shape[1]

    @property
    def T(self) -> float:
        return float(self.t[-1])

    def norms(self) -> np.ndarray:
        """Spectral norm of every matrix on the grid."""
        if self.p == 1:
            return np.abs(self.values[:, 0, 0])
        return np.linalg.norm(self.values, ord=2, axis=(1, 2))

    def integral_norm(self) -> float:
        """Trapezoid integral of the spectral norm over the grid."""
        return float(np.trapezoid(self.norms(), self.t))

    def entry(self, i: int, j: int) -> np.ndarray:
        return self.values[:, i, j]

    def like(self, values, se=None, **diag) -> "KernelSeries":
        return KernelSeries(self.t, values, se, dict(diag))


@dataclass
class DecayFit:
    """``|M_t| ~ prefactor * exp(-rate * t)`` on ``window``."""

    rate: float
    prefactor: float
    window: tuple[float, float]
    r2: float


def _trap_weights(n: int) -> np.ndarray:
    w = np.ones(n)
    w[0] = w[-1] = 0.5
    return w


def estimate_theta(
    spec: DynamicsSpec,
    alpha: AlphaProfile,
    step: float = 1e-2,
    T: float = 10.0,
    M: int = 20000,
    seed: int = 0,
    *,
    dt: Optional[float] = None,
    kappa_hat: float = 1.0,
    fd_check: bool = True,
    fd_samples: int = 20000,
    fd_h: float = 1e-3,
) -> KernelSeries:
    """Pathwise estimate of ``Theta^{ij}_t = E[J_t^T grad f_i(Y_t)] . w_j(y)``
    with ``y`` drawn from the invariant law of the linear process.

    ``dt`` is the integration step (default ``step``) and must divide the
    grid step.  Standard errors treat each sampler chain as one block.
    With ``fd_check`` the ``(0, 0)`` entry is compared, at three grid
    times, with a common-random-number central difference; the outcome is
    stored in ``diagnostics["fd_check"]``.
    """
    dt = step if dt is None else dt
    stride = int(round(step / dt))
    if stride < 1 or abs(stride * dt - step) > 1e-9 * step:
        raise ValueError("the grid step must be a multiple of dt")
    K = _steps(T, step)
    n_steps = K * stride
    p, d = spec.p, spec.dim
    t = step * np.arange(K + 1)
    if p == 0:
        return KernelSeries(t, np.zeros((K + 1, 0, 0)), np.zeros((K + 1, 0, 0)))

    smp = sample_invariant(spec, alpha, M, dt, seed, kappa_hat=kappa_hat)
    y0 = smp.positions
    w0 = spec.interaction_directions(y0)  # (M, p, d)
    mean = np.zeros((K + 1, p, p))
    se = np.zeros((K + 1, p, p))

    def collect(n, _t, x, J):
        if n % stride:
            return
        grads = np.stack([term.f.grad(x) for term in spec.interactions], axis=-2)  # (M, p, d)
        pulled = np.einsum("mie,med->mid", grads, J)
        vals = np.einsum("mid,mjd->mij", pulled, w0)
        k = n // stride
        mean[k], se[k] = chain_mean_se(vals, smp.chains)

    integrate(
        y0, np.arange(y0.shape[0]), _linear_drift(spec, alpha), spec.sigma, dt, n_steps, seed,
        torus=spec.torus, record_every=None, on_step=collect, drift_jac=_linear_jac(spec, alpha),
    )
    out = KernelSeries(t, mean, se)
    noisy = (se > 0.2 * np.abs(mean)) & (np.abs(mean) > 0)
    if np.any(noisy):
        share = float(np.mean(noisy))
        out.diagnostics["noisy_fraction"] = share
        warnings.warn(
            f"Monte-Carlo standard error exceeds 20% of the entry on {share:.1%} of the grid; "
            "increase M",
            RuntimeWarning,
            stacklevel=2,
        )
    if fd_check:
        out.diagnostics["fd_check"] = _fd_crosscheck(
            spec, alpha, y0[:fd_samples], w0[:fd_samples, 0], smp.chains[:fd_samples],
            out, dt, stride, seed, fd_h,
        )
    return out


def _fd_crosscheck(spec, alpha, y0, direction, chains, theta, dt, stride, seed, h):
    """Central difference of ``E_y f_0(Y_t)`` along ``w_0(y)`` with shared noise."""
    K = theta.t.size - 1
    picks = sorted({max(1, K // 4), max(1, K // 2), max(1, (3 * K) // 4)})
    ids = np.arange(y0.shape[0])
    drift = _linear_drift(spec, alpha)
    f0 = spec.interactions[0].f
    ends = {}
    for sign in (1, -1):
        grabbed = {}

        def keep(n, _t, x):
            if n % stride == 0 and n // stride in picks:
                grabbed[n // stride] = f0(x)

        integrate(
            y0 + sign * h * direction, ids, drift, spec.sigma, dt, picks[-1] * stride, seed,
            tag=TAG_INNER, torus=spec.torus, record_every=None, on_step=keep,
        )
        ends[sign] = grabbed
    rows = []
    for k in picks:
        diff = (ends[1][k] - ends[-1][k]) / (2 * h)
        fd, fd_se = chain_mean_se(diff, chains)
        pw, pw_se = theta.values[k, 0, 0], theta.se[k, 0, 0]
        comb = math.hypot(float(fd_se), float(pw_se))
        z = abs(fd - pw) / comb if comb > 0 else (0.0 if abs(fd - pw) < 1e-9 else math.inf)
        rows.append({"t": float(theta.t[k]), "pathwise": float(pw), "fd": float(fd), "se": comb, "z": float(z)})
    if any(r["z"] > 5 for r in rows):
        warnings.warn("pathwise kernel and finite-difference cross-check disagree by > 5 SE", RuntimeWarning, stacklevel=3)
    return rows


def convolve(a: KernelSeries, b: KernelSeries) -> KernelSeries:
    """Trapezoid time convolution ``(a * b)_t = int_0^t a_{t-s} b_s ds``."""
    if a.t.size != b.t.size or abs(a.step - b.step) > 1e-12 * a.step:
        raise ValueError("convolution needs identical grids")
    A, B = a.values, b.values
    n = A.shape[0]
    full = fftconvolve(A[:, :, :, None], B[:, None, :, :], axes=0)[:n].sum(axis=2)
    # trapezoid: halve the j = 0 and j = k endpoints of each sum
    full -= 0.5 * (np.einsum("kab,bc->kac", A, B[0]) + np.einsum("ab,kbc->kac", A[0], B))
    full[0] = 0.0
    res = a.step * full
    if not (np.iscomplexobj(A) or np.iscomplexobj(B)):
        res = res.real
    return KernelSeries(a.t, res)


def resolvent(theta: KernelSeries) -> KernelSeries:
    """Solve ``Omega = Theta + Theta * Omega`` by a trapezoid march.

    ``Omega_k = (I - h/2 Theta_0)^{-1} [Theta_k + h sum_{0<j<k} Theta_{k-j} Omega_j
    + h/2 Theta_k Omega_0]`` with ``Omega_0 = Theta_0``.
    """
    Th = theta.values
    K1, p, _ = Th.shape
    h = theta.step
    lhs = np.eye(p) - 0.5 * h * Th[0]
    cond = np.linalg.cond(lhs) if p else 1.0
    if not np.isfinite(cond) or cond > 1e12:
        raise np.linalg.LinAlgError("I - (step/2) Theta_0 is singular; reduce the grid step")
    inv = np.linalg.inv(lhs)
    Om = np.zeros_like(Th, dtype=np.result_type(Th, float))
    Om[0] = Th[0]
    # Theta_{k-j} for j = 1..k-1 is Th[k-1:0:-1]; flattening the sum into one
    # matrix product keeps each step a single BLAS call.
    ThT = np.ascontiguousarray(Th.transpose(1, 0, 2))  # (p, K+1, p)
    for k in range(1, K1):
        acc = Th[k] + 0.5 * h * Th[k] @ Om[0]
        if k > 1:
            left = ThT[:, k - 1:0:-1, :].reshape(p, (k - 1) * p)
            right = Om[1:k].reshape((k - 1) * p, p)
            acc = acc + h * (left @ right)
        Om[k] = inv @ acc
    if not np.all(np.isfinite(Om)):
        raise FloatingPointError("resolvent march overflowed")
    return theta.like(Om)


def neumann_partial(theta: KernelSeries, terms: int) -> KernelSeries:
    """``sum_{i=1}^{terms}`` of the ``i``-fold self-convolutions of ``theta``."""
    if terms < 1:
        raise ValueError("terms must be >= 1")
    total = theta.values.copy()
    power = theta
    for _ in range(terms - 1):
        power = convolve(theta, power)
        total = total + power.values
    return theta.like(total)


def fit_decay(
    series: KernelSeries,
    window_fraction: float = 0.5,
    *,
    window: Optional[tuple[float, float]] = None,
    weighted: bool = False,
) -> DecayFit:
    """Log-linear least squares on the spectral norm over the last
    ``window_fraction`` of the grid (or an explicit ``window``).

    With ``weighted`` and standard errors present, points are weighted by
    ``|M_t| / se_t``, the inverse standard deviation of ``log |M_t|``.
    """
    norms = series.norms()
    t = series.t
    if window is None:
        if not 0 < window_fraction <= 1:
            raise ValueError("window_fraction must lie in (0, 1]")
        lo = t[-1] - window_fraction * (t[-1] - t[0])
        mask = t >= lo - 1e-12
    else:
        mask = (t >= window[0] - 1e-12) & (t <= window[1] + 1e-12)
    if mask.sum() < 2:
        raise ValueError("decay fit window holds fewer than two grid points")
    nw = norms[mask]
    tiny = np.finfo(float).tiny
    if np.any(nw <= tiny):
        raise ValueError("kernel norm vanishes inside the fit window; increase T or shrink the window")
    tw = t[mask]
    w = None
    if weighted and series.se is not None:
        se = np.linalg.norm(series.se, axis=(1, 2))[mask]
        if np.all(se > 0):
            w = nw / se
    slope, icpt = np.polyfit(tw, np.log(nw), 1, w=w)
    pred = icpt + slope * tw
    resid = np.log(nw) - pred
    ss_tot = np.sum((np.log(nw) - np.log(nw).mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    return DecayFit(float(-slope), float(np.exp(icpt)), (float(tw[0]), float(tw[-1])), float(r2))


def write_kernel_csv(series: KernelSeries, path) -> None:
    """Columns ``t``, the ``p^2`` entries row-major, then their standard errors.

    Complex kernels get separate ``re``/``im`` columns per entry.
    """
    p = series.p
    cplx = np.iscomplexobj(series.values)
    names = [f"m{i}{j}" for i in range(p) for j in range(p)]
    head = ["t"]
    for nm in names:
        head += [f"{nm}_re", f"{nm}_im"] if cplx else [nm]
    head += [f"se_{nm}" for nm in names]
    se = series.se if series.se is not None else np.zeros(series.values.shape)
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(head)
        for k, tk in enumerate(series.t):
            row = [repr(float(tk))]
            for v in series.values[k].ravel():
                row += [repr(float(v.real)), repr(float(v.imag))] if cplx else [repr(float(v))]
            row += [repr(float(s)) for s in se[k].ravel()]
            out.writerow(row)
