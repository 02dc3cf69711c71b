"""Gradient interactions ``-grad W * mu`` on the flat torus: Fourier
coefficients of ``W``, the mode-wise stability criterion, the
Fourier-diagonal linear-response kernels and an order-parameter experiment.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dynamics import DynamicsSpec, Interaction
from .expr import Field
from .kernels import KernelSeries, resolvent
from .metrics import order_noise_floor, w1
from .sde import TAG_INIT, ParticleEnsemble, simulate_linear, simulate_mckean_vlasov

__all__ = [
    "TorusKernel",
    "TorusCriterionReport",
    "OrderParameterSeries",
    "DEFAULT_N_MAX",
    "fourier_coefficients",
    "stability_criterion",
    "exp_rank_one",
    "diagonal_kernels",
    "validate_diagonal_vs_volterra",
    "torus_spec",
    "tilted_uniform",
    "order_parameter_experiment",
    "write_criterion_csv",
    "write_order_csv",
]

DEFAULT_N_MAX = {1: 32, 2: 16, 3: 8}
TWO_PI = 2.0 * np.pi


@dataclass
class TorusKernel:
    """Coefficients ``W~(n) = (2 pi)^{-d} int W(y) e^{-i n.y} dy`` for ``|n|_inf <= n_max``."""

    dim: int
    n_max: int
    modes: np.ndarray  # (K, d) integer
    coeffs: np.ndarray  # (K,) complex
    tail_sum: float = 0.0  # sum |n|^2 |W~(n)| over resolved modes beyond n_max
    tail_max: float = 0.0  # max |W~(n)| over resolved modes beyond n_max
    q: int = 0

    def __post_init__(self):
        self._index = {tuple(int(v) for v in n): k for k, n in enumerate(self.modes)}

    def coefficient(self, n) -> complex:
        n = tuple(int(v) for v in np.atleast_1d(n))
        k = self._index.get(n)
        return complex(self.coeffs[k]) if k is not None else 0.0j

    @property
    def norms2(self) -> np.ndarray:
        return np.sum(self.modes**2, axis=1)

    def hermitian_error(self) -> float:
        """``max |W~(-n) - conj W~(n)|``, zero for real ``W``."""
        neg = np.array([self._index[tuple(-n)] for n in self.modes])
        return float(np.max(np.abs(self.coeffs[neg] - np.conj(self.coeffs)))) if self.coeffs.size else 0.0

    def assumption_sum(self) -> float:
        """Truncated ``sum |n|^2 |W~(n)|`` (advisory summability check)."""
        return float(np.sum(self.norms2 * np.abs(self.coeffs)))

    def active(self, rel: float = 1e-12) -> np.ndarray:
        """Indices of nonzero modes ``n != 0`` with non-negligible coefficients."""
        mag = np.abs(self.coeffs)
        scale = mag.max(initial=0.0)
        keep = (self.norms2 > 0) & (mag > rel * scale) & (mag > 0)
        return np.flatnonzero(keep)


def fourier_coefficients(W: Field, n_max: Optional[int] = None, q: Optional[int] = None) -> TorusKernel:
    """Tensor-grid trapezoid rule (via FFT) on ``q^d`` points.

    Requires ``q >= 4 n_max``.  Warns when the outermost retained shell
    carries more than 1% of the retained ``sum |n|^2 |W~(n)|``.
    """
    d = W.dim
    if W.vector:
        raise ValueError("W must be scalar")
    if d not in DEFAULT_N_MAX:
        raise ValueError("torus dimension must be 1, 2 or 3")
    n_max = DEFAULT_N_MAX[d] if n_max is None else int(n_max)
    q = 4 * n_max if q is None else int(q)
    if n_max < 1:
        raise ValueError("n_max must be positive")
    if q < 4 * n_max:
        raise ValueError(f"q = {q} is below 4 * n_max = {4 * n_max}; coefficients would alias")
    axis = TWO_PI * np.arange(q) / q
    grid = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1)
    vals = np.asarray(W(grid), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise ValueError("W is not finite on the quadrature grid")
    spec = np.fft.fftn(vals) / q**d
    freqs = np.fft.fftfreq(q, 1.0 / q).astype(int)
    all_modes = np.stack(np.meshgrid(*([freqs] * d), indexing="ij"), axis=-1).reshape(-1, d)
    all_coeffs = spec.reshape(-1)
    sup = np.max(np.abs(all_modes), axis=1)
    inside = sup <= n_max
    # drop the Nyquist shell; it is not a resolved frequency
    resolved_out = (~inside) & (sup < q // 2)
    order = np.lexsort(all_modes[inside].T[::-1])
    modes = all_modes[inside][order]
    coeffs = all_coeffs[inside][order]
    out_modes = all_modes[resolved_out]
    out_mag = np.abs(all_coeffs[resolved_out])
    tail_sum = float(np.sum(np.sum(out_modes**2, axis=1) * out_mag))
    tail_max = float(out_mag.max(initial=0.0))
    tk = TorusKernel(d, n_max, modes, coeffs, tail_sum, tail_max, q)
    mag = np.abs(coeffs)
    mass = tk.norms2 * np.where(mag > 1e-12 * max(np.abs(all_coeffs).max(), 1e-300), mag, 0.0)
    top = np.max(np.abs(modes), axis=1) == n_max
    total = mass.sum()
    if total > 0 and mass[top].sum() > 0.01 * total:
        warnings.warn(
            f"outermost retained shell holds {mass[top].sum() / total:.1%} of sum |n|^2 |W~(n)|; "
            "coefficients may be aliased, increase n_max",
            RuntimeWarning,
            stacklevel=2,
        )
    return tk


@dataclass
class TorusCriterionReport:
    lambda_prime: float
    n_star: tuple
    modes: np.ndarray
    norms2: np.ndarray
    re_coeffs: np.ndarray
    values: np.ndarray
    exclusion_bound: float
    conclusive: bool
    beta: float

    @property
    def stable(self) -> bool:
        return self.conclusive and self.lambda_prime > 0

    def verdict(self) -> str:
        if not self.conclusive:
            return (f"inconclusive, λ′ ≤ {self.lambda_prime:.6g} over retained modes but the "
                    f"exclusion bound {self.exclusion_bound:.4g} does not cover the rest; increase N_max")
        if self.lambda_prime > 0:
            return f"stable, λ′ = {self.lambda_prime:.6g}"
        return f"criterion violated, λ′ = {self.lambda_prime:.6g}"


def stability_criterion(tk: TorusKernel, beta: float) -> TorusCriterionReport:
    """``lambda' = min_{n != 0} |n|^2 (1 / beta + Re W~(n))`` over the retained modes.

    Modes beyond ``n_max`` contribute at least
    ``(n_max + 1)^2 (1 / beta - max_tail |W~|)``; the result is conclusive
    when that bound is at least the retained minimum.
    """
    if not beta > 0:
        raise ValueError("beta must be positive")
    n2 = tk.norms2
    keep = n2 > 0
    modes, n2, re = tk.modes[keep], n2[keep], tk.coeffs[keep].real
    values = n2 * (1.0 / beta + re)
    k = int(np.argmin(values))
    lam = float(values[k])
    n_star = tuple(int(v) for v in modes[k])
    # prefer the representative with a positive leading entry
    if any(n_star) and next(v for v in n_star if v != 0) < 0:
        n_star = tuple(-v for v in n_star)
    bound = (tk.n_max + 1) ** 2 * (1.0 / beta - tk.tail_max)
    return TorusCriterionReport(lam, n_star, modes, n2, re, values, float(bound), bool(bound >= lam), beta)


def exp_rank_one(n, theta) -> np.ndarray:
    """``exp(theta n n^T) = I + n n^T / |n|^2 (e^{theta |n|^2} - 1)``."""
    n = np.asarray(n, dtype=float)
    n2 = float(n @ n)
    if n2 == 0:
        return np.eye(n.size, dtype=np.result_type(theta, float))
    return np.eye(n.size) + np.outer(n, n) / n2 * (np.exp(theta * n2) - 1.0)


def _mode_blocks(tk: TorusKernel, n, beta: float, t: np.ndarray):
    n = np.asarray(n, dtype=float)
    c = tk.coefficient(n)
    n2 = float(n @ n)
    P = np.outer(n, n)
    decay = np.exp(-n2 * t / beta)
    theta = -c * decay[:, None, None] * P
    omega_scalar = -c * decay * np.exp(-t * c * n2)
    omega = omega_scalar[:, None, None] * P
    return theta, omega


def diagonal_kernels(tk: TorusKernel, beta: float, step: float, T: float, modes: Optional[Sequence] = None):
    """Closed-form kernel and resolvent per Fourier mode.

    Returns two dicts keyed by the mode tuple; each value is a complex
    ``KernelSeries`` of ``d x d`` blocks
    ``Theta~(n) = -W~(n) e^{-|n|^2 t / beta} P_n`` and
    ``Omega~(n) = Theta~(n) exp(-t W~(n) P_n)`` with ``P_n = n n^T``.
    """
    t = step * np.arange(int(round(T / step)) + 1)
    chosen = [tk.modes[k] for k in tk.active()] if modes is None else [np.atleast_1d(m) for m in modes]
    thetas, omegas = {}, {}
    for n in chosen:
        key = tuple(int(v) for v in n)
        th, om = _mode_blocks(tk, n, beta, t)
        # Omega via the rank-one exponential, kept for d > 1 fidelity
        if tk.dim > 1:
            c = tk.coefficient(n)
            om = np.stack([th[k] @ exp_rank_one(n, -tk_t * c) for k, tk_t in enumerate(t)])
        thetas[key] = KernelSeries(t, th)
        omegas[key] = KernelSeries(t, om)
    return thetas, omegas


def validate_diagonal_vs_volterra(tk: TorusKernel, beta: float, step: float = 1e-3, T: float = 5.0,
                                  modes: Optional[Sequence] = None) -> float:
    """Worst pointwise relative gap between the closed-form resolvent and a
    trapezoid Volterra march, over modes and grid times."""
    thetas, omegas = diagonal_kernels(tk, beta, step, T, modes)
    worst = 0.0
    for key, th in thetas.items():
        exact = omegas[key].values
        march = resolvent(th).values
        scale = np.linalg.norm(exact, axis=(1, 2))
        gap = np.linalg.norm(march - exact, axis=(1, 2))
        nz = scale > 0
        if np.any(nz):
            worst = max(worst, float(np.max(gap[nz] / scale[nz])))
        if np.any(~nz):
            worst = max(worst, float(np.max(gap[~nz])))
    return worst


def _fmt(v: float) -> str:
    return f"({float(v)!r})"


def torus_spec(tk: TorusKernel, beta: float, name: str = "") -> DynamicsSpec:
    """Separable form of ``-grad W * mu`` from the retained modes.

    Pairing ``n`` with ``-n`` and writing ``W~(n) = A + iB``::

        -grad W(x - y) = sum 2n [cos(n.y) (A sin(n.x) + B cos(n.x))
                                 + sin(n.y) (B sin(n.x) - A cos(n.x))]
    """
    d = tk.dim
    terms = []
    seen = set()
    for k in tk.active():
        n = tuple(int(v) for v in tk.modes[k])
        if tuple(-v for v in n) in seen:
            continue
        seen.add(n)
        c = tk.coefficient(n)
        A, B = c.real, c.imag
        nx = "+".join(f"{nk}*x{j}" for j, nk in enumerate(n) if nk != 0)
        w_cos, w_sin = [], []
        for j, nk in enumerate(n):
            if nk == 0:
                w_cos.append("0")
                w_sin.append("0")
                continue
            w_cos.append(f"{_fmt(2 * nk * A)}*sin({nx})+{_fmt(2 * nk * B)}*cos({nx})")
            w_sin.append(f"{_fmt(2 * nk * B)}*sin({nx})+{_fmt(-2 * nk * A)}*cos({nx})")
        terms.append(Interaction(Field.parse(f"cos({nx})", d), Field.parse(w_cos, d)))
        terms.append(Interaction(Field.parse(f"sin({nx})", d), Field.parse(w_sin, d)))
    return DynamicsSpec(d, Field.parse(["0"] * d, d), tuple(terms), space="torus", beta=beta, name=name)


def tilted_uniform(rng: np.random.Generator, n: int, d: int, eps: float, n_star) -> np.ndarray:
    """Rejection sampling from ``(1 + eps sin(n*.x)) / (2 pi)^d``."""
    if not 0 <= eps < 1:
        raise ValueError("tilt eps must satisfy 0 <= eps < 1")
    k = np.asarray(n_star, dtype=float)
    out = np.empty((0, d))
    while out.shape[0] < n:
        need = n - out.shape[0]
        cand = rng.uniform(0.0, TWO_PI, size=(int(need * (1 + eps)) + 16, d))
        acc = rng.uniform(0.0, 1.0 + eps, size=cand.shape[0]) < 1.0 + eps * np.sin(cand @ k)
        out = np.vstack([out, cand[acc]])
    return out[:n]


@dataclass
class OrderParameterSeries:
    t: np.ndarray
    r: np.ndarray
    w1: np.ndarray
    n_star: tuple
    noise_floor: float
    meta: dict = field(default_factory=dict)


def order_parameter_experiment(
    tk: TorusKernel,
    beta: float,
    N: int = 2000,
    dt: float = 1e-2,
    T: float = 50.0,
    eps: float = 0.9,
    seed: int = 0,
    *,
    n_star=None,
    record_dt: float = 0.5,
    with_w1: bool = True,
) -> OrderParameterSeries:
    """Particles start from the tilted uniform law and follow the interacting
    dynamics; records ``|r(t)| = |mean exp(i n*.X_j)|`` and W1 to a fresh
    uniform sample of the same size."""
    d = tk.dim
    if n_star is None:
        n_star = stability_criterion(tk, beta).n_star
    k = np.asarray(n_star, dtype=float)
    spec = torus_spec(tk, beta)
    rng = np.random.default_rng([seed, TAG_INIT])
    init = ParticleEnsemble(tilted_uniform(rng, N, d, eps, n_star), seed=seed, space="torus")
    ref = np.random.default_rng([seed, TAG_INIT + 1]).uniform(0.0, TWO_PI, size=(N, d))
    stride = max(1, int(round(record_dt / dt)))
    if spec.p == 0:
        traj = simulate_linear(spec, None, init, dt, T, seed, record_every=stride)
    else:
        traj = simulate_mckean_vlasov(spec, init, dt, T, seed, record_every=stride)
    r = np.abs(np.mean(np.exp(1j * (traj.positions @ k)), axis=-1))
    dist = np.array([w1(x, ref, space="torus") for x in traj.positions]) if with_w1 else np.full(r.shape, np.nan)
    return OrderParameterSeries(traj.times, r, dist, tuple(n_star), order_noise_floor(N),
                                {"N": N, "dt": dt, "T": T, "eps": eps, "seed": seed, "beta": beta})


def write_criterion_csv(report: TorusCriterionReport, path) -> None:
    """Columns ``n, |n|^2, Re W~, mode value`` plus a ``# verdict`` line."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["n", "n2", "re_w", "value"])
        for n, n2, re, v in zip(report.modes, report.norms2, report.re_coeffs, report.values):
            out.writerow([" ".join(str(int(x)) for x in n), int(n2), repr(float(re)), repr(float(v))])
        fh.write(f"# {report.verdict()}\n")


def write_order_csv(series: OrderParameterSeries, path) -> None:
    """Columns ``t, r, w1``."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["t", "r", "w1"])
        for row in zip(series.t, series.r, series.w1):
            out.writerow([repr(float(v)) for v in row])
