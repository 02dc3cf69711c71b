"""Laplace transforms of matrix kernels, the characteristic determinant
``det(I - K(z))`` and its zeros located with the argument principle.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .dynamics import DynamicsSpec
from .kernels import KernelSeries, fit_decay

__all__ = [
    "ContourError",
    "LaplaceKernel",
    "Root",
    "RootReport",
    "WeakBound",
    "JacobianReport",
    "laplace",
    "fredholm_det",
    "default_window",
    "find_roots",
    "weak_interaction_bound",
    "jacobian_criterion",
    "jacobian_kernel",
    "write_roots_csv",
]

OMEGA_TOL = 1e-3
N_SIDE = 256
MAX_PERTURB = 5
_PHASE_STEP = math.pi / 4
_MAX_REFINE = 10
_CANCEL_DIGITS = 6
_MAX_REFINE_SEGMENTS = 20000


class ContourError(ArithmeticError):
    """The contour came too close to a zero or pole of the determinant."""


class LaplaceKernel:
    """Callable ``z -> K(z)`` returning ``(..., p, p)`` complex matrices.

    ``poles`` lists the known singularities; ``kappa_tail`` is the decay
    rate of the slowest kernel entry (``inf`` when the kernel vanishes) and
    ``mass`` an estimate of ``int_0^inf |K_t| dt``.
    """

    def __init__(
        self,
        fn: Callable[[np.ndarray], np.ndarray],
        p: int,
        *,
        poles: Sequence[complex] = (),
        kappa_tail: float = math.inf,
        mass: float = 0.0,
        real: bool = True,
        source: Optional[KernelSeries] = None,
        tail: Optional[dict] = None,
        pole_margin: float = 1e-12,
        noise: Optional[Callable[[float], float]] = None,
    ):
        self._fn = fn
        self.p = p
        self.poles = np.asarray(list(poles), dtype=complex)
        self.kappa_tail = float(kappa_tail)
        self.mass = float(mass)
        self.real = real
        self.source = source
        self.tail = tail or {}
        self.pole_margin = pole_margin
        self.noise = noise

    @classmethod
    def from_function(
        cls,
        fn: Callable[[np.ndarray], np.ndarray],
        p: int,
        poles: Sequence[complex] = (),
        *,
        kappa_tail: Optional[float] = None,
        mass: Optional[float] = None,
        real: bool = True,
    ) -> "LaplaceKernel":
        """Wrap a closed-form transform.

        Without ``kappa_tail`` the distance from the imaginary axis to the
        rightmost pole is used; without ``mass`` the largest norm of
        ``fn`` sampled on the imaginary axis stands in for it.
        """
        poles = list(poles)
        if kappa_tail is None:
            kappa_tail = -max((z.real for z in np.asarray(poles, dtype=complex)), default=-math.inf)
        lk = cls(fn, p, poles=poles, kappa_tail=kappa_tail, real=real)
        if mass is None:
            z = 1j * np.concatenate([[0.0], np.geomspace(1e-3, 1e3, 121)])
            if lk.poles.size:
                z = z[np.min(np.abs(z[:, None] - lk.poles), axis=1) > 1e-6]
            mass = float(np.max(np.linalg.norm(lk(z), ord=2, axis=(-2, -1)))) if p and z.size else 0.0
        lk.mass = float(mass)
        return lk

    def __call__(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        if self.poles.size:
            gap = np.min(np.abs(z[..., None] - self.poles), axis=-1)
            if np.any(gap < self.pole_margin):
                raise ValueError("Laplace kernel evaluated at one of its poles")
        return np.asarray(self._fn(z), dtype=complex).reshape(z.shape + (self.p, self.p))

    def det(self, z) -> np.ndarray:
        """``det(I - K(z))`` elementwise over ``z``."""
        z = np.asarray(z, dtype=complex)
        if self.p == 0:
            return np.ones(z.shape, dtype=complex)
        return np.linalg.det(np.eye(self.p) - self(z))


def _prony2(y: np.ndarray, rel_tol: float = 1e-6):
    """Two-term fit ``y_n = sum_k c_k mu_k^(n - N + 1)`` by linear prediction.

    Returns ``(c, mu)`` when both ``|mu_k| < 1`` and the relative residual is
    below ``rel_tol``, else ``None``.
    """
    if y.size < 6:
        return None
    A = np.column_stack([y[1:-1], y[:-2]])
    coef, *_ = np.linalg.lstsq(A, y[2:], rcond=None)
    mu = np.roots([1.0, -coef[0], -coef[1]]).astype(complex)
    if mu.size != 2 or np.any(np.abs(mu) >= 1) or np.any(mu == 0) or abs(mu[0] - mu[1]) < 1e-8:
        return None
    n = np.arange(y.size) - (y.size - 1)
    V = mu[None, :] ** n[:, None]
    c, *_ = np.linalg.lstsq(V, y.astype(complex), rcond=None)
    if np.linalg.norm(V @ c - y) > rel_tol * np.linalg.norm(y):
        return None
    return c, mu


def laplace(theta: KernelSeries, tail_fraction: Optional[float] = None) -> LaplaceKernel:
    """Trapezoid transform plus a geometric continuation of the grid.

    Each nonzero entry gets a decay rate ``kappa_ij`` fitted on the last
    ``tail_fraction`` of the grid: 0.3 for exact kernels, 0.7 with
    inverse-variance weights for Monte-Carlo ones, whose far tail is
    mostly noise.  Beyond ``T`` the entry is continued as
    ``M_K exp(-kappa_ij (t - T))`` and summed with the same trapezoid rule,
    which gives the closed form ``h M_K e^{-zT} (1 + q) / (2 (1 - q))``
    with ``q = exp(-(z + kappa_ij) h)``.  The continuation is meromorphic,
    with poles at ``-kappa_ij + 2 pi i k / h``.

    Exact entries that change sign on the tail window are continued by a
    two-term linear-prediction fit instead (a damped oscillation); the
    closed form is the same with ``q = mu_k e^{-zh}``.  An entry whose
    tail is fitted no better than the matrix norm's is clamped to the norm
    rate and the kernel is flagged ``tail["reliable"] = False``.
    """
    p, h, T = theta.p, theta.step, theta.T
    vals = theta.values
    has_se = theta.se is not None and np.any(theta.se > 0)
    if tail_fraction is None:
        tail_fraction = 0.7 if has_se else 0.3
    t = theta.t
    wts = np.full(t.size, h)
    wts[0] = wts[-1] = 0.5 * h
    weighted = (vals * wts[:, None, None]).reshape(t.size, p * p)
    kap = np.full((p, p), math.inf)
    last = vals[-1]
    kap_norm = math.nan
    if np.any(last):
        kap_norm = fit_decay(theta, tail_fraction, weighted=has_se).rate
    reliable = True
    terms = []  # (flat entry index, c, mu)
    for i in range(p):
        for j in range(p):
            col = vals[:, i, j]
            if not np.any(col):
                continue
            if last[i, j] == 0:
                raise ValueError(f"kernel entry ({i},{j}) vanishes at T; cannot fit its tail, change T")
            se = theta.se[:, i, j][:, None, None] if has_se else None
            fit = fit_decay(theta.like(col, se), tail_fraction, weighted=has_se)
            in_win = col[t >= fit.window[0] - 1e-12]
            flips = not has_se and bool(np.any(np.sign(in_win[1:]) * np.sign(in_win[:-1]) < 0))
            if flips:
                pr = _prony2(np.real(in_win))
                if pr is not None:
                    c, mu = pr
                    terms += [(i * p + j, c[k], mu[k]) for k in range(2)]
                    kap[i, j] = float(-np.log(np.abs(mu)).max() / h)
                    continue
            if not fit.rate > 0:
                raise ValueError(
                    f"kernel entry ({i},{j}) does not decay on the tail window (rate {fit.rate:.3g}); "
                    "increase T or check dissipativity"
                )
            rate = fit.rate
            # an entry cannot decay more slowly than the matrix norm
            if kap_norm > 0 and (rate < kap_norm or flips):
                reliable &= rate >= 0.9 * kap_norm and not flips
                rate = kap_norm
            kap[i, j] = rate
            terms.append((i * p + j, complex(last[i, j]), complex(math.exp(-rate * h))))
    real = not np.iscomplexobj(vals)
    if terms:
        t_idx = np.array([k for k, _, _ in terms])
        t_c = np.array([c for _, c, _ in terms], dtype=complex)
        t_mu = np.array([m for _, _, m in terms], dtype=complex)
        scatter = np.zeros((len(terms), p * p))
        scatter[np.arange(len(terms)), t_idx] = 1.0

    def fn(z):
        z = np.asarray(z, dtype=complex)
        flat = z.ravel()
        out = np.empty((flat.size, p * p), dtype=complex)
        chunk = max(1, 2_000_000 // t.size)
        for s in range(0, flat.size, chunk):
            zz = flat[s:s + chunk]
            out[s:s + chunk] = np.exp(-np.outer(zz, t)) @ weighted
        if terms:
            q = t_mu[None, :] * np.exp(-flat * h)[:, None]
            tail = h * t_c[None, :] * np.exp(-flat * T)[:, None] * (1 + q) / (2 * (1 - q))
            out = out + tail @ scatter
        if real and terms:
            # conjugate-pair terms leave round-off imaginary parts on the real axis
            on_axis = flat.imag == 0
            out[on_axis] = out[on_axis].real
        return out.reshape(z.shape + (p, p))

    poles = []
    for m in (t_mu if terms else []):
        pz = complex(np.log(m) / h)
        if all(abs(pz - q) > 1e-8 * (1 + abs(q)) for q in poles):
            poles.append(pz)
    poles.sort(key=lambda c: (c.real, c.imag))
    kappa_tail = float(kap.min()) if terms else math.inf
    norms = theta.norms()
    mass = theta.integral_norm()
    if np.isfinite(kappa_tail) and norms[-1] > 0:
        mass += norms[-1] / kappa_tail
    noise = None
    if has_se:
        se_norm = np.linalg.norm(theta.se, axis=(1, 2)) * wts

        def noise(x: float) -> float:
            return float(np.dot(se_norm, np.exp(-x * t)))

    return LaplaceKernel(fn, p, poles=poles, kappa_tail=kappa_tail, mass=mass, real=real, source=theta,
                         tail={"kappa": kap, "kappa_norm": kap_norm, "reliable": reliable,
                               "period": 2 * math.pi / h}, noise=noise)


def fredholm_det(lk: LaplaceKernel, z) -> np.ndarray:
    """``det(I - K(z))`` via LU with partial pivoting."""
    return lk.det(z)


@dataclass(frozen=True)
class Root:
    z: complex
    multiplicity: int
    kind: str  # "static" or "hopf"
    residual: float


@dataclass
class RootReport:
    roots: list
    rectangle: tuple  # (re_min, re_max, im_min, im_max)
    winding: int
    lambda_prime: float
    omega_tol: float = OMEGA_TOL
    subdivisions: int = 0
    diagnostics: dict = field(default_factory=dict)

    @property
    def rightmost(self) -> Optional[Root]:
        return max(self.roots, key=lambda r: (r.z.real, -abs(r.z.imag))) if self.roots else None

    @property
    def stable(self) -> bool:
        return self.lambda_prime > 0

    def verdict(self) -> str:
        re0, re1, im0, im1 = self.rectangle
        if not self.roots:
            return f"stable, no root in window Re z in [{re0:.4g}, {re1:.4g}], Im z in [{im0:.4g}, {im1:.4g}]"
        if self.stable:
            return f"stable, λ′ = {self.lambda_prime:.6g}"
        z = self.rightmost.z
        return f"unstable, rightmost root = {_fmt(z)}"


def _fmt(z: complex) -> str:
    if abs(z.imag) < 1e-15:
        return f"{z.real:.6g}"
    return f"{z.real:.6g}{z.imag:+.6g}i"


def default_window(lk: LaplaceKernel, im_max: float = 20.0, noise_tol: float = 0.25) -> tuple:
    """``Re z`` from ``-kappa (1 + 1.5 m)`` to ``2 (1 + m)``, ``m`` the kernel mass.

    The right edge is safe: there ``|K(z)| <= m`` fails to reach 1 only when
    ``m < 1``, and otherwise the factor 2 keeps a generous margin.  The
    left edge reaches past the slowest tail pole because roots sitting just
    beyond it still decide stability.  For Monte-Carlo kernels the left
    edge stops where the propagated standard error of ``K`` exceeds
    ``noise_tol`` (but never right of ``-0.9 kappa``).  Left of ``-kappa``
    the grid sum of a tabulated kernel grows like ``exp((-Re z - kappa) T)``
    before the tail closure cancels it, so the edge also stops where that
    factor reaches ``1e6``.  When the tail fit was flagged unreliable the
    edge stays at ``-0.95 kappa``.
    """
    m = lk.mass
    kap = lk.kappa_tail if np.isfinite(lk.kappa_tail) else 1.0
    if kap <= 0:
        raise ValueError("kernel tail does not decay; no default search window")
    left = -kap * (1 + 1.5 * m)
    if lk.source is not None and np.isfinite(lk.kappa_tail):
        left = max(left, -kap - _CANCEL_DIGITS * math.log(10) / lk.source.T)
        if not lk.tail.get("reliable", True):
            left = max(left, -0.95 * kap)
    if lk.noise is not None and lk.noise(left) > noise_tol:
        lo, hi = left, -0.9 * kap
        if lk.noise(hi) > noise_tol:
            left = hi
        else:
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                lo, hi = (mid, hi) if lk.noise(mid) > noise_tol else (lo, mid)
            left = hi
    return (left, 2 * (1 + m), -im_max, im_max)


def _phase_along(f, pts: np.ndarray, vals: np.ndarray) -> float:
    """Total change of ``arg f`` along the polyline ``pts`` (values known)."""
    a, b = pts[:-1], pts[1:]
    fa, fb = vals[:-1], vals[1:]
    total = 0.0
    sub = np.linspace(0.0, 1.0, 9)
    for _ in range(_MAX_REFINE):
        d = np.angle(fb / fa)
        ok = np.abs(d) <= _PHASE_STEP
        total += float(np.sum(d[ok]))
        if np.all(ok):
            return total
        a, b, fa, fb = a[~ok], b[~ok], fa[~ok], fb[~ok]
        if a.size > _MAX_REFINE_SEGMENTS:
            raise ContourError("argument of the determinant is erratic along the contour "
                               "(evaluation too far left of the kernel tail?)")
        grid = a[:, None] + (b - a)[:, None] * sub[None, :]
        inner = _checked(f, grid[:, 1:-1].ravel()).reshape(-1, 7)
        full = np.concatenate([fa[:, None], inner, fb[:, None]], axis=1)
        a, b = grid[:, :-1].ravel(), grid[:, 1:].ravel()
        fa, fb = full[:, :-1].ravel(), full[:, 1:].ravel()
    raise ContourError("argument of the determinant varies too fast along the contour")


def _checked(f, z):
    v = f(z)
    if not np.all(np.isfinite(v)) or np.any(v == 0):
        raise ContourError("determinant vanishes or is singular on the contour")
    return v


def _winding(f, pts: np.ndarray) -> int:
    vals = _checked(f, pts)
    mag = np.abs(vals)
    if mag.min() < 1e-12 * np.median(mag):
        raise ContourError("contour passes next to a zero of the determinant")
    w = _phase_along(f, pts, vals) / (2 * math.pi)
    n = round(w)
    if abs(w - n) > 0.05:
        raise ContourError(f"non-integer winding {w:.3f}")
    return int(n)


def _rect_path(rect, n_side: int) -> np.ndarray:
    x0, x1, y0, y1 = rect
    s = np.linspace(0.0, 1.0, n_side + 1)[:-1]
    c = [complex(x0, y0), complex(x1, y0), complex(x1, y1), complex(x0, y1)]
    sides = [c[k] + s * (c[(k + 1) % 4] - c[k]) for k in range(4)]
    return np.concatenate(sides + [np.array([c[0]])])


def _inside(z: complex, rect, slack: float = 0.0) -> bool:
    x0, x1, y0, y1 = rect
    return x0 - slack <= z.real <= x1 + slack and y0 - slack <= z.imag <= y1 + slack


def _boundary_gap(z: complex, rect) -> float:
    x0, x1, y0, y1 = rect
    if not _inside(z, rect):
        dx = max(x0 - z.real, 0.0, z.real - x1)
        dy = max(y0 - z.imag, 0.0, z.imag - y1)
        return math.hypot(dx, dy)
    return min(z.real - x0, x1 - z.real, z.imag - y0, y1 - z.imag)


class _Search:
    def __init__(self, lk: LaplaceKernel, rect, n_side: int, refine_tol: float):
        self.lk = lk
        self.f = lk.det
        self.n_side = n_side
        self.tol = refine_tol
        self.scale = max(rect[1] - rect[0], rect[3] - rect[2])
        self.poles = self._window_poles(rect)
        self._orders: dict = {}
        self.splits = 0

    def _window_poles(self, rect):
        poles = list(self.lk.poles)
        period = self.lk.tail.get("period")
        if period:
            extra = []
            for pz in poles:
                k = 1
                while k * period <= max(abs(rect[2]), abs(rect[3])) + period:
                    extra += [pz + 1j * k * period, pz - 1j * k * period]
                    k += 1
            poles += extra
        return [complex(z) for z in poles if _inside(complex(z), rect, slack=1e-9 * self.scale)]

    def pole_order(self, pz: complex) -> int:
        if pz not in self._orders:
            others = [abs(pz - q) for q in self.poles if q != pz]
            r = min([1e-3 * self.scale] + [0.3 * g for g in others])
            theta = np.linspace(0.0, 2 * math.pi, 129)
            circle = np.exp(1j * theta)
            # a zero close to the pole can sit inside the circle; shrink until stable
            prev = _winding(self.f, pz + r * circle)
            for _ in range(8):
                r *= 0.125
                cur = _winding(self.f, pz + r * circle)
                if cur == prev:
                    break
                prev = cur
            self._orders[pz] = -cur
        return self._orders[pz]

    def count(self, rect, n_side=None) -> int:
        margin = 1e-7 * self.scale
        for pz in self.poles:
            if abs(_boundary_gap(pz, rect)) < margin:
                raise ContourError("contour passes next to a pole")
        w = _winding(self.f, _rect_path(rect, n_side or self.n_side))
        return w + sum(self.pole_order(pz) for pz in self.poles if _inside(pz, rect))

    def newton(self, z0: complex, max_iter: int = 60):
        with np.errstate(all="ignore"):
            return self._newton(z0, max_iter)

    def _newton(self, z0: complex, max_iter: int):
        z = complex(z0)
        for _ in range(max_iter):
            fz = complex(self.f(z))
            h = 1e-6 * (1.0 + abs(z))
            dz = (complex(self.f(z + h)) - complex(self.f(z - h))) / (2 * h)
            if not np.isfinite(fz) or not np.isfinite(dz) or dz == 0:
                return z, False
            step = fz / dz
            z = z - step
            if abs(step) <= 1e-14 * (1.0 + abs(z)):
                break
        try:
            res = abs(complex(self.f(z)))
        except ValueError:
            return z, False
        return z, np.isfinite(res)

    def split(self, rect, count, fx=0.5 + 0.0173, fy=0.5 - 0.0119, depth=0):
        if count == 0:
            return []
        x0, x1, y0, y1 = rect
        size = max(x1 - x0, y1 - y0)
        centre = complex(0.5 * (x0 + x1), 0.5 * (y0 + y1))
        if count == 1:
            z, ok = self.newton(centre)
            if ok and _inside(z, rect, slack=1e-12 * self.scale):
                return [(z, 1)]
        if size < max(self.tol, 1e-12 * self.scale) or depth > 80:
            z, _ = self.newton(centre)
            return [(z if _inside(z, rect) else centre, count)]
        rng = np.random.default_rng(depth + 7)
        last_err = None
        for attempt in range(MAX_PERTURB + 1):
            for n_side in (self.n_side, 2 * self.n_side, 4 * self.n_side):
                xm = x0 + fx * (x1 - x0)
                ym = y0 + fy * (y1 - y0)
                kids = [(x0, xm, y0, ym), (xm, x1, y0, ym), (x0, xm, ym, y1), (xm, x1, ym, y1)]
                try:
                    counts = [self.count(k, n_side) for k in kids]
                except ContourError as err:
                    last_err = err
                    break
                if sum(counts) == count and min(counts) >= 0:
                    self.splits += 1
                    out = []
                    for kid, c in zip(kids, counts):
                        out += self.split(kid, c, depth=depth + 1)
                    return out
                last_err = ContourError(
                    f"winding inconsistency: parent {count}, children {counts} (quadrature too coarse)"
                )
            fx = 0.5 + rng.uniform(-0.2, 0.2)
            fy = 0.5 + rng.uniform(-0.2, 0.2)
        raise last_err


def find_roots(
    lk: LaplaceKernel,
    rectangle: Optional[tuple] = None,
    refine_tol: float = 1e-10,
    *,
    n_side: int = N_SIDE,
    omega_tol: float = OMEGA_TOL,
) -> RootReport:
    """Zeros of ``det(I - K(z))`` inside ``rectangle = (re_min, re_max, im_min, im_max)``.

    The rectangle's zero count (winding number plus the orders of enclosed
    poles) is split recursively into four children until each zero is
    isolated, then polished by Newton's method with a central-difference
    derivative.  A contour hitting a zero or pole is nudged outward and
    retried at most five times.
    """
    rect = tuple(float(v) for v in (rectangle or default_window(lk)))
    if len(rect) == 3:
        rect = (rect[0], rect[1], -rect[2], rect[2])
    if not (rect[0] < rect[1] and rect[2] < rect[3]):
        raise ValueError("empty search rectangle")
    if lk.p == 0:
        return RootReport([], rect, 0, math.inf, omega_tol)
    rng = np.random.default_rng(12345)
    base = rect
    err = None
    for attempt in range(MAX_PERTURB + 1):
        search = _Search(lk, rect, n_side, refine_tol)
        try:
            total = search.count(rect)
            found = search.split(rect, total)
            break
        except ContourError as e:
            err = e
            w, h = base[1] - base[0], base[3] - base[2]
            pad = rng.uniform(1e-3, 1e-2, size=4) * (attempt + 1)
            rect = (base[0] - pad[0] * w, base[1] + pad[1] * w, base[2] - pad[2] * h, base[3] + pad[3] * h)
    else:
        raise ContourError(f"root search failed after {MAX_PERTURB} contour perturbations: {err}")

    roots = []
    for z, mult in found:
        if abs(z.imag) < 1e-12 * (1 + abs(z)):
            z = complex(z.real, 0.0)
        roots.append([z, mult])
    if lk.real:
        roots = _symmetrize(roots)
    out = []
    for z, mult in sorted(roots, key=lambda r: (r[0].real, r[0].imag)):
        res = float(abs(complex(lk.det(z))))
        kind = "static" if abs(z.imag) <= omega_tol else "hopf"
        out.append(Root(z, int(mult), kind, res))
    lam = -max(r.z.real for r in out) if out else math.inf
    return RootReport(out, rect, total, lam, omega_tol, search.splits)


def _symmetrize(roots):
    """Pair each upper-half root with its mirror so the set is conjugate symmetric."""
    upper = [r for r in roots if r[0].imag > 0]
    lower = [r for r in roots if r[0].imag < 0]
    real = [r for r in roots if r[0].imag == 0]
    if len(upper) != len(lower):
        return roots
    paired = []
    left = list(lower)
    for z, m in upper:
        k = min(range(len(left)), key=lambda i: abs(left[i][0] - z.conjugate()))
        zl, ml = left.pop(k)
        if ml != m or abs(zl - z.conjugate()) > 1e-6 * (1 + abs(z)):
            return roots
        zz = 0.5 * (z + zl.conjugate())
        paired += [[zz, m], [zz.conjugate(), m]]
    return real + paired


@dataclass
class WeakBound:
    certified: bool
    integral: float

    def __bool__(self) -> bool:
        return self.certified


def weak_interaction_bound(theta: KernelSeries) -> WeakBound:
    """Trapezoid ``int |Theta_t| dt`` plus an exponential tail estimate."""
    norms = theta.norms()
    total = theta.integral_norm()
    if norms[-1] > 0:
        try:
            fit = fit_decay(theta, 0.3)
            total += norms[-1] / fit.rate if fit.rate > 0 else math.inf
        except ValueError:
            total = math.inf
    return WeakBound(total < 1.0, float(total))


@dataclass
class JacobianReport:
    eigenvalues: np.ndarray
    stable: bool
    grad_x: np.ndarray
    grad_y: np.ndarray


def _assembled(spec: DynamicsSpec, x_star):
    x = np.asarray(x_star, dtype=float).reshape(spec.dim)
    V = spec.drift(x) + (spec.interaction_values(x) @ spec.interaction_directions(x) if spec.p else 0.0)
    gx = spec.drift.jac(x)
    gy = np.zeros((spec.dim, spec.dim))
    for term in spec.interactions:
        gx = gx + term.f(x) * term.w.jac(x)
        gy = gy + np.outer(term.w(x), term.f.grad(x))
    return x, np.asarray(V, dtype=float), gx, gy


def jacobian_criterion(spec: DynamicsSpec, x_star, tol: float = 1e-8) -> JacobianReport:
    """Eigenvalues of ``grad_x V + grad_y V`` at a deterministic equilibrium
    of ``V(x, y) = b(x) + F(x, y)``."""
    if not spec.noiseless:
        raise ValueError("the Jacobian criterion needs sigma = 0")
    x, V, gx, gy = _assembled(spec, x_star)
    if np.max(np.abs(V)) > tol:
        raise ValueError(f"x* is not an equilibrium: |V(x*, x*)| = {np.max(np.abs(V)):.3g}")
    eig = np.linalg.eigvals(gx + gy)
    order = np.lexsort((eig.imag, eig.real))
    eig = eig[order]
    return JacobianReport(eig, bool(np.all(eig.real < 0)), gx, gy)


def jacobian_kernel(spec: DynamicsSpec, x_star) -> LaplaceKernel:
    """Transform ``grad_y V (z I - grad_x V)^{-1}`` of ``A_t = grad_y V e^{t grad_x V}``."""
    _, _, gx, gy = _assembled(spec, x_star)
    d = spec.dim
    eye = np.eye(d)

    def fn(z):
        z = np.asarray(z, dtype=complex)
        res = np.linalg.solve((z[..., None, None] * eye - gx).swapaxes(-1, -2), np.broadcast_to(gy.T, z.shape + (d, d)))
        return res.swapaxes(-1, -2)

    poles = np.linalg.eigvals(gx)
    bound = float(np.linalg.norm(gx, 2) + np.linalg.norm(gy, 2))
    return LaplaceKernel.from_function(fn, d, poles, kappa_tail=-float(poles.real.max()), mass=bound)


def write_roots_csv(report: RootReport, path) -> None:
    """Columns ``re, im, multiplicity, class`` followed by a ``# verdict`` line."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["re", "im", "multiplicity", "class"])
        for r in report.roots:
            out.writerow([repr(r.z.real), repr(r.z.imag), r.multiplicity, r.kind])
        fh.write(f"# {report.verdict()}\n")
