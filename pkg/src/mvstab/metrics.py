"""Empirical Wasserstein-1 distances and exponential rate fits."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .sde import ParticleEnsemble

__all__ = [
    "w1",
    "w1_sorted",
    "w1_circle",
    "RateSeries",
    "RateFit",
    "decay_rate",
    "bootstrap_w1_se",
    "order_noise_floor",
    "write_rate_csv",
]

N_SLICES = 64
TWO_PI = 2.0 * np.pi


def _points(e):
    if isinstance(e, ParticleEnsemble):
        return e.positions, e.space
    x = np.asarray(e, dtype=float)
    return (x[:, None] if x.ndim == 1 else x), None


def w1_sorted(a: np.ndarray, b: np.ndarray) -> float:
    """Exact W1 between equal-size samples on the line."""
    return float(np.mean(np.abs(np.sort(a) - np.sort(b))))


def w1_circle(a: np.ndarray, b: np.ndarray) -> float:
    """Exact W1 between equal-size samples on the circle of length ``2 pi``.

    With ``D`` the difference of the two distribution functions along the
    circle, ``W1 = min_c int |D - c|``, attained at the length-weighted
    median of ``D``.
    """
    a = np.mod(np.asarray(a, dtype=float), TWO_PI)
    b = np.mod(np.asarray(b, dtype=float), TWO_PI)
    n = a.size
    pts = np.concatenate([a, b])
    jump = np.concatenate([np.full(n, 1.0 / n), np.full(n, -1.0 / n)])
    order = np.argsort(pts, kind="stable")
    pts, jump = pts[order], jump[order]
    D = np.cumsum(jump)[:-1]
    lengths = np.diff(pts)
    # the wrap-around segment carries D = 0
    D = np.append(D, 0.0)
    lengths = np.append(lengths, TWO_PI - pts[-1] + pts[0])
    keep = lengths > 0
    D, lengths = D[keep], lengths[keep]
    idx = np.argsort(D, kind="stable")
    cum = np.cumsum(lengths[idx])
    med = D[idx][np.searchsorted(cum, 0.5 * cum[-1])]
    return float(np.sum(lengths * np.abs(D - med)))


def w1(
    ensemble_a,
    ensemble_b,
    *,
    space: Optional[str] = None,
    n_slices: int = N_SLICES,
    seed: int = 0,
) -> float:
    """W1 between two point clouds of equal weight.

    Exact for ``d = 1`` (sorted matching on the line, weighted-median
    formula on the circle).  For ``d > 1`` the sliced estimate averages
    ``n_slices`` seeded random directions on ``R^d`` or the coordinate
    projections on the torus.  Unequal sizes are subsampled to the smaller.
    """
    xa, sa = _points(ensemble_a)
    xb, sb = _points(ensemble_b)
    if sa and sb and sa != sb:
        raise ValueError("ensembles live on different spaces")
    space = space or sa or sb or "euclidean"
    if xa.shape[0] == 0 or xb.shape[0] == 0:
        raise ValueError("empty ensemble")
    if xa.shape[-1] != xb.shape[-1]:
        raise ValueError("dimension mismatch")
    if xa.shape[0] != xb.shape[0]:
        n = min(xa.shape[0], xb.shape[0])
        rng = np.random.default_rng([seed, 5])
        if xa.shape[0] > n:
            xa = xa[np.sort(rng.choice(xa.shape[0], n, replace=False))]
        else:
            xb = xb[np.sort(rng.choice(xb.shape[0], n, replace=False))]
    d = xa.shape[-1]
    if space == "torus":
        return float(np.mean([w1_circle(xa[:, k], xb[:, k]) for k in range(d)]))
    if d == 1:
        return w1_sorted(xa[:, 0], xb[:, 0])
    rng = np.random.default_rng([seed, 6])
    dirs = rng.standard_normal((n_slices, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pa = np.sort(xa @ dirs.T, axis=0)
    pb = np.sort(xb @ dirs.T, axis=0)
    return float(np.mean(np.abs(pa - pb)))


def bootstrap_w1_se(ensemble_a, ensemble_b, n_boot: int = 50, seed: int = 0, **kw) -> float:
    """Bootstrap standard error of :func:`w1` over resampled ensembles."""
    xa, sa = _points(ensemble_a)
    xb, sb = _points(ensemble_b)
    space = kw.pop("space", None) or sa or sb
    rng = np.random.default_rng([seed, 8])
    reps = []
    for _ in range(n_boot):
        ia = rng.integers(0, xa.shape[0], xa.shape[0])
        ib = rng.integers(0, xb.shape[0], xb.shape[0])
        reps.append(w1(xa[ia], xb[ib], space=space, **kw))
    return float(np.std(reps, ddof=1))


def order_noise_floor(N: int) -> float:
    """Mean modulus of an empirical Fourier mode of ``N`` uniform points."""
    return math.sqrt(math.pi / (4.0 * N))


@dataclass
class RateSeries:
    t: np.ndarray
    w1: np.ndarray
    se: Optional[np.ndarray] = None

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.w1 = np.asarray(self.w1, dtype=float)
        if self.se is not None:
            self.se = np.asarray(self.se, dtype=float)
        if self.t.shape != self.w1.shape:
            raise ValueError("time grid and distances differ in length")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("time grid must be increasing")
        if np.any(self.w1 < 0):
            raise ValueError("distances must be non-negative")


@dataclass
class RateFit:
    rate: float
    prefactor: float
    r2: float
    window: tuple
    flagged: bool = False
    reason: str = ""
    rate_se: float = math.nan

    @property
    def ok(self) -> bool:
        return math.isfinite(self.rate)


def decay_rate(
    series: RateSeries,
    window: Optional[tuple] = None,
    *,
    floor: Optional[float] = None,
    floor_factor: float = 3.0,
    min_points: int = 3,
) -> RateFit:
    """Log-linear least squares ``log w1 ~ log C - rate t``.

    With a noise ``floor`` the window is cut at the first point that falls
    below ``floor_factor * floor``; if that leaves fewer than
    ``min_points`` points the fit is flagged and no rate is reported.
    """
    t, y = series.t, series.w1
    lo, hi = window if window is not None else (t[0], t[-1])
    mask = (t >= lo - 1e-12) & (t <= hi + 1e-12)
    idx = np.flatnonzero(mask)
    reason = ""
    if floor is not None and idx.size:
        below = np.flatnonzero(y[idx] < floor_factor * floor)
        if below.size:
            idx = idx[: below[0]]
            reason = "window shortened at the noise floor"
    if idx.size and np.any(y[idx] <= 0):
        first = np.flatnonzero(y[idx] <= 0)[0]
        idx = idx[:first]
        reason = reason or "window shortened at a zero distance"
    if idx.size < min_points:
        return RateFit(math.nan, math.nan, math.nan, (float(lo), float(hi)), True,
                       "series sits at the noise floor; no rate reported")
    tw, lw = t[idx], np.log(y[idx])
    (slope, icpt), cov = np.polyfit(tw, lw, 1, cov=True) if idx.size > 3 else (np.polyfit(tw, lw, 1), None)
    resid = lw - (icpt + slope * tw)
    ss_tot = np.sum((lw - lw.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    rate_se = float(math.sqrt(cov[0, 0])) if cov is not None else math.nan
    return RateFit(float(-slope), float(math.exp(icpt)), float(r2), (float(tw[0]), float(tw[-1])),
                   bool(reason), reason, rate_se)


def write_rate_csv(series: RateSeries, path) -> None:
    """Columns ``t, w1, se``."""
    se = series.se if series.se is not None else np.zeros_like(series.w1)
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["t", "w1", "se"])
        for row in zip(series.t, series.w1, se):
            out.writerow([repr(float(v)) for v in row])
