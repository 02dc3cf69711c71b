"""Fixed-step Euler-Maruyama integration of the linear, non-homogeneous and
interacting particle processes, plus the pathwise Jacobian flow.

Noise is counter based: the Gaussian increment of particle ``i`` at step
``n`` depends only on ``(seed, tag, n, i)``.  Two runs with the same seed
therefore share their Brownian paths, which is what the coupling and
common-random-number estimators downstream rely on.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .dynamics import AlphaProfile, DynamicsSpec
from .expr import Field

__all__ = [
    "BlowUpError",
    "ParticleEnsemble",
    "Trajectory",
    "InvariantSample",
    "SensitivityResult",
    "brownian_increments",
    "integrate",
    "simulate_linear",
    "simulate_nonhomogeneous",
    "simulate_mckean_vlasov",
    "propagate_jacobian",
    "sample_invariant",
    "sensitivity_residual",
    "write_trajectory_csv",
]

BLOWUP = 1e8
TWO_PI = 2.0 * np.pi

# Stream tags keep unrelated uses of one seed apart.
TAG_DYNAMICS = 0
TAG_INIT = 1
TAG_SAMPLER = 2
TAG_INNER = 1000


class BlowUpError(FloatingPointError):
    pass


@dataclass
class ParticleEnsemble:
    """``N`` equally weighted particles; ``ids`` key the per-particle noise."""

    positions: np.ndarray
    ids: np.ndarray = None  # type: ignore[assignment]
    t: float = 0.0
    seed: Optional[int] = None
    space: str = "euclidean"

    def __post_init__(self):
        x = np.asarray(self.positions, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if self.space == "torus":
            x = np.mod(x, TWO_PI)
        self.positions = x
        if self.ids is None:
            self.ids = np.arange(x.shape[-2])
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if self.ids.shape != (x.shape[-2],):
            raise ValueError("ids must have one entry per particle")
        if not np.all(np.isfinite(x)):
            raise ValueError("particle positions must be finite")

    @property
    def size(self) -> int:
        return self.positions.shape[-2]

    @property
    def dim(self) -> int:
        return self.positions.shape[-1]

    def permuted(self, perm) -> "ParticleEnsemble":
        perm = np.asarray(perm)
        return ParticleEnsemble(self.positions[..., perm, :], self.ids[perm], self.t, self.seed, self.space)

    def shifted(self, offset) -> "ParticleEnsemble":
        return ParticleEnsemble(self.positions + np.asarray(offset, dtype=float), self.ids, self.t, self.seed, self.space)

    @classmethod
    def sample(cls, sampler: Callable, n: int, seed: int, space: str = "euclidean") -> "ParticleEnsemble":
        """Draw ``n`` particles with ``sampler(rng, n)``."""
        rng = np.random.default_rng([seed, TAG_INIT])
        return cls(sampler(rng, n), seed=seed, space=space)


@dataclass
class Trajectory:
    times: np.ndarray
    positions: np.ndarray  # (R, ..., N, d)
    ids: np.ndarray
    seed: int
    space: str = "euclidean"
    jacobians: Optional[np.ndarray] = None  # (R, ..., N, d, d)

    def ensemble(self, k: int = -1) -> ParticleEnsemble:
        return ParticleEnsemble(self.positions[k], self.ids, float(self.times[k]), self.seed, self.space)

    @property
    def final(self) -> ParticleEnsemble:
        return self.ensemble(-1)


def brownian_increments(seed: int, step: int, n: int, d: int, tag: int = TAG_DYNAMICS) -> np.ndarray:
    """Standard normals for particle ids ``0..n-1`` at one step."""
    bits = np.random.Philox(key=[int(seed) % 2**64, int(tag)], counter=[0, int(step), 0, 0])
    return np.random.Generator(bits).standard_normal((n, d))


def _steps(T: float, dt: float) -> int:
    if dt <= 0:
        raise ValueError("dt must be positive")
    if T < dt * (1 - 1e-9):
        raise ValueError("horizon T must be at least one step")
    return int(round(T / dt))


def integrate(
    x0: np.ndarray,
    ids: np.ndarray,
    drift: Callable[[float, np.ndarray], np.ndarray],
    sigma: np.ndarray,
    dt: float,
    n_steps: int,
    seed: int,
    *,
    tag: int = TAG_DYNAMICS,
    torus: bool = False,
    record_every: Optional[int] = 1,
    on_step: Optional[Callable[[int, float, np.ndarray], None]] = None,
    drift_jac: Optional[Callable[[float, np.ndarray], np.ndarray]] = None,
    t0: float = 0.0,
):
    """Run Euler-Maruyama and return ``(times, positions, jacobians)``.

    ``x0`` has shape ``(..., N, d)``; leading batch axes share the noise of
    particle ``ids[i]``.  With ``drift_jac`` the flow ``dJ = Dv(X) J dt``,
    ``J_0 = I`` is stepped alongside.  ``on_step(n, t, x)`` is called after
    every step (and once with ``n = 0`` before the first); when the flow is
    active it receives ``J`` as a fourth argument.
    """
    x = np.array(x0, dtype=float)
    d = x.shape[-1]
    ids = np.asarray(ids, dtype=np.int64)
    n_ids = int(ids.max()) + 1 if ids.size else 0
    contiguous = ids.size == n_ids and np.array_equal(ids, np.arange(n_ids))
    sig_t = np.asarray(sigma, dtype=float).T
    noisy = bool(np.any(sig_t))
    sqdt = math.sqrt(dt)
    J = None
    if drift_jac is not None:
        J = np.broadcast_to(np.eye(d), x.shape + (d,)).copy()
    times, rec, rec_j = [], [], []

    def record(n, t):
        times.append(t)
        rec.append(x.copy())
        if J is not None:
            rec_j.append(J.copy())

    if record_every:
        record(0, t0)
    def notify(n, t):
        if J is None:
            on_step(n, t, x)
        else:
            on_step(n, t, x, J)

    if on_step is not None:
        notify(0, t0)
    for n in range(n_steps):
        t = t0 + n * dt
        v = drift(t, x)
        if J is not None:
            J = J + dt * np.matmul(drift_jac(t, x), J)
        x = x + dt * v
        if noisy:
            z = brownian_increments(seed, n, n_ids, d, tag)
            if not contiguous:
                z = z[ids]
            x = x + sqdt * (z @ sig_t)
        if torus:
            x = np.mod(x, TWO_PI)
        else:
            peak = np.max(np.abs(x)) if x.size else 0.0
            if not peak < BLOWUP:
                raise BlowUpError(f"particle blow-up at step {n + 1} (t={t + dt:.4g}): max |x| = {peak:.3g}")
        if J is not None:
            jpeak = np.max(np.abs(J)) if J.size else 0.0
            if not jpeak < BLOWUP:
                raise BlowUpError(f"Jacobian flow blow-up at step {n + 1} (t={t + dt:.4g}): max |J| = {jpeak:.3g}")
        if record_every and (n + 1) % record_every == 0:
            record(n + 1, t0 + (n + 1) * dt)
        if on_step is not None:
            notify(n + 1, t0 + (n + 1) * dt)
    if not record_every:
        record(n_steps, t0 + n_steps * dt)
    jac = np.stack(rec_j) if rec_j else None
    return np.asarray(times), np.stack(rec), jac


def _linear_drift(spec: DynamicsSpec, alpha: Optional[AlphaProfile]):
    if alpha is None or spec.p == 0:
        return lambda t, x: spec.drift(x)
    return lambda t, x: spec.drift(x) + alpha(x)


def _linear_jac(spec: DynamicsSpec, alpha: Optional[AlphaProfile]):
    if alpha is None or spec.p == 0:
        return lambda t, x: spec.drift.jac(x)
    return lambda t, x: spec.drift.jac(x) + alpha.jac(x)


def simulate_linear(
    spec: DynamicsSpec,
    alpha: Optional[AlphaProfile],
    init: ParticleEnsemble,
    dt: float,
    T: float,
    seed: int,
    *,
    record_every: Optional[int] = 1,
    on_step=None,
) -> Trajectory:
    """Linear process with the interaction frozen at ``alpha``."""
    times, pos, _ = integrate(
        init.positions, init.ids, _linear_drift(spec, alpha), spec.sigma, dt, _steps(T, dt), seed,
        torus=spec.torus, record_every=record_every, on_step=on_step, t0=init.t,
    )
    return Trajectory(times, pos, init.ids, seed, spec.space)


def simulate_nonhomogeneous(
    spec: DynamicsSpec,
    alpha: Optional[AlphaProfile],
    k: Callable[[float, np.ndarray], np.ndarray],
    init: ParticleEnsemble,
    dt: float,
    T: float,
    seed: int,
    *,
    record_every: Optional[int] = 1,
    on_step=None,
) -> Trajectory:
    """Linear process with the extra time-dependent drift ``k(t, x)``."""
    base = _linear_drift(spec, alpha)
    times, pos, _ = integrate(
        init.positions, init.ids, lambda t, x: base(t, x) + k(t, x), spec.sigma, dt, _steps(T, dt), seed,
        torus=spec.torus, record_every=record_every, on_step=on_step, t0=init.t,
    )
    return Trajectory(times, pos, init.ids, seed, spec.space)


def mean_field(spec: DynamicsSpec, x: np.ndarray, order: Optional[np.ndarray] = None) -> np.ndarray:
    """Empirical coefficients ``s_i = (1/N) sum_j f_i(x_j)`` in a fixed order."""
    vals = spec.interaction_values(x if order is None else x[..., order, :])
    return np.mean(vals, axis=-2)


def simulate_mckean_vlasov(
    spec: DynamicsSpec,
    init: ParticleEnsemble,
    dt: float,
    T: float,
    seed: int,
    *,
    record_every: Optional[int] = 1,
    on_step=None,
) -> Trajectory:
    """Interacting particle system; the interaction costs ``O(N p)`` per step."""
    if init.size < 2:
        raise ValueError("the particle system needs N >= 2")
    order = np.argsort(init.ids, kind="stable")
    if np.array_equal(order, np.arange(init.size)):
        order = None

    def drift(t, x):
        v = spec.drift(x)
        if spec.p:
            s = mean_field(spec, x, order)
            v = v + np.einsum("...i,...nid->...nd", s, spec.interaction_directions(x))
        return v

    times, pos, _ = integrate(
        init.positions, init.ids, drift, spec.sigma, dt, _steps(T, dt), seed,
        torus=spec.torus, record_every=record_every, on_step=on_step, t0=init.t,
    )
    return Trajectory(times, pos, init.ids, seed, spec.space)


def propagate_jacobian(
    spec: DynamicsSpec,
    alpha: Optional[AlphaProfile],
    y0,
    dt: float,
    T: float,
    seed: int,
    *,
    ids=None,
    record_every: Optional[int] = 1,
    on_step=None,
    tag: int = TAG_DYNAMICS,
) -> Trajectory:
    """Linear process from ``y0`` with its Jacobian flow ``J_t = dY_t/dy``.

    ``y0`` is a point ``(d,)`` or a batch ``(M, d)``; the result carries
    ``jacobians`` of shape ``(R, M, d, d)``.
    """
    y0 = np.asarray(y0, dtype=float)
    if y0.ndim == 1:
        y0 = y0[None, :]
    ids = np.arange(y0.shape[-2]) if ids is None else np.asarray(ids)
    times, pos, jacs = integrate(
        y0, ids, _linear_drift(spec, alpha), spec.sigma, dt, _steps(T, dt), seed,
        torus=spec.torus, record_every=record_every, on_step=on_step,
        drift_jac=_linear_jac(spec, alpha), tag=tag,
    )
    return Trajectory(times, pos, ids, seed, spec.space, jacobians=jacs)


@dataclass
class InvariantSample:
    """Approximate draws from the invariant law of the linear process.

    ``chains[m]`` names the chain sample ``m`` came from; samples of one
    chain are correlated, so standard errors are computed per chain.
    """

    positions: np.ndarray  # (..., M, d)
    chains: np.ndarray  # (M,)
    burn_in: float
    thinning: float

    @property
    def size(self) -> int:
        return self.positions.shape[-2]

    def ensemble(self, seed=None, space="euclidean") -> ParticleEnsemble:
        return ParticleEnsemble(self.positions, seed=seed, space=space)


def sample_invariant(
    spec: DynamicsSpec,
    alpha: Optional[AlphaProfile],
    M: int,
    dt: float,
    seed: int,
    *,
    kappa_hat: float = 1.0,
    snapshots: int = 4,
    thinning: float = 1.0,
    coefficients: Optional[np.ndarray] = None,
) -> InvariantSample:
    """Burn in ``10 / kappa_hat`` time units, then keep ``snapshots`` states
    ``thinning`` time units apart from ``ceil(M / snapshots)`` chains.

    ``coefficients`` of shape ``(B, p)`` runs ``B`` profiles at once with
    common random numbers; positions then have shape ``(B, M, d)``.
    """
    if M < 1:
        raise ValueError("M must be positive")
    snapshots = max(1, min(int(snapshots), M))
    chains = -(-M // snapshots)
    rng = np.random.default_rng([seed, TAG_INIT])
    if spec.torus:
        x0 = rng.uniform(0.0, TWO_PI, size=(chains, spec.dim))
    else:
        x0 = rng.standard_normal((chains, spec.dim))
    if alpha is None:
        alpha = AlphaProfile.zero(spec)
    coeffs = alpha.coefficients if coefficients is None else np.asarray(coefficients, dtype=float)
    if coeffs.ndim == 2:
        x0 = np.broadcast_to(x0, (coeffs.shape[0],) + x0.shape).copy()
        coeffs = coeffs[:, None, :]
    base = spec.drift

    def drift(t, x):
        v = base(x)
        if spec.p:
            v = v + alpha(x, coeffs)
        return v

    burn = 10.0 / kappa_hat
    n_burn = max(1, int(round(burn / dt)))
    n_thin = max(1, int(round(thinning / dt)))
    n_total = n_burn + (snapshots - 1) * n_thin
    kept = []

    def grab(n, t, x):
        if n >= n_burn and (n - n_burn) % n_thin == 0:
            kept.append(x.copy())

    integrate(
        x0, np.arange(chains), drift, spec.sigma, dt, n_total, seed,
        tag=TAG_SAMPLER, torus=spec.torus, record_every=None, on_step=grab,
    )
    stacked = np.stack(kept, axis=-2)  # (..., chains, snapshots, d)
    flat = stacked.reshape(stacked.shape[:-3] + (chains * snapshots, spec.dim))[..., :M, :]
    chain_idx = np.repeat(np.arange(chains), snapshots)[:M]
    return InvariantSample(flat, chain_idx, burn, thinning)


def chain_mean_se(values: np.ndarray, chains: np.ndarray, axis: int = 0):
    """Mean and standard error of ``values`` with chain-level blocking."""
    values = np.moveaxis(np.asarray(values), axis, 0)
    mean = values.mean(axis=0)
    uniq, inv, counts = np.unique(chains, return_inverse=True, return_counts=True)
    n_blocks = len(uniq)
    if n_blocks < 2:
        return mean, np.full(mean.shape, np.nan)
    sums = np.zeros((n_blocks,) + values.shape[1:], dtype=values.dtype)
    np.add.at(sums, inv, values)
    dev = sums - counts.reshape((-1,) + (1,) * (values.ndim - 1)) * mean
    var = np.sum(np.abs(dev) ** 2, axis=0) / (n_blocks - 1) * n_blocks / values.shape[0] ** 2
    return mean, np.sqrt(var)


@dataclass
class SensitivityResult:
    lhs: float
    rhs: float
    residual: float
    se: float
    lhs_se: float = 0.0
    rhs_se: float = 0.0
    thetas: np.ndarray = field(default_factory=lambda: np.zeros(0))


def sensitivity_residual(
    spec: DynamicsSpec,
    alpha: Optional[AlphaProfile],
    k: Callable[[float, np.ndarray], np.ndarray],
    g: Field,
    init: ParticleEnsemble,
    dt: float,
    T: float,
    seed: int,
    *,
    n_theta: int = 20,
) -> SensitivityResult:
    """Both sides of the integrated sensitivity identity and their difference.

    Left: ``E g(Y^{a+k}_T) - E g(Y^a_T)`` from two runs sharing noise.
    Right: ``int_0^T E[grad_y E_y g(Y^a_{T-s}) . k_s(y)] ds`` with ``y`` drawn
    from the perturbed run at time ``s``, the inner gradient by the
    pathwise Jacobian flow, and the ``s`` integral by the trapezoid rule.
    """
    n_steps = _steps(T, dt)
    n_theta = max(1, min(n_theta, n_steps))
    q_steps = np.unique(np.round(np.linspace(0, n_steps, n_theta + 1)).astype(int))
    M = init.size

    snaps = {}

    def keep(n, t, x):
        if n in q_set:
            snaps[n] = x.copy()

    q_set = set(q_steps.tolist())
    base = _linear_drift(spec, alpha)
    _, pos_k, _ = integrate(
        init.positions, init.ids, lambda t, x: base(t, x) + k(t, x), spec.sigma, dt, n_steps, seed,
        torus=spec.torus, record_every=None, on_step=keep, t0=0.0,
    )
    _, pos_0, _ = integrate(
        init.positions, init.ids, base, spec.sigma, dt, n_steps, seed,
        torus=spec.torus, record_every=None, t0=0.0,
    )
    diff = g(pos_k[-1]) - g(pos_0[-1])
    lhs = float(diff.mean())
    lhs_se = float(diff.std(ddof=1) / math.sqrt(M)) if M > 1 else 0.0

    means, ses = [], []
    for q, nq in enumerate(q_steps):
        y = snaps[nq]
        theta = nq * dt
        kick = k(theta, y)
        remaining = n_steps - nq
        if remaining == 0:
            vals = np.einsum("...d,...d->...", g.grad(y), kick)
        else:
            tr = propagate_jacobian(
                spec, alpha, y, dt, remaining * dt, seed, ids=init.ids,
                record_every=None, tag=TAG_INNER + q,
            )
            J = tr.jacobians[-1]
            grad_g = g.grad(tr.positions[-1])
            vals = np.einsum("...e,...ed,...d->...", grad_g, J, kick)
        means.append(vals.mean())
        ses.append(vals.std(ddof=1) / math.sqrt(M) if M > 1 else 0.0)
    thetas = q_steps * dt
    w = np.zeros(len(thetas))
    h = np.diff(thetas)
    w[:-1] += h / 2
    w[1:] += h / 2
    rhs = float(np.dot(w, means))
    # Outer samples are shared across s, so add the errors linearly.
    rhs_se = float(np.dot(w, ses))
    se = math.hypot(lhs_se, rhs_se)
    return SensitivityResult(lhs, rhs, lhs - rhs, se, lhs_se, rhs_se, thetas)


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """Columns ``t, particle_id, x0..x{d-1}``."""
    pos = traj.positions
    if pos.ndim != 3:
        raise ValueError("only unbatched trajectories can be dumped")
    d = pos.shape[-1]
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["t", "particle_id"] + [f"x{k}" for k in range(d)])
        for t, frame in zip(traj.times, pos):
            for pid, row in zip(traj.ids, frame):
                out.writerow([repr(float(t)), int(pid)] + [repr(float(v)) for v in row])
