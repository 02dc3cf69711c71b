"""Problem description shared by every analysis: drift, interaction, noise."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .expr import Field, Num

__all__ = ["DynamicsSpec", "AlphaProfile", "Interaction"]


@dataclass(frozen=True)
class Interaction:
    """One separable term ``f(y) * w(x)`` of the interaction ``F(x, y)``."""

    f: Field  # scalar, evaluated at the other particle y
    w: Field  # d-vector, evaluated at the particle x

    def __post_init__(self):
        if self.f.vector:
            raise ValueError("interaction f must be a scalar field")
        if not self.w.vector:
            raise ValueError("interaction w must be a vector field")


@dataclass(frozen=True)
class DynamicsSpec:
    """Drift ``b``, separable interaction ``sum_i f_i(y) w_i(x)`` and constant noise.

    On the torus the diffusion is forced to ``sqrt(2 / beta) * I``.
    """

    dim: int
    drift: Field
    interactions: tuple[Interaction, ...] = ()
    sigma: np.ndarray = field(default=None)  # type: ignore[assignment]
    space: str = "euclidean"
    beta: float | None = None
    name: str = ""

    def __post_init__(self):
        if self.space not in ("euclidean", "torus"):
            raise ValueError(f"unknown space {self.space!r}")
        if not self.drift.vector or self.drift.dim != self.dim:
            raise ValueError("drift must be a d-vector field")
        object.__setattr__(self, "interactions", tuple(self.interactions))
        for term in self.interactions:
            if term.f.dim != self.dim or term.w.dim != self.dim:
                raise ValueError("interaction fields must share the state dimension")
        if self.space == "torus":
            if self.beta is None or self.beta <= 0:
                raise ValueError("torus dynamics need beta > 0")
            sigma = np.sqrt(2.0 / self.beta) * np.eye(self.dim)
        else:
            if self.sigma is None:
                raise ValueError("euclidean dynamics need a diffusion matrix sigma")
            sigma = np.atleast_2d(np.asarray(self.sigma, dtype=float))
            if sigma.shape == (1, 1) and self.dim > 1:
                sigma = sigma[0, 0] * np.eye(self.dim)
            if sigma.shape != (self.dim, self.dim):
                raise ValueError(f"sigma must be {self.dim}x{self.dim}")
        sigma.setflags(write=False)
        object.__setattr__(self, "sigma", sigma)

    @property
    def p(self) -> int:
        return len(self.interactions)

    @property
    def torus(self) -> bool:
        return self.space == "torus"

    @property
    def noiseless(self) -> bool:
        return not np.any(self.sigma)

    @classmethod
    def from_strings(
        cls,
        dim: int,
        drift: Sequence[str],
        interactions: Sequence[tuple[str, Sequence[str]]] = (),
        sigma=None,
        space: str = "euclidean",
        beta: float | None = None,
        constants: Mapping[str, float] | None = None,
        name: str = "",
    ) -> "DynamicsSpec":
        terms = tuple(
            Interaction(Field.parse(f, dim, constants), Field.parse(list(w), dim, constants))
            for f, w in interactions
        )
        return cls(
            dim=dim,
            drift=Field.parse(list(drift), dim, constants),
            interactions=terms,
            sigma=sigma,
            space=space,
            beta=beta,
            name=name,
        )

    def check_nondegenerate(self):
        if self.space == "euclidean" and np.linalg.det(self.sigma) <= 0:
            raise ValueError("det(sigma) must be positive")

    def interaction_values(self, y):
        """``f_i(y)`` stacked on the last axis, shape ``(..., p)``."""
        y = np.asarray(y, dtype=float)
        if not self.interactions:
            return np.zeros(y.shape[:-1] + (0,))
        return np.stack([t.f(y) for t in self.interactions], axis=-1)

    def interaction_directions(self, x):
        """``w_i(x)`` stacked, shape ``(..., p, d)``."""
        x = np.asarray(x, dtype=float)
        if not self.interactions:
            return np.zeros(x.shape[:-1] + (0, self.dim))
        return np.stack([t.w(x) for t in self.interactions], axis=-2)

    def interaction_sup(self, radius: float = 5.0, n: int = 4096, seed: int = 0) -> np.ndarray:
        """Sampled sup-norm of each ``f_i`` over the box ``[-radius, radius]^d``."""
        rng = np.random.default_rng(seed)
        lo, hi = (0.0, 2 * np.pi) if self.torus else (-radius, radius)
        pts = rng.uniform(lo, hi, size=(n, self.dim))
        vals = self.interaction_values(pts)
        return np.max(np.abs(vals), axis=0) if vals.size else np.zeros(0)


@dataclass(frozen=True)
class AlphaProfile:
    """Interaction profile ``alpha(x) = sum_i a_i w_i(x)``.

    ``coefficients`` has shape ``(p,)`` or, for batched runs, ``(B, p)``
    where row ``b`` applies to batch member ``b``.
    """

    spec: DynamicsSpec
    coefficients: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.coefficients, dtype=float)
        if a.shape[-1:] != (self.spec.p,) and not (self.spec.p == 0 and a.size == 0):
            raise ValueError(f"expected {self.spec.p} coefficients, got shape {a.shape}")
        if self.spec.p == 0:
            a = a.reshape(a.shape[:-1] + (0,)) if a.ndim else np.zeros(0)
        object.__setattr__(self, "coefficients", a)

    @classmethod
    def zero(cls, spec: DynamicsSpec) -> "AlphaProfile":
        return cls(spec, np.zeros(spec.p))

    def __call__(self, x, coeffs=None):
        a = self.coefficients if coeffs is None else coeffs
        x = np.asarray(x, dtype=float)
        if self.spec.p == 0:
            return np.zeros(x.shape)
        w = self.spec.interaction_directions(x)
        return np.einsum("...i,...id->...d", a, w)

    def jac(self, x, coeffs=None):
        a = self.coefficients if coeffs is None else coeffs
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape + (self.spec.dim,))
        for i, term in enumerate(self.spec.interactions):
            if all(isinstance(c, Num) for c in term.w.components):
                continue
            out = out + a[..., i, None, None] * term.w.jac(x)
        return out

