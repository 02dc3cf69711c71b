import math

import numpy as np
import pytest
from scipy.optimize import brentq

from mvstab import DynamicsSpec

SQRT_E = math.sqrt(math.e)


def cos_spec(J: float = 1.0) -> DynamicsSpec:
    return DynamicsSpec.from_strings(1, ["-x0"], [("J*cos(x0)", ["1"])], sigma=[[math.sqrt(2.0)]],
                                     constants={"J": float(J)}, name=f"cos J={J}")


def cos_fixed_points(J: float, n: int = 4001) -> list:
    """All roots of sqrt(e) a = J cos a by sign changes on a fine grid."""
    g = lambda a: SQRT_E * a - J * math.cos(a)  # noqa: E731
    bound = abs(J) / SQRT_E + 1e-9
    grid = np.linspace(-bound, bound, n)
    vals = np.array([g(a) for a in grid])
    roots = []
    for k in range(n - 1):
        if vals[k] == 0:
            roots.append(float(grid[k]))
        elif vals[k] * vals[k + 1] < 0:
            roots.append(brentq(g, grid[k], grid[k + 1], xtol=1e-15))
    return roots


def cos_root(a: float, J: float) -> float:
    """Zero of 1 + (J / sqrt(e)) sin(a) / (z + 1)."""
    return -1.0 - J / SQRT_E * math.sin(a)


@pytest.fixture
def alpha_star_1():
    return brentq(lambda a: SQRT_E * a - math.cos(a), 0.0, 1.0, xtol=1e-15)


def linear_system(B, C):
    d = B.shape[0]
    drift = [" + ".join(f"({float(B[i, j])!r})*x{j}" for j in range(d)) for i in range(d)]
    terms = [(f"x{j}", [repr(float(C[i, j])) for i in range(d)]) for j in range(d)]
    return DynamicsSpec.from_strings(d, drift, terms, sigma=np.zeros((d, d)))
