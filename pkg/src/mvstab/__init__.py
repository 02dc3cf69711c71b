"""Local stability of McKean-Vlasov diffusions with separable interactions.

The pipeline runs from a fixed point of the stationary-response map, through
the Monte-Carlo sensitivity kernel and its Volterra resolvent, to the roots
of ``det(I - K(z))``. A Fourier criterion covers convolution-type
interactions on the torus.
"""

__version__ = "0.1.0"

from .dynamics import AlphaProfile, DynamicsSpec, Interaction
from .expr import DomainError, ExprError, Field, ParseError
from .invariant import (
    FixedPointReport,
    bifurcation_scan,
    check_dissipativity,
    classify,
    find_fixed_points,
    green_kubo_derivative,
    psi,
    solve_fixed_point,
)
from .kernels import KernelSeries, estimate_theta, fit_decay, neumann_partial, resolvent
from .metrics import RateSeries, decay_rate, w1
from .sde import (
    ParticleEnsemble,
    sample_invariant,
    sensitivity_residual,
    simulate_linear,
    simulate_mckean_vlasov,
)
from .spectral import LaplaceKernel, RootReport, find_roots, jacobian_criterion, laplace
from .torus import TorusKernel, fourier_coefficients, stability_criterion
from .validation import validate_rate, validate_torus

__all__ = [
    "AlphaProfile",
    "DynamicsSpec",
    "Interaction",
    "DomainError",
    "ExprError",
    "Field",
    "ParseError",
    "FixedPointReport",
    "bifurcation_scan",
    "check_dissipativity",
    "classify",
    "find_fixed_points",
    "green_kubo_derivative",
    "psi",
    "solve_fixed_point",
    "KernelSeries",
    "estimate_theta",
    "fit_decay",
    "neumann_partial",
    "resolvent",
    "RateSeries",
    "decay_rate",
    "w1",
    "ParticleEnsemble",
    "sample_invariant",
    "sensitivity_residual",
    "simulate_linear",
    "simulate_mckean_vlasov",
    "LaplaceKernel",
    "RootReport",
    "find_roots",
    "jacobian_criterion",
    "laplace",
    "TorusKernel",
    "fourier_coefficients",
    "stability_criterion",
    "validate_rate",
    "validate_torus",
]
