import math

import numpy as np
import pytest

from mvstab import DynamicsSpec, Field, validate_rate, validate_torus
from mvstab.torus import fourier_coefficients

from conftest import cos_root, cos_spec


def test_cos_example_rate_matches_rightmost_root(alpha_star_1):
    rep = validate_rate(cos_spec(1.0), [alpha_star_1], -cos_root(alpha_star_1, 1.0), N=5000, T=15.0, shift=0.1)
    assert rep.passed, rep.message
    assert 0.5 <= rep.ratio <= 1.5 and rep.monotone


def test_free_ou_relaxes_at_rate_one():
    spec = DynamicsSpec.from_strings(1, ["-x0"], [("0", ["1"])], sigma=[[math.sqrt(2)]])
    rep = validate_rate(spec, [0.0], 1.0, N=5000, T=15.0)
    assert rep.passed
    assert rep.measured_rate == pytest.approx(1.0, rel=0.05)


def test_wrong_prediction_fails(alpha_star_1):
    rep = validate_rate(cos_spec(1.0), [alpha_star_1], 4.0, N=2000, T=10.0)
    assert rep.status == "FAIL"
    assert "ratio" in rep.message


def test_supercritical_torus_reports_no_decay():
    tk = fourier_coefficients(Field.parse("-3*cos(x0)", 1))
    rep = validate_torus(tk, 1.0, N=2000, T=50.0)
    assert rep.passed
    assert "no decay observed" in rep.message


def test_subcritical_torus_rate():
    tk = fourier_coefficients(Field.parse("-cos(x0)", 1))
    rep = validate_torus(tk, 1.0, N=2000, T=50.0)
    assert rep.passed, rep.message
    assert 0.5 <= rep.ratio <= 1.5
    assert rep.order.r.min() < 0.05
