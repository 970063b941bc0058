import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from periberg import numerics as nm


def test_gauss_legendre_integrates_monomials():
    x, w = nm.gauss_legendre(12)
    for k in range(23):
        exact = 0.0 if k % 2 else 2.0 / (k + 1)
        assert abs(np.sum(w * x**k) - exact) < 1e-13


def test_gauss_jacobi_zeroth_moment():
    # integral of (1-x)^alpha over [-1, 1] is 2^(alpha+1)/(alpha+1)
    alpha = 0.5
    _, w = nm.gauss_jacobi(20, alpha)
    assert abs(w.sum() - 2.0 ** (alpha + 1) / (alpha + 1)) < 1e-13


def test_sinhc_values():
    assert nm.sinhc(0.0) == 1.0
    x = 1e-5
    assert abs(nm.sinhc(x) - (1.0 + x * x / 6.0)) < 1e-15
    assert abs(nm.sinhc(2.0) - math.sinh(2.0) / 2.0) < 1e-15
    arr = nm.sinhc(np.array([0.0, 1.0, -1.0]))
    assert arr.shape == (3,)


@given(st.floats(-30, 30, allow_nan=False))
def test_sinhc_even(x):
    assert nm.sinhc(x) == nm.sinhc(-x)


def test_gl_segment_rule_reports_exactness():
    rule = nm.gl_segment_rule(8)
    assert rule.kind == "tensor_gauss_legendre"
    assert rule.exactness_degree == 15


def test_periodic_trapezoid_kills_low_modes():
    rule = nm.periodic_trapezoid_rule(16)
    eta = rule.nodes.real
    for k in range(1, 16):
        assert abs(np.sum(rule.weights * np.exp(1j * k * eta))) < 1e-12


def test_triangle_duffy_area_and_moment():
    rule = nm.triangle_duffy_rule(10)
    assert abs(rule.weights.sum() - 0.5) < 1e-14
    got = np.sum(rule.weights * rule.nodes.real)
    assert abs(got - 1.0 / 6.0) < 1e-14


def test_annulus_rule_area_and_modes():
    r, big_r = 0.5, 2.0
    nodes, weights = nm.annulus_rule(r, big_r, nr=24, ntheta=48)
    assert abs(weights.sum() - math.pi * (big_r**2 - r**2)) < 1e-10
    # pure angular modes integrate to zero
    for n in (1, 2, 5):
        assert abs(np.sum(weights * nodes**n)) < 1e-10


def test_integrate_line_adaptive_gaussian():
    val, est = nm.integrate_line_adaptive(lambda t: np.exp(-(t**2)))
    assert abs(val - math.sqrt(math.pi)) < 1e-12
    assert est < 1e-12


def test_integrate_line_adaptive_oscillatory():
    # exact transform of the gaussian: sqrt(pi) e^{-k^2/4}
    k = 6.0
    val, _ = nm.integrate_line_adaptive(lambda t: np.exp(-(t**2) + 1j * k * t))
    exact = math.sqrt(math.pi) * math.exp(-(k**2) / 4.0)
    assert abs(val - exact) < 1e-12


def test_integrate_line_adaptive_raises_on_rough_integrand():
    # a kink strictly inside a panel defeats panel doubling
    with pytest.raises(nm.EstimateAboveTolerance):
        nm.integrate_line_adaptive(
            lambda t: np.exp(-np.abs(t - 0.3)), tol=1e-13
        )


def test_integrate_line_adaptive_raises_without_decay():
    with pytest.raises(nm.NoDecayDetected):
        nm.integrate_line_adaptive(
            lambda t: 1.0 / (1.0 + t**2), tol=1e-14, max_panels=2
        )


def test_integrate_cell_constant(strip_region):
    val, est = nm.integrate_cell(strip_region, lambda z: np.ones_like(z))
    assert abs(val - 1.0) < 1e-12
    assert est < 1e-12


def test_barycentric_interpolation():
    nodes, bw = nm.gl_barycentric(24)
    vals = np.cos(3.0 * nodes)
    got = nm.barycentric_eval(nodes, bw, vals, 0.3)
    assert abs(got - math.cos(0.9)) < 1e-12
    # exact node hit short-circuits
    assert nm.barycentric_eval(nodes, bw, vals, nodes[5]) == vals[5]


def test_nlls_solve_recovers_line():
    ts = np.linspace(0.0, 1.0, 17)
    data = 2.5 * ts - 0.75

    def residual(x):
        return x[0] * ts + x[1] - data

    report = nm.nlls_solve(residual, np.array([0.0, 0.0]))
    assert report.converged
    assert np.allclose(report.x, [2.5, -0.75], atol=1e-10)
    assert report.trace


def test_nlls_solve_rosenbrock_valley():
    def residual(x):
        return np.array([10.0 * (x[1] - x[0] ** 2), 1.0 - x[0]])

    report = nm.nlls_solve(residual, np.array([-1.2, 1.0]))
    assert report.converged
    assert np.allclose(report.x, [1.0, 1.0], atol=1e-6)
