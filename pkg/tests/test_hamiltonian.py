import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kcclab.expr import Const, evaluate, to_text
from kcclab.hamiltonian import (
    HamiltonianSpec,
    NotAFixedPoint,
    UnsupportedForm,
    analytic_deviation,
    deviation_curvature_H,
    first_integral_residual,
    jacobi_certificate,
    point_particle_curvature,
    to_system,
)
from kcclab.kcc import TangentPoint, deviation_curvature, eig2
from kcclab.stability import JacobiClass
from oracles import frozen_deviation_reference, textbook_closed_form, random_expr

HARMONIC = HamiltonianSpec.from_text("p^2/(2*m) + k*x^2/2", {"m": 1.0, "k": 1.0}, V="k*x^2/2")
PENDULUM = HamiltonianSpec.from_text(None, {"m": 1.0}, V="1 - cos(x)")
QUARTIC = HamiltonianSpec.from_text(None, {"m": 0.5}, V="x^4")

# hand-derived (V'', V''') for each potential
POTENTIALS = {
    "harmonic": (HARMONIC, lambda x: (1.0, 0.0)),
    "pendulum": (PENDULUM, lambda x: (math.cos(x), -math.sin(x))),
    "quartic": (QUARTIC, lambda x: (12 * x**2, 24 * x)),
}


def _closed_form_P(m, v2, v3, y1):
    return np.array([[-v2 / (4 * m), 0.0], [-0.5 * v3 * y1, -v2 / (4 * m)]])


# ---------------------------------------------------------------------------
# Hamilton's equations


@pytest.mark.parametrize(
    "H,params,f,g",
    [
        ("x2^2/2 + x1^2/2", {}, "x2", "-x1"),
        ("x2^2/(2*m) + 1 - cos(x1)", {"m": 1.0}, "x2/m", "-sin(x1)"),
        ("x1*x2", {}, "x1", "-x2"),
    ],
)
def test_to_system(H, params, f, g):
    sys = to_system(HamiltonianSpec.from_text(H, params))
    assert (to_text(sys.f), to_text(sys.g)) == (f, g)
    assert sys.origin is not None


def test_first_integral_examples():
    for h in (HARMONIC, PENDULUM, QUARTIC, HamiltonianSpec.from_text("x1*x2")):
        assert first_integral_residual(h) == Const(0.0)


@settings(max_examples=150, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_first_integral_is_symbolic_zero_for_random_H(seed):
    h = HamiltonianSpec(random_expr(random.Random(seed), 5, smooth=True))
    assert first_integral_residual(h) == Const(0.0), to_text(h.H)


def test_validation():
    with pytest.raises(ValueError):
        HamiltonianSpec.from_text(None, {"m": 0.0}, V="x^2")
    with pytest.raises(ValueError):
        HamiltonianSpec.from_text(None, {"m": -1.0}, V="x^2")
    with pytest.raises(ValueError):
        HamiltonianSpec.from_text(None, {"m": 1.0}, V="x*p")
    with pytest.raises(ValueError):
        HamiltonianSpec.from_text("p^2/(2*m) + x^4", {"m": 1.0}, V="x^2")
    # written differently from the canonical form but equal
    HamiltonianSpec.from_text("0.5*p^2/m + x^2", {"m": 1.0}, V="x^2")


# ---------------------------------------------------------------------------
# deviation curvature


def _random_points(n, seed):
    return np.random.default_rng(seed).uniform(-3, 3, size=(n, 4))


@pytest.mark.parametrize("name", POTENTIALS)
def test_point_particle_components(name):
    h, derivs = POTENTIALS[name]
    sys = to_system(h)
    for p in _random_points(100, 11):
        v2, v3 = derivs(p[0])
        expected = _closed_form_P(h.mass, v2, v3, p[2])
        pt = TangentPoint(*p)
        generic = deviation_curvature(sys, pt)
        assert np.allclose(generic, expected, rtol=0, atol=1e-12)
        assert np.allclose(point_particle_curvature(h, p[0], p[2]), expected, rtol=0, atol=1e-12)
        mu = eig2(generic)
        assert max(abs(z - (-v2 / (4 * h.mass))) for z in mu) <= 1e-12


@pytest.mark.parametrize(
    "h",
    [HARMONIC, PENDULUM, QUARTIC, HamiltonianSpec.from_text("x1*x2 + sin(x1)*x2^2 + x1^3")],
    ids=["harmonic", "pendulum", "quartic", "general"],
)
def test_specialisation_matches_generic(h):
    sys = to_system(h)
    for p in _random_points(100, 12):
        pt = TangentPoint(*p)
        assert np.allclose(deviation_curvature_H(h, pt), deviation_curvature(sys, pt), rtol=0, atol=1e-12)


def test_harmonic_curvature():
    for p in _random_points(10, 1):
        assert np.allclose(deviation_curvature_H(HARMONIC, TangentPoint(*p)), -0.25 * np.eye(2), atol=1e-15)


def test_pendulum_point():
    pt = TangentPoint(0.3, 0.0, 0.2, 0.0)
    P = deviation_curvature_H(PENDULUM, pt)
    assert P[1, 0] == pytest.approx(-0.5 * -math.sin(0.3) * 0.2, rel=1e-14)
    assert np.allclose(P, deviation_curvature(to_system(PENDULUM), pt), rtol=0, atol=1e-15)


# ---------------------------------------------------------------------------
# certificate


def test_certificate_harmonic():
    cert = jacobi_certificate(HARMONIC, [0.0])
    assert cert.jacobi_stable
    assert [e.eigenvalue for e in cert.entries] == [-0.25]


def test_certificate_pendulum():
    cert = jacobi_certificate(PENDULUM, seeds=[(0.1, 0.0), (3.0, 0.0)])
    (lo, hi) = cert.entries
    assert lo.x == pytest.approx(0.0, abs=1e-12) and lo.verdict is JacobiClass.STABLE
    assert hi.x == pytest.approx(math.pi, abs=1e-12) and hi.verdict is JacobiClass.UNSTABLE
    assert not cert.jacobi_stable


def test_certificate_quartic_marginal():
    (e,) = jacobi_certificate(QUARTIC, [0.0]).entries
    assert e.V2 == 0.0 and e.verdict is JacobiClass.MARGINAL


def test_certificate_grid_samples():
    cert = jacobi_certificate(PENDULUM, [0.0], grid=np.linspace(-3, 3, 13))
    for e in cert.entries[1:]:
        assert not e.equilibrium
        assert e.verdict is (JacobiClass.STABLE if math.cos(e.x) > 1e-10 else JacobiClass.UNSTABLE)


def test_certificate_needs_point_particle():
    with pytest.raises(UnsupportedForm):
        jacobi_certificate(HamiltonianSpec.from_text("x1*x2"), [0.0])


# ---------------------------------------------------------------------------
# analytic deviation


def test_closed_form_unit_case():
    sol = analytic_deviation(HARMONIC, 0.0, 1.0, 0.0)
    t = np.linspace(0, 10, 101)
    assert np.allclose(sol.xi1(t), np.sin(t), rtol=0, atol=1e-15)
    assert np.allclose(sol.xi2(t), np.cos(t) - 1, rtol=0, atol=1e-15)


@pytest.mark.parametrize("xi10,xi20,m,k", [(1.0, 0.0, 1.0, 1.0), (0.3, -0.8, 2.0, 0.5), (-1.2, 0.4, 0.7, 3.0)])
def test_matches_trigonometric_closed_form(xi10, xi20, m, k):
    h = HamiltonianSpec.from_text(None, {"m": m, "k": k}, V="k*x^2/2")
    sol = analytic_deviation(h, 0.0, xi10, xi20)
    t = np.linspace(0, 10, 201)
    ref1, ref2 = textbook_closed_form(k, m, xi10, xi20, t)
    assert np.allclose(sol.xi1(t), ref1, rtol=0, atol=1e-12)
    assert np.allclose(sol.xi2(t), ref2, rtol=0, atol=1e-12)


def test_zero_initial_data():
    sol = analytic_deviation(PENDULUM, 0.0, 0.0, 0.0)
    t = np.linspace(0, 5, 11)
    assert not sol.xi1(t).any() and not sol.xi2(t).any()


@pytest.mark.parametrize(
    "V,x0,m,regime",
    [("-x^2/2", 0.0, 1.0, "hyperbolic"), ("1 - cos(x)", math.pi, 1.5, "hyperbolic"), ("x^4", 0.0, 2.0, "polynomial")],
)
def test_continued_branches_against_rk4(V, x0, m, regime):
    h = HamiltonianSpec.from_text(None, {"m": m}, V=V)
    sol = analytic_deviation(h, x0, 0.7, -0.4)
    assert sol.regime == regime
    t, ref = frozen_deviation_reference(sol.V2, m, 0.7, -0.4, 5.0, 1e-3)
    assert np.max(np.abs(sol.xi1(t) - ref[:, 0])) <= 1e-6
    assert np.max(np.abs(sol.xi2(t) - ref[:, 1])) <= 1e-6


def test_hyperbolic_unit_case_is_sinh():
    h = HamiltonianSpec.from_text(None, {"m": 1.0}, V="-x^2/2")
    t = np.linspace(0, 5, 51)
    assert np.allclose(analytic_deviation(h, 0.0, 1.0, 0.0).xi1(t), np.sinh(t), rtol=1e-14, atol=0)


@pytest.mark.parametrize("h,x0", [(HARMONIC, 0.0), (PENDULUM, math.pi), (QUARTIC, 0.0)])
def test_initial_conditions_and_ode_residual(h, x0):
    sol = analytic_deviation(h, x0, 0.9, -0.6)
    assert sol.xi1(0.0) == 0.0 and sol.xi2(0.0) == 0.0
    d = 1e-6
    assert (sol.xi1(d) - sol.xi1(-d)) / (2 * d) == pytest.approx(0.9, abs=1e-8)
    assert (sol.xi2(d) - sol.xi2(-d)) / (2 * d) == pytest.approx(-0.6, abs=1e-8)
    d = 1e-4
    for t in np.linspace(0.1, 5, 25):
        x1 = [sol.xi1(t - d), sol.xi1(t), sol.xi1(t + d)]
        x2 = [sol.xi2(t - d), sol.xi2(t), sol.xi2(t + d)]
        acc1 = (x1[2] - 2 * x1[1] + x1[0]) / d**2
        acc2 = (x2[2] - 2 * x2[1] + x2[0]) / d**2
        vel1 = (x1[2] - x1[0]) / (2 * d)
        vel2 = (x2[2] - x2[0]) / (2 * d)
        assert abs(acc1 - vel2 / sol.m) <= 1e-6 * max(1.0, abs(acc1))
        assert abs(acc2 + sol.V2 * vel1) <= 1e-6 * max(1.0, abs(acc2))


def test_not_a_fixed_point():
    with pytest.raises(NotAFixedPoint):
        analytic_deviation(PENDULUM, 1.0, 1.0, 0.0)


def test_energy_function():
    e = HARMONIC.energy_fn
    assert e(1.0, 2.0) == pytest.approx(0.5 * 4 + 0.5, rel=1e-15)
    assert evaluate(HARMONIC.H, 1.0, 2.0, HARMONIC.params) == e(1.0, 2.0)
