"""One-degree-of-freedom Hamiltonian systems.

``dx1/dt = dH/dx2``, ``dx2/dt = -dH/dx1`` with ``x2`` the momentum. For
point-particle Hamiltonians ``H = x2^2 / (2 m) + V(x1)`` the deviation
curvature, its eigenvalues and the deviation vector at an equilibrium are
available in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

from .expr import (
    Binary,
    Const,
    Expr,
    Param,
    Pow,
    Unary,
    Var,
    compile_exprs,
    diff,
    evaluate,
    free_vars,
    identically_zero,
    is_zero,
    parameters,
    parse,
    simplify,
    to_text,
)
from .kcc import SystemSpec, TangentPoint
from .stability import EPS_CLS, JacobiClass, find_fixed_points

__all__ = [
    "FIXED_POINT_TOL",
    "UnsupportedForm",
    "NotAFixedPoint",
    "PointParticle",
    "HamiltonianSpec",
    "to_system",
    "first_integral_residual",
    "deviation_curvature_H",
    "point_particle_curvature",
    "jacobi_certificate",
    "Certificate",
    "CertificateEntry",
    "DeviationSolution",
    "analytic_deviation",
]

FIXED_POINT_TOL = 1e-10
_SAMPLE_POINTS = 64


class UnsupportedForm(ValueError):
    """The operation needs a point-particle Hamiltonian."""


class NotAFixedPoint(ValueError):
    def __init__(self, x0: float, slope: float):
        self.x0 = x0
        self.slope = slope
        super().__init__(f"x0 = {x0!r} is not an equilibrium: V'(x0) = {slope!r}")


@dataclass(frozen=True)
class PointParticle:
    """``V(x1)`` together with the name of the mass parameter."""

    V: Expr
    mass: str = "m"


def _kinetic(mass: str) -> Expr:
    return Binary("div", Pow(Var(2), 2.0), Binary("mul", Const(2.0), Param(mass)))


@dataclass(frozen=True)
class HamiltonianSpec:
    H: Expr
    params: Mapping[str, float] = field(default_factory=dict)
    point_particle: PointParticle | None = None

    def __post_init__(self):
        object.__setattr__(self, "params", MappingProxyType(dict(self.params)))
        missing = parameters(self.H) - set(self.params)
        if missing:
            raise ValueError(f"unbound parameters: {', '.join(sorted(missing))}")
        pp = self.point_particle
        if pp is None:
            return
        if 2 in free_vars(pp.V):
            raise ValueError("the potential V must depend on x1 only")
        if pp.mass not in self.params:
            raise ValueError(f"mass parameter {pp.mass!r} is not bound")
        if not float(self.params[pp.mass]) > 0:
            raise ValueError(f"mass must be positive, got {self.params[pp.mass]!r}")
        if not self._matches_point_particle():
            raise ValueError(
                f"H = {to_text(self.H)} is not x2^2/(2*{pp.mass}) + V with V = {to_text(pp.V)}"
            )

    @classmethod
    def from_text(
        cls,
        H: str | None = None,
        params: Mapping[str, float] | None = None,
        V: str | None = None,
        mass: str = "m",
    ) -> "HamiltonianSpec":
        """Build from text; ``x``/``p`` are accepted for ``x1``/``x2``.

        With only ``V`` given, ``H`` is assembled as ``x2^2/(2*m) + V``.
        """
        params = dict(params or {})
        pp = None
        if V is not None:
            pp = PointParticle(parse(V, params, hamiltonian=True), mass)
        if H is None:
            if pp is None:
                raise ValueError("either H or V is required")
            h_expr = Binary("add", _kinetic(mass), pp.V)
        else:
            h_expr = parse(H, params, hamiltonian=True)
        return cls(h_expr, params, pp)

    def _matches_point_particle(self) -> bool:
        pp = self.point_particle
        expected = Binary("add", _kinetic(pp.mass), pp.V)
        if is_zero(simplify(Binary("sub", self.H, expected))):
            return True
        # the simplifier does not normalise sums; confirm on sample points
        rng = np.random.default_rng(0)
        for x1, x2 in rng.uniform(-2.0, 2.0, size=(_SAMPLE_POINTS, 2)):
            try:
                a = evaluate(self.H, x1, x2, self.params)
                b = evaluate(expected, x1, x2, self.params)
            except ArithmeticError:
                continue
            if abs(a - b) > 1e-12 * max(1.0, abs(a), abs(b)):
                return False
        return True

    @property
    def mass(self) -> float:
        if self.point_particle is None:
            raise UnsupportedForm("no point-particle form declared")
        return float(self.params[self.point_particle.mass])

    def describe(self) -> dict:
        out = {"H": to_text(self.H), "params": dict(self.params)}
        if self.point_particle is not None:
            out["V"] = to_text(self.point_particle.V)
            out["mass"] = self.point_particle.mass
        return out

    # -- symbolic derivatives --------------------------------------------

    @cached_property
    def grad(self) -> tuple[Expr, Expr]:
        return (diff(self.H, 1), diff(self.H, 2))

    @cached_property
    def hessian(self) -> tuple:
        return tuple(tuple(diff(self.grad[i], j + 1) for j in range(2)) for i in range(2))

    @cached_property
    def third(self) -> tuple:
        """``third[i][j][k] = H_{ijk}`` (indices 0-based)."""
        return tuple(
            tuple(tuple(diff(self.hessian[i][j], k + 1) for k in range(2)) for j in range(2))
            for i in range(2)
        )

    @cached_property
    def potential_derivs(self) -> tuple[Expr, Expr, Expr]:
        """``(V', V'', V''')``."""
        if self.point_particle is None:
            raise UnsupportedForm("no point-particle form declared")
        d1 = diff(self.point_particle.V, 1)
        d2 = diff(d1, 1)
        return d1, d2, diff(d2, 1)

    @cached_property
    def _curvature_fn(self):
        H1, H2 = self.grad
        hess, third = self.hessian, self.third
        flat = [H1, H2] + [hess[i][j] for i in range(2) for j in range(2)]
        flat += [third[i][j][k] for i in range(2) for j in range(2) for k in range(2)]
        return compile_exprs(flat, self.params)

    @cached_property
    def _potential_fn(self):
        return compile_exprs(self.potential_derivs, self.params)

    @cached_property
    def energy_fn(self):
        fn = compile_exprs([self.H], self.params)
        return lambda x1, x2: fn(x1, x2)[0]


def to_system(h: HamiltonianSpec) -> SystemSpec:
    """Hamilton's equations as a :class:`SystemSpec` (origin records ``h``)."""
    H1, H2 = h.grad
    return SystemSpec(H2, simplify(Unary("neg", H1)), h.params, origin=h)


def first_integral_residual(h: HamiltonianSpec) -> Expr:
    """``H1 f + H2 g`` for the derived system, reduced to ``Const(0)`` when it cancels.

    The simplifier alone is too conservative to see every cancellation, so
    the result is also checked in an exact expanded normal form.
    """
    sys = to_system(h)
    H1, H2 = h.grad
    r = simplify(Binary("add", Binary("mul", H1, sys.f), Binary("mul", H2, sys.g)))
    return Const(0.0) if identically_zero(r) else r


def deviation_curvature_H(h: HamiltonianSpec, pt: TangentPoint) -> np.ndarray:
    """Deviation curvature assembled from the second and third derivatives of ``H``.

    ``f = H2`` and ``g = -H1``, so row 1 of the Hessian block is
    ``(Hess(H2) y)^T`` and row 2 is ``-(Hess(H1) y)^T``.
    """
    vals = h._curvature_fn(pt.x1, pt.x2)
    hess = np.array(vals[2:6]).reshape(2, 2)
    third = np.array(vals[6:14]).reshape(2, 2, 2)
    y = np.array([pt.y1, pt.y2])
    J_H = np.array([[hess[1, 0], hess[1, 1]], [-hess[0, 0], -hess[0, 1]]])
    block = np.stack([third[1] @ y, -(third[0] @ y)])
    return 0.5 * block + 0.25 * (J_H @ J_H)


def point_particle_curvature(h: HamiltonianSpec, x1: float, y1: float) -> np.ndarray:
    """Closed-form ``P`` for ``H = x2^2/(2m) + V(x1)``."""
    m = h.mass
    _, v2, v3 = h._potential_fn(x1, 0.0)
    diag = -v2 / (4.0 * m)
    return np.array([[diag, 0.0], [-0.5 * v3 * y1, diag]])


# ---------------------------------------------------------------------------
# Jacobi stability certificate


@dataclass(frozen=True)
class CertificateEntry:
    x: float
    V2: float
    eigenvalue: float
    verdict: JacobiClass
    equilibrium: bool

    def to_dict(self) -> dict:
        return {
            "x": self.x,
            "V2": self.V2,
            "lambda": self.eigenvalue,
            "verdict": self.verdict.value,
            "jacobi_stable": self.verdict is JacobiClass.STABLE,
            "equilibrium": self.equilibrium,
        }


@dataclass(frozen=True)
class Certificate:
    entries: tuple[CertificateEntry, ...]

    @property
    def jacobi_stable(self) -> bool:
        """Stable at every examined point."""
        return bool(self.entries) and all(e.verdict is JacobiClass.STABLE for e in self.entries)

    def to_dict(self) -> dict:
        return {
            "jacobi_stable": self.jacobi_stable,
            "entries": [e.to_dict() for e in self.entries],
        }


def _verdict(v2: float, eps: float) -> JacobiClass:
    if v2 > eps:
        return JacobiClass.STABLE
    if v2 < -eps:
        return JacobiClass.UNSTABLE
    return JacobiClass.MARGINAL


def jacobi_certificate(
    h: HamiltonianSpec,
    points: Iterable[float] | None = None,
    *,
    seeds: Iterable[Sequence[float]] | None = None,
    grid: Sequence[float] | None = None,
    eps: float = EPS_CLS,
    diagnostics: list | None = None,
) -> Certificate:
    """Jacobi verdicts from the sign of ``V''`` with eigenvalue ``-V''/(4m)``.

    Parameters
    ----------
    points : iterable of float, optional
        Equilibrium positions ``x0`` to examine.
    seeds : iterable of (x1, x2), optional
        Seeds for a fixed-point search of the derived system.
    grid : sequence of float, optional
        Extra positions (not necessarily equilibria) to sample ``V''`` on.
    """
    if h.point_particle is None:
        raise UnsupportedForm("the certificate needs H = x2^2/(2m) + V(x1)")
    m = h.mass
    xs: list[tuple[float, bool]] = [(float(x), True) for x in (points or ())]
    if seeds is not None:
        found = find_fixed_points(to_system(h), seeds, diagnostics=diagnostics)
        xs += [(p[0], True) for p in found]
    xs += [(float(x), False) for x in (grid if grid is not None else ())]
    entries = []
    for x, eq in xs:
        _, v2, _ = h._potential_fn(x, 0.0)
        entries.append(CertificateEntry(x, v2, -v2 / (4.0 * m), _verdict(v2, eps), eq))
    return Certificate(tuple(entries))


# ---------------------------------------------------------------------------
# deviation vector at an equilibrium


@dataclass(frozen=True)
class DeviationSolution:
    """Closed-form deviation vector at the equilibrium ``(x0, 0)``.

    With ``k = V''(x0)`` and ``s = k/m``, write ``S(t) = sin(sqrt(s) t)/sqrt(s)``
    and ``C(t) = (1 - cos(sqrt(s) t))/s``, continued to ``sinh``/``cosh`` for
    ``s < 0`` and to ``t``, ``t^2/2`` for ``s = 0``. Then

        xi1 = xi10 S + (xi20/m) C,    xi2 = -k xi10 C + xi20 S.
    """

    x0: float
    m: float
    V2: float
    xi10: float
    xi20: float

    @property
    def regime(self) -> str:
        if self.V2 > 0:
            return "oscillatory"
        if self.V2 < 0:
            return "hyperbolic"
        return "polynomial"

    def _basis(self, t):
        t = np.asarray(t, dtype=float)
        s = self.V2 / self.m
        if s > 0:
            w = math.sqrt(s)
            S = np.sin(w * t) / w
            C = 2.0 * np.sin(0.5 * w * t) ** 2 / s
            dS = np.cos(w * t)
        elif s < 0:
            w = math.sqrt(-s)
            S = np.sinh(w * t) / w
            C = -2.0 * np.sinh(0.5 * w * t) ** 2 / s
            dS = np.cosh(w * t)
        else:
            S, C, dS = t, 0.5 * t * t, np.ones_like(t)
        return S, C, dS

    def xi1(self, t):
        S, C, _ = self._basis(t)
        return self.xi10 * S + (self.xi20 / self.m) * C

    def xi2(self, t):
        S, C, _ = self._basis(t)
        return -self.V2 * self.xi10 * C + self.xi20 * S

    def dxi1(self, t):
        S, _, dS = self._basis(t)
        return self.xi10 * dS + (self.xi20 / self.m) * S

    def dxi2(self, t):
        S, _, dS = self._basis(t)
        return -self.V2 * self.xi10 * S + self.xi20 * dS


def analytic_deviation(
    h: HamiltonianSpec, x0: float, xi10: float, xi20: float, tol: float = FIXED_POINT_TOL
) -> DeviationSolution:
    """Deviation vector with ``xi(0) = 0`` and ``dxi/dt(0) = (xi10, xi20)`` at ``(x0, 0)``."""
    v1, v2, _ = h._potential_fn(float(x0), 0.0)
    if abs(v1) > tol:
        raise NotAFixedPoint(float(x0), v1)
    return DeviationSolution(float(x0), h.mass, float(v2), float(xi10), float(xi20))
