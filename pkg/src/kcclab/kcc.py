"""KCC geometry of a planar first-order system.

The system ``dx/dt = F(x)`` with ``F = (f, g)`` is lifted to second order by
differentiating in time, ``d2x/dt2 = J(x) y`` with ``y = dx/dt``. Written as
``d2x^i/dt2 + 2 G^i(x, y) = 0`` this gives the spray coefficients
``G = -1/2 J y``, from which every object below is derived symbolically.

Index convention for the returned arrays: the first axis is the upper
index, so ``N[i, j]`` is ``N^i_j`` and ``berwald[i, j, l]`` is ``G^i_{jl}``.
"""

from __future__ import annotations

import math

from dataclasses import dataclass, field
from functools import cached_property
from types import MappingProxyType
from typing import Any, Mapping, Sequence

import numpy as np

from .expr import (
    Binary,
    Const,
    Expr,
    Var,
    compile_exprs,
    diff,
    parameters,
    parse,
    simplify,
    to_text,
)

__all__ = [
    "AUTONOMOUS_ASSUMPTION",
    "SystemSpec",
    "TangentPoint",
    "KccData",
    "SecondOrderLift",
    "lift",
    "jacobian",
    "connection",
    "first_invariant",
    "deviation_curvature",
    "deviation_curvature_blocks",
    "higher_invariants",
    "kcc_data",
    "eig2",
    "curvature_fields",
    "symbolic_zero",
]

AUTONOMOUS_ASSUMPTION = "autonomous system: the dN/dt term of the deviation curvature is identically zero"

X1, X2, Y1, Y2 = Var(1), Var(2), Var(3), Var(4)
_X = (X1, X2)
_Y = (Y1, Y2)
_IDX = (0, 1)


def _add(a: Expr, b: Expr) -> Expr:
    return Binary("add", a, b)


def _mul(a: Expr, b: Expr) -> Expr:
    return Binary("mul", a, b)


def _sum(terms: Sequence[Expr]) -> Expr:
    out = terms[0]
    for t in terms[1:]:
        out = _add(out, t)
    return simplify(out)


def eig2(m) -> tuple[complex, complex]:
    """Eigenvalues of a real 2x2 matrix in closed form.

    Uses the discriminant ``(a - d)^2 + 4 b c``, which avoids the cancellation
    in ``tr^2 - 4 det``, and the ``q = (tr + sign(tr) sqrt(disc)) / 2``,
    ``det / q`` pairing for real roots.
    """
    (a, b), (c, d) = m
    a, b, c, d = float(a), float(b), float(c), float(d)
    big = max(abs(a), abs(b), abs(c), abs(d))
    if big == 0.0:
        return complex(0.0), complex(0.0)
    if math.isfinite(big):
        # power-of-two scaling is exact and keeps squares away from under/overflow
        e = math.frexp(big)[1]
        if e < -400 or e > 400:
            mu1, mu2 = eig2(((math.ldexp(a, -e), math.ldexp(b, -e)), (math.ldexp(c, -e), math.ldexp(d, -e))))
            return complex(math.ldexp(mu1.real, e), math.ldexp(mu1.imag, e)), complex(
                math.ldexp(mu2.real, e), math.ldexp(mu2.imag, e)
            )
    tr = a + d
    disc = (a - d) ** 2 + 4.0 * b * c
    if disc >= 0.0:
        root = disc**0.5
        q = 0.5 * (tr + (root if tr >= 0 else -root))
        if q == 0.0:
            return complex(0.0), complex(0.0)
        other = (a * d - b * c) / q
        hi, lo = (q, other) if q >= other else (other, q)
        return complex(hi), complex(lo)
    half = 0.5 * tr
    im = 0.5 * (-disc) ** 0.5
    return complex(half, im), complex(half, -im)


@dataclass(frozen=True)
class SystemSpec:
    """The planar system ``dx1/dt = f``, ``dx2/dt = g``.

    Symbolic derivatives are computed on first use and cached; the instance
    is otherwise immutable.
    """

    f: Expr
    g: Expr
    params: Mapping[str, float] = field(default_factory=dict)
    origin: Any = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "params", MappingProxyType(dict(self.params)))
        missing = (parameters(self.f) | parameters(self.g)) - set(self.params)
        if missing:
            raise ValueError(f"unbound parameters: {', '.join(sorted(missing))}")

    @classmethod
    def from_text(cls, f: str, g: str, params: Mapping[str, float] | None = None) -> "SystemSpec":
        params = dict(params or {})
        return cls(parse(f, params), parse(g, params), params)

    @property
    def rhs(self) -> tuple[Expr, Expr]:
        return (self.f, self.g)

    def describe(self) -> dict:
        return {"f": to_text(self.f), "g": to_text(self.g), "params": dict(self.params)}

    # -- symbolic pieces -------------------------------------------------

    @cached_property
    def jacobian_exprs(self) -> tuple[tuple[Expr, Expr], tuple[Expr, Expr]]:
        return tuple(tuple(diff(F, k + 1) for k in _IDX) for F in self.rhs)

    @cached_property
    def hessian_exprs(self) -> tuple:
        """``hess[i][j][k] = d2 F_i / dx_j dx_k``."""
        J = self.jacobian_exprs
        return tuple(tuple(tuple(diff(J[i][j], k + 1) for k in _IDX) for j in _IDX) for i in _IDX)

    @cached_property
    def spray(self) -> tuple[Expr, Expr]:
        J = self.jacobian_exprs
        return tuple(
            simplify(_mul(Const(-0.5), _add(_mul(J[i][0], Y1), _mul(J[i][1], Y2)))) for i in _IDX
        )

    @cached_property
    def connection_exprs(self) -> tuple:
        G = self.spray
        return tuple(tuple(diff(G[i], 3 + j) for j in _IDX) for i in _IDX)

    @cached_property
    def berwald_exprs(self) -> tuple:
        N = self.connection_exprs
        return tuple(
            tuple(tuple(diff(N[i][j], 3 + l) for l in _IDX) for j in _IDX) for i in _IDX
        )

    @cached_property
    def first_invariant_exprs(self) -> tuple[Expr, Expr]:
        G, N = self.spray, self.connection_exprs
        return tuple(
            simplify(
                Binary(
                    "sub",
                    _mul(Const(2.0), G[i]),
                    _add(_mul(N[i][0], Y1), _mul(N[i][1], Y2)),
                )
            )
            for i in _IDX
        )

    @cached_property
    def spray_x_derivs(self) -> tuple:
        """``dGdx[i][j] = dG^i/dx^j``."""
        G = self.spray
        return tuple(tuple(diff(G[i], j + 1) for j in _IDX) for i in _IDX)

    @cached_property
    def curvature_exprs(self) -> tuple:
        G, N, B, dG = self.spray, self.connection_exprs, self.berwald_exprs, self.spray_x_derivs
        P = []
        for i in _IDX:
            row = []
            for j in _IDX:
                terms = [_mul(Const(-2.0), dG[i][j])]
                terms += [_mul(Const(-2.0), _mul(G[l], B[i][j][l])) for l in _IDX]
                terms += [_mul(_Y[l], diff(N[i][j], l + 1)) for l in _IDX]
                terms += [_mul(N[i][l], N[l][j]) for l in _IDX]
                row.append(_sum(terms))
            P.append(tuple(row))
        return tuple(P)

    @cached_property
    def curvature_trace_expr(self) -> Expr:
        P = self.curvature_exprs
        return simplify(_add(P[0][0], P[1][1]))

    @cached_property
    def third_invariant_exprs(self) -> tuple:
        P = self.curvature_exprs
        third = Const(1.0 / 3.0)
        return tuple(
            tuple(
                tuple(
                    simplify(
                        _mul(third, Binary("sub", diff(P[i][j], 3 + k), diff(P[i][k], 3 + j)))
                    )
                    for k in _IDX
                )
                for j in _IDX
            )
            for i in _IDX
        )

    @cached_property
    def fourth_invariant_exprs(self) -> tuple:
        P3 = self.third_invariant_exprs
        return tuple(
            tuple(tuple(tuple(diff(P3[i][j][k], 3 + l) for l in _IDX) for k in _IDX) for j in _IDX)
            for i in _IDX
        )

    @cached_property
    def douglas_exprs(self) -> tuple:
        B = self.berwald_exprs
        return tuple(
            tuple(tuple(tuple(diff(B[i][j][k], 3 + l) for l in _IDX) for k in _IDX) for j in _IDX)
            for i in _IDX
        )

    # -- compiled evaluators ---------------------------------------------

    @cached_property
    def _rhs_fn(self):
        return compile_exprs(self.rhs, self.params)

    @cached_property
    def _jac_fn(self):
        J = self.jacobian_exprs
        return compile_exprs([J[0][0], J[0][1], J[1][0], J[1][1]], self.params)

    @cached_property
    def _kcc_fn(self):
        return compile_exprs(_flatten(self._kcc_tree()), self.params)

    @cached_property
    def _kcc_vec_fn(self):
        P = self.curvature_exprs
        return compile_exprs([P[0][0], P[0][1], P[1][0], P[1][1]], self.params, vectorized=True)

    @cached_property
    def _deviation_fn(self):
        G, N, dG = self.spray, self.connection_exprs, self.spray_x_derivs
        return compile_exprs(list(G) + _flatten(N) + _flatten(dG), self.params)

    def _kcc_tree(self):
        return (
            self.jacobian_exprs,
            self.spray,
            self.connection_exprs,
            self.berwald_exprs,
            self.first_invariant_exprs,
            self.curvature_exprs,
            self.third_invariant_exprs,
            self.fourth_invariant_exprs,
            self.douglas_exprs,
        )

    def velocity(self, x1: float, x2: float) -> tuple[float, float]:
        """``F(x)``, i.e. the velocity of the flow at ``x``."""
        return self._rhs_fn(x1, x2)


def _flatten(tree) -> list:
    if isinstance(tree, tuple):
        return [leaf for sub in tree for leaf in _flatten(sub)]
    return [tree]


_KCC_SHAPES = {
    "J": (2, 2),
    "G": (2,),
    "N": (2, 2),
    "berwald": (2, 2, 2),
    "epsilon": (2,),
    "P": (2, 2),
    "P3": (2, 2, 2),
    "P4": (2, 2, 2, 2),
    "douglas": (2, 2, 2, 2),
}


@dataclass(frozen=True)
class TangentPoint:
    x1: float
    x2: float
    y1: float = 0.0
    y2: float = 0.0

    @classmethod
    def on_flow(cls, sys: SystemSpec, x1: float, x2: float) -> "TangentPoint":
        """The lift of a state point: velocity equal to the vector field there."""
        y1, y2 = sys.velocity(x1, x2)
        return cls(x1, x2, y1, y2)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.x2, self.y1, self.y2)


@dataclass(frozen=True)
class KccData:
    """Every KCC object of a system evaluated at one tangent point."""

    point: TangentPoint
    J: np.ndarray
    G: np.ndarray
    N: np.ndarray
    berwald: np.ndarray
    epsilon: np.ndarray
    P: np.ndarray
    P3: np.ndarray
    P4: np.ndarray
    douglas: np.ndarray
    assumptions: tuple[str, ...] = (AUTONOMOUS_ASSUMPTION,)

    @property
    def curvature_eigenvalues(self) -> tuple[complex, complex]:
        return eig2(self.P)

    def to_dict(self) -> dict:
        out: dict = {"point": list(self.point.as_tuple())}
        for name in _KCC_SHAPES:
            out[name] = getattr(self, name).tolist()
        mu = self.curvature_eigenvalues
        out["trP"] = float(np.trace(self.P))
        out["detP"] = _det2(self.P)
        out["eigenvalues_P"] = [[m.real, m.imag] for m in mu]
        out["assumptions"] = list(self.assumptions)
        return out


def _det2(m) -> float:
    return float(m[0][0] * m[1][1] - m[0][1] * m[1][0])


@dataclass(frozen=True)
class SecondOrderLift:
    """``d2x^i/dt2 + 2 G^i(x, y) = 0`` with ``G`` as expressions in x1, x2, y1, y2."""

    G: tuple[Expr, Expr]

    def text(self) -> tuple[str, str]:
        return tuple(to_text(g) for g in self.G)


def lift(sys: SystemSpec) -> SecondOrderLift:
    return SecondOrderLift(sys.spray)


def jacobian(sys: SystemSpec, x1: float, x2: float) -> np.ndarray:
    return np.array(sys._jac_fn(x1, x2), dtype=float).reshape(2, 2)


def kcc_data(sys: SystemSpec, pt: TangentPoint) -> KccData:
    values = sys._kcc_fn(*pt.as_tuple())
    arrays = {}
    pos = 0
    for name, shape in _KCC_SHAPES.items():
        size = int(np.prod(shape))
        arrays[name] = np.array(values[pos : pos + size], dtype=float).reshape(shape)
        pos += size
    return KccData(point=pt, **arrays)


def connection(sys: SystemSpec, pt: TangentPoint) -> np.ndarray:
    return kcc_data(sys, pt).N


def first_invariant(sys: SystemSpec, pt: TangentPoint) -> np.ndarray:
    return kcc_data(sys, pt).epsilon


def deviation_curvature(sys: SystemSpec, pt: TangentPoint) -> np.ndarray:
    """Deviation curvature tensor ``P^i_j`` from the general KCC formula."""
    return kcc_data(sys, pt).P


def deviation_curvature_blocks(sys: SystemSpec, pt: TangentPoint) -> np.ndarray:
    """Second route to ``P``: half the Hessian-times-velocity block plus ``J^2 / 4``.

    Row ``i`` of the block is ``(Hess(F_i) y)^T``; this is the reading of the
    transposed block layout that agrees with the general formula.
    """
    hess = sys.hessian_exprs
    y = np.array([pt.y1, pt.y2])
    H = np.array(
        compile_exprs(_flatten(hess), sys.params)(pt.x1, pt.x2), dtype=float
    ).reshape(2, 2, 2)
    J = jacobian(sys, pt.x1, pt.x2)
    block = np.stack([H[0] @ y, H[1] @ y])
    return 0.5 * block + 0.25 * (J @ J)


def higher_invariants(sys: SystemSpec, pt: TangentPoint) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Third invariant (torsion), fourth invariant and Douglas tensor."""
    data = kcc_data(sys, pt)
    return data.P3, data.P4, data.douglas


def curvature_fields(sys: SystemSpec, x1, x2, y1, y2) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized ``(max Re eig P, tr P, det P)`` over arrays of tangent points."""
    with np.errstate(all="ignore"):
        p11, p12, p21, p22 = (np.asarray(v, dtype=float) for v in sys._kcc_vec_fn(x1, x2, y1, y2))
        tr = p11 + p22
        det = p11 * p22 - p12 * p21
        disc = (p11 - p22) ** 2 + 4.0 * p12 * p21
        root = np.sqrt(np.where(disc > 0, disc, 0.0))
        # same pairing as eig2: with tr < 0 the larger real root is det / q
        q = 0.5 * (tr - root)
        paired = np.where(q != 0.0, det / np.where(q != 0.0, q, 1.0), 0.0)
        max_re = np.where((disc > 0) & (tr < 0), paired, 0.5 * (tr + root))
    return max_re, tr, det


def symbolic_zero(exprs) -> bool:
    """True when every expression in a nested tuple is the literal constant 0."""
    return all(isinstance(e, Const) and e.value == 0.0 for e in _flatten(exprs))
