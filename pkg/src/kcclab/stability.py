"""Fixed points and their Lyapunov and Jacobi classification."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .expr import EvalError
from .kcc import SystemSpec, eig2, jacobian

__all__ = [
    "EPS_CLS",
    "LyapunovClass",
    "JacobiClass",
    "FixedPointReport",
    "NoConvergence",
    "SingularJacobian",
    "find_fixed_points",
    "lyapunov_classify",
    "is_borderline",
    "jacobi_classify",
    "theorem41_consistent",
    "curvature_scalars",
    "classify_fixed_point",
    "classify_all",
]

EPS_CLS = 1e-10
DEDUP_DISTANCE = 1e-8
MAX_NEWTON_ITER = 100
MAX_HALVINGS = 20
SINGULAR_DET = 1e-14


class LyapunovClass(str, Enum):
    STABLE_NODE = "stable-node"
    UNSTABLE_NODE = "unstable-node"
    SADDLE = "saddle"
    STABLE_FOCUS = "stable-focus"
    UNSTABLE_FOCUS = "unstable-focus"
    CENTER = "center"
    DEGENERATE_NODE = "degenerate-node"
    STAR_NODE = "star-node"
    NON_HYPERBOLIC_DEGENERATE = "non-hyperbolic-degenerate"


class JacobiClass(str, Enum):
    STABLE = "jacobi-stable"
    UNSTABLE = "jacobi-unstable"
    MARGINAL = "marginal"


class NoConvergence(RuntimeError):
    def __init__(self, seed, iterations: int = MAX_NEWTON_ITER, reason: str = ""):
        self.seed = tuple(float(s) for s in seed)
        self.iterations = iterations
        self.reason = reason
        tail = f": {reason}" if reason else ""
        super().__init__(f"Newton did not converge from seed {self.seed} after {iterations} iterations{tail}")


class SingularJacobian(RuntimeError):
    def __init__(self, point, det: float):
        self.point = tuple(float(p) for p in point)
        self.det = float(det)
        super().__init__(f"singular Jacobian at {self.point} (det = {self.det:.3g})")


# ---------------------------------------------------------------------------
# fixed points


def _residual(sys: SystemSpec, x) -> float:
    try:
        f, g = sys.velocity(x[0], x[1])
    except EvalError:
        return math.inf
    r = max(abs(f), abs(g))
    return r if math.isfinite(r) else math.inf


def _newton(sys: SystemSpec, seed, tol: float, diagnostics: list):
    x = np.array(seed, dtype=float)
    r = _residual(sys, x)
    for it in range(MAX_NEWTON_ITER + 1):
        if r <= tol:
            return x
        if it == MAX_NEWTON_ITER or not math.isfinite(r):
            break
        J = jacobian(sys, x[0], x[1])
        det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
        if not abs(det) >= SINGULAR_DET:
            diagnostics.append(SingularJacobian(x, det))
            return None
        F = np.array(sys.velocity(x[0], x[1]))
        step = np.linalg.solve(J, -F)
        lam = 1.0
        for _ in range(MAX_HALVINGS + 1):
            trial = x + lam * step
            r_trial = _residual(sys, trial)
            if r_trial < r:
                break
            lam *= 0.5
        x, r = trial, r_trial
    diagnostics.append(NoConvergence(seed, MAX_NEWTON_ITER))
    return None


def _merge_roots(sys: SystemSpec, found: list) -> list:
    """Merge roots closer than DEDUP_DISTANCE, independent of input order.

    Clusters are connected components of the closeness graph; each is
    represented by its smallest-residual member (ties broken by coordinates).
    """
    parent = list(range(len(found)))

    def root(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(len(found)):
        for j in range(i):
            if np.linalg.norm(found[i] - found[j]) < DEDUP_DISTANCE:
                parent[root(i)] = root(j)
    clusters: dict[int, list] = {}
    for i, r in enumerate(found):
        clusters.setdefault(root(i), []).append(r)
    reps = [
        min(members, key=lambda r: (_residual(sys, r), float(r[0]), float(r[1])))
        for members in clusters.values()
    ]
    return sorted(reps, key=lambda r: (r[0], r[1]))


def find_fixed_points(
    sys: SystemSpec,
    seeds: Iterable[Sequence[float]],
    tol: float = 1e-12,
    diagnostics: list | None = None,
) -> list[tuple[float, float]]:
    """Roots of ``(f, g)`` by damped Newton iteration from each seed.

    Converged roots closer than 1e-8 are merged and the result is sorted, so
    the outcome does not depend on seed order. Seeds that fail are recorded
    in ``diagnostics`` as :class:`NoConvergence` or :class:`SingularJacobian`
    instances; so are converged roots whose Jacobian is singular.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    diagnostics = [] if diagnostics is None else diagnostics
    found = [r for r in (_newton(sys, seed, tol, diagnostics) for seed in seeds) if r is not None]
    roots = _merge_roots(sys, found)
    for r in roots:
        J = jacobian(sys, r[0], r[1])
        det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
        if abs(det) < SINGULAR_DET:
            diagnostics.append(SingularJacobian(r, det))
    return [(float(r[0]), float(r[1])) for r in roots]


# ---------------------------------------------------------------------------
# classification


def _trace_det_disc(A) -> tuple[float, float, float]:
    (a, b), (c, d) = np.asarray(A, dtype=float)
    return a + d, a * d - b * c, (a - d) ** 2 + 4.0 * b * c


def is_borderline(A, eps: float = EPS_CLS) -> bool:
    """Whether trace, determinant or discriminant sits inside the tolerance band."""
    return any(abs(v) <= eps for v in _trace_det_disc(A))


def lyapunov_classify(A, eps: float = EPS_CLS) -> LyapunovClass:
    """Linear-stability type of a fixed point with Jacobian ``A``.

    Values within ``eps`` of zero are treated as zero.
    """
    A = np.asarray(A, dtype=float)
    tr, det, disc = _trace_det_disc(A)
    if abs(det) <= eps:
        return LyapunovClass.NON_HYPERBOLIC_DEGENERATE
    if disc > eps:
        if det < 0:
            return LyapunovClass.SADDLE
        return LyapunovClass.STABLE_NODE if tr < 0 else LyapunovClass.UNSTABLE_NODE
    if disc < -eps:
        if abs(tr) <= eps:
            return LyapunovClass.CENTER
        return LyapunovClass.STABLE_FOCUS if tr < 0 else LyapunovClass.UNSTABLE_FOCUS
    # repeated eigenvalue: two independent eigenvectors only for A = lambda I
    lam = 0.5 * tr
    if np.all(np.abs(A - lam * np.eye(2)) <= eps):
        return LyapunovClass.STAR_NODE
    return LyapunovClass.DEGENERATE_NODE


def jacobi_classify(A, eps: float = EPS_CLS) -> tuple[JacobiClass, complex, complex]:
    """Jacobi class at a fixed point from the eigenvalues of ``P0 = (A/2)^2``."""
    half = 0.5 * np.asarray(A, dtype=float)
    P0 = half @ half
    mu1, mu2 = eig2(P0)
    top = max(mu1.real, mu2.real)
    if top < -eps:
        cls = JacobiClass.STABLE
    elif top > eps:
        cls = JacobiClass.UNSTABLE
    else:
        cls = JacobiClass.MARGINAL
    return cls, mu1, mu2


def theorem41_consistent(A, cls: JacobiClass, eps: float = EPS_CLS) -> bool:
    """Cross-check a Jacobi verdict against the sign rules for planar fixed points.

    A Jacobi-stable point must have a negative discriminant; with complex
    eigenvalues ``alpha +- i beta`` the verdict follows ``alpha^2 - beta^2``.
    """
    tr, _, disc = _trace_det_disc(A)
    if disc >= eps and cls is JacobiClass.STABLE:
        return False
    if disc < -eps:
        alpha = 0.5 * tr
        # Re mu = (alpha^2 - beta^2) / 4 with beta^2 = -disc / 4
        re_mu = 0.25 * (alpha * alpha + 0.25 * disc)
        if cls is JacobiClass.STABLE and re_mu >= 0:
            return False
        if cls is JacobiClass.UNSTABLE and re_mu <= 0:
            return False
        if cls is JacobiClass.MARGINAL and abs(re_mu) > eps * (1 + 1e-6):
            return False
    return True


def curvature_scalars(A) -> tuple[float, float, float]:
    """``(tr P, det P, DeltaTilde)`` from ``A`` via the closed-form identities."""
    tr, det, disc = _trace_det_disc(A)
    return 0.25 * (tr * tr - 2.0 * det), det * det / 16.0, tr * tr * disc / 16.0


@dataclass
class FixedPointReport:
    location: tuple[float, float]
    A: np.ndarray
    trA: float
    detA: float
    Delta: float
    lyapunov_class: LyapunovClass
    borderline: bool
    P0: np.ndarray
    trP: float
    detP: float
    DeltaTilde: float
    mu1: complex
    mu2: complex
    jacobi_class: JacobiClass
    theorem41_consistent: bool
    diagnostics: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "location": list(self.location),
            "A": self.A.tolist(),
            "trA": self.trA,
            "detA": self.detA,
            "Delta": self.Delta,
            "lyapunov_class": self.lyapunov_class.value,
            "borderline": self.borderline,
            "P0": self.P0.tolist(),
            "trP": self.trP,
            "detP": self.detP,
            "DeltaTilde": self.DeltaTilde,
            "mu1": [self.mu1.real, self.mu1.imag],
            "mu2": [self.mu2.real, self.mu2.imag],
            "jacobi_class": self.jacobi_class.value,
            "theorem41_consistent": self.theorem41_consistent,
        }


def classify_fixed_point(A, location=(0.0, 0.0)) -> FixedPointReport:
    A = np.asarray(A, dtype=float)
    tr, det, disc = _trace_det_disc(A)
    half = 0.5 * A
    P0 = half @ half
    trP = float(P0[0, 0] + P0[1, 1])
    # det(P0) = det(A/2)^2; the cofactor form on rounded P0 entries cancels badly
    detP = float((0.25 * det) ** 2)
    jcls, mu1, mu2 = jacobi_classify(A)
    return FixedPointReport(
        location=(float(location[0]), float(location[1])),
        A=A,
        trA=float(tr),
        detA=float(det),
        Delta=float(disc),
        lyapunov_class=lyapunov_classify(A),
        borderline=is_borderline(A),
        P0=P0,
        trP=trP,
        detP=detP,
        DeltaTilde=float((P0[0, 0] - P0[1, 1]) ** 2 + 4.0 * P0[0, 1] * P0[1, 0]),
        mu1=mu1,
        mu2=mu2,
        jacobi_class=jcls,
        theorem41_consistent=theorem41_consistent(A, jcls),
    )


def classify_all(
    sys: SystemSpec,
    seeds: Iterable[Sequence[float]],
    tol: float = 1e-12,
    diagnostics: list | None = None,
) -> list[FixedPointReport]:
    """Find fixed points from ``seeds`` and classify each one."""
    diagnostics = [] if diagnostics is None else diagnostics
    points = find_fixed_points(sys, seeds, tol, diagnostics)
    reports = []
    for p in points:
        report = classify_fixed_point(jacobian(sys, *p), p)
        report.diagnostics = [
            d for d in diagnostics if isinstance(d, SingularJacobian) and d.point == p
        ]
        reports.append(report)
    return reports
