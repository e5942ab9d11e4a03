"""Fixed-step RK4 integration of trajectories and of the Jacobi deviation equation.

The deviation equation is integrated together with the second-order lift,

    dx/dt = y,   dy/dt = -2 G(x, y),
    d2xi/dt2 = -2 N(x, y) dxi/dt - 2 (dG/dx)(x, y) xi,

as one 8-dimensional system so the coefficients are always evaluated on the
current base state.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .expr import EvalError
from .kcc import SystemSpec, TangentPoint, eig2, kcc_data

__all__ = [
    "IntegratorConfig",
    "NonFinite",
    "Trajectory",
    "DeviationTrace",
    "LinearizationCheck",
    "FocusingReport",
    "EmptyWindow",
    "rk4",
    "integrate_trajectory",
    "integrate_lift",
    "integrate_deviation",
    "variational_crosscheck",
    "linearization_check",
    "focusing_report",
    "energy_drift",
    "write_trace_csv",
    "TRACE_HEADER",
]

TRACE_HEADER = ("t", "x1", "x2", "y1", "y2", "xi1", "xi2", "dxi1", "dxi2", "xinorm", "ratio")


class NonFinite(ArithmeticError):
    def __init__(self, t: float):
        self.t = t
        super().__init__(f"non-finite state at t = {t!r}")


class EmptyWindow(ValueError):
    pass


@dataclass(frozen=True)
class IntegratorConfig:
    """Fixed-step RK4 settings.

    The number of steps is ``ceil(t_end / h)`` and the step actually used is
    ``t_end / steps``, so the final time is hit exactly.
    """

    t_end: float
    h: float = 1e-3
    record_stride: int = 1
    method: str = "rk4"

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError(f"step h must be positive, got {self.h!r}")
        if not self.t_end > 0:
            raise ValueError(f"t_end must be positive, got {self.t_end!r}")
        if int(self.record_stride) != self.record_stride or self.record_stride < 1:
            raise ValueError(f"record_stride must be a positive integer, got {self.record_stride!r}")
        if self.method != "rk4":
            raise ValueError(f"only the fixed-step rk4 method is available, got {self.method!r}")

    @property
    def steps(self) -> int:
        return max(1, math.ceil(self.t_end / self.h - 1e-9))

    @property
    def step(self) -> float:
        return self.t_end / self.steps


def rk4(
    rhs: Callable[[list], list], y0: Sequence[float], h: float, steps: int, stride: int = 1
) -> tuple[np.ndarray, np.ndarray, NonFinite | None]:
    """Classical fixed-step Runge-Kutta.

    Returns recorded times, recorded states and the :class:`NonFinite`
    error that truncated the run, if any. The final state is always recorded.
    """
    y = [float(v) for v in y0]
    n = len(y)
    times, states = [0.0], [list(y)]
    half, sixth = 0.5 * h, h / 6.0
    error = None
    for i in range(1, steps + 1):
        try:
            k1 = rhs(y)
            k2 = rhs([y[j] + half * k1[j] for j in range(n)])
            k3 = rhs([y[j] + half * k2[j] for j in range(n)])
            k4 = rhs([y[j] + h * k3[j] for j in range(n)])
        except (EvalError, OverflowError):
            error = NonFinite(i * h)
            break
        y = [y[j] + sixth * (k1[j] + 2.0 * (k2[j] + k3[j]) + k4[j]) for j in range(n)]
        if not all(math.isfinite(v) for v in y):
            error = NonFinite(i * h)
            break
        if i % stride == 0 or i == steps:
            times.append(i * h)
            states.append(list(y))
    return np.array(times), np.array(states), error


@dataclass
class Trajectory:
    t: np.ndarray
    states: np.ndarray
    error: NonFinite | None = None

    @property
    def truncated(self) -> bool:
        return self.error is not None


def integrate_trajectory(sys: SystemSpec, x0: Sequence[float], cfg: IntegratorConfig) -> Trajectory:
    """RK4 on ``dx/dt = F(x)``."""
    fn = sys._rhs_fn

    def rhs(s):
        return fn(s[0], s[1])

    t, states, err = rk4(rhs, x0, cfg.step, cfg.steps, cfg.record_stride)
    return Trajectory(t, states, err)


def _lift_rhs(sys: SystemSpec):
    fn = sys._deviation_fn

    def rhs(s):
        x1, x2, y1, y2 = s[0], s[1], s[2], s[3]
        v = fn(x1, x2, y1, y2)
        return [y1, y2, -2.0 * v[0], -2.0 * v[1]]

    return rhs


def integrate_lift(
    sys: SystemSpec, x0: Sequence[float], y0: Sequence[float], cfg: IntegratorConfig
) -> Trajectory:
    """RK4 on the second-order lift with state ``(x1, x2, y1, y2)``."""
    t, states, err = rk4(_lift_rhs(sys), [*x0, *y0], cfg.step, cfg.steps, cfg.record_stride)
    return Trajectory(t, states, err)


@dataclass
class DeviationTrace:
    t: np.ndarray
    state: np.ndarray  # (n, 4): x1, x2, y1, y2
    deviation: np.ndarray  # (n, 4): xi1, xi2, dxi1, dxi2
    W: tuple[float, float]
    p0_eigenvalues: tuple[complex, complex]
    error: NonFinite | None = None

    @property
    def xinorm(self) -> np.ndarray:
        return np.hypot(self.deviation[:, 0], self.deviation[:, 1])

    @property
    def ratio(self) -> np.ndarray:
        t = self.t
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(t > 0, self.xinorm / np.where(t > 0, t * t, 1.0), np.nan)

    @property
    def truncated(self) -> bool:
        return self.error is not None


def integrate_deviation(
    sys: SystemSpec,
    x0: Sequence[float],
    W: Sequence[float],
    cfg: IntegratorConfig,
    y0: Sequence[float] | None = None,
) -> DeviationTrace:
    """Integrate the base trajectory and the deviation vector together.

    ``xi(0) = 0`` and ``dxi/dt(0) = W``; ``W`` must be non-zero. The base
    velocity defaults to ``F(x0)``.
    """
    W = (float(W[0]), float(W[1]))
    if W == (0.0, 0.0):
        raise ValueError("initial deviation velocity W must be non-zero")
    if y0 is None:
        y0 = sys.velocity(x0[0], x0[1])
    fn = sys._deviation_fn

    def rhs(s):
        x1, x2, y1, y2, xi1, xi2, d1, d2 = s
        G1, G2, N11, N12, N21, N22, g11, g12, g21, g22 = fn(x1, x2, y1, y2)
        return [
            y1,
            y2,
            -2.0 * G1,
            -2.0 * G2,
            d1,
            d2,
            -2.0 * (N11 * d1 + N12 * d2) - 2.0 * (g11 * xi1 + g12 * xi2),
            -2.0 * (N21 * d1 + N22 * d2) - 2.0 * (g21 * xi1 + g22 * xi2),
        ]

    start = [float(x0[0]), float(x0[1]), float(y0[0]), float(y0[1]), 0.0, 0.0, W[0], W[1]]
    t, states, err = rk4(rhs, start, cfg.step, cfg.steps, cfg.record_stride)
    P0 = kcc_data(sys, TangentPoint(*start[:4])).P
    return DeviationTrace(t, states[:, :4], states[:, 4:], W, eig2(P0), err)


def variational_crosscheck(
    sys: SystemSpec,
    x0: Sequence[float],
    W: Sequence[float],
    eta: float,
    cfg: IntegratorConfig,
) -> float:
    """``max_t |(x_eta(t) - x(t))/eta - xi(t)|`` for a finitely perturbed trajectory.

    The perturbed trajectory of the lift starts at ``x0`` with velocity
    ``F(x0) + eta W``; the discrepancy is first order in ``eta``.
    """
    if not 0 < eta <= 1e-3:
        raise ValueError(f"eta must lie in (0, 1e-3], got {eta!r}")
    y0 = sys.velocity(x0[0], x0[1])
    dev = integrate_deviation(sys, x0, W, cfg)
    pert = integrate_lift(sys, x0, (y0[0] + eta * W[0], y0[1] + eta * W[1]), cfg)
    for run in (dev, pert):
        if run.error is not None:
            raise run.error
    diff = (pert.states[:, :2] - dev.state[:, :2]) / eta - dev.deviation[:, :2]
    return float(np.max(np.hypot(diff[:, 0], diff[:, 1])))


@dataclass(frozen=True)
class LinearizationCheck:
    eta: float
    discrepancy: float
    discrepancy_half: float

    @property
    def ratio(self) -> float:
        return self.discrepancy / self.discrepancy_half

    @property
    def first_order(self) -> bool:
        return 1.5 <= self.ratio <= 2.5


def linearization_check(
    sys: SystemSpec, x0: Sequence[float], W: Sequence[float], eta: float, cfg: IntegratorConfig
) -> LinearizationCheck:
    """Discrepancy at ``eta`` and ``eta / 2``; a ratio near 2 confirms first order."""
    return LinearizationCheck(
        eta,
        variational_crosscheck(sys, x0, W, eta, cfg),
        variational_crosscheck(sys, x0, W, 0.5 * eta, cfg),
    )


@dataclass
class FocusingReport:
    t: np.ndarray
    xinorm: np.ndarray
    ratio: np.ndarray
    max_re_eig_p0: float
    expectation: str
    ratio_increasing: bool
    below_t_squared: bool
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "window": [float(self.t[0]), float(self.t[-1])],
            "samples": int(len(self.t)),
            "max_re_eig_P0": self.max_re_eig_p0,
            "expectation": self.expectation,
            "ratio_increasing": self.ratio_increasing,
            "norm_below_t_squared": self.below_t_squared,
            "xinorm_range": [float(self.xinorm.min()), float(self.xinorm.max())],
            "ratio_range": [float(self.ratio.min()), float(self.ratio.max())],
            "notes": list(self.notes),
        }


def focusing_report(
    trace: DeviationTrace, window: tuple[float, float], eps: float = 1e-10
) -> FocusingReport:
    """Summarise bunching/dispersing behaviour over ``window``.

    The eigenvalue sign of ``P`` at ``t = 0`` gives the expectation; the
    raw ``|xi| / t^2`` comparison is reported next to it but not used for
    the verdict, since ``|xi| ~ |W| t`` near ``t = 0``.
    """
    t_min, t_max = float(window[0]), float(window[1])
    if not t_min > 0 or t_max < t_min:
        raise EmptyWindow(f"window must satisfy 0 < t_min <= t_max, got {window!r}")
    mask = (trace.t >= t_min) & (trace.t <= t_max)
    if not mask.any():
        raise EmptyWindow(f"no recorded samples in {window!r}")
    norms = trace.xinorm[mask]
    ratios = trace.ratio[mask]
    top = max(m.real for m in trace.p0_eigenvalues)
    if top < -eps:
        expectation = "bunching expected"
    elif top > eps:
        expectation = "dispersing expected"
    else:
        expectation = "indeterminate"
    return FocusingReport(
        t=trace.t[mask],
        xinorm=norms,
        ratio=ratios,
        max_re_eig_p0=float(top),
        expectation=expectation,
        ratio_increasing=bool(np.all(np.diff(ratios) > 0)),
        below_t_squared=bool(np.all(ratios < 1.0)),
        notes=["verdict from the sign of Re eig P at t = 0; |xi|/t^2 is informational"],
    )


def energy_drift(h, x0: Sequence[float], cfg: IntegratorConfig) -> float:
    """``max_t |H(x(t)) - H(x(0))|`` along an RK4 trajectory of Hamilton's equations."""
    from .hamiltonian import to_system

    traj = integrate_trajectory(to_system(h), x0, cfg)
    energy = h.energy_fn
    e0 = energy(*traj.states[0])
    return max(abs(energy(a, b) - e0) for a, b in traj.states)


def write_trace_csv(trace: DeviationTrace, path) -> None:
    """Write a deviation trace with full double precision."""
    norms, ratios = trace.xinorm, trace.ratio
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for i, t in enumerate(trace.t):
            row = [t, *trace.state[i], *trace.deviation[i], norms[i], ratios[i]]
            w.writerow([f"{v:.17g}" for v in row])
