"""Jacobi (KCC) and Lyapunov stability analysis of planar autonomous systems."""

from .expr import diff, evaluate, parse, simplify, to_text
from .kcc import SystemSpec, TangentPoint, kcc_data
from .stability import classify_all, jacobi_classify, lyapunov_classify
from .hamiltonian import HamiltonianSpec, to_system
from .estimator import KCCStabilityAnalyzer

__version__ = "0.1.0"

__all__ = [
    "parse",
    "diff",
    "evaluate",
    "simplify",
    "to_text",
    "SystemSpec",
    "TangentPoint",
    "kcc_data",
    "classify_all",
    "jacobi_classify",
    "lyapunov_classify",
    "HamiltonianSpec",
    "to_system",
    "KCCStabilityAnalyzer",
]
