"""scikit-learn style wrapper around the fixed-point and curvature analysis.

The functional API in :mod:`kcclab.kcc` and :mod:`kcclab.stability` stays the
primary interface; this class only adapts it to ``fit``/``transform``/
``predict`` so curvature features can be dropped into a pipeline.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .kcc import SystemSpec, curvature_fields
from .stability import EPS_CLS, JacobiClass, classify_all

__all__ = ["KCCStabilityAnalyzer"]


class KCCStabilityAnalyzer(BaseEstimator, TransformerMixin):
    """Jacobi-stability analysis of ``dx1/dt = f``, ``dx2/dt = g``.

    Parameters
    ----------
    f, g : str
        Right-hand sides in the expression grammar.
    params : dict, optional
        Parameter bindings used by ``f`` and ``g``.
    tol : float
        Newton residual tolerance for the fixed-point search.

    Attributes
    ----------
    system_ : SystemSpec
    fixed_points_ : ndarray of shape (n_points, 2)
    reports_ : list of FixedPointReport
    diagnostics_ : list
        Non-converged seeds and singular Jacobians met during ``fit``.
    """

    def __init__(self, f: str = "x2", g: str = "-x1", params=None, tol: float = 1e-12):
        self.f = f
        self.g = g
        self.params = params
        self.tol = tol

    def fit(self, X, y=None):
        """Locate and classify fixed points, using the rows of ``X`` as seeds."""
        X = check_array(X, ensure_min_features=2)
        if X.shape[1] != 2:
            raise ValueError(f"seeds must have 2 columns, got {X.shape[1]}")
        self.system_ = SystemSpec.from_text(self.f, self.g, self.params)
        self.diagnostics_ = []
        self.reports_ = classify_all(self.system_, X.tolist(), self.tol, self.diagnostics_)
        self.fixed_points_ = np.array([r.location for r in self.reports_], dtype=float).reshape(-1, 2)
        self.n_features_in_ = 2
        return self

    def transform(self, X):
        """Curvature features ``[max Re eig P, tr P, det P]`` per tangent point.

        ``X`` has columns ``(x1, x2, y1, y2)``; rows with only ``(x1, x2)``
        are evaluated on the flow, ``y = (f, g)``.
        """
        check_is_fitted(self, "system_")
        X = check_array(X, ensure_min_features=2)
        if X.shape[1] == 2:
            y1, y2 = self._flow(X)
        elif X.shape[1] == 4:
            y1, y2 = X[:, 2], X[:, 3]
        else:
            raise ValueError(f"expected 2 or 4 columns, got {X.shape[1]}")
        fields = curvature_fields(self.system_, X[:, 0], X[:, 1], y1, y2)
        return np.column_stack(fields)

    def predict(self, X):
        """Jacobi class of the deviation curvature on the flow at each state.

        Rows are states ``(x1, x2)``; ``P`` is evaluated at ``y = (f, g)``,
        which at a fixed point reduces to ``(A/2)^2``.
        """
        check_is_fitted(self, "system_")
        X = check_array(X, ensure_min_features=2)
        if X.shape[1] != 2:
            raise ValueError(f"states must have 2 columns, got {X.shape[1]}")
        max_re = self.transform(X)[:, 0]
        out = np.full(max_re.shape, JacobiClass.MARGINAL.value, dtype=object)
        out[max_re < -EPS_CLS] = JacobiClass.STABLE.value
        out[max_re > EPS_CLS] = JacobiClass.UNSTABLE.value
        return out

    def _flow(self, X):
        vals = [self.system_.velocity(a, b) for a, b in X]
        v = np.asarray(vals, dtype=float).reshape(-1, 2)
        return v[:, 0], v[:, 1]
