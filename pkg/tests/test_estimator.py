import math

import numpy as np
import pytest
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from kcclab import KCCStabilityAnalyzer, SystemSpec, TangentPoint
from kcclab.kcc import deviation_curvature, eig2


def test_fit_finds_pendulum_points():
    est = KCCStabilityAnalyzer("x2", "-sin(x1)").fit([[0.1, 0.05], [3.0, 0.1]])
    assert est.fixed_points_ == pytest.approx(np.array([[0.0, 0.0], [math.pi, 0.0]]), abs=1e-12)
    assert [r.jacobi_class.value for r in est.reports_] == ["jacobi-stable", "jacobi-unstable"]


def test_transform_matches_functional_api():
    est = KCCStabilityAnalyzer("x2 - x1^2", "sin(x1)*x2").fit([[0.0, 0.0]])
    X = np.array([[0.3, -0.7, 1.1, 0.4], [1.0, 0.5, -0.2, 0.0]])
    feats = est.transform(X)
    sys = SystemSpec.from_text("x2 - x1^2", "sin(x1)*x2")
    for row, x in zip(feats, X):
        P = deviation_curvature(sys, TangentPoint(*x))
        assert row[0] == max(m.real for m in eig2(P))
        assert row[1] == pytest.approx(np.trace(P), rel=1e-15)


def test_predict_on_flow_at_fixed_points():
    est = KCCStabilityAnalyzer("x2", "-sin(x1)").fit([[0.1, 0.0]])
    assert est.predict([[0.0, 0.0], [math.pi, 0.0]]).tolist() == ["jacobi-stable", "jacobi-unstable"]


def test_two_column_transform_uses_flow_velocity():
    est = KCCStabilityAnalyzer("x2", "-x1").fit([[1.0, 1.0]])
    assert np.allclose(est.transform([[0.3, 0.2]]), est.transform([[0.3, 0.2, 0.2, -0.3]]))


def test_pipeline_and_params():
    pipe = make_pipeline(KCCStabilityAnalyzer("x2", "-k*x1", params={"k": 4.0}), StandardScaler())
    pipe.fit(np.array([[0.5, 0.5], [0.1, 0.2]]))
    assert pipe.transform(np.random.default_rng(0).normal(size=(5, 2))).shape == (5, 3)
    assert KCCStabilityAnalyzer(f="x1").get_params()["f"] == "x1"


def test_not_fitted_and_bad_shape():
    with pytest.raises(NotFittedError):
        KCCStabilityAnalyzer().transform([[0.0, 0.0]])
    with pytest.raises(ValueError):
        KCCStabilityAnalyzer().fit([[0.0, 0.0, 0.0]])
