"""``kcc-lab`` command line: run, scan and validate analysis files.

Exit codes: 0 on success, 1 when some computation produced error
diagnostics (non-converged seeds, singular points, ...), 2 on configuration
errors.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import AnalysisConfig, ConfigError, load_config
from .dynamics import (
    EmptyWindow,
    NonFinite,
    focusing_report,
    integrate_deviation,
    linearization_check,
    write_trace_csv,
)
from .expr import EvalError, compile_exprs, to_text
from .hamiltonian import UnsupportedForm, jacobi_certificate
from .kcc import AUTONOMOUS_ASSUMPTION, curvature_fields, kcc_data, lift
from .stability import NoConvergence, SingularJacobian, classify_all

__all__ = ["main", "run", "run_scan", "build_report", "SCHEMA_ID", "SCAN_HEADER"]

SCHEMA_ID = "kcc-lab/report/1"
SCAN_HEADER = ("x1", "x2", "y1", "y2", "maxRe_eigP", "trP", "detP")
SCAN_CHUNK = 1 << 16

EXIT_OK, EXIT_DIAGNOSTICS, EXIT_CONFIG = 0, 1, 2


def _finite(v):
    """JSON has no NaN/inf; map them to null."""
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, list):
        return [_finite(x) for x in v]
    if isinstance(v, dict):
        return {k: _finite(x) for k, x in v.items()}
    return v


def _diagnostic(exc: Exception, severity: str = "error", **extra) -> dict:
    out = {"severity": severity, "kind": type(exc).__name__, "message": str(exc)}
    out.update(extra)
    return out


def _threads() -> int:
    raw = os.environ.get("KCC_LAB_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return os.cpu_count() or 1


# ---------------------------------------------------------------------------
# individual outputs


def _classify(cfg: AnalysisConfig, diagnostics: list) -> list:
    found: list = []
    reports = classify_all(cfg.system, cfg.seeds, cfg.seed_tol, found)
    for d in found:
        if isinstance(d, SingularJacobian) and any(d.point == r.location for r in reports):
            diagnostics.append(_diagnostic(d, "warning", point=list(d.point)))
        elif isinstance(d, SingularJacobian):
            diagnostics.append(_diagnostic(d, point=list(d.point)))
        elif isinstance(d, NoConvergence):
            diagnostics.append(_diagnostic(d, seed=list(d.seed)))
        else:
            diagnostics.append(_diagnostic(d))
    for r in reports:
        if not r.theorem41_consistent:
            diagnostics.append(
                {
                    "severity": "warning",
                    "kind": "JacobiRuleMismatch",
                    "message": f"Jacobi verdict at {r.location} disagrees with the trace/determinant rules",
                }
            )
    return [r.to_dict() for r in reports]


def _invariants(cfg: AnalysisConfig, diagnostics: list) -> dict:
    G = lift(cfg.system).text()
    points = []
    for pt in cfg.invariant_points:
        try:
            points.append(kcc_data(cfg.system, pt).to_dict())
        except EvalError as exc:
            diagnostics.append(_diagnostic(exc, point=list(pt.as_tuple())))
    return {"spray": list(G), "points": points}


def _deviate(cfg: AnalysisConfig, diagnostics: list) -> dict:
    d = cfg.deviate
    integ = cfg.integrator
    out: dict = {
        "x0": list(d["x0"]),
        "W": list(d["W"]),
        "h": integ.step,
        "steps": integ.steps,
        "t_end": integ.t_end,
        "record_stride": integ.record_stride,
    }
    try:
        trace = integrate_deviation(cfg.system, d["x0"], d["W"], integ)
    except EvalError as exc:
        diagnostics.append(_diagnostic(exc))
        return out
    if trace.error is not None:
        diagnostics.append(_diagnostic(trace.error, t=trace.error.t))
    out["p0_eigenvalues"] = [[m.real, m.imag] for m in trace.p0_eigenvalues]
    out["final"] = {
        "t": float(trace.t[-1]),
        "state": trace.state[-1].tolist(),
        "deviation": trace.deviation[-1].tolist(),
    }
    if "trace" in d:
        write_trace_csv(trace, d["trace"])
        out["trace"] = d["trace"].name
    if "window" in d:
        try:
            out["focusing"] = focusing_report(trace, d["window"]).to_dict()
        except EmptyWindow as exc:
            diagnostics.append(_diagnostic(exc))
    if "eta" in d:
        try:
            check = linearization_check(cfg.system, d["x0"], d["W"], d["eta"], integ)
            out["linearization"] = {
                "eta": check.eta,
                "discrepancy": check.discrepancy,
                "discrepancy_half": check.discrepancy_half,
                "ratio": check.ratio,
            }
        except (NonFinite, EvalError, ZeroDivisionError) as exc:
            diagnostics.append(_diagnostic(exc))
    return out


def _certificate(cfg: AnalysisConfig, diagnostics: list) -> dict | None:
    c = cfg.certificate
    found: list = []
    try:
        cert = jacobi_certificate(
            cfg.hamiltonian,
            c.get("points"),
            seeds=cfg.seeds if "points" not in c else None,
            grid=c.get("grid"),
            diagnostics=found,
        )
    except UnsupportedForm as exc:
        diagnostics.append(_diagnostic(exc))
        return None
    diagnostics.extend(_diagnostic(d) for d in found if not isinstance(d, SingularJacobian))
    out = cert.to_dict()
    eq = [e for e in cert.entries if e.equilibrium]
    if len({e.eigenvalue for e in eq}) == 1:
        out["lambda"] = eq[0].eigenvalue
    return out


def _scan_grid(cfg: AnalysisConfig):
    axes = cfg.scan["axes"]
    mesh = np.meshgrid(*(axes[k].values() for k in ("x1", "x2", "y1", "y2")), indexing="ij")
    cols = [m.ravel() for m in mesh]
    if cfg.scan["velocity"] == "flow":
        rhs = compile_exprs(cfg.system.rhs, cfg.system.params, vectorized=True)
        with np.errstate(all="ignore"):
            y1, y2 = rhs(cols[0], cols[1])
        cols[2], cols[3] = np.asarray(y1, dtype=float), np.asarray(y2, dtype=float)
    return cols


def run_scan(cfg: AnalysisConfig, diagnostics: list) -> dict:
    """Evaluate ``(max Re eig P, tr P, det P)`` on the grid and write the CSV."""
    x1, x2, y1, y2 = _scan_grid(cfg)
    n = x1.size
    bounds = [(i, min(i + SCAN_CHUNK, n)) for i in range(0, n, SCAN_CHUNK)]

    cfg.system._kcc_vec_fn  # compile once before the workers start

    def work(b):
        s = slice(*b)
        return curvature_fields(cfg.system, x1[s], x2[s], y1[s], y2[s])

    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        parts = list(pool.map(work, bounds))
    fields = [np.concatenate([p[i] for p in parts]) for i in range(3)]
    bad = int(np.count_nonzero(~np.isfinite(fields[0]) | ~np.isfinite(fields[1])))
    if bad:
        diagnostics.append(
            {
                "severity": "error",
                "kind": "EvalError",
                "message": f"{bad} grid points hit a singularity (written as nan)",
            }
        )
    path = cfg.scan["csv"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCAN_HEADER)
        for row in zip(x1, x2, y1, y2, *fields):
            w.writerow([f"{v:.17g}" for v in row])
    max_re = fields[0]
    finite = max_re[np.isfinite(max_re)]
    return {
        "csv": path.name,
        "points": int(n),
        "velocity": cfg.scan["velocity"],
        "negative_fraction": float(np.mean(finite < 0)) if finite.size else None,
    }


# ---------------------------------------------------------------------------
# report


def build_report(cfg: AnalysisConfig, outputs=None) -> tuple[dict, int]:
    outputs = cfg.outputs if outputs is None else outputs
    diagnostics: list = []
    system = cfg.system
    report: dict = {
        "schema": SCHEMA_ID,
        "mode": cfg.mode,
        "input": {
            "source": dict(cfg.sources),
            "f": to_text(system.f),
            "g": to_text(system.g),
            "params": dict(cfg.params),
        },
        "assumptions": [AUTONOMOUS_ASSUMPTION],
        "outputs": list(outputs),
    }
    if cfg.hamiltonian is not None:
        report["input"]["hamiltonian"] = cfg.hamiltonian.describe()
    for out in outputs:
        if out == "classify":
            report["classify"] = _classify(cfg, diagnostics)
        elif out == "invariants":
            report["invariants"] = _invariants(cfg, diagnostics)
        elif out == "deviate":
            report["deviate"] = _deviate(cfg, diagnostics)
        elif out == "scan":
            report["scan"] = run_scan(cfg, diagnostics)
        elif out == "certificate":
            cert = _certificate(cfg, diagnostics)
            if cert is not None:
                report["certificate"] = cert
    report["diagnostics"] = diagnostics
    report["metadata"] = {
        "tool": "kcc-lab",
        "version": __version__,
        "generated_at": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    code = EXIT_DIAGNOSTICS if any(d["severity"] == "error" for d in diagnostics) else EXIT_OK
    return _finite(report), code


def dump_report(report: dict) -> str:
    return json.dumps(report, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def run(config_path, outputs=None) -> int:
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        print(f"kcc-lab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    report, code = build_report(cfg, outputs)
    cfg.report_path.write_text(dump_report(report), encoding="utf-8")
    return code


def _validate(config_path) -> int:
    try:
        load_config(config_path)
    except ConfigError as exc:
        print(f"kcc-lab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"{config_path}: ok")
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="kcc-lab", description="KCC / Jacobi stability analysis of planar systems"
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("run", "run every requested output and write the report"),
        ("scan", "evaluate the deviation curvature over the [scan] grid"),
        ("validate", "parse and check the analysis file only"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", type=Path)
    args = parser.parse_args(argv)
    if args.command == "validate":
        return _validate(args.config)
    if args.command == "scan":
        try:
            cfg = load_config(args.config)
        except ConfigError as exc:
            print(f"kcc-lab: config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        if not cfg.scan:
            print("kcc-lab: config error: no [scan] section", file=sys.stderr)
            return EXIT_CONFIG
        report, code = build_report(cfg, ("scan",))
        cfg.report_path.write_text(dump_report(report), encoding="utf-8")
        return code
    return run(args.config)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
