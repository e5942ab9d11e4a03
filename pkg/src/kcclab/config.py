"""Analysis files: a sectioned ``key = value`` format.

::

    # pendulum
    [analysis]
    mode = system
    outputs = classify, invariants
    report = pendulum_report.json

    [system]
    f = "x2"
    g = "-sin(x1)"

    [seeds]
    points = 0 0; 3 0

Expression values are quoted strings. Lists of points use ``;`` between
points and whitespace (or commas) between coordinates. Relative output paths
resolve against the directory holding the file.

A small hand-written reader is used instead of :mod:`configparser` so every
error can point at a line number.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .dynamics import IntegratorConfig
from .expr import ExpressionSyntaxError, UnknownIdentifierError, parse
from .hamiltonian import HamiltonianSpec
from .kcc import SystemSpec, TangentPoint

__all__ = ["ConfigError", "AnalysisConfig", "GridAxis", "load_config", "read_sections", "OUTPUTS"]

OUTPUTS = ("classify", "invariants", "deviate", "scan", "certificate")
DEFAULT_MAX_POINTS = 10**7

_SECTION_RE = re.compile(r"^\[\s*([A-Za-z_][\w-]*)\s*\]$")
_KEY_RE = re.compile(r"^([A-Za-z_][\w-]*)\s*=\s*(.*)$")

_ALLOWED = {
    "analysis": {"mode", "outputs", "report"},
    "system": {"f", "g"},
    "hamiltonian": {"H", "V", "mass"},
    "params": None,  # any names
    "seeds": {"points", "tol"},
    "integrator": {"h", "t_end", "record_stride", "method"},
    "invariants": {"points"},
    "deviate": {"x0", "W", "window", "trace", "eta"},
    "scan": {"x1", "x2", "y1", "y2", "velocity", "csv", "max_points"},
    "certificate": {"points", "grid"},
}


class ConfigError(ValueError):
    def __init__(self, line: int | None, message: str):
        self.line = line
        self.message = message
        where = f"line {line}: " if line else ""
        super().__init__(f"{where}{message}")


@dataclass(frozen=True)
class _Value:
    text: str
    line: int


def read_sections(text: str) -> dict[str, dict[str, _Value]]:
    sections: dict[str, dict[str, _Value]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = _SECTION_RE.match(line)
        if m:
            name = m.group(1)
            if name in sections:
                raise ConfigError(lineno, f"duplicate section [{name}]")
            if name not in _ALLOWED:
                raise ConfigError(lineno, f"unknown section [{name}]")
            current = sections[name] = {}
            continue
        m = _KEY_RE.match(line)
        if not m:
            raise ConfigError(lineno, f"expected 'key = value' or '[section]', got {line!r}")
        if current is None:
            raise ConfigError(lineno, "key outside of any section")
        key, value = m.group(1), m.group(2).strip()
        section_name = next(k for k, v in sections.items() if v is current)
        allowed = _ALLOWED[section_name]
        if allowed is not None and key not in allowed:
            raise ConfigError(lineno, f"unknown key {key!r} in [{section_name}]")
        if key in current:
            raise ConfigError(lineno, f"duplicate key {key!r}")
        current[key] = _Value(value, lineno)
    return sections


def _unquote(v: _Value) -> str:
    t = v.text
    if len(t) >= 2 and t[0] == t[-1] and t[0] in "\"'":
        return t[1:-1]
    raise ConfigError(v.line, f"expression values must be quoted, got {t!r}")


def _number(text: str, line: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ConfigError(line, f"not a number: {text!r}") from None
    if not math.isfinite(value):
        raise ConfigError(line, f"value must be finite, got {text!r}")
    return value


def _numbers(v: _Value) -> list[float]:
    parts = [p for p in re.split(r"[\s,]+", v.text.strip()) if p]
    return [_number(p, v.line) for p in parts]


def _points(v: _Value, dim: int) -> list[tuple[float, ...]]:
    out = []
    for chunk in v.text.split(";"):
        if not chunk.strip():
            continue
        coords = _numbers(_Value(chunk, v.line))
        if len(coords) != dim:
            raise ConfigError(v.line, f"expected {dim} coordinates per point, got {chunk.strip()!r}")
        out.append(tuple(coords))
    if not out:
        raise ConfigError(v.line, "empty point list")
    return out


@dataclass(frozen=True)
class GridAxis:
    lo: float
    hi: float
    n: int

    def values(self):
        import numpy as np

        return np.linspace(self.lo, self.hi, self.n)


def _axis(v: _Value | None) -> GridAxis:
    if v is None:
        return GridAxis(0.0, 0.0, 1)
    nums = _numbers(v)
    if len(nums) == 1:
        return GridAxis(nums[0], nums[0], 1)
    if len(nums) != 3 or not nums[2].is_integer() or nums[2] < 1:
        raise ConfigError(v.line, "grid axis must be 'value' or 'lo hi n' with integer n >= 1")
    if nums[2] == 1 and nums[0] != nums[1]:
        raise ConfigError(v.line, "a single-point axis needs lo == hi")
    return GridAxis(nums[0], nums[1], int(nums[2]))


@dataclass
class AnalysisConfig:
    path: Path
    mode: str
    outputs: tuple[str, ...]
    params: dict[str, float]
    system: SystemSpec
    hamiltonian: HamiltonianSpec | None
    sources: dict[str, str]
    seeds: list[tuple[float, float]] = field(default_factory=list)
    seed_tol: float = 1e-12
    integrator: IntegratorConfig | None = None
    invariant_points: list[TangentPoint] = field(default_factory=list)
    deviate: dict[str, Any] = field(default_factory=dict)
    scan: dict[str, Any] = field(default_factory=dict)
    certificate: dict[str, Any] = field(default_factory=dict)
    report_path: Path | None = None

    def resolve(self, name: str | None) -> Path | None:
        if name is None:
            return None
        p = Path(name)
        return p if p.is_absolute() else self.path.parent / p


def _require(section: dict, key: str, where: str, line: int | None) -> _Value:
    if key not in section:
        raise ConfigError(line, f"missing required key {key!r} in [{where}]")
    return section[key]


def _parse_expr(v: _Value, params, hamiltonian: bool):
    text = _unquote(v)
    try:
        return text, parse(text, params, hamiltonian=hamiltonian)
    except (ExpressionSyntaxError, UnknownIdentifierError) as exc:
        raise ConfigError(v.line, str(exc)) from None


def load_config(path) -> AnalysisConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(None, f"cannot read {path}: {exc.strerror or exc}") from None
    return parse_config(text, path)


def parse_config(text: str, path: Path) -> AnalysisConfig:
    s = read_sections(text)
    if "analysis" not in s:
        raise ConfigError(None, "missing [analysis] section")
    analysis = s["analysis"]
    mode_v = _require(analysis, "mode", "analysis", None)
    mode = mode_v.text
    if mode not in ("system", "hamiltonian"):
        raise ConfigError(mode_v.line, f"mode must be 'system' or 'hamiltonian', got {mode!r}")
    other = "hamiltonian" if mode == "system" else "system"
    if other in s:
        raise ConfigError(next(iter(s[other].values())).line if s[other] else None,
                          f"[{other}] section given in {mode} mode")
    out_v = _require(analysis, "outputs", "analysis", None)
    outputs = tuple(o for o in re.split(r"[\s,]+", out_v.text) if o)
    if not outputs:
        raise ConfigError(out_v.line, "at least one output is required")
    for o in outputs:
        if o not in OUTPUTS:
            raise ConfigError(out_v.line, f"unknown output {o!r}; choose from {', '.join(OUTPUTS)}")

    params = {k: _number(v.text, v.line) for k, v in s.get("params", {}).items()}
    sources: dict[str, str] = {}
    if mode == "system":
        sec = s.get("system")
        if sec is None:
            raise ConfigError(None, "missing [system] section")
        sources["f"], f = _parse_expr(_require(sec, "f", "system", None), params, False)
        sources["g"], g = _parse_expr(_require(sec, "g", "system", None), params, False)
        system = SystemSpec(f, g, params)
        ham = None
    else:
        sec = s.get("hamiltonian")
        if sec is None:
            raise ConfigError(None, "missing [hamiltonian] section")
        if "H" not in sec and "V" not in sec:
            raise ConfigError(None, "[hamiltonian] needs H or V")
        mass = sec["mass"].text if "mass" in sec else "m"
        H_text = V_text = None
        if "H" in sec:
            H_text, _ = _parse_expr(sec["H"], params, True)
            sources["H"] = H_text
        if "V" in sec:
            V_text, _ = _parse_expr(sec["V"], params, True)
            sources["V"] = V_text
        line = (sec.get("V") or sec.get("H")).line
        try:
            ham = HamiltonianSpec.from_text(H_text, params, V=V_text, mass=mass)
        except ValueError as exc:
            raise ConfigError(line, str(exc)) from None
        from .hamiltonian import to_system

        system = to_system(ham)

    cfg = AnalysisConfig(
        path=path,
        mode=mode,
        outputs=outputs,
        params=params,
        system=system,
        hamiltonian=ham,
        sources=sources,
    )
    if "report" in analysis:
        cfg.report_path = cfg.resolve(analysis["report"].text)
    else:
        cfg.report_path = path.with_suffix(".report.json")

    if "seeds" in s:
        seeds = s["seeds"]
        cfg.seeds = _points(_require(seeds, "points", "seeds", None), 2)
        if "tol" in seeds:
            cfg.seed_tol = _number(seeds["tol"].text, seeds["tol"].line)
            if cfg.seed_tol <= 0:
                raise ConfigError(seeds["tol"].line, "tol must be positive")

    if "integrator" in s:
        sec = s["integrator"]
        kw: dict[str, Any] = {}
        for key in ("h", "t_end"):
            if key in sec:
                kw[key] = _number(sec[key].text, sec[key].line)
        if "record_stride" in sec:
            v = sec["record_stride"]
            stride = _number(v.text, v.line)
            if not stride.is_integer() or stride < 1:
                raise ConfigError(v.line, f"record_stride must be a positive integer, got {v.text!r}")
            kw["record_stride"] = int(stride)
        if "method" in sec:
            kw["method"] = sec["method"].text
        if "t_end" not in kw:
            raise ConfigError(next(iter(sec.values())).line if sec else None, "[integrator] needs t_end")
        try:
            cfg.integrator = IntegratorConfig(**kw)
        except ValueError as exc:
            raise ConfigError(next(iter(sec.values())).line, str(exc)) from None

    needs = {
        "classify": ("seeds",),
        "invariants": ("invariants",),
        "deviate": ("deviate", "integrator"),
        "scan": ("scan",),
        "certificate": (),
    }
    for out in outputs:
        for sec_name in needs[out]:
            if sec_name not in s:
                raise ConfigError(out_v.line, f"output {out!r} needs a [{sec_name}] section")

    if "invariants" in s:
        pts = _points(_require(s["invariants"], "points", "invariants", None), 4)
        cfg.invariant_points = [TangentPoint(*p) for p in pts]

    if "deviate" in s:
        sec = s["deviate"]
        x0 = _points(_require(sec, "x0", "deviate", None), 2)[0]
        W = _points(_require(sec, "W", "deviate", None), 2)[0]
        if W == (0.0, 0.0):
            raise ConfigError(sec["W"].line, "W must be non-zero")
        cfg.deviate = {"x0": x0, "W": W}
        if "window" in sec:
            w = _numbers(sec["window"])
            if len(w) != 2:
                raise ConfigError(sec["window"].line, "window must be 't_min t_max'")
            cfg.deviate["window"] = tuple(w)
        if "trace" in sec:
            cfg.deviate["trace"] = cfg.resolve(sec["trace"].text)
        if "eta" in sec:
            eta = _number(sec["eta"].text, sec["eta"].line)
            if not 0 < eta <= 1e-3:
                raise ConfigError(sec["eta"].line, "eta must lie in (0, 1e-3]")
            cfg.deviate["eta"] = eta

    if "scan" in s:
        sec = s["scan"]
        axes = {k: _axis(sec.get(k)) for k in ("x1", "x2", "y1", "y2")}
        velocity = sec["velocity"].text if "velocity" in sec else "grid"
        if velocity not in ("grid", "flow"):
            raise ConfigError(sec["velocity"].line, "velocity must be 'grid' or 'flow'")
        if velocity == "flow":
            axes["y1"] = axes["y2"] = GridAxis(0.0, 0.0, 1)
        cap = DEFAULT_MAX_POINTS
        if "max_points" in sec:
            cap = int(_number(sec["max_points"].text, sec["max_points"].line))
        size = 1
        for a in axes.values():
            size *= a.n
        if size > cap:
            line = next(iter(sec.values())).line if sec else None
            raise ConfigError(line, f"scan grid has {size} points, above the cap of {cap}")
        cfg.scan = {
            "axes": axes,
            "velocity": velocity,
            "csv": cfg.resolve(sec["csv"].text if "csv" in sec else path.stem + ".scan.csv"),
            "size": size,
        }

    if "certificate" in s or "certificate" in outputs:
        if mode != "hamiltonian":
            raise ConfigError(out_v.line, "the certificate output needs hamiltonian mode")
        sec = s.get("certificate", {})
        cert: dict[str, Any] = {}
        if "points" in sec:
            cert["points"] = _numbers(sec["points"])
        if "grid" in sec:
            ax = _axis(sec["grid"])
            cert["grid"] = [float(v) for v in ax.values()]
        if "points" not in cert and not cfg.seeds:
            raise ConfigError(out_v.line, "certificate needs [certificate] points or [seeds]")
        cfg.certificate = cert

    return cfg
