import csv
import json
import math
import shutil
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from kcclab.cli import SCAN_HEADER, SCHEMA_ID, main
from kcclab.config import ConfigError, load_config
from kcclab.kcc import SystemSpec, TangentPoint, deviation_curvature, eig2

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
GOLDEN = Path(__file__).parent / "golden"
SCHEMA = json.loads((ROOT / "src" / "kcclab" / "report.schema.json").read_text(encoding="utf-8"))


def _copy(tmp_path, name):
    dst = tmp_path / name
    shutil.copy(CONFIGS / name, dst)
    return dst


def _write(tmp_path, text, name="a.ini"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def _report(path):
    cfg = load_config(path)
    return json.loads(cfg.report_path.read_text(encoding="utf-8"))


def _without_metadata(report):
    return {k: v for k, v in report.items() if k != "metadata"}


# ---------------------------------------------------------------------------
# bundled examples


@pytest.mark.parametrize("name", ["pendulum.ini", "harmonic.ini", "duffing.ini", "pendulum_scan.ini"])
def test_bundled_configs_run_and_match_schema(tmp_path, name):
    path = _copy(tmp_path, name)
    assert main(["run", str(path)]) == 0
    report = _report(path)
    jsonschema.validate(report, SCHEMA)
    assert report["schema"] == SCHEMA_ID
    assert report["diagnostics"] == []


def test_pendulum_classification(tmp_path):
    path = _copy(tmp_path, "pendulum.ini")
    main(["run", str(path)])
    lo, hi = _report(path)["classify"]
    assert lo["location"] == pytest.approx([0.0, 0.0], abs=1e-12)
    assert (lo["lyapunov_class"], lo["jacobi_class"]) == ("center", "jacobi-stable")
    assert hi["location"] == pytest.approx([math.pi, 0.0], abs=1e-12)
    assert (hi["lyapunov_class"], hi["jacobi_class"]) == ("saddle", "jacobi-unstable")
    # mu = (lambda/2)^2 with lambda = +-i and +-1
    assert lo["mu1"] == pytest.approx([-0.25, 0.0]) and hi["mu1"] == pytest.approx([0.25, 0.0])


def test_harmonic_certificate(tmp_path):
    path = _copy(tmp_path, "harmonic.ini")
    main(["run", str(path)])
    cert = _report(path)["certificate"]
    assert cert["jacobi_stable"] is True
    assert cert["lambda"] == -0.25


@pytest.mark.parametrize("name", ["pendulum", "harmonic"])
def test_golden_report(tmp_path, name):
    path = _copy(tmp_path, f"{name}.ini")
    assert main(["run", str(path)]) == 0
    got = _without_metadata(_report(path))
    want = json.loads((GOLDEN / f"{name}.report.json").read_text(encoding="utf-8"))
    assert got == want


@pytest.mark.parametrize("name", ["pendulum.ini", "harmonic.ini"])
def test_reports_are_byte_identical_across_runs(tmp_path, name):
    path = _copy(tmp_path, name)
    outputs = []
    for _ in range(2):
        main(["run", str(path)])
        report = _report(path)
        report.pop("metadata")
        outputs.append(json.dumps(report, indent=2))
        trace = load_config(path).deviate.get("trace")
        if trace is not None:
            outputs.append(trace.read_bytes())
    assert outputs[: len(outputs) // 2] == outputs[len(outputs) // 2 :]


def test_metadata_is_isolated(tmp_path):
    path = _copy(tmp_path, "harmonic.ini")
    main(["run", str(path)])
    meta = _report(path)["metadata"]
    assert set(meta) == {"tool", "version", "generated_at"}


def test_trace_written_next_to_config(tmp_path):
    path = _copy(tmp_path, "pendulum.ini")
    main(["run", str(path)])
    lines = (tmp_path / "pendulum.trace.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "t,x1,x2,y1,y2,xi1,xi2,dxi1,dxi2,xinorm,ratio"
    assert len(lines) == 1 + 5000 // 250 + 1


# ---------------------------------------------------------------------------
# config errors and exit codes

MINIMAL = """
[analysis]
mode = system
outputs = classify
[system]
f = "x2"
g = "-x1"
[seeds]
points = 0.1 0.2
"""


def test_minimal_config_runs(tmp_path):
    assert main(["run", str(_write(tmp_path, MINIMAL))]) == 0


@pytest.mark.parametrize(
    "text,line",
    [
        (MINIMAL.replace('g = "-x1"\n', ""), None),  # missing g
        (MINIMAL.replace('g = "-x1"', "g = -x1"), 7),  # unquoted expression
        (MINIMAL.replace('g = "-x1"', 'g = "-k*x1"'), 7),  # undeclared parameter
        (MINIMAL.replace('g = "-x1"', 'g = "-x1 +"'), 7),  # syntax error
        (MINIMAL.replace("mode = system", "mode = both"), 3),
        (MINIMAL.replace("outputs = classify", "outputs = plot"), 4),
        (MINIMAL.replace("outputs = classify", "outputs ="), 4),
        (MINIMAL.replace("points = 0.1 0.2", "points = 0.1"), 9),
        (MINIMAL.replace("[seeds]", "[seedz]"), 8),
        (MINIMAL + "tol = -1\n", 10),
        (MINIMAL + "colour = red\n", 10),
        (MINIMAL.replace("outputs = classify", "outputs = deviate"), 4),  # no [deviate]
        (MINIMAL.replace("outputs = classify", "outputs = certificate"), 4),  # needs hamiltonian mode
        (MINIMAL + '[hamiltonian]\nH = "x1*x2"\n', None),
    ],
)
def test_config_errors_exit_2(tmp_path, capsys, text, line):
    path = _write(tmp_path, text)
    with pytest.raises(ConfigError) as info:
        load_config(path)
    if line is not None:
        assert info.value.line == line
    assert main(["run", str(path)]) == 2
    assert main(["validate", str(path)]) == 2
    assert "config error" in capsys.readouterr().err
    assert not (tmp_path / "a.report.json").exists()


def test_missing_file_exit_2(tmp_path):
    assert main(["run", str(tmp_path / "nope.ini")]) == 2


def test_hamiltonian_config_errors(tmp_path):
    base = "[analysis]\nmode = hamiltonian\noutputs = certificate\n[hamiltonian]\nV = \"x^2\"\n[params]\nm = {m}\n[certificate]\npoints = 0\n"
    assert main(["run", str(_write(tmp_path, base.format(m=1)))]) == 0
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, base.format(m=0)))
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, base.replace('V = "x^2"', 'V = "x*p"').format(m=1)))


def test_validate_does_not_compute(tmp_path, capsys):
    path = _write(tmp_path, MINIMAL)
    assert main(["validate", str(path)]) == 0
    assert "ok" in capsys.readouterr().out
    assert not (tmp_path / "a.report.json").exists()


def test_no_convergence_exit_1(tmp_path):
    text = MINIMAL.replace('f = "x2"', 'f = "x1^2 + 1"').replace('g = "-x1"', 'g = "x2"')
    path = _write(tmp_path, text)
    assert main(["run", str(path)]) == 1
    report = _report(path)
    jsonschema.validate(report, SCHEMA)
    assert report["classify"] == []
    assert report["diagnostics"] and report["diagnostics"][0]["severity"] == "error"


def test_singular_fixed_point_is_a_warning(tmp_path):
    # every point of x2 = 0 is a fixed point; the Jacobian [[0, 1], [0, 0]] is singular
    text = MINIMAL.replace('g = "-x1"', 'g = "0"').replace("points = 0.1 0.2", "points = 0.1 0; -0.4 0")
    path = _write(tmp_path, text)
    assert main(["run", str(path)]) == 0
    report = _report(path)
    jsonschema.validate(report, SCHEMA)
    assert [r["location"] for r in report["classify"]] == [[-0.4, 0.0], [0.1, 0.0]]
    assert {r["lyapunov_class"] for r in report["classify"]} == {"non-hyperbolic-degenerate"}
    assert [d["severity"] for d in report["diagnostics"]] == ["warning", "warning"]


def test_report_embeds_inputs(tmp_path):
    text = MINIMAL.replace('g = "-x1"', 'g = "-k*x1"') + "[params]\nk = 2.5\n"
    path = _write(tmp_path, text)
    main(["run", str(path)])
    inp = _report(path)["input"]
    assert inp["source"] == {"f": "x2", "g": "-k*x1"}
    assert inp["params"] == {"k": 2.5}


# ---------------------------------------------------------------------------
# scan

SCAN = """
[analysis]
mode = system
outputs = scan
[system]
f = "{f}"
g = "{g}"
[scan]
x1 = {x1}
x2 = {x2}
y1 = {y1}
y2 = {y2}
csv = grid.csv
"""


def _scan(tmp_path, **kw):
    path = _write(tmp_path, SCAN.format(**kw))
    assert main(["scan", str(path)]) == 0
    with open(tmp_path / "grid.csv", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == SCAN_HEADER
    return np.array(rows[1:], dtype=float), _report(path)


def test_linear_scan_is_constant(tmp_path):
    rows, report = _scan(tmp_path, f="x1 + 2*x2", g="3*x1 + 4*x2", x1="-1 1 5", x2="-2 2 4", y1="-1 1 3", y2="0.5")
    assert len(rows) == 5 * 4 * 3 == report["scan"]["points"]
    A = np.array([[1.0, 2.0], [3.0, 4.0]])
    P0 = 0.25 * A @ A
    mu = np.linalg.eigvals(P0)
    assert np.allclose(rows[:, 4], mu.real.max(), rtol=1e-12)
    assert np.allclose(rows[:, 5], np.trace(P0), rtol=1e-12)
    assert np.allclose(rows[:, 6], np.linalg.det(P0), rtol=1e-9)


def test_scan_rows_are_row_major(tmp_path):
    rows, _ = _scan(tmp_path, f="x2", g="-x1", x1="0 1 2", x2="0 1 3", y1="0", y2="0")
    expected = [(a, b) for a in (0.0, 1.0) for b in (0.0, 0.5, 1.0)]
    assert [tuple(r[:2]) for r in rows] == expected


def test_pendulum_scan_sign_flip(tmp_path):
    rows, _ = _scan(tmp_path, f="x2", g="-sin(x1)", x1=f"{-math.pi!r} {math.pi!r} 201", x2="0", y1="0", y2="0")
    x1, top = rows[:, 0], rows[:, 4]
    # point particle, m = 1: both eigenvalues are -cos(x1)/4
    assert np.allclose(top, -np.cos(x1) / 4, rtol=0, atol=1e-15)
    clear = np.abs(np.cos(x1)) > 1e-12
    assert np.array_equal(np.sign(top[clear]), -np.sign(np.cos(x1[clear])))
    flips = np.flatnonzero(np.diff(np.sign(top[clear])))
    assert len(flips) == 2
    assert sorted(np.abs(x1[clear][flips])) == pytest.approx([math.pi / 2] * 2, abs=2 * math.pi / 200)


def test_one_point_scan_equals_direct_evaluation(tmp_path):
    rows, _ = _scan(tmp_path, f="x2 - x1^2", g="sin(x1)*x2", x1="0.3", x2="-0.7", y1="1.1", y2="0.4")
    (row,) = rows
    P = deviation_curvature(SystemSpec.from_text("x2 - x1^2", "sin(x1)*x2"), TangentPoint(0.3, -0.7, 1.1, 0.4))
    assert row[4] == max(m.real for m in eig2(P))
    assert row[5] == pytest.approx(P[0, 0] + P[1, 1], rel=1e-15)
    assert row[6] == pytest.approx(np.linalg.det(P), rel=1e-12)


def test_scan_cap(tmp_path):
    text = SCAN.format(f="x2", g="-x1", x1="0 1 1000", x2="0 1 1000", y1="0 1 11", y2="0")
    with pytest.raises(ConfigError, match="cap"):
        load_config(_write(tmp_path, text))
    with pytest.raises(ConfigError, match="cap"):
        load_config(_write(tmp_path, text.replace("csv = grid.csv", "csv = grid.csv\nmax_points = 50")
                           .replace("1000", "10")))


def test_scan_thread_count_does_not_change_output(tmp_path, monkeypatch):
    outs = []
    for threads in ("1", "4"):
        monkeypatch.setenv("KCC_LAB_THREADS", threads)
        _scan(tmp_path, f="x2", g="x1 - x1^3", x1="-2 2 300", x2="-1 1 300", y1="0.1", y2="0")
        outs.append((tmp_path / "grid.csv").read_bytes())
    assert outs[0] == outs[1]


def test_scan_on_the_flow(tmp_path):
    path = _copy(tmp_path, "duffing.ini")
    assert main(["scan", str(path)]) == 0
    with open(tmp_path / "duffing.scan.csv", encoding="utf-8") as fh:
        rows = np.array(list(csv.reader(fh))[1:], dtype=float)
    assert np.array_equal(rows[:, 2], rows[:, 1])  # y1 = f = x2
    assert np.allclose(rows[:, 3], rows[:, 0] - rows[:, 0] ** 3, rtol=0, atol=1e-15)


def test_scan_without_section_exit_2(tmp_path):
    assert main(["scan", str(_write(tmp_path, MINIMAL))]) == 2
