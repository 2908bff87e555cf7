import json
from pathlib import Path

import numpy as np
import pytest

from gtverify.cli import build_parser, main
from gtverify.lmi import build_invariance_lmi, solve

SNAPSHOTS = Path(__file__).parent / "snapshots"
COMMANDS = ("hull", "solve-lmi", "check-cert", "autocode", "check-annotations", "simulate", "fixtures")


def write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def help_text(cmd, capsys, monkeypatch):
    monkeypatch.setenv("COLUMNS", "100")
    argv = ([cmd] if cmd else []) + ["--help"]
    assert main(argv) == 0
    return capsys.readouterr().out


@pytest.mark.parametrize("cmd", ("",) + COMMANDS)
def test_help_snapshot(cmd, capsys, monkeypatch):
    text = help_text(cmd, capsys, monkeypatch)
    snap = SNAPSHOTS / f"help_{cmd or 'main'}.txt"
    assert text == snap.read_text()


@pytest.mark.parametrize("cmd", COMMANDS)
def test_help_lists_all_flags(cmd, capsys, monkeypatch):
    text = help_text(cmd, capsys, monkeypatch)
    sub = build_parser()._subparsers._group_actions[0].choices[cmd]
    for action in sub._actions:
        for flag in action.option_strings:
            assert flag in text


def test_unknown_flag_and_missing_command():
    assert main(["fixtures", "--bogus"]) == 3
    assert main([]) == 3


def test_fixtures_verify(tmp_path):
    rep = tmp_path / "r.json"
    assert main(["fixtures", "--verify", "--report", str(rep)]) == 0
    assert json.loads(rep.read_text())["passes"]


def test_solve_common_infeasible(tmp_path):
    v = write(tmp_path / "v.json", {"vertices": [[[1.0]]]})
    rep = tmp_path / "r.json"
    assert main(["solve-lmi", "--kind", "common", "--vertices", v, "--report", str(rep)]) == 2
    assert json.loads(rep.read_text())["status"] == "infeasible"


def test_solve_then_check_cert(tmp_path):
    v = write(tmp_path / "v.json", {"vertices": [[[[0.5]], [[0.5]]]]})
    cert = tmp_path / "c.json"
    assert main(["solve-lmi", "--kind", "invariance", "--vertices", v, "--xi", "0.5", "--out", str(cert)]) == 0
    assert main(["check-cert", "--P", str(cert)]) == 0
    assert main(["check-cert", "--P", str(cert), "--problem", v, "--kind", "invariance", "--xi", "0.5"]) == 0
    P2 = write(tmp_path / "P2.json", {"n": 2, "rows": [[1.0, 0.0], [0.0, 1.0]]})
    assert main(["check-cert", "--P", P2, "--problem", v, "--kind", "invariance", "--xi", "0.5"]) == 3


def test_check_cert_failure(tmp_path):
    v = write(tmp_path / "v.json", {"vertices": [[[2.0]]]})
    P = write(tmp_path / "P.json", {"n": 1, "rows": [[1.0]]})
    assert main(["check-cert", "--P", P, "--problem", v, "--kind", "common"]) == 2


def test_brl_gamma(tmp_path):
    v = write(tmp_path / "v.json", {"vertices": [[[[0.0]], [[1.0]], [[1.0]], [[0.0]]]]})
    assert main(["solve-lmi", "--kind", "brl", "--vertices", v, "--gamma", "1.5"]) == 0
    assert main(["solve-lmi", "--kind", "brl", "--vertices", v, "--gamma", "0.9"]) == 2


def test_autocode_and_check_annotations(tmp_path, certified_pool):
    s, c = certified_pool[1]
    ctrl = write(tmp_path / "ctrl.json", {k: getattr(s, k).tolist() for k in "ABCD"})
    cert = tmp_path / "cert.json"
    c.save(cert)
    src = tmp_path / "step.c.txt"
    assert main(["autocode", "--controller", ctrl, "--cert", str(cert), "--out", str(src)]) == 0
    first = src.read_bytes()
    assert main(["autocode", "--controller", ctrl, "--cert", str(cert), "--out", str(src)]) == 0
    assert src.read_bytes() == first
    rep = tmp_path / "r.json"
    assert main(["check-annotations", "--source", str(src), "--report", str(rep)]) == 0
    assert json.loads(rep.read_text())["passes"]
    bad = tmp_path / "bad.c.txt"
    text = src.read_text()
    body = text.index("{\n        _", text.index("void step"))
    i = text.index(" = ", body) + 3
    j = text.index(" *", i)
    bad.write_text(text[:i] + repr(float(text[i:j].lstrip("-")) * 1.5) + text[j:])
    assert main(["check-annotations", "--source", str(bad)]) == 2
    assert main(["check-annotations", "--source", str(tmp_path / "missing.c")]) == 3


def test_autocode_rejects_wrong_dimension(tmp_path):
    res = solve(build_invariance_lmi([([[0.5]], [[0.5]])], 0.5))
    cert = tmp_path / "c.json"
    res.certificate.save(cert)
    # the shipped MCR controller has 11 states
    assert main(["autocode", "--point", "MCR", "--cert", str(cert), "--out", str(tmp_path / "o")]) == 3
    assert not (tmp_path / "o").exists()


def test_simulate_and_monitor(tmp_path):
    cfg = write(tmp_path / "s.json", {"duration": 20, "pla_profile": [[0, 20.0]], "equilibrium": "MCR"})
    trace = tmp_path / "t.csv"
    assert main(["simulate", "--config", cfg, "--trace", str(trace)]) == 0
    lines = trace.read_text().splitlines()
    assert len(lines) == 21 and lines[0].startswith("step,time,pla")
    mon = {"ellipsoid": {"Q": [[1e-12]], "center": [0.0], "level": 1.0}, "vars": ["xc0"]}
    cfg2 = write(tmp_path / "s2.json", {"duration": 20, "pla_profile": [[0, 0.0], [2, 20.0]],
                                         "equilibrium": "idle", "monitor": mon})
    assert main(["simulate", "--config", cfg2, "--trace", str(trace)]) == 2
    bad = write(tmp_path / "s3.json", {"duration": 5, "wind": 3})
    assert main(["simulate", "--config", bad, "--trace", str(trace)]) == 3


def test_hull_default(tmp_path):
    rep = tmp_path / "h.json"
    assert main(["hull", "--report", str(rep)]) == 0
    out = json.loads(rep.read_text())
    assert out["census"]["total"] == 154
    assert out["membership"]["passes"]


def test_hull_scalar_model(tmp_path):
    model = write(tmp_path / "m.json", {"points": [
        {"alpha": 0.0, "system": {"A": [[0.0]], "B": [[0.0]], "C": [[1.0]], "D": [[0.0]]}},
        {"alpha": 1.0, "system": {"A": [[1.0]], "B": [[0.0]], "C": [[1.0]], "D": [[0.0]]}},
    ]})
    assert main(["hull", "--model", model, "--grid", "11"]) == 0


def test_tolerances_override(tmp_path):
    tol = write(tmp_path / "tol.json", {"solver_max_iter": 1})
    v = write(tmp_path / "v.json", {"vertices": [[[0.99, 5.0], [0.0, 0.99]]]})
    assert main(["--tolerances", tol, "solve-lmi", "--kind", "common", "--vertices", v]) == 2
    bad = write(tmp_path / "tol2.json", {"no_such": 1})
    assert main(["--tolerances", bad, "fixtures"]) == 3
