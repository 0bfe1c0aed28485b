import hashlib
import json
import os
import subprocess
import sys

import pytest

from cityevac import BUNDLED_SCENARIOS, scenario_path
from cityevac import cli
from cityevac.cli import main


def bundled_doc(name):
    doc = json.loads(scenario_path(name).read_text())
    doc["network"] = json.loads((scenario_path(name).parent / doc["network"]).read_text())
    return doc


def write_doc(tmp_path, doc, name="scenario.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def digests(folder):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(folder.iterdir())}


@pytest.mark.parametrize("name", BUNDLED_SCENARIOS)
def test_validate_bundled(name, capsys):
    assert main(["validate", "--scenario", str(scenario_path(name))]) == 0
    assert capsys.readouterr().out == ""


def test_validate_fifo_violation(tmp_path, capsys):
    doc = bundled_doc("household")
    doc["network"]["arcs"][2]["profile"] = {"period_s": 86400, "breakpoints": [[0, 500], [10, 100]]}
    arc_id = doc["network"]["arcs"][2]["id"]
    assert main(["validate", "--scenario", write_doc(tmp_path, doc)]) == 2
    out = capsys.readouterr().out
    assert f"arc {arc_id}" in out and "FIFO" in out


def test_validate_missing_shelter(tmp_path, capsys):
    doc = bundled_doc("facility")
    doc["facilities"][0]["shelters"].append("S9")
    assert main(["validate", "--scenario", write_doc(tmp_path, doc)]) == 2
    assert capsys.readouterr().out.splitlines() == ["facility arena: unknown shelter S9"]


def test_validate_unreadable_and_malformed(tmp_path):
    assert main(["validate", "--scenario", str(tmp_path / "absent.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["validate", "--scenario", str(bad)]) == 2
    assert main(["run", "--scenario", str(bad), "--out", str(tmp_path / "o")]) == 2


def test_run_empty_incident_scenario(tmp_path, capsys):
    doc = bundled_doc("household")
    doc["incidents"] = []
    out = tmp_path / "out"
    assert main(["run", "--scenario", write_doc(tmp_path, doc), "--out", str(out)]) == 0
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics == {
        "tet_s": 0.0,
        "ct_s": 0.0,
        "max_patient_wait_s": 0.0,
        "total_evacuated": 0,
        "notification_latency_s": {},
    }
    assert "tet_s" in capsys.readouterr().out


def test_run_writes_artifacts(tmp_path):
    out = tmp_path / "out"
    assert main(["run", "--scenario", "facility", "--out", str(out), "--solver", "evo", "--quiet"]) == 0
    names = {p.name for p in out.iterdir()}
    assert {"trace.jsonl", "metrics.json", "metrics.csv", "plans.json"} <= names
    assert any(n.startswith("history_") for n in names)
    assert any(n.startswith("pickups_") for n in names)
    assert any(n.startswith("signal_") for n in names)


def test_run_twice_identical_files(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["run", "--scenario", "road", "--out", str(out), "--seed", "7", "--quiet"]) == 0
    assert digests(a) == digests(b)


def test_determinism_across_processes(tmp_path):
    outs = []
    for hashseed in ("1", "12345"):
        out = tmp_path / f"p{hashseed}"
        env = dict(os.environ, PYTHONHASHSEED=hashseed)
        proc = subprocess.run(
            [sys.executable, "-m", "cityevac.cli", "run", "--scenario", "facility", "--out", str(out), "--quiet"],
            env=env, capture_output=True, text=True,
        )
        assert proc.returncode == 0, proc.stderr
        outs.append(digests(out))
    assert outs[0] == outs[1]


def test_exact_and_evo_identical_objectives(tmp_path):
    values = []
    for solver in ("exact", "evo"):
        out = tmp_path / solver
        assert main(["run", "--scenario", "facility", "--out", str(out), "--solver", solver, "--quiet"]) == 0
        values.append(json.loads((out / "metrics.json").read_text()))
    assert values[0] == values[1]


def test_out_env_default(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env"))
    assert main(["run", "--scenario", "household", "--quiet"]) == 0
    assert (tmp_path / "env" / "household" / "trace.jsonl").exists()


@pytest.mark.parametrize("scenario,module", [("household", "accp"), ("facility", "dispatch"), ("facility", "ebpd")])
def test_oracle_pass(scenario, module, capsys):
    assert main(["oracle", "--scenario", scenario, "--module", module]) == 0
    line = capsys.readouterr().out.strip()
    assert line.startswith(module) and line.endswith("pass")


def test_oracle_refuses_oversized(tmp_path, capsys):
    doc = bundled_doc("facility")
    doc["depots"][0]["fleet"] = 3
    assert main(["oracle", "--scenario", write_doc(tmp_path, doc), "--module", "ebpd"]) == 2
    assert "instance too large" in capsys.readouterr().err


def test_oracle_mismatch_exits_one(monkeypatch, capsys):
    monkeypatch.setattr(cli, "oracle_pair", lambda sc, module: ((1,), (2,)))
    assert main(["oracle", "--scenario", "household", "--module", "accp"]) == 1
    assert capsys.readouterr().out.strip().endswith("fail")


def test_runtime_error_exits_one(monkeypatch, tmp_path):
    def boom(*args, **kwargs):
        raise RuntimeError("solver blew up")

    monkeypatch.setattr(cli, "run", boom)
    assert main(["run", "--scenario", "household", "--out", str(tmp_path)]) == 1


def test_batch(tmp_path, capsys):
    out = tmp_path / "batch"
    args = ["batch", "--scenario", "household", "--scenario", "facility", "--out", str(out)]
    assert main(args + ["--jobs", "2"]) == 0
    table = capsys.readouterr().out.splitlines()
    assert table[0].split()[0] == "scenario" and [r.split()[0] for r in table[1:]] == ["household", "facility"]
    first = {d.name: digests(d) for d in out.iterdir()}
    assert main(args + ["--quiet"]) == 0
    assert {d.name: digests(d) for d in out.iterdir()} == first


def test_batch_reports_invalid_rows(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("[]")
    assert main(["batch", "--scenario", "household", "--scenario", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "error" in capsys.readouterr().out
