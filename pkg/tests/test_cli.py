import csv
import json
from pathlib import Path

import pytest

from degctrl.cli import EXIT_CONFIG, EXIT_MATH, EXIT_OK, EXIT_USAGE, run

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
CASCADE = CONFIGS / "cascade.yaml"
DEFICIENT = CONFIGS / "deficient.yaml"
SCALAR = CONFIGS / "scalar.yaml"


def rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_unknown_subcommand(capsys):
    assert run(["frobnicate", "--config", str(CASCADE)]) == EXIT_USAGE
    assert "usage" in capsys.readouterr().err
    assert run([]) == EXIT_USAGE


def test_validate(tmp_path):
    assert run(["validate", "--config", str(CASCADE), "--out", str(tmp_path)]) == EXIT_OK
    m = manifest(tmp_path)
    assert m["subcommand"] == "validate" and m["version"]
    assert {o["file"] for o in m["outputs"]} == {"summary.json", "resolved.yaml"}
    assert m["resolved"]["system"]["n"] == 2


def test_invalid_config(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text(CASCADE.read_text().replace("alpha: 0.5", "alpha: 2.5"))
    assert run(["validate", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert run(["validate", "--config", str(tmp_path / "missing.yaml")]) == EXIT_CONFIG


def test_spectrum_with_oracle(tmp_path):
    code = run(["spectrum", "--config", str(SCALAR), "--out", str(tmp_path), "--modes", "10",
                "--nx", "1000", "--dump-operator"])
    assert code == EXIT_OK
    table = rows(tmp_path / "spectrum.csv")
    assert table[0] == ["p", "lambda", "oracle", "rel_error"]
    assert len(table) == 11
    assert all(float(r[3]) < 1e-3 for r in table[1:])
    assert (tmp_path / "operator.csv").exists()


def test_kalman_and_witness(tmp_path):
    args = ["--config", str(DEFICIENT), "--nx", "400"]
    assert run(["kalman", *args, "--out", str(tmp_path / "k")]) == EXIT_OK
    summary = json.loads((tmp_path / "k" / "summary.json").read_text())
    assert summary["dichotomy"] == "deficient-everywhere"
    assert len(rows(tmp_path / "k" / "kalman.csv")) == 101
    assert run(["witness", *args, "--out", str(tmp_path / "w")]) == EXIT_OK
    w = json.loads((tmp_path / "w" / "summary.json").read_text())
    assert w["sup_abs_BTz"] <= 1e-10 and w["norm_z0"] > 0
    assert rows(tmp_path / "w" / "witness.csv")[0] == ["t", "z1", "z2", "abs_BTz"]


def test_witness_on_controllable_system(tmp_path):
    code = run(["witness", "--config", str(CASCADE), "--nx", "400", "--out", str(tmp_path)])
    assert code == EXIT_MATH


def test_synthesize_deficient_exits_3(tmp_path, capsys):
    code = run(["synthesize", "--config", str(DEFICIENT), "--nx", "400", "--nt", "200",
                "--out", str(tmp_path)])
    assert code == EXIT_MATH
    assert "deficient modes: [1, 2" in capsys.readouterr().err


def test_synthesize_cascade(tmp_path):
    code = run(["synthesize", "--config", str(CASCADE), "--nx", "1000", "--nt", "1000",
                "--modes", "8", "--out", str(tmp_path)])
    assert code == EXIT_OK
    s = json.loads((tmp_path / "summary.json").read_text())
    assert s["truncated_residual"] <= 1e-8 and s["residual"] <= 1e-2
    assert rows(tmp_path / "control.csv")[0] == ["t", "x", "v1"]


def test_observe_flags_divergence(tmp_path):
    code = run(["observe", "--config", str(DEFICIENT), "--nx", "400", "--modes", "6",
                "--out", str(tmp_path)])
    assert code == EXIT_OK
    s = json.loads((tmp_path / "summary.json").read_text())
    assert s["divergent"] is True and s["C_hat"] == "inf"


def test_carleman_subcommand(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(SCALAR.read_text() + "carleman:\n  nx: 200\n  nt: 400\n  samples: 2\n")
    assert run(["carleman", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_OK
    table = rows(tmp_path / "o" / "carleman.csv")
    assert table[0] == ["sample", "s", "LHS", "RHS", "ratio", "cutoff_error"]
    assert len(table) == 1 + 2 * 8
    s = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert s["parameters"]["c"] == 6.0


def test_simulate_is_deterministic(tmp_path):
    args = ["simulate", "--config", str(SCALAR), "--nx", "300", "--nt", "200", "--seed", "3"]
    assert run([*args, "--out", str(tmp_path / "a")]) == EXIT_OK
    assert run([*args, "--out", str(tmp_path / "b")]) == EXIT_OK
    for name in ("trajectory.csv", "norms.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    ha = {o["file"]: o["sha256"] for o in manifest(tmp_path / "a")["outputs"]}
    hb = {o["file"]: o["sha256"] for o in manifest(tmp_path / "b")["outputs"]}
    assert ha["trajectory.csv"] == hb["trajectory.csv"]


def test_overrides_reach_manifest(tmp_path):
    run(["validate", "--config", str(CASCADE), "--nx", "500", "--modes", "4", "--out", str(tmp_path)])
    r = manifest(tmp_path)["resolved"]
    assert r["grid"]["nx"] == 500 and r["run"]["modes"] == 4
