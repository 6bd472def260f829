from __future__ import annotations

import os
import shutil
import subprocess
import sys

import pytest

from nrel import cli
from nrel.cli import examples_dir, main, run_program

EXAMPLES = sorted(n for n in os.listdir(examples_dir())
                  if os.path.isfile(os.path.join(examples_dir(), n, "program.relnn")))


def paths(name):
    root = os.path.join(examples_dir(), name)
    return os.path.join(root, "program.relnn"), os.path.join(root, "manifest.txt")


def quiet(*_):
    pass


def test_shipped_suite_present():
    assert {"driver_profile", "driver_agg", "gcn", "dhn_c3", "hgt_attention", "gated_history"} <= set(EXAMPLES)


def test_examples_subcommand(capsys):
    assert main(["examples"]) == 0
    listed = capsys.readouterr().out.split()
    assert [os.path.basename(p) for p in listed] == EXAMPLES


def test_driver_profile_artifacts(tmp_path):
    prog, man = paths("driver_profile")
    assert main(["run", prog, man, "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "Profile.csv").read_text().splitlines()
    assert lines[0].split(",") == ["x"] + [f"emb_{j}" for j in range(16)]
    assert len(lines) == 4
    assert all(len(l.split(",")) == 17 for l in lines[1:])
    trace = (tmp_path / "Loss.loss").read_text().splitlines()
    assert len(trace) == 100
    assert float(trace[-1]) < float(trace[0])


def test_dump_plan_driver_agg(capsys):
    prog, man = paths("driver_agg")
    assert main(["run", prog, man, "--dry-run", "--dump-plan", "DriverAgg"]) == 0
    out = capsys.readouterr().out
    assert "plan DriverAgg: 5 nodes" in out
    assert "union[sum by (x)](n3)" in out
    assert "join(n0, n1)" in out
    ops = [line.split(" = ")[1].split("(")[0].split(" ")[0] for line in out.split("physical:\n", 1)[1].splitlines()]
    assert ops == ["scan", "scan", "merge", "gather", "gather", "concat", "layer", "groupby", "scatter_sum"]


def test_seed_determinism(tmp_path):
    prog, man = paths("driver_profile")
    for sub in ("a", "b"):
        assert main(["run", prog, man, "--seed", "7", "--out", str(tmp_path / sub)]) == 0
    for name in ("Profile.csv", "Loss.loss"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert main(["run", prog, man, "--seed", "8", "--out", str(tmp_path / "c")]) == 0
    assert (tmp_path / "a" / "Profile.csv").read_bytes() != (tmp_path / "c" / "Profile.csv").read_bytes()


def test_dry_run_writes_nothing(tmp_path):
    src = tmp_path / "ex"
    shutil.copytree(os.path.join(examples_dir(), "driver_profile"), src)
    before = sorted(os.listdir(src))
    assert main(["run", str(src / "program.relnn"), str(src / "manifest.txt"), "--dry-run"]) == 0
    assert sorted(os.listdir(src)) == before
    assert main(["run", str(src / "program.relnn"), str(src / "manifest.txt")]) == 0
    assert sorted(os.listdir(src / "out")) == ["Loss.loss", "Profile.csv"]


@pytest.mark.parametrize("name", EXAMPLES)
def test_oracle_on_shipped_examples(name, tmp_path):
    prog, man = paths(name)
    report = run_program(prog, man, out_dir=str(tmp_path), oracle=True, echo=quiet)
    assert report.oracle_checks >= 1
    assert report.artifacts


def test_pred_before_fit_exports_untrained(tmp_path):
    (tmp_path / "a.csv").write_text("x,f\n1,0.5\n2,1.5\n")
    (tmp_path / "m.txt").write_text("A.path=a.csv\nA.columns=x:content,f:feature\n")
    (tmp_path / "p.relnn").write_text(
        "P(x; Linear(1, 1)(z)) :- A(x; z) .\nLoss(; mean(z * z)) :- P(x; z) .\n"
        "?pred P .\n?fit <epochs=20, lr=0.1> Loss .\n?pred P .\n")
    assert main(["run", str(tmp_path / "p.relnn"), str(tmp_path / "m.txt"), "--out", str(tmp_path / "o")]) == 0
    first = (tmp_path / "o" / "P.csv").read_text()
    second = (tmp_path / "o" / "P.2.csv").read_text()
    assert first != second


# -- diagnostics and exit codes -------------------------------------------------


def _write(tmp_path, program, manifest="A.path=a.csv\nA.columns=x:content,f:feature\n"):
    (tmp_path / "a.csv").write_text("x,f\n1,0.5\n2,1.5\n")
    (tmp_path / "m.txt").write_text(manifest)
    (tmp_path / "p.relnn").write_text(program)
    return ["run", str(tmp_path / "p.relnn"), str(tmp_path / "m.txt"), "--out", str(tmp_path / "o")]


@pytest.mark.parametrize("program, manifest, code, stage", [
    ("P(x; z) :- A(x; z)", None, 2, "parse"),
    ("P(x; z) :- Nope(A)(x; z) .", None, 2, "expand"),
    ("P(x; z) :- B(x; z) .", None, 2, "lower"),
    ("P(x; z) :- A(x; z) .", "A.path=missing.csv\n", 3, "load"),
    ("P(x; z) :- A(x; z) .\n?fit P .", None, 3, "fit"),
    ("P(x; Linear(1, 1)(z)) :- A(x; z) .\nL(; mean(z)) :- P(x; z) .\n?fit <epochs=1, momentum=1> L .", None, 3, "fit"),
])
def test_exit_codes(tmp_path, capsys, program, manifest, code, stage):
    argv = _write(tmp_path, program, *(() if manifest is None else (manifest,)))
    assert main(argv) == code
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1
    assert err[0].startswith(f"nrel: {stage} error:")


def test_oracle_mismatch_exit_code(tmp_path, capsys, monkeypatch):
    argv = _write(tmp_path, "P(x; z) :- A(x; z) .\n?pred P .")
    monkeypatch.setattr(cli, "diff_relation", lambda *a: ["row (1,): embedding differs"])
    assert main(argv + ["--oracle"]) == 4
    assert capsys.readouterr().err.startswith("nrel: oracle error:")


def test_console_entry_point(tmp_path):
    prog, man = paths("driver_agg")
    proc = subprocess.run([sys.executable, "-m", "nrel.cli", "run", prog, man, "--out", str(tmp_path), "--oracle"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0, proc.stderr
    assert "no differences" in proc.stdout
    assert (tmp_path / "DriverAgg.csv").exists()
