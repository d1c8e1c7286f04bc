"""CLI behaviour and golden-file reproduction.

Regenerate the golden outputs after an intentional change with
``python3 tests/test_cli.py --regen``.
"""

import json
import shutil
import sys
from pathlib import Path

import pandas as pd
import pytest

from thinar.cli import EXIT_INVALID, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, MANIFEST, RunManifest, run_subcommand

HERE = Path(__file__).parent
FIXTURES = HERE / "fixtures"
GOLDEN = HERE / "golden"

SHORT = ["--chains", "2", "--iter", "300", "--warmup", "150"]

# (case name, argv); argv paths are relative to a working copy of tests/fixtures
CASES = [
    ("simulate_canonical", ["simulate", "--nu", "10", "--phi", "0.6", "--pi", "0.6", "--t", "50", "--burnin", "100",
                            "--reps", "3", "--seed", "7"]),
    ("simulate_conurbation", ["simulate", "--config", "conurbation", "--covariates", "conurbation_covariates.csv",
                              "--burnin", "0", "--seed", "4"]),
    ("moments_params", ["moments", "--nu", "10", "--phi", "0.4", "--pi", "0.4"]),
    ("moments_data", ["moments", "--data", "series_canonical.csv"]),
    ("mom_study", ["mom-study", "--nu", "5", "--phis", "0.4,0.8", "--pis", "0.5", "--lengths", "50,200",
                   "--reps", "20", "--seed", "3"]),
    ("consequences", ["consequences", "--nu", "5", "--phi", "0.8", "--grid", "99"]),
    ("consequences_divided", ["consequences", "--nu", "5", "--phi", "0.8", "--grid", "19", "--divide-by-pi"]),
    ("fit_naive", ["fit", "--engine", "naive", "--data", "series_canonical.csv"]),
    ("fit_mom", ["fit", "--engine", "mom", "--data", "series_canonical.csv"]),
    ("fit_approx", ["fit", "--engine", "approx", "--config", "sim_study", "--data", "series_canonical.csv",
                    *SHORT, "--seed", "1"]),
    ("fit_exact", ["fit", "--engine", "exact", "--config", "sim_study", "--data", "series_canonical.csv",
                   "--chains", "2", "--iter", "1000", "--warmup", "200", "--thin", "5", "--seed", "1"]),
    ("fit_conurbation", ["fit", "--engine", "approx", "--config", "conurbation", "--data", "series_conurbation.csv",
                         "--survey", "survey_conurbation.csv", "--chains", "1", "--iter", "120", "--warmup", "60",
                         "--seed", "2"]),
]

# cases that read outputs of an earlier case: (name, argv, [(source case, file)])
DEPENDENT = [
    ("reconstruct", ["reconstruct", "--config", "sim_study", "--data", "series_canonical.csv",
                     "--draws", "draws.bin", "--level", "0.8"], [("fit_approx", "draws.bin")]),
    ("diagnose", ["diagnose", "--draws", "draws.bin"], [("fit_exact", "draws.bin")]),
    ("prevalence", ["prevalence", "--config", "conurbation", "--data", "series_conurbation.csv",
                    "--draws", "draws.bin", "--survey", "survey_conurbation.csv", "--chains", "2",
                    "--iter", "400", "--warmup", "200", "--seed", "5"], [("fit_conurbation", "draws.bin")]),
]


def _workdir(tmp: Path, deps=()) -> Path:
    work = tmp / "work"
    shutil.copytree(FIXTURES, work)
    for case, name in deps:
        shutil.copy(GOLDEN / case / name, work / name)
    return work


def _run_case(work: Path, argv: list[str], monkeypatch) -> Path:
    monkeypatch.chdir(work)
    code = run_subcommand([*argv, "--out", "out"])
    assert code == EXIT_OK
    return work / "out"


ALL = [(n, a, []) for n, a in CASES] + DEPENDENT


@pytest.mark.parametrize("name,argv,deps", ALL, ids=[c[0] for c in ALL])
def test_golden(name, argv, deps, tmp_path, monkeypatch):
    out = _run_case(_workdir(tmp_path, deps), argv, monkeypatch)
    expected = sorted(p.name for p in (GOLDEN / name).iterdir())
    assert sorted(p.name for p in out.iterdir()) == expected
    for fname in expected:
        assert (out / fname).read_bytes() == (GOLDEN / name / fname).read_bytes(), fname


def test_manifest_lists_outputs_and_hash(tmp_path, monkeypatch):
    out = _run_case(_workdir(tmp_path), CASES[9][1], monkeypatch)
    man = RunManifest.read(out / MANIFEST)
    assert man.subcommand == "fit"
    assert man.seed == 1
    assert man.config_path == "package:sim_study"
    assert len(man.config_hash) == 64
    assert man.input_paths == ["series_canonical.csv"]
    assert set(man.outputs) == {"draws.bin", "draws.csv", "summary.csv", "reconstruction.csv"}


def test_rerun_from_manifest_is_identical(tmp_path, monkeypatch):
    work = _workdir(tmp_path)
    out = _run_case(work, CASES[0][1], monkeypatch)
    man = RunManifest.read(out / MANIFEST)
    assert run_subcommand([*man.argv[:-2], "--out", "again"]) == EXIT_OK
    for fname in man.outputs:
        assert (work / "again" / fname).read_bytes() == (out / fname).read_bytes()


def test_simulate_writes_fifty_files(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    argv = ["simulate", "--nu", "10", "--phi", "0.6", "--pi", "0.6", "--t", "50", "--burnin", "100", "--reps", "50",
            "--out", "sims"]
    assert run_subcommand(argv) == EXIT_OK
    files = sorted((tmp_path / "sims").glob("series_*.csv"))
    assert len(files) == 50
    df = pd.read_csv(files[0])
    assert list(df.columns) == ["stratum", "t", "x", "y"]
    assert len(df) == 50
    assert (df.y <= df.x).all()


def test_simulate_omit_x(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert run_subcommand(["simulate", "--nu", "5", "--phi", "0.5", "--pi", "0.5", "--t", "10", "--omit-x",
                           "--out", "o"]) == EXIT_OK
    assert list(pd.read_csv(tmp_path / "o" / "series_001.csv").columns) == ["stratum", "t", "y"]


def test_consequences_columns(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert run_subcommand(["consequences", "--nu", "5", "--phi", "0.8", "--grid", "99", "--out", "c"]) == EXIT_OK
    df = pd.read_csv(tmp_path / "c" / "consequences.csv")
    assert len(df) == 99
    for col in ("pi", "phi_lim", "nu_lim", "phi_prime", "nu_prime", "prop1_threshold"):
        assert col in df.columns


class TestExitCodes:
    def test_unknown_flag(self, tmp_path, monkeypatch, capsys):
        monkeypatch.chdir(tmp_path)
        assert run_subcommand(["consequences", "--nu", "5", "--phi", "0.8", "--bogus"]) == EXIT_USAGE
        assert "unrecognized arguments" in capsys.readouterr().err

    def test_unknown_subcommand(self):
        assert run_subcommand(["frobnicate"]) == EXIT_USAGE

    def test_unknown_engine(self):
        assert run_subcommand(["fit", "--engine", "nuts", "--data", "x.csv"]) == EXIT_USAGE

    def test_missing_parameters(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        assert run_subcommand(["simulate", "--nu", "10", "--t", "5"]) == EXIT_USAGE

    def test_validation_error(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        (tmp_path / "bad.csv").write_text("stratum,t,y\n1,1,3\n1,2,-1\n")
        assert run_subcommand(["fit", "--engine", "mom", "--data", "bad.csv", "--out", "o"]) == EXIT_INVALID

    def test_missing_file(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        assert run_subcommand(["fit", "--engine", "naive", "--data", "nope.csv", "--out", "o"]) == EXIT_INVALID

    def test_domain_error(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        assert run_subcommand(["consequences", "--nu", "5", "--phi", "1.2", "--out", "o"]) == EXIT_INVALID

    def test_numerical_failure(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        (tmp_path / "flat.csv").write_text("stratum,t,y\n" + "".join(f"1,{t},4\n" for t in range(1, 8)))
        assert run_subcommand(["fit", "--engine", "mom", "--data", "flat.csv", "--out", "o"]) == EXIT_NUMERICAL

    def test_no_manifest_on_failure(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        run_subcommand(["fit", "--engine", "naive", "--data", "nope.csv", "--out", "o"])
        assert not (tmp_path / "o" / MANIFEST).exists()


def regenerate():
    import tempfile

    class _Chdir:
        def chdir(self, path):
            import os
            os.chdir(path)

    for name, argv, deps in ALL:
        with tempfile.TemporaryDirectory() as tmp:
            out = _run_case(_workdir(Path(tmp), deps), argv, _Chdir())
            target = GOLDEN / name
            if target.exists():
                shutil.rmtree(target)
            shutil.copytree(out, target)
        print(f"regenerated {name}: {json.loads((target / MANIFEST).read_text())['outputs']}")


if __name__ == "__main__" and "--regen" in sys.argv:
    regenerate()
