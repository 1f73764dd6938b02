"""End-to-end command line runs on small configurations.

Each command is exercised through ``main`` with an isolated output
directory; one test goes through the installed module entry point to check
the wiring.  Byte-level determinism of every table is asserted directly.
"""

import subprocess
import sys

import pytest

from limstrain.cli import main

SOLVE_TOML = """\
seed = 7

[law]
a = 2.0

[geometry]
kind = "rectangle"
resolution = [6, 6]
dirichlet = ["left"]

[data]
f = [0.1, 0.0]

[solver]
schedule = [2, 4, 8, 16]
"""

ORACLE_TOML = """\
[geometry]
kind = "interval"
resolution = [32]
dirichlet = ["left"]

[data]
f = 1.0

[solver]
schedule = [4, 8, 16, 32]
"""


@pytest.fixture()
def solve_config(tmp_path):
    p = tmp_path / "run.toml"
    p.write_text(SOLVE_TOML)
    return p


def run_cli(config, command, out, extra=()):
    return main(["--config", str(config), "--command", command,
                 "--out", str(out), *extra])


def test_check_law_outputs(tmp_path, solve_config):
    out = tmp_path / "law"
    assert run_cli(solve_config, "check-law", out) == 0
    report = (out / "structure_report.csv").read_text()
    assert report.splitlines()[0] == "check,value"
    assert "coercivity_ok,true" in report
    assert (out / "manifest.toml").exists()


def test_solve_outputs(tmp_path, solve_config):
    out = tmp_path / "solve"
    assert run_cli(solve_config, "solve", out) == 0
    for name in ("solve_report.csv", "apriori.csv", "duality.csv",
                 "mesh.txt", "u.txt", "T.txt", "manifest.toml"):
        assert (out / name).exists(), name
    lines = (out / "solve_report.csv").read_text().splitlines()
    assert len(lines) == 5  # header + one row per schedule entry
    manifest = (out / "manifest.toml").read_text()
    assert 'command = "solve"' in manifest
    assert "seed = 7" in manifest


def test_diagnose_outputs(tmp_path, solve_config):
    out = tmp_path / "diag"
    assert run_cli(solve_config, "diagnose", out) == 0
    for name in ("renorm.csv", "maximal_map.csv", "maximal_summary.csv",
                 "boundary_defect.csv", "boundary_defect_summary.csv",
                 "directions.csv"):
        assert (out / name).exists(), name
    renorm = (out / "renorm.csv").read_text().splitlines()
    assert renorm[0] == "k,residual,transport,equilibrium_residual,quad_tolerance"
    assert len(renorm) == 5  # three quantile levels plus the inactive one


def test_sweep_outputs(tmp_path):
    cfg = tmp_path / "sweep.toml"
    cfg.write_text(SOLVE_TOML + '\n[sweep]\na_values = [1.0, 2.0]\n')
    out = tmp_path / "sw"
    assert run_cli(cfg, "sweep", out) == 0
    summary = (out / "concentration_summary.csv").read_text().splitlines()
    assert summary[0].startswith("a,interior_concentrating")
    assert len(summary) == 3
    assert (out / "a_1" / "maximal_summary.csv").exists()
    assert (out / "a_2" / "renorm.csv").exists()


def test_oracle_compare_pass_and_fail(tmp_path):
    cfg = tmp_path / "orc.toml"
    cfg.write_text(ORACLE_TOML)
    out = tmp_path / "orc"
    assert run_cli(cfg, "oracle-compare", out) == 0
    table = (out / "oracle_compare.csv").read_text().splitlines()
    assert table[-1].endswith("true")

    strict = tmp_path / "strict.toml"
    strict.write_text(ORACLE_TOML + '\n[oracle]\nu_linf_tol = 1e-9\n')
    assert run_cli(strict, "oracle-compare", tmp_path / "orc2") == 4

    wrong_geo = tmp_path / "geo.toml"
    wrong_geo.write_text(SOLVE_TOML)
    assert run_cli(wrong_geo, "oracle-compare", tmp_path / "orc3") == 2


def test_exit_codes(tmp_path, solve_config):
    assert main(["--config", str(tmp_path / "missing.toml"),
                 "--command", "solve", "--out", str(tmp_path / "x")]) == 2

    bad = tmp_path / "bad.toml"
    bad.write_text("[solver]\nbogus = 1\n")
    assert run_cli(bad, "solve", tmp_path / "y") == 2

    # unsolvable: incompatible pure-Neumann data is a config-level error
    incompat = tmp_path / "incompat.toml"
    incompat.write_text(SOLVE_TOML.replace('dirichlet = ["left"]', "dirichlet = []"))
    assert run_cli(incompat, "solve", tmp_path / "z") == 2

    # solver breakdown: huge load with a starved iteration budget
    hard = tmp_path / "hard.toml"
    hard.write_text(SOLVE_TOML.replace("f = [0.1, 0.0]", "f = [80.0, 0.0]")
                    .replace("schedule = [2, 4, 8, 16]",
                             "schedule = [64]\nmax_iter = 2"))
    assert run_cli(hard, "solve", tmp_path / "w") == 3


def test_seed_and_out_overrides(tmp_path, solve_config, monkeypatch):
    out_env = tmp_path / "from_env"
    monkeypatch.setenv("LIMSTRAIN_OUT", str(out_env))
    assert main(["--config", str(solve_config), "--command", "check-law"]) == 0
    assert (out_env / "structure_report.csv").exists()

    # explicit flag beats the environment
    out_flag = tmp_path / "from_flag"
    assert main(["--config", str(solve_config), "--command", "check-law",
                 "--out", str(out_flag), "--seed", "123"]) == 0
    assert (out_flag / "structure_report.csv").exists()
    assert "seed = 123" in (out_flag / "manifest.toml").read_text()


def test_thread_env_must_be_integer(tmp_path, solve_config, monkeypatch):
    monkeypatch.setenv("LIMSTRAIN_THREADS", "many")
    assert run_cli(solve_config, "check-law", tmp_path / "t") == 2


def test_reruns_byte_identical(tmp_path, solve_config):
    out1 = tmp_path / "r1"
    out2 = tmp_path / "r2"
    assert run_cli(solve_config, "diagnose", out1) == 0
    assert run_cli(solve_config, "diagnose", out2) == 0
    names = sorted(p.name for p in out1.iterdir())
    assert names == sorted(p.name for p in out2.iterdir())
    for name in names:
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name


def test_manifest_reingestion_reproduces_tables(tmp_path, solve_config):
    out1 = tmp_path / "m1"
    assert run_cli(solve_config, "solve", out1) == 0
    out2 = tmp_path / "m2"
    assert run_cli(out1 / "manifest.toml", "solve", out2) == 0
    assert (out1 / "solve_report.csv").read_bytes() == (out2 / "solve_report.csv").read_bytes()
    assert (out1 / "duality.csv").read_bytes() == (out2 / "duality.csv").read_bytes()


def test_module_entry_point(tmp_path, solve_config):
    out = tmp_path / "proc"
    res = subprocess.run(
        [sys.executable, "-m", "limstrain.cli", "--config", str(solve_config),
         "--command", "check-law", "--out", str(out), "--threads", "1"],
        capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert (out / "structure_report.csv").exists()
