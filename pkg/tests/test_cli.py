import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from reflectron.cli import main


def read_table(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# config_sha256=")
    return list(csv.DictReader(lines[1:]))


def write_ini(tmp_path, text, name="cfg.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_spectra_of_rank_one_chain(tmp_path):
    assert main(["spectra", "--config", "bundled:rank1.ini", "--out", str(tmp_path)]) == 0
    rows = {r["name"]: r for r in read_table(tmp_path / "spectra.csv") if r["kind"] == "scalar"}
    assert float(rows["spectral_gap"]["value"]) == pytest.approx(1.0, abs=1e-12)
    assert float(rows["phase_gap"]["value"]) == pytest.approx(np.pi, abs=1e-9)


def test_spectra_csv_and_json_agree(tmp_path):
    assert main(["spectra", "--config", "bundled:deliberate.ini", "--out", str(tmp_path / "c")]) == 0
    assert main(["spectra", "--config", "bundled:deliberate.ini", "--out", str(tmp_path / "j"),
                 "--format", "json"]) == 0
    rows = read_table(tmp_path / "c" / "spectra.csv")
    data = json.loads((tmp_path / "j" / "spectra.json").read_text())
    scalars = {r["name"]: float(r["value"]) for r in rows if r["kind"] == "scalar"}
    assert scalars["spectral_gap"] == data["spectral_gap"]
    assert scalars["phase_gap"] == data["phase_gap"]
    phases = [float(r["value"]) for r in rows if r["kind"] == "walk_span_eigenphase"]
    assert phases == data["walk_span_eigenphases"]
    assert data["phase_gap_bound_holds"] is True


def test_options_work_before_the_subcommand(tmp_path):
    assert main(["--out", str(tmp_path), "--format", "json", "spectra", "--config", "bundled:rank1.ini"]) == 0
    assert (tmp_path / "spectra.json").exists()


def test_malformed_chain_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["spectra", "--chain", str(bad), "--out", str(tmp_path)]) == 2
    assert "invalid chain" in capsys.readouterr().err


def test_non_stochastic_chain_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"n": 2, "columns": [[0.5, 0.5], [0.6, 0.5]]}))
    assert main(["spectra", "--chain", str(bad), "--out", str(tmp_path)]) == 2
    assert "sum" in capsys.readouterr().err


def test_missing_config_exits_2(tmp_path):
    assert main(["spectra", "--config", str(tmp_path / "nope.ini"), "--out", str(tmp_path)]) == 2


def test_out_of_range_flags_exit_2(tmp_path):
    assert main(["deliberate", "--config", "bundled:rank1.ini", "--flags", "9", "--out", str(tmp_path)]) == 2


def test_deliberate_is_deterministic(tmp_path):
    args = ["deliberate", "--config", "bundled:deliberate.ini", "--trials", "2000", "--seed", "5"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    for name in ("deliberate-classical.csv", "deliberate-quantum.csv", "deliberate-quantum-summary.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_deliberate_ideal_quantum_matches_target(tmp_path):
    assert main(["deliberate", "--config", "bundled:deliberate.ini", "--agent", "quantum", "--mode", "ideal",
                 "--trials", "20000", "--out", str(tmp_path), "--format", "json"]) == 0
    data = json.loads((tmp_path / "deliberate-quantum.json").read_text())
    assert data["tv_to_target"] <= data["tv_radius_3sigma"]
    assert data["reflection_mode"] == "ideal"
    assert sum(data["frequencies"][2:]) == 0


def test_deliberate_povm_retry_mode(tmp_path):
    assert main(["deliberate", "--config", "bundled:deliberate.ini", "--agent", "quantum", "--retry-mode", "povm",
                 "--trials", "500", "--out", str(tmp_path), "--format", "json"]) == 0
    data = json.loads((tmp_path / "deliberate-quantum.json").read_text())
    assert data["retry_mode"] == "povm"
    assert sum(data["frequencies"]) == pytest.approx(1.0)


def test_retry_cap_exceeded_exits_3(tmp_path, capsys):
    chain = tmp_path / "thin.json"
    p = [0.001, 0.333, 0.333, 0.333]
    chain.write_text(json.dumps({"n": 4, "columns": [p] * 4}))
    cfg = write_ini(tmp_path, f"[chain]\nfile = {chain}\nflags = 0\n"
                              "[quantum]\nretry_cap = 1\ncheck_cap = 1\n")
    code = main(["deliberate", "--config", cfg, "--agent", "quantum", "--trials", "200", "--out", str(tmp_path)])
    assert code == 3
    assert "RetryCapExceeded" in capsys.readouterr().err


def test_empty_ensemble_exits_2(tmp_path):
    cfg = write_ini(tmp_path, "[bench]\nn = 4\n")
    assert main(["bench", "--config", cfg, "--out", str(tmp_path)]) == 2


def test_bench_writes_hashed_outputs(tmp_path):
    cfg = write_ini(tmp_path, "[bench]\nn = 5\neps_exponents = 1, 2, 3\ngap_exponents = 0, 2\ntrials = 50\n")
    assert main(["bench", "--config", cfg, "--out", str(tmp_path)]) == 0
    csvs = list(tmp_path.glob("scaling-*.csv"))
    jsons = list(tmp_path.glob("scaling-*.json"))
    assert len(csvs) == len(jsons) == 1
    digest = json.loads(jsons[0].read_text())["config_sha256"]
    assert csvs[0].name == f"scaling-{digest[:12]}.csv"
    assert len(read_table(csvs[0])) == 6
    before = csvs[0].read_bytes()
    assert main(["bench", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert csvs[0].read_bytes() == before


def test_bench_with_episodes(tmp_path):
    cfg = write_ini(tmp_path, "[bench]\nn = 4\neps_exponents = 1, 2, 3\ngap_exponents = 0\ntrials = 20\n"
                              "[episodes]\nactions = 3\nswitch_period = 20\nsteps = 60\nbudget = 40\n"
                              "agents = standard, classical\n")
    assert main(["bench", "--config", cfg, "--episodes", "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "episodes-summary.json").read_text())
    assert set(summary["agents"]) == {"standard", "classical"}
    rows = read_table(tmp_path / "episodes-classical.csv")
    assert len(rows) == 60


def test_episodes_budget_override(tmp_path):
    cfg = write_ini(tmp_path, "[episodes]\nactions = 4\nsteps = 40\nagents = quantum\n")
    assert main(["episodes", "--config", cfg, "--budget", "1", "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "episodes-summary.json").read_text())
    assert summary["time_budget"] == 1
    rows = read_table(tmp_path / "episodes-quantum.csv")
    assert all((int(r["internal_ops"]) > 1) == (r["timed_out"] == "1") for r in rows)
    assert 0 < summary["agents"]["quantum"]["timed_out_fraction"] < 1


def test_unknown_agent_kind_exits_2(tmp_path):
    cfg = write_ini(tmp_path, "[episodes]\nagents = oracle\n")
    assert main(["episodes", "--config", cfg, "--out", str(tmp_path)]) == 2


def test_figures(tmp_path):
    pytest.importorskip("matplotlib")
    cfg = write_ini(tmp_path, "[episodes]\nactions = 3\nsteps = 50\nagents = standard\n")
    assert main(["episodes", "--config", cfg, "--figures", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "episodes.png").stat().st_size > 0


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "reflectron.cli", "spectra", "--config", "bundled:rank1.ini",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.strip().endswith("spectra.csv")
