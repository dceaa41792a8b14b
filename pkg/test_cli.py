#!/usr/bin/env python3
"""
End-to-end tests of the command-line runner: config validation, exit codes
and the result files of each subcommand.
"""

import csv
import json
import os
import sys
from pathlib import Path

import pytest

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent))

from CovariantTCL.main import EXIT_BREAKDOWN, EXIT_CONFIG, EXIT_IDENTITY, EXIT_OK, run
from CovariantTCL.utils.config_validator import validate_run_config, worker_count
from CovariantTCL.utils.exceptions import ConfigError

CONFIG_DIR = Path(__file__).parent / "CovariantTCL" / "configs"


def write_config(tmp_path, document, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(document, indent=2), encoding="utf-8")
    return path


def exchange_config(n=100, t1=2.0, run_section=None, g=0.2):
    return {
        "model": {"name": "two_qubit_exchange", "params": {"omega": 1.0, "g": g}},
        "foliation": {"t0": 0.0, "t1": t1, "n": n},
        "run": run_section or {},
    }


def test_identities_pass_on_dephasing_model(tmp_path):
    """All identity checks pass on a small lab-frame dephasing run"""
    config = write_config(tmp_path, {
        "model": {"name": "dephasing", "params": {"omega": 1.0, "g": 0.2, "n_trunc": 4}, "picture": "lab"},
        "foliation": {"t1": 2.0, "n": 50},
        "run": {"samples": 20, "pairs": 5},
    })
    assert run(config, "identities", tmp_path / "out", quiet=True) == EXIT_OK
    report = json.loads((tmp_path / "out" / "identities.json").read_text())
    assert report["passed"] is True
    names = {check["name"] for check in report["checks"]}
    assert {"inverse_pairing", "composition", "theta_recursion", "relabel_invariance"} <= names


def test_failed_identity_exits_with_identity_code(tmp_path):
    """An unreachable tolerance turns into exit code 4"""
    document = exchange_config(n=40, run_section={"samples": 5, "pairs": 10})
    document["tolerances"] = {"inverse_pairing": 1e-300}
    config = write_config(tmp_path, document)
    assert run(config, "identities", tmp_path / "out", quiet=True) == EXIT_IDENTITY


def test_empty_grid_is_a_config_error(tmp_path, capsys):
    """n = 0 is rejected before any numerics run"""
    config = write_config(tmp_path, exchange_config(n=0))
    assert run(config, "simulate", tmp_path / "out", quiet=True) == EXIT_CONFIG
    assert "foliation" in capsys.readouterr().err
    assert not (tmp_path / "out" / "simulate.csv").exists()


def test_unknown_key_reports_field_and_line(tmp_path):
    """Schema errors name the offending field and its line"""
    path = tmp_path / "config.json"
    path.write_text(
        '{\n'
        '  "model": {\n'
        '    "name": "dephasing",\n'
        '    "colour": 3\n'
        '  },\n'
        '  "foliation": {"t1": 1.0, "n": 10}\n'
        '}\n',
        encoding="utf-8",
    )
    with pytest.raises(ConfigError) as excinfo:
        validate_run_config(path)
    assert excinfo.value.field == "model.colour"
    assert excinfo.value.line == 4


def test_malformed_and_missing_configs(tmp_path):
    """Unparseable or absent files exit with the input-error code"""
    broken = tmp_path / "broken.json"
    broken.write_text('{"model": {"name": "dephasing",}', encoding="utf-8")
    assert run(broken, "simulate", tmp_path / "out", quiet=True) == EXIT_CONFIG
    assert run(tmp_path / "absent.json", "simulate", tmp_path / "out", quiet=True) == EXIT_CONFIG
    config = write_config(tmp_path, exchange_config())
    assert run(config, "teleport", tmp_path / "out", quiet=True) == EXIT_CONFIG


def test_simulate_output_is_deterministic(tmp_path):
    """Two runs of the same config write byte-identical tables"""
    config = write_config(tmp_path, exchange_config(n=80))
    assert run(config, "simulate", tmp_path / "a", quiet=True) == EXIT_OK
    assert run(config, "simulate", tmp_path / "b", quiet=True) == EXIT_OK
    first = (tmp_path / "a" / "simulate.csv").read_bytes()
    assert first == (tmp_path / "b" / "simulate.csv").read_bytes()
    lines = first.decode().splitlines()
    assert len(lines) == 82
    assert lines[0].startswith("t,rho00_re,rho00_im")


def test_converge_reports_second_order(tmp_path):
    """Fitted refinement order is two"""
    config = write_config(tmp_path, exchange_config(t1=3.0, run_section={"n_values": [100, 200, 400]}))
    assert run(config, "converge", tmp_path / "out", quiet=True) == EXIT_OK
    report = json.loads((tmp_path / "out" / "converge.json").read_text())
    assert float(report["fitted_order"]) == pytest.approx(2.0, abs=0.3)


def test_channel_report_flags(tmp_path):
    """The channel at t = 1 is completely positive and matches the direct map"""
    config = write_config(tmp_path, exchange_config(n=1000, t1=1.0))
    assert run(config, "channel", tmp_path / "out", quiet=True) == EXIT_OK
    report = json.loads((tmp_path / "out" / "channel.json").read_text())
    assert report["slice"] == 1000
    assert report["choi_psd"] is True
    assert report["consistent"] is True
    assert float(report["trace_preservation_error"]) <= 1e-8


def _flagged_rows(path):
    with open(path, newline="", encoding="utf-8") as handle:
        return [row["t"] for row in csv.DictReader(handle) if row["flag"]]


def test_weak_coupling_rows_are_clean(tmp_path):
    """A successful weak-coupling run agrees with the oracle on every row"""
    config = write_config(tmp_path, exchange_config(n=1000, t1=5.0, g=0.1))
    assert run(config, "simulate", tmp_path / "out", quiet=True) == EXIT_OK
    assert _flagged_rows(tmp_path / "out" / "simulate.csv") == []


def test_strong_coupling_reports_breakdown(tmp_path, capsys):
    """Ill-conditioned theta^-1 or W stops the run with a slice-indexed diagnostic instead of flagged rows"""
    code = run(CONFIG_DIR / "strong_coupling.json", "simulate", tmp_path / "out", quiet=True)
    assert code == EXIT_BREAKDOWN
    assert "breakdown: slice" in capsys.readouterr().err
    assert not (tmp_path / "out" / "simulate.csv").exists()


def test_perturb_and_linresp_artifacts(tmp_path):
    """Both perturbative subcommands write their tables and scaling reports"""
    perturb_config = write_config(tmp_path, {
        "model": {"name": "qubit_boson", "params": {"omega": 1.0, "g": 0.1, "n_trunc": 5},
                  "rho0": {"bloch": [0.6, 0.0, 0.8]}},
        "foliation": {"t1": 2.0, "n": 100},
        "run": {"strengths": [0.05, 0.1, 0.2]},
    }, name="perturb.json")
    assert run(perturb_config, "perturb", tmp_path / "out", quiet=True) == EXIT_OK
    assert (tmp_path / "out" / "perturb.csv").exists()
    scaling = json.loads((tmp_path / "out" / "perturb_scaling.json").read_text())
    assert len(scaling["errors"]) == 3

    linresp_config = write_config(tmp_path, {
        "model": {"name": "two_qubit_exchange", "params": {"omega": 1.0, "g": 0.0},
                  "rho0": {"bloch": [0.3, 0.2, 0.5]}},
        "foliation": {"t1": 3.0, "n": 300},
        "run": {"drive": {"amplitude": 0.02, "frequency": 0.7}},
    }, name="linresp.json")
    assert run(linresp_config, "linresp", tmp_path / "out", quiet=True) == EXIT_OK
    scaling = json.loads((tmp_path / "out" / "linresp_scaling.json").read_text())
    assert float(scaling["fitted_slope"]) == pytest.approx(2.0, abs=0.3)


def test_sweep_needs_nonzero_coupling(tmp_path):
    """A coupling sweep over an uncoupled model is an input error"""
    config = write_config(tmp_path, {
        "model": {"name": "qubit_boson", "params": {"omega": 1.0, "g": 0.0, "n_trunc": 4}},
        "foliation": {"t1": 1.0, "n": 20},
    })
    assert run(config, "perturb", tmp_path / "out", quiet=True) == EXIT_CONFIG


def test_invalid_thread_count_falls_back(monkeypatch):
    """A malformed TCL_NUM_THREADS is ignored with a warning"""
    monkeypatch.setenv("TCL_NUM_THREADS", "many")
    assert worker_count() == (os.cpu_count() or 1)
    monkeypatch.setenv("TCL_NUM_THREADS", "3")
    assert worker_count() == 3
