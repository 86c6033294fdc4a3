import pandas as pd
import pytest

from boltzmann_nsf.cli import COMMANDS, build_parser, main
from boltzmann_nsf.collision_core import CONSERVATION_TOLERANCE, ENERGY_DEFECT_TOLERANCE
from boltzmann_nsf.config import ENV_PREFIX
from boltzmann_nsf.spectral_branches import read_summary

SMALL = """\
seed: 3
grid:
  n: {n}
  R: {R}
kernel:
  theta_nodes: 8
  azimuth_nodes: 4
lattice:
  max_mode: 2
solver:
  T: 0.05
  dt: 0.01
  eps: 0.5
sweep:
  nu1: 0.5
  nu2: 0.7
  thermal_amplitude: 0.5
output: {output}
cache: null
"""


@pytest.fixture(autouse=True)
def _isolated(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    for name in ("OUTPUT", "CACHE", "THREADS", "SEED", "CONFIG"):
        monkeypatch.delenv(ENV_PREFIX + name, raising=False)


def _config(tmp_path, n=4, R=3.0):
    path = tmp_path / f"config-{n}.yaml"
    path.write_text(SMALL.format(n=n, R=R, output=tmp_path / "out"), encoding="utf-8")
    return str(path)


def test_every_command_is_registered():
    parser = build_parser()
    for command in COMMANDS:
        assert parser.parse_args([command, "--threads", "2"]).threads == 2


def test_no_command_prints_help(capsys):
    assert main([]) == 0
    assert "sweep-epsilon" in capsys.readouterr().out


def test_missing_config_exits_with_2(tmp_path):
    assert main(["report", "--config", str(tmp_path / "absent.yaml")]) == 2


def test_invalid_config_exits_with_2(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("grid:\n  n: 5\n", encoding="utf-8")
    assert main(["report", "--config", str(path)]) == 2


def test_simulate_nsf(tmp_path):
    assert main(["simulate-nsf", "--config", _config(tmp_path)]) == 0
    out = tmp_path / "out"
    assert (out / "nsf_trajectory.csv").exists()
    assert (out / "nsf_norms.csv").exists()


def test_simulate_kinetic(tmp_path):
    assert main(["simulate-kinetic", "--config", _config(tmp_path)]) == 0
    assert (tmp_path / "out" / "kinetic_trajectory.csv").exists()
    assert (tmp_path / "out" / "kinetic_norms.csv").exists()


def test_output_flag_overrides_the_file(tmp_path):
    elsewhere = tmp_path / "elsewhere"
    assert main(["simulate-nsf", "--config", _config(tmp_path), "--output", str(elsewhere)]) == 0
    assert (elsewhere / "nsf_trajectory.csv").exists()


def test_check_collision_gates_the_raw_moment_defects(tmp_path):
    assert main(["check-collision", "--config", _config(tmp_path)]) == 0
    table = pd.read_csv(tmp_path / "out" / "collision_check.csv").set_index("quantity")["value"]
    assert table["raw_mass_defect"] <= CONSERVATION_TOLERANCE
    assert table["raw_momentum_defect"] <= CONSERVATION_TOLERANCE
    assert 0 < table["raw_energy_defect"] <= ENERGY_DEFECT_TOLERANCE


def test_viscosity_summary(tmp_path):
    assert main(["viscosity", "--config", _config(tmp_path, n=6, R=4.5)]) == 0
    summary = read_summary(tmp_path / "out" / "viscosity_summary.txt")
    assert float(summary["nu1"]) > 0
    assert float(summary["nu2"]) > 0
    assert float(summary["branch_mismatch"]) <= 0.05


def test_report_collects_artifacts(tmp_path):
    config = _config(tmp_path)
    assert main(["simulate-nsf", "--config", config]) == 0
    assert main(["report", "--config", config]) == 0
    report = (tmp_path / "out" / "report.csv").read_text(encoding="utf-8")
    assert "nsf_norms.csv" in report
