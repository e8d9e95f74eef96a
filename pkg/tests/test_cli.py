import json
import subprocess
import sys

import pytest

from epinn.cli import main
from epinn.config import ConfigError, DEFAULTS, load_config, parse_override


def run(tmp_path, *argv):
    return main(["--output-dir", str(tmp_path), *argv])


def test_parse_override():
    assert parse_override("tepinn.mesh=[4, 3]") == {"tepinn": {"mesh": [4, 3]}}
    with pytest.raises(ConfigError):
        parse_override("novalue")


def test_config_file_and_overrides(tmp_path):
    f = tmp_path / "c.yaml"
    f.write_text("thermal:\n  h: 20.0\n")
    cfg = load_config(f, ["thermal.T0=30"])
    assert cfg["thermal"]["h"] == 20.0 and cfg["thermal"]["T0"] == 30
    assert cfg["thermal"]["nx"] == DEFAULTS["thermal"]["nx"]


def test_config_env(tmp_path, monkeypatch):
    f = tmp_path / "c.yaml"
    f.write_text("seed: 7\n")
    monkeypatch.setenv("EPINN_CONFIG", str(f))
    assert load_config()["seed"] == 7


@pytest.mark.parametrize("text", ["bogus: 1\n", "thermal: 3\n", "thermal:\n  h: -1\n", "- a\n"])
def test_bad_config_exit_code(tmp_path, text):
    f = tmp_path / "c.yaml"
    f.write_text(text)
    assert main(["--config", str(f), "--output-dir", str(tmp_path), "solve-magnetic", "--xi", "5", "5", "5", "5"]) == 2


def test_out_of_range_design_is_config_error(tmp_path, capsys):
    assert run(tmp_path, "solve-magnetic", "--xi", "4", "5", "5", "5") == 2
    assert "config error" in capsys.readouterr().err


def test_missing_model_is_config_error(tmp_path):
    assert run(tmp_path, "evaluate", "--n", "1") == 2


def test_solve_magnetic_and_thermal(tmp_path, capsys):
    assert run(tmp_path, "solve-magnetic", "--xi", "5", "13", "15", "15", "--csv-potential") == 0
    mag = json.loads(capsys.readouterr().out)
    assert (tmp_path / "magnetic" / "A.csv").exists()
    assert mag["delivered_power_full_plate"] == pytest.approx(2 * mag["total_power_half_plate"], rel=1e-9)
    assert run(tmp_path, "solve-thermal", "--xi", "5", "13", "15", "15") == 0
    th = json.loads(capsys.readouterr().out)
    assert 1100 < th["mean_top_T"] < 1150
    assert run(tmp_path, "solve-thermal", "--q-file", str(tmp_path / "magnetic" / "Q.grid")) == 0
    th2 = json.loads(capsys.readouterr().out)
    assert th2["mean_top_T"] == pytest.approx(th["mean_top_T"], abs=0.5)
    assert (tmp_path / "config.yaml").exists()


def test_pipeline_small(tmp_path, capsys):
    small = ["--set", "dataset.levels=2", "--set", "dataset.n_test=2", "--set", "mnn.layers=[6, 8, 1]",
             "--set", "mnn.epochs=2", "--set", "thnn.epochs=2", "--set", "thnn.hidden=[8]", "--set", "thnn.mesh=[6, 3]",
             "--set", "thnn.n_validation=2", "--set", "thnn.n_xi=2", "--set", "snn.n_train=6", "--set", "snn.epochs=2",
             "--set", "optimizer.de.pop=5", "--set", "optimizer.de.generations=1", "--set", "optimizer.nsga2.pop=6",
             "--set", "optimizer.nsga2.generations=1", "--set", "optimizer.gradient.max_calls=4"]
    assert run(tmp_path, *small, "gen-dataset") == 0
    assert json.loads(capsys.readouterr().out) == {"train": 16, "test": 2, "failed": 0}
    assert run(tmp_path, *small, "train", "mnn") == 0
    assert run(tmp_path, *small, "train", "hnn") == 0
    assert run(tmp_path, *small, "train", "snn") == 0
    assert run(tmp_path, *small, "evaluate", "--n", "2") == 0
    capsys.readouterr()
    for problem, ev in [("prox", "hnn"), ("diff", "hnn"), ("constrained", "hnn"), ("pareto", "hnn"),
                        ("prox", "snn"), ("pareto", "snn"), ("prox", "fd")]:
        assert run(tmp_path, *small, "optimize", problem, "--evaluator", ev) == 0, (problem, ev)
        doc = json.loads(capsys.readouterr().out)
        assert len(doc["best_xi"]) == 4
    assert (tmp_path / "optimize" / "hnn" / "pareto.csv").exists()
    assert run(tmp_path, *small, "optimize", "constrained", "--evaluator", "snn") == 2


def test_train_pinn_and_compare(tmp_path, capsys):
    small = ["--set", "tepinn.mesh=[6, 3]", "--set", "tepinn.epochs=4", "--set", "tepinn.checkpoint_every=2",
             "--set", "tepinn.layers=[2, 6, 1]"]
    assert run(tmp_path, *small, "train", "pinn", "--loss", "residual", "--eta2", "10") == 0
    capsys.readouterr()
    assert run(tmp_path, *small, "compare-losses", "--energy-epochs", "4", "--residual-epochs", "6") == 0
    rows = (tmp_path / "compare" / "compare_losses.csv").read_text().splitlines()
    assert rows[0].startswith("epoch,energy_err,residual_err")
    assert [int(r.split(",")[0]) for r in rows[1:]] == [2, 4, 6]


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "epinn.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "optimize" in out.stdout
