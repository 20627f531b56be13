import json
import subprocess
import sys

import numpy as np
import pytest

from dieselempc.cli import main
from dieselempc.ident import DriveCycle, write_cycle_csv


@pytest.fixture(scope="module")
def quick_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("quick")
    assert main(["pipeline", "--quick", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def short_csv(tmp_path_factory):
    t = np.arange(30) * 0.2
    cyc = DriveCycle("short", t, np.full(30, 1500.0), np.where(t < 3.0, 40.0, 90.0))
    return write_cycle_csv(cyc, tmp_path_factory.mktemp("cyc") / "short.csv")


def weights(run, kind):
    return str(next((run / "cache").glob(f"{kind}-*/{kind}.json")))


def test_help_lists_commands():
    out = subprocess.run([sys.executable, "-m", "dieselempc.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("train-fnn", "tune-hparams", "gen-ident-data", "train-rnn", "simulate", "compare-scenarios",
                "pipeline"):
        assert cmd in out.stdout


def test_pipeline_outputs(quick_run):
    manifest = json.loads((quick_run / "manifest.json").read_text())
    assert manifest["fuel_bound_violations"] == 0
    assert set(manifest["stages"]) == {"data", "tune", "fnn", "ident", "rnn"}
    assert (quick_run / "comparison_case_study.csv").exists()


def test_rerun_hits_every_cache(quick_run, capsys):
    assert main(["pipeline", "--quick", "--out", str(quick_run)]) == 0
    manifest = json.loads((quick_run / "manifest.json").read_text())
    assert all(manifest["cache_hits"].values())


def test_simulate_and_compare(quick_run, short_csv, tmp_path, capsys):
    args = ["--fnn", weights(quick_run, "fnn"), "--rnn", weights(quick_run, "rnn"), "--cycle", str(short_csv),
            "--out", str(tmp_path)]
    assert main(["simulate", "--scenario", "baseline", *args]) == 0
    assert main(["simulate", "--scenario", "B", *args]) == 0
    files = [str(tmp_path / "baseline_short_metrics.json"), str(tmp_path / "B_short_metrics.json")]
    capsys.readouterr()
    assert main(["compare-scenarios", *files, "--out", str(tmp_path / "cmp.csv")]) == 0
    text = capsys.readouterr().out
    assert "cycle: short" in text and "reference" in text
    assert (tmp_path / "cmp.csv").exists()


def test_ident_then_train_rnn(quick_run, short_csv, tmp_path):
    assert main(["gen-ident-data", "--fnn", weights(quick_run, "fnn"), "--cycle", str(short_csv),
                 "--out", str(tmp_path)]) == 0
    assert main(["train-rnn", "--quick", "--ident", str(tmp_path / "ident.csv"), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "rnn.json").exists() and (tmp_path / "rnn_curves.csv").exists()


def test_train_fnn_and_tune_reuse_cache(quick_run, capsys):
    assert main(["train-fnn", "--quick", "--out", str(quick_run)]) == 0
    assert "nox_mae" in capsys.readouterr().out
    assert main(["tune-hparams", "--quick", "--out", str(quick_run)]) == 0
    assert "heatmap" in capsys.readouterr().out


def test_missing_weights_is_a_clean_error(tmp_path, capsys):
    code = main(["simulate", "--scenario", "A", "--fnn", str(tmp_path / "nope.json"),
                 "--rnn", str(tmp_path / "nope.json"), "--out", str(tmp_path)])
    assert code == 2 and "error:" in capsys.readouterr().err
