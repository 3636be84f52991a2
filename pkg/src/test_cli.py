"""End-to-end tests of the melm command line"""

# pylint: disable=redefined-outer-name

import json
import os

import numpy as np
import pandas as pd
import pytest
from PIL import Image

from cli import run
from config import Settings
from dataset import class_partition, load_dataset
from db import ModelRegistry
from model_file import load_model
from objective import dcs

DATA_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "data")
SAMPLE = os.path.join(DATA_DIR, "sample_small.csv")
SAMPLE_LIBSVM = os.path.join(DATA_DIR, "sample_small.libsvm")


@pytest.fixture
def settings(tmp_path):
    """Logs and registry kept inside the test's temporary directory"""
    return Settings(log_dir=str(tmp_path / "logs"), registry_path=str(tmp_path / "db" / "models.json"))


@pytest.fixture
def fitted_model(tmp_path, settings):
    path = str(tmp_path / "model.json")
    assert run(["fit", "--data", SAMPLE, "--k", "2", "--restarts", "3", "--seed", "1", "--out", path], settings) == 0
    return path


def _log_entries(settings):
    entries = []
    for name in sorted(os.listdir(settings.log_dir)):
        with open(os.path.join(settings.log_dir, name), "r", encoding="utf-8") as f:
            entries.append(json.load(f))
    return entries


def test_fit_writes_model_and_registers(capsys, fitted_model, settings):
    model = load_model(fitted_model)
    assert (model.d, model.k, model.restarts, model.seed) == (3, 2, 3, 1)
    assert np.allclose(model.v.v.T @ model.v.v, np.eye(2), atol=1e-6)
    assert "D_CS" in capsys.readouterr().out

    x_minus, x_plus = class_partition(load_dataset(SAMPLE))
    assert dcs(model.v, x_plus, x_minus) == pytest.approx(model.dcs_achieved, abs=1e-8)

    registry = ModelRegistry(settings.registry_path)
    records = registry.list_models()
    registry.close()
    assert len(records) == 1
    assert records[0]["model_path"] == os.path.abspath(fitted_model)
    assert records[0]["fingerprint"] == model.fingerprint


def test_fit_is_deterministic_across_threads(tmp_path, settings):
    paths = []
    for threads in ("1", "3"):
        path = str(tmp_path / f"model_{threads}.json")
        argv = ["fit", "--data", SAMPLE, "--k", "1", "--restarts", "4", "--threads", threads, "--out", path]
        assert run(argv, settings) == 0
        paths.append(path)
    first, second = (load_model(path) for path in paths)
    assert np.allclose(first.v.v, second.v.v, atol=1e-10)
    assert first.dcs_achieved == pytest.approx(second.dcs_achieved, abs=1e-10)


def test_fit_with_gamma_grid(tmp_path, settings):
    path = str(tmp_path / "model.json")
    argv = ["fit", "--data", SAMPLE, "--k", "1", "--restarts", "1", "--gamma-grid", "0.5,1", "--out", path]
    assert run(argv, settings) == 0
    assert load_model(path).gamma in (0.5, 1.0)


def test_transform_outputs_projected_rows(fitted_model, tmp_path, settings):
    out = str(tmp_path / "projected.csv")
    assert run(["transform", "--data", SAMPLE, "--model", fitted_model, "--out", out], settings) == 0
    frame = pd.read_csv(out)
    assert list(frame.columns) == ["x1", "x2", "label"]
    assert len(frame) == 28
    model = load_model(fitted_model)
    expected = model.v.v.T @ load_dataset(SAMPLE).points
    assert np.allclose(frame[["x1", "x2"]].to_numpy().T, expected)

    with open(out, "rb") as f:
        first = f.read()
    assert run(["transform", "--data", SAMPLE, "--model", fitted_model, "--out", out], settings) == 0
    with open(out, "rb") as f:
        assert f.read() == first


def test_transform_libsvm_input(fitted_model, tmp_path, settings):
    out = str(tmp_path / "projected.csv")
    assert run(["transform", "--data", SAMPLE_LIBSVM, "--model", fitted_model, "--out", out], settings) == 0
    assert len(pd.read_csv(out)) == 28


def test_transform_rejects_feature_mismatch(fitted_model, tmp_path, settings, capsys):
    narrow = tmp_path / "narrow.csv"
    narrow.write_text("1.0,a\n2.0,b\n3.0,a\n", encoding="utf-8")
    code = run(["transform", "--data", str(narrow), "--model", fitted_model, "--out", str(tmp_path / "o.csv")], settings)
    assert code == 1
    assert "expects 3 features" in capsys.readouterr().err


def test_transform_missing_model(tmp_path, settings, capsys):
    code = run(["transform", "--data", SAMPLE, "--model", str(tmp_path / "none.json"), "--out", "x.csv"], settings)
    assert code == 1
    assert "load model failed" in capsys.readouterr().err


def test_missing_data_file_fails_in_load_stage(tmp_path, settings, capsys):
    code = run(["summary", "--data", str(tmp_path / "missing.csv")], settings)
    assert code == 1
    assert "load failed" in capsys.readouterr().err
    entry = _log_entries(settings)[0]
    assert entry["success"] is False
    assert entry["error"].startswith("load failed")


def test_usage_errors_exit_2(settings, capsys):
    assert run(["fit", "--data", SAMPLE, "--k", "2", "--out", "m.json", "--bogus"], settings) == 2
    assert "unrecognized arguments" in capsys.readouterr().err
    assert run(["eval", "--data", SAMPLE, "--protocol", "pipeline", "--k", "2", "--methods", "lda", "--out", "r.json"], settings) == 2
    assert run(["summary", "--data", SAMPLE, "--threads", "0"], settings) == 2
    assert run([], settings) == 2


def test_help_exits_0(settings, capsys):
    assert run(["--help"], settings) == 0
    assert "fit" in capsys.readouterr().out


def test_gradcheck_on_sample_data(settings, capsys):
    assert run(["gradcheck", "--data", SAMPLE, "--k", "2", "--trials", "5"], settings) == 0
    assert "max relative error" in capsys.readouterr().out


def test_gradcheck_failure_is_reported(settings, capsys):
    with pytest.MonkeyPatch.context() as mp:
        mp.setattr("cli.gradient_check", lambda ws, v: 1.0)
        assert run(["gradcheck", "--data", SAMPLE, "--k", "1", "--trials", "2"], settings) == 1
    assert "gradcheck failed" in capsys.readouterr().err


def test_eval_pipeline_writes_report(tmp_path, settings, capsys):
    out = str(tmp_path / "report.json")
    argv = ["eval", "--data", SAMPLE, "--protocol", "pipeline", "--methods", "pca,identity", "--k", "2", "--folds", "3", "--out", out]
    assert run(argv, settings) == 0
    with open(out, "r", encoding="utf-8") as f:
        report = json.load(f)
    assert report["protocol"] == "pipeline"
    assert set(report["means"]) == {"pca", "identity"}
    assert report["settings"]["neighbor_grid"] == [1, 3, 5, 9]
    assert "pca" in capsys.readouterr().out


def test_eval_separability_repetitions(tmp_path, settings):
    out = str(tmp_path / "report.json")
    argv = [
        "eval", "--data", SAMPLE, "--protocol", "separability", "--methods", "cpca", "--k", "1",
        "--folds", "3", "--repetitions", "2", "--standardize", "--out", out,
    ]
    assert run(argv, settings) == 0
    with open(out, "r", encoding="utf-8") as f:
        report = json.load(f)
    assert len(report["repetition_means"]["cpca"]) == 2
    assert report["settings"]["standardize"] is True


def test_restarts_trace_and_curve(tmp_path, settings):
    out = str(tmp_path / "trace.txt")
    argv = ["restarts", "--data", SAMPLE, "--k", "1", "--n", "6", "--curve", "4", "--out", out]
    assert run(argv, settings) == 0
    with open(out, "r", encoding="utf-8") as f:
        values = [float(line) for line in f.read().splitlines()]
    assert len(values) == 6
    curve = pd.read_csv(str(tmp_path / "trace_curve.csv"))
    assert list(curve.columns) == ["s", "expected_max"]
    assert curve["s"].tolist() == [1, 2, 3, 4]
    assert np.all(np.diff(curve["expected_max"]) >= -1e-12)
    assert curve["expected_max"].iloc[-1] <= max(values) + 1e-12


def test_plotdata_exports(fitted_model, tmp_path, settings):
    out_dir = str(tmp_path / "plot")
    argv = ["plotdata", "--data", SAMPLE, "--model", fitted_model, "--grid", "20", "--png", "--out", out_dir]
    assert run(argv, settings) == 0
    points = pd.read_csv(os.path.join(out_dir, "points.csv"))
    assert list(points.columns) == ["x1", "x2", "label"]
    with open(os.path.join(out_dir, "grid.json"), "r", encoding="utf-8") as f:
        grid = json.load(f)
    assert grid["x1"][2] == 20 and grid["x2"][2] == 20
    density = pd.read_csv(os.path.join(out_dir, "density_plus.csv"), header=None)
    assert density.shape == (20, 20)
    assert np.all(density.to_numpy() >= 0)
    with Image.open(os.path.join(out_dir, "density_minus.png")) as image:
        assert image.size == (20, 20)


def test_plotdata_rejects_tiny_grid(fitted_model, tmp_path, settings):
    argv = ["plotdata", "--data", SAMPLE, "--model", fitted_model, "--grid", "1", "--out", str(tmp_path / "p")]
    assert run(argv, settings) == 1


def test_summary_prints_json(settings, capsys):
    assert run(["summary", "--data", SAMPLE], settings) == 0
    summary = json.loads(capsys.readouterr().out)
    assert (summary["n"], summary["d"], summary["n_minus"], summary["n_plus"]) == (28, 3, 16, 12)


def test_logs_and_models_commands(fitted_model, settings, capsys):
    assert run(["summary", "--data", SAMPLE], settings) == 0
    capsys.readouterr()

    assert run(["logs", "--command", "fit"], settings) == 0
    listing = capsys.readouterr().out
    assert "Found 1 log files:" in listing
    assert "Command: fit" in listing

    assert run(["logs", "--latest", "--success"], settings) == 0
    assert "Result:" in capsys.readouterr().out

    assert run(["logs", "--failed"], settings) == 0
    assert "No logs match" in capsys.readouterr().out

    assert run(["models"], settings) == 0
    assert os.path.abspath(fitted_model) in capsys.readouterr().out
    assert run(["models", "--fingerprint", "0" * 64], settings) == 0
    assert "No models registered." in capsys.readouterr().out


def test_every_run_is_logged(fitted_model, settings):
    entries = _log_entries(settings)
    assert [entry["command"] for entry in entries] == ["fit"]
    assert entries[0]["success"] is True
    assert entries[0]["result"]["model"] == fitted_model
    assert "--restarts" in entries[0]["argv"]
