import json
import logging

import numpy as np
import pytest

from qsdr import cli
from qsdr.config import build, default_config, parse_config_text, sim_spec
from qsdr.errors import ConfigError, EmptyAfterFiltering, MissingColumn, NoNumericData
from qsdr.io import Dataset, dumps_report, load_dataset_csv, write_dataset_csv
from qsdr.opg import QopgConfig


@pytest.fixture
def clean_csv(tmp_path):
    path = tmp_path / "d.csv"
    rows = ["y,x1,x2", "1,0.5,2", "2,1.5,3", "3,2.5,1", "4,3.5,0", "5,4.5,-1"]
    path.write_text("\n".join(rows) + "\n")
    return path


@pytest.fixture
def sim_csv(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.normal(size=(120, 3))
    Y = X[:, 0] + 0.5 * X[:, 1] ** 2 + 0.2 * rng.normal(size=120)
    path = tmp_path / "sim.csv"
    write_dataset_csv(Dataset(X, Y, response_name="y"), path)
    return path


# ingestion

def test_load_clean(clean_csv):
    ds = load_dataset_csv(clean_csv, "y")
    assert (ds.n, ds.p) == (5, 2)
    assert ds.column_names == ["x1", "x2"]
    np.testing.assert_array_equal(ds.Y, [1, 2, 3, 4, 5])
    assert load_dataset_csv(clean_csv, 0, ["x2"]).p == 1


def test_nan_row_dropped_and_logged(tmp_path, caplog):
    path = tmp_path / "n.csv"
    path.write_text("y,x\n1,2\nNaN,3\n4,5\n")
    with caplog.at_level(logging.WARNING):
        ds = load_dataset_csv(path, "y")
    assert ds.n == 2 and ds.dropped == 1
    assert "dropped 1" in caplog.text


def test_missing_column_named(clean_csv):
    with pytest.raises(MissingColumn, match="zz"):
        load_dataset_csv(clean_csv, "zz")


def test_other_data_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_dataset_csv(tmp_path / "none.csv", "y")
    p = tmp_path / "t.csv"
    p.write_text("y,x\na,b\nc,d\n")
    with pytest.raises(NoNumericData):
        load_dataset_csv(p, "y")
    p.write_text("y,x\n1,\n,2\n")
    with pytest.raises(EmptyAfterFiltering):
        load_dataset_csv(p, "y")


def test_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    ds = Dataset(rng.normal(size=(20, 3)) * 1e3, rng.normal(size=20) / 7, ["a", "b", "c"], "y")
    write_dataset_csv(ds, tmp_path / "r.csv")
    back = load_dataset_csv(tmp_path / "r.csv", "y")
    np.testing.assert_allclose(back.X, ds.X, rtol=0, atol=1e-12 * 1e3)
    np.testing.assert_array_equal(back.Y, ds.Y)


# report

def test_report_seventeen_digits():
    text = dumps_report({"a": 1 / 3, "b": [np.float64(0.1)], "c": float("nan")})
    doc = json.loads(text)
    assert "0.33333333333333331" in text
    assert doc["a"] == 1 / 3 and doc["c"] is None


# config

def test_config_forms_agree():
    yaml_text = "estimator:\n  qopg:\n    max_rounds: 3\n    tau_grid: [0.25, 0.5]\n"
    kv_text = "estimator.qopg.max_rounds = 3\nestimator.qopg.tau_grid = [0.25, 0.5]\n"
    a, b = parse_config_text(yaml_text), parse_config_text(kv_text)
    assert a == b
    cfg = build(QopgConfig, a, "estimator.qopg")
    assert cfg.max_rounds == 3 and cfg.tau_grid == (0.25, 0.5)


def test_config_bandwidth_forms():
    cfg = build(QopgConfig, {"estimator.qopg.bandwidth": "fixed:0.7"}, "estimator.qopg")
    assert cfg.bandwidth == "fixed" and cfg.h == 0.7
    cfg = build(QopgConfig, {"estimator.qopg.solver.max_iter": "50"}, "estimator.qopg")
    assert cfg.solver.max_iter == 50
    with pytest.raises(ConfigError):
        build(QopgConfig, {"estimator.qopg.max_rounds": "many"}, "estimator.qopg")


def test_defaults_cover_every_section():
    keys = default_config()
    for key in ("estimator.qopg.tau_grid", "estimator.qmave.init", "estimator.sir.n_slices",
                "dimension.order", "simulate.n_replicates", "estimator.qopg.solver.kkt_tol",
                "estimator.qopg.kernel.kind", "run.threads"):
        assert key in keys


def test_sim_spec_from_config():
    spec = sim_spec({"simulate.model": "B", "simulate.n": "150", "simulate.estimators": "sir,qopg",
                     "estimator.qopg.bandwidth": "rot"})
    assert spec.model == "B" and spec.n == 150
    assert spec.estimators["qopg"]["bandwidth"] == "rule_of_thumb"


# command line

def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_cli_fit_and_project(sim_csv, tmp_path, capsys):
    out = tmp_path / "fit.json"
    code, _, _ = run(["fit", "--input", sim_csv, "--response", "y", "--q", "2", "--tau-grid",
                      "0.25,0.5,0.75", "--bandwidth", "fixed:1.5", "--output", out], capsys)
    assert code == 0
    doc = json.loads(out.read_text())
    assert np.asarray(doc["result"]["basis"]).shape == (3, 2)
    assert doc["config"]["qopg"]["bandwidth"] == "fixed"
    code, text, _ = run(["project", "--input", sim_csv, "--response", "y", "--basis", out], capsys)
    assert code == 0
    assert np.asarray(json.loads(text)["result"]["coordinates"]).shape == (120, 2)


def test_cli_sir_dim_bandwidth(sim_csv, capsys):
    code, text, _ = run(["fit", "--input", sim_csv, "--response", "y", "--estimator", "sir",
                         "--q", "1"], capsys)
    assert code == 0 and json.loads(text)["result"]["method"] == "sir"
    code, text, _ = run(["dim", "--input", sim_csv, "--response", "y", "--candidates", "1,2",
                         "--tau-grid", "0.25,0.5,0.75", "--set", "dimension.grid_size=3",
                         "--set", "estimator.qopg.max_rounds=2"], capsys)
    assert code == 0 and json.loads(text)["result"]["q_hat"] in (1, 2)
    code, text, _ = run(["bandwidth", "--input", sim_csv, "--response", "y", "--bandwidth", "rot"],
                        capsys)
    assert code == 0 and json.loads(text)["result"]["rule"] == "rule_of_thumb"


def test_cli_simulate(tmp_path, capsys):
    cfg = tmp_path / "s.yaml"
    cfg.write_text("simulate:\n  n: 100\n  p: 4\n  n_replicates: 2\n")
    csv_path = tmp_path / "e.csv"
    code, text, _ = run(["simulate", "--config", cfg, "--model", "C", "--estimators", "sir",
                         "--csv", csv_path], capsys)
    assert code == 0
    rep = json.loads(text)["result"]
    assert len(rep["estimators"]["sir"]["errors"]) == 2
    assert len(csv_path.read_text().strip().splitlines()) == 3


@pytest.mark.parametrize("argv,code", [
    (["fit", "--input", "missing.csv", "--response", "y"], 3),
    (["fit", "--bogus"], 2),
    (["fit", "--input", "{csv}", "--response", "nope"], 3),
    (["fit", "--input", "{csv}", "--response", "y", "--bandwidth", "wide"], 2),
    (["fit", "--input", "{csv}", "--response", "y", "--set", "estimator.qopg.unknown=1"], 2),
    (["fit", "--input", "{csv}", "--response", "y", "--q", "3"], 2),
    (["simulate", "--replicates", "0"], 2),
])
def test_cli_exit_codes(argv, code, clean_csv, capsys):
    argv = [str(clean_csv) if a == "{csv}" else a for a in argv]
    got, _, err = run(argv, capsys)
    assert got == code
    assert err


def test_cli_numerical_failure(tmp_path, capsys):
    path = tmp_path / "c.csv"
    rows = ["y,x1,x2"] + [f"{i % 3},{i},{2 * i}" for i in range(30)]
    path.write_text("\n".join(rows) + "\n")
    code, _, err = run(["fit", "--input", path, "--response", "y", "--estimator", "sir",
                        "--q", "1"], capsys)
    assert code == 4
    assert "numerical" in err
