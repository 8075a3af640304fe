import filecmp
import json

import numpy as np
import pandas as pd
import pytest

from geobart.cli import RunConfig, main
from geobart.errors import ConfigError


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert run("simulate", "--omega", 0.5, "--side", 12, "--n-clusters", 40, "--seed", 3,
               "--out-dir", out) == 0
    return out


@pytest.fixture(scope="module")
def fitted(simulated, tmp_path_factory):
    out = tmp_path_factory.mktemp("fit")
    assert run("fit", "--data", simulated / "dataset.csv", "--model", "bartsimp", "--n-iter", 40,
               "--burnin", 20, "--n-trees", 5, "--seed", 1, "--out-dir", out) == 0
    return out


def test_simulate_outputs(simulated):
    ds = pd.read_csv(simulated / "dataset.csv")
    assert ds["cluster_id"].nunique() == 40
    grid = pd.read_csv(simulated / "grid.csv")
    assert len(grid) == 144
    truth = pd.read_csv(simulated / "truth.csv")
    assert list(truth.columns) == ["cell_id", "x", "y", "truth"]
    cfg = json.loads((simulated / "config.json").read_text())
    assert cfg["omega"] == 0.5 and cfg["seed"] == 3


def test_simulate_default_cluster_count(tmp_path):
    assert run("simulate", "--omega", 0.8, "--seed", 1, "--out-dir", tmp_path) == 0
    assert pd.read_csv(tmp_path / "dataset.csv")["cluster_id"].nunique() == 250


def test_simulate_rejects_bad_omega(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        run("simulate", "--omega", 1.2, "--out-dir", tmp_path)
    assert exc.value.code != 0


def test_simulate_deterministic(tmp_path):
    for d in ("a", "b"):
        assert run("simulate", "--scenario", 2, "--side", 10, "--n-clusters", 20, "--seed", 9,
                   "--out-dir", tmp_path / d) == 0
    for name in ("dataset.csv", "grid.csv", "truth.csv", "config.json"):
        assert filecmp.cmp(tmp_path / "a" / name, tmp_path / "b" / name, shallow=False)


def test_fit_outputs(fitted):
    lines = (fitted / "draws.jsonl").read_text().splitlines()
    assert len(lines) == 20
    man = json.loads((fitted / "manifest.json").read_text())
    assert man["model"] == "bartsimp" and man["seed"] == 1
    assert (fitted / "mesh.json").exists()


def test_fit_exact_and_resume(simulated, tmp_path):
    common = ["--data", simulated / "dataset.csv", "--model", "bartsimp-exact", "--n-trees", 3,
              "--burnin", 5, "--seed", 4]
    assert run("fit", *common, "--n-iter", 20, "--out-dir", tmp_path / "full") == 0
    part = tmp_path / "part"
    assert run("fit", *common, "--n-iter", 10, "--checkpoint-every", 5, "--out-dir", part) == 0
    assert run("fit", *common, "--n-iter", 20, "--checkpoint-every", 5, "--resume",
               "--out-dir", part) == 0
    full = [json.loads(x) for x in (tmp_path / "full" / "draws.jsonl").read_text().splitlines()]
    resumed = [json.loads(x) for x in (part / "draws.jsonl").read_text().splitlines()]
    # the dense path may differ in the last bits across processes (BLAS blocking)
    assert len(full) == len(resumed)
    for a, b in zip(full, resumed):
        assert a["iteration"] == b["iteration"]
        assert a["sigma_e2"] == pytest.approx(b["sigma_e2"], rel=1e-9)
        for ta, tb in zip(a["forest"], b["forest"]):
            assert ta["var"] == tb["var"]
            np.testing.assert_allclose(ta["value"], tb["value"], rtol=1e-9, atol=1e-12)


def test_predict_and_metrics(simulated, fitted, tmp_path):
    assert run("predict", "--samples", fitted, "--data", simulated / "dataset.csv",
               "--grid", simulated / "grid.csv", "--truth", simulated / "truth.csv",
               "--max-draws", 10, "--out-dir", tmp_path) == 0
    surf = pd.read_csv(tmp_path / "surface.csv")
    assert list(surf.columns) == ["cell_id", "x", "y", "mean", "q025", "q975"]
    assert len(surf) == 144
    assert np.all(surf["q025"] <= surf["mean"]) and np.all(surf["mean"] <= surf["q975"])
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert set(metrics) == {"alpha", "rmse", "ail", "acr", "ais"}
    assert metrics["ais"] >= metrics["ail"]


def test_aggregate_and_pd(simulated, fitted, tmp_path):
    pred = tmp_path / "pred"
    assert run("predict", "--samples", fitted, "--data", simulated / "dataset.csv",
               "--grid", simulated / "grid.csv", "--max-draws", 10, "--out-dir", pred) == 0
    grid = pd.read_csv(simulated / "grid.csv")
    grid["density"] = np.random.default_rng(0).uniform(1, 5, len(grid))
    grid.to_csv(tmp_path / "grid_density.csv", index=False)
    one = pd.DataFrame({"cell_id": grid["cell_id"], "region": "all"})
    one.to_csv(tmp_path / "one.csv", index=False)
    assert run("aggregate", "--draws", pred / "surface_draws.npz", "--grid",
               tmp_path / "grid_density.csv", "--regions", tmp_path / "one.csv",
               "--out-dir", tmp_path / "agg") == 0
    regions = pd.read_csv(tmp_path / "agg" / "regions.csv")
    draws = np.load(pred / "surface_draws.npz")["draws"]
    expected = (draws @ grid["density"].to_numpy()) / grid["density"].sum()
    assert regions["mean"].iloc[0] == pytest.approx(expected.mean(), rel=1e-8)

    assert run("pd", "--samples", fitted, "--data", simulated / "dataset.csv", "--var", "x1",
               "--n-values", 5, "--out-dir", tmp_path / "pd") == 0
    pdf = pd.read_csv(tmp_path / "pd" / "pd_x1.csv")
    assert list(pdf.columns) == ["value", "mean", "q025", "q975"] and len(pdf) == 5
    # aggregate without densities is an error with a clean exit code
    assert run("aggregate", "--draws", pred / "surface_draws.npz", "--grid",
               simulated / "grid.csv", "--regions", tmp_path / "one.csv",
               "--out-dir", tmp_path / "bad") == 1


def test_run_config_rejects_unknown(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"modle": "bart"}))
    with pytest.raises(ConfigError):
        RunConfig.load(p)
    p.write_text(json.dumps({"prior": {"kk": 2}}))
    with pytest.raises(ConfigError):
        RunConfig.load(p).chain_config()
    cfg = RunConfig(model="bart", chain={"n_iter": 50, "burnin": 10}).chain_config(seed=3)
    assert (cfg.model, cfg.n_iter, cfg.seed) == ("bart", 50, 3)


def test_benchmark_small(tmp_path):
    cfg = tmp_path / "bench.json"
    cfg.write_text(json.dumps({"side": 10, "chain": {"n_trees": 3}}))
    assert run("benchmark", "--config", cfg, "--scenarios", 1, "--replicates", 2, "--n-iter", 12,
               "--burnin", 6, "--n-clusters", 20, "--max-pred-draws", 3,
               "--out-dir", tmp_path / "out") == 0
    summary = pd.read_csv(tmp_path / "out" / "summary.csv")
    assert len(summary) == 5
    assert set(summary["model"]) == {"bartsimp", "bartsimp-exact", "bart", "spde", "spde0"}
    for m in ("rmse", "ail", "acr", "ais"):
        assert f"{m}_mean" in summary and f"{m}_sd" in summary
    rows = (tmp_path / "out" / "results.jsonl").read_text().splitlines()
    assert len(rows) == 10
