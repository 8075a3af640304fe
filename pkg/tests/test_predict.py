import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from geobart.errors import DatasetError
from geobart.predict import (
    GriddedSurface,
    RegionSpec,
    aggregate_areal,
    compute_metrics,
    interval_score,
    partial_dependence,
    predict_surface,
    summarize,
)
from geobart.sampler import ChainConfig, Draw, PosteriorSamples, run_chain
from geobart.simgen import ScenarioConfig, simulate_scenario
from geobart.tree import DecisionTree


def forest_samples(forests, offset=0.0):
    draws = [Draw(i + 1, 1.0, None, None, offset, f, None, None) for i, f in enumerate(forests)]
    return PosteriorSamples("bart", draws, len(draws), 0, 1, 0)


def stump(var, cut, a, b):
    t = DecisionTree()
    t.grow(0, var, cut, (a, b))
    return t


def test_ais_hand_example():
    assert interval_score([1.0], [2.0], [0.0], 0.05)[0] == pytest.approx(41.0)
    m = compute_metrics([1.5], [1.0], [2.0], [0.0], 0.05)
    assert m["ais"] == pytest.approx(41.0)
    assert m["acr"] == 0.0
    assert m["ail"] == 1.0
    assert m["rmse"] == pytest.approx(1.5)


@given(st.integers(0, 10_000))
def test_ais_equals_ail_when_covered(seed):
    rng = np.random.default_rng(seed)
    lo = rng.normal(size=50)
    hi = lo + rng.uniform(0.1, 2, size=50)
    truth = rng.uniform(lo, hi)
    m = compute_metrics((lo + hi) / 2, lo, hi, truth)
    assert m["acr"] == 1.0
    assert m["ais"] == pytest.approx(m["ail"], rel=1e-12)


def test_metrics_validation():
    with pytest.raises(ValueError):
        compute_metrics([1.0], [0.0], [2.0, 3.0], [1.0])
    with pytest.raises(ValueError):
        compute_metrics([1.0], [0.0], [2.0], [1.0], alpha=1.5)


@given(st.integers(0, 10_000))
def test_summary_ordering(seed):
    D = np.random.default_rng(seed).standard_cauchy(size=(37, 12))
    s = summarize(D)
    assert np.all(s["lower"] <= s["mean"]) and np.all(s["mean"] <= s["upper"])


def test_aggregate_examples():
    regions = RegionSpec(np.array([0, 0]))
    assert aggregate_areal([[1.0, 3.0]], [1.0, 3.0], regions)[0, 0] == pytest.approx(2.5)
    rng = np.random.default_rng(0)
    dens = rng.uniform(size=20)
    regions = RegionSpec(rng.integers(0, 4, 20))
    const = np.full((3, 20), 1.7)
    np.testing.assert_allclose(aggregate_areal(const, dens, regions), 1.7)


def test_aggregate_permutation_invariant():
    rng = np.random.default_rng(1)
    D = rng.normal(size=(5, 30))
    dens = rng.uniform(size=30)
    lab = rng.integers(-1, 3, 30)
    lab[:3] = [0, 1, 2]
    base = aggregate_areal(D, dens, RegionSpec(lab))
    perm = rng.permutation(30)
    out = aggregate_areal(D[:, perm], dens[perm], RegionSpec(lab[perm]))
    np.testing.assert_allclose(out, base, rtol=1e-12)


def test_aggregate_zero_density_region():
    with pytest.raises(DatasetError):
        aggregate_areal([[1.0, 2.0]], [0.0, 1.0], RegionSpec(np.array([0, 1])))


def test_region_from_labels():
    r = RegionSpec.from_labels(["a", None, "b", "a", float("nan")])
    np.testing.assert_array_equal(r.cell_region, [0, -1, 1, 0, -1])
    assert r.labels == ("a", "b")


def test_partial_dependence_examples(small_dataset):
    ds = small_dataset
    out = partial_dependence(forest_samples([[DecisionTree(2.0)]]), ds, 0, [0.1, 0.5, 0.9])
    np.testing.assert_allclose(out, 2.0)
    out = partial_dependence(forest_samples([[stump(0, 0.5, -1.0, 4.0)]]), ds, 0,
                             [0.2, 0.49, 0.5, 0.8])
    np.testing.assert_allclose(out[0], [-1.0, -1.0, 4.0, 4.0])
    # a variable with no split gives a flat profile per draw
    out = partial_dependence(forest_samples([[stump(0, 0.5, -1.0, 4.0)]]), ds, 1,
                             np.linspace(0, 1, 7))
    assert np.ptp(out[0]) == 0
    with pytest.raises(ValueError):
        partial_dependence(forest_samples([[DecisionTree()]]), ds, 0, [])
    with pytest.raises(IndexError):
        partial_dependence(forest_samples([[DecisionTree()]]), ds, 5, [0.0])


def test_zero_forest_no_field_predicts_zero(small_dataset):
    surface = GriddedSurface(np.random.default_rng(0).uniform(size=(9, 2)),
                             np.random.default_rng(1).uniform(size=(9, 2)))
    out = predict_surface(forest_samples([[DecisionTree()]] * 4), small_dataset, surface)
    np.testing.assert_allclose(out.draws, 0.0)


@pytest.mark.parametrize("model", ["bartsimp", "bartsimp-exact"])
def test_field_tracks_cluster_means(model):
    # strong field, tiny nugget: the surface interpolates the clusters
    cfg = ScenarioConfig(omega=0.0, side=12, n_clusters=60, sigma_e2=0.01, seed=2)
    sc = simulate_scenario(cfg)
    chain = ChainConfig(model=model, n_trees=5, n_iter=300, burnin=150, seed=2)
    samples = run_chain(sc.dataset, chain)
    at_clusters = GriddedSurface(sc.dataset.locations, sc.dataset.covariates)
    out = predict_surface(samples, sc.dataset, at_clusters, seed=1, max_draws=60)
    sd = out.draws.std(axis=0)
    err = np.abs(out.summary()["mean"] - sc.dataset.cluster_means())
    assert np.mean(err <= 2 * sd) >= 0.9
    s = predict_surface(samples, sc.dataset, sc.surface, seed=1, max_draws=60).summary()
    m = compute_metrics(s["mean"], s["lower"], s["upper"], sc.truth)
    assert m["rmse"] < 0.5 * np.std(sc.truth)


def test_surface_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    surf = GriddedSurface(rng.uniform(size=(6, 2)), rng.uniform(size=(6, 2)),
                          density=rng.uniform(size=6), names=("a", "b"))
    surf.write_raster(tmp_path / "grid.csv")
    back = GriddedSurface.read_raster(tmp_path / "grid.csv")
    np.testing.assert_allclose(back.covariates, surf.covariates)
    np.testing.assert_allclose(back.density, surf.density)
    assert back.names == ("a", "b")
    surf.with_draws(rng.normal(size=(4, 6))).to_csv(tmp_path / "surface.csv")
    import pandas as pd

    df = pd.read_csv(tmp_path / "surface.csv")
    assert list(df.columns) == ["cell_id", "x", "y", "mean", "q025", "q975"]
    assert np.all(df["q025"] <= df["q975"])


def test_surface_validation():
    with pytest.raises(DatasetError):
        GriddedSurface(np.zeros((2, 2)), np.zeros((3, 1)))
    with pytest.raises(DatasetError):
        GriddedSurface(np.zeros((2, 2)), np.zeros((2, 1)), density=[1.0, -1.0])
    assert math.isclose(GriddedSurface(np.zeros((1, 2)), [0.5]).covariates[0, 0], 0.5)
