import numpy as np
import pytest

from geobart.gp import MaternParams, matern_corr
from geobart.simgen import (
    SCENARIO_OMEGA,
    ScenarioConfig,
    baseline_covariate_surface,
    grid_centers,
    sample_baseline_field,
    simulate_scenario,
)


def test_baseline_surface_values():
    assert baseline_covariate_surface([0.2, 0.9]) == 3
    assert baseline_covariate_surface([0.7, 0.7]) == 0
    assert baseline_covariate_surface([0.7, 0.2]) == -2
    np.testing.assert_array_equal(baseline_covariate_surface([[0.2, 0.9], [0.7, 0.2]]), [3, -2])


def test_defaults():
    cfg = ScenarioConfig()
    assert (cfg.side, cfg.n_clusters, cfg.min_obs, cfg.max_obs) == (50, 250, 5, 10)
    assert (cfg.sigma_e2, cfg.kappa, cfg.sigma_m2) == (1.0, 2.5, 0.5)
    assert cfg.params.rho == pytest.approx(np.sqrt(8) / 2.5)
    assert [SCENARIO_OMEGA[s] for s in range(1, 6)] == [1.0, 0.8, 0.5, 0.2, 0.0]
    with pytest.raises(ValueError):
        ScenarioConfig(omega=1.2)
    with pytest.raises(ValueError):
        ScenarioConfig(side=5, n_clusters=30)


def test_grid_centers():
    c = grid_centers(4)
    assert c.shape == (16, 2)
    np.testing.assert_allclose(c[0], [0.125, 0.125])
    np.testing.assert_allclose(c[1], [0.375, 0.125])


def test_scenario_structure():
    sc = simulate_scenario(ScenarioConfig.scenario(1, seed=5))
    ds = sc.dataset
    assert ds.n == 250
    assert 1250 <= ds.n_obs <= 2500
    assert set(np.unique(sc.truth)) == {-2.0, 0.0, 3.0}
    assert len(np.unique(sc.cells)) == 250
    np.testing.assert_array_equal(ds.covariates, sc.surface.covariates[sc.cells])
    # each cluster lies in its own cell
    h = 1 / 50
    np.testing.assert_array_equal(np.floor(ds.locations / h).astype(int),
                                  np.column_stack([sc.cells % 50, sc.cells // 50]))
    assert np.all((ds.counts >= 5) & (ds.counts <= 10))


def test_pure_spatial_truth_ignores_covariates():
    sc = simulate_scenario(ScenarioConfig.scenario(5, seed=6))
    np.testing.assert_allclose(sc.truth, sc.field)
    for p in range(2):
        r = np.corrcoef(sc.truth, sc.surface.covariates[:, p])[0, 1]
        # cells share a smooth field, so the effective sample size is far below 2500
        assert abs(r) < 0.15


def test_same_seed_identical():
    a = simulate_scenario(ScenarioConfig(omega=0.5, seed=11))
    b = simulate_scenario(ScenarioConfig(omega=0.5, seed=11))
    assert a.dataset.equals(b.dataset, rtol=0)
    np.testing.assert_array_equal(a.truth, b.truth)
    c = simulate_scenario(ScenarioConfig(omega=0.5, seed=12))
    assert not np.array_equal(a.truth, c.truth)


def test_field_moments():
    params = MaternParams.from_kappa(0.5, 2.5)
    centers = grid_centers(10)
    rng = np.random.default_rng(0)
    Z = np.array([sample_baseline_field(centers, params, rng) for _ in range(400)])
    assert Z[:, 45].var() == pytest.approx(0.5, rel=0.2)
    # pairs of cells one range apart (along x, via a rounding to the grid)
    i, j = 0, int(round(params.rho / 0.1))
    d = abs(centers[j, 0] - centers[i, 0])
    emp = np.corrcoef(Z[:, i], Z[:, j])[0, 1]
    assert emp == pytest.approx(matern_corr(d, params), abs=0.1)
    zero = sample_baseline_field(centers, MaternParams(0.0, 1.0), rng)
    np.testing.assert_array_equal(zero, 0.0)


def test_sparse_field_path_moments():
    params = MaternParams.from_kappa(0.5, 2.5)
    centers = grid_centers(8)
    rng = np.random.default_rng(1)
    Z = np.array([sample_baseline_field(centers, params, rng, dense_max=0) for _ in range(300)])
    assert Z.var(axis=0).mean() == pytest.approx(0.5, rel=0.2)
    i, j = 0, 7
    d = centers[j, 0] - centers[i, 0]
    assert np.corrcoef(Z[:, i], Z[:, j])[0, 1] == pytest.approx(matern_corr(d, params), abs=0.1)


def test_variance_decomposition():
    omega = 0.5
    tot, pred = [], []
    for s in range(20):
        sc = simulate_scenario(ScenarioConfig(omega=omega, side=20, n_clusters=20, seed=s))
        f0 = baseline_covariate_surface(sc.surface.covariates)
        tot.append(sc.truth.var())
        pred.append((1 - omega) ** 2 * 0.5 + omega ** 2 * f0.var())
    # the within-grid field variance sits below sigma_m2 (the grid mean absorbs part of it)
    assert np.mean(tot) == pytest.approx(np.mean(pred), rel=0.15)
