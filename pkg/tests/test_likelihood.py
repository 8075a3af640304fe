import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_dataset
from geobart.data_model import build_incidence
from geobart.gp import MaternParams, exact_marginal_loglik
from geobart.likelihood import (
    ClusterData,
    DenseField,
    NullField,
    SpdeField,
    collapsed_loglik,
    design_terms,
    one_hot,
)
from geobart.solver import leaf_posterior, lowrank_gaussian_logpdf, sparse_cholesky
from geobart.spde import build_mesh, fem_matrices, precision_matrix


def setup(seed, n=10, b=3):
    rng = np.random.default_rng(seed)
    ds = random_dataset(rng, n=n, max_obs=4)
    col = rng.integers(0, b, n)
    f = rng.normal(size=n)
    return rng, ds, col, f


@given(st.integers(0, 10_000))
def test_dense_collapsed_matches_exact(seed):
    rng, ds, col, f = setup(seed)
    params = MaternParams(float(rng.uniform(0.1, 1)), float(rng.uniform(0.1, 1)))
    se2, lv = float(rng.uniform(0.3, 2)), float(rng.uniform(0.05, 1))
    data = ClusterData.from_dataset(ds)
    state = DenseField(data, ds.locations).condition(se2, params)
    inc = build_incidence(ds)
    rbar = ds.cluster_means() - f
    r = ds.flat_responses() - inc.expand(f)
    base = collapsed_loglik(state, rbar)
    assert base == pytest.approx(
        exact_marginal_loglik(r, np.zeros((ds.n, 0)), 0, se2, params, inc, ds.locations), rel=1e-10)
    C = one_hot(col, 3)
    terms = design_terms(state, state.apply_P(rbar), C, lv, col=col)
    ref = exact_marginal_loglik(r, C, lv, se2, params, inc, ds.locations)
    assert base + terms.loglik_delta == pytest.approx(ref, rel=1e-10)
    generic = design_terms(state, state.apply_P(rbar), C, lv)
    assert generic.loglik_delta == pytest.approx(terms.loglik_delta, rel=1e-10)


@given(st.integers(0, 10_000))
def test_spde_collapsed_matches_lowrank(seed):
    rng, ds, col, f = setup(seed)
    params = MaternParams(float(rng.uniform(0.1, 1)), float(rng.uniform(0.2, 1)))
    se2, lv = float(rng.uniform(0.3, 2)), float(rng.uniform(0.05, 1))
    mesh = build_mesh(ds.locations, 0.25, 0.2)
    data = ClusterData.from_dataset(ds)
    field = SpdeField(data, ds.locations, mesh)
    state = field.condition(se2, params)
    inc = build_incidence(ds)
    E = inc.matrix()
    A_obs = sp.csr_matrix(E @ field.A)
    Qf = sparse_cholesky(precision_matrix(params, fem_matrices(mesh)))
    rbar = ds.cluster_means() - f
    r = ds.flat_responses() - inc.expand(f)
    C = one_hot(col, 3)
    terms = design_terms(state, state.apply_P(rbar), C, lv, col=col)
    ref = lowrank_gaussian_logpdf(r, E @ C, lv, A_obs, Qf, se2)
    assert collapsed_loglik(state, rbar) + terms.loglik_delta == pytest.approx(ref, rel=1e-10)
    m, V = leaf_posterior(r, E @ C, lv, A_obs, Qf, se2)
    np.testing.assert_allclose(terms.mean, m, rtol=1e-8, atol=1e-12)
    prec = terms.chol @ terms.chol.T
    np.testing.assert_allclose(np.linalg.inv(prec), V, rtol=1e-8, atol=1e-12)


def test_null_field_is_iid(rng):
    ds = random_dataset(rng, n=6)
    data = ClusterData.from_dataset(ds)
    state = NullField(data).condition(0.7)
    from scipy import stats

    ref = stats.norm(0, np.sqrt(0.7)).logpdf(ds.flat_responses()).sum()
    assert collapsed_loglik(state, ds.cluster_means()) == pytest.approx(ref, rel=1e-12)


def test_design_draw_moments(rng):
    ds = random_dataset(rng, n=8)
    data = ClusterData.from_dataset(ds)
    state = DenseField(data, ds.locations).condition(0.5, MaternParams(0.4, 0.3))
    rbar = ds.cluster_means()
    col = np.arange(8) % 2
    terms = design_terms(state, state.apply_P(rbar), one_hot(col, 2), 0.3, col=col)
    draws = np.array([terms.draw(rng) for _ in range(20_000)])
    cov = np.linalg.inv(terms.chol @ terms.chol.T)
    np.testing.assert_allclose(draws.mean(axis=0), terms.mean, atol=4 * np.sqrt(cov.diagonal().max() / 20_000))
    np.testing.assert_allclose(np.cov(draws.T), cov, rtol=0.05, atol=1e-3)


def test_empty_design_is_neutral(rng):
    ds = random_dataset(rng, n=5)
    state = NullField(ClusterData.from_dataset(ds)).condition(1.0)
    t = design_terms(state, state.apply_P(ds.cluster_means()), np.zeros((5, 0)), 0.2)
    assert t.loglik_delta == 0.0 and t.mean.size == 0
