import json

import numpy as np
import pytest
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve
from hypothesis import given
from hypothesis import strategies as st

from geobart.errors import MeshError
from geobart.gp import MaternParams, matern_corr
from geobart.spde import (
    Mesh,
    build_graded_mesh,
    build_mesh,
    fem_matrices,
    precision_matrix,
    projection_matrix,
)


def _in_hull(mesh, pts):
    A = projection_matrix(mesh, pts)
    return A.shape == (len(pts), mesh.n_vertices)


def test_build_mesh_counting():
    mesh = build_mesh([[0, 0], [1, 1]], 0.5, extension_frac=0.0)
    assert mesh.n_vertices == 9
    assert len(mesh.triangles) == 8
    assert np.all(mesh.areas() > 0)
    with pytest.raises(MeshError):
        build_mesh([[0, 0]], 0.0)


@given(st.integers(1, 30), st.floats(0.03, 0.5), st.floats(0.0, 0.5), st.integers(0, 10_000))
def test_mesh_covers_locations(n, edge, ext, seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1, 2, size=(n, 2))
    for mesh in (build_mesh(pts, edge, ext), build_graded_mesh(pts, edge, ext, ext + 1.0)):
        assert np.all(mesh.areas() > 0)
        assert _in_hull(mesh, pts)
        A = projection_matrix(mesh, pts)
        np.testing.assert_allclose(A.sum(axis=1).A.ravel(), 1.0, atol=1e-12)
        assert np.all(np.diff(A.indptr) <= 3)


def test_mesh_margin_honours_range():
    pts = np.random.default_rng(0).uniform(size=(20, 2))
    mesh = build_mesh(pts, 0.05, 0.2, min_margin=0.6)
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    assert np.all(pts.min(axis=0) - lo >= 0.6 - 1e-12)
    assert np.all(hi - pts.max(axis=0) >= 0.6 - 1e-12)


def test_graded_mesh_is_fine_inside_and_wide():
    pts = np.random.default_rng(1).uniform(size=(30, 2))
    mesh = build_graded_mesh(pts, 0.05, 0.2, 5.0)
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    assert np.all(pts.min(axis=0) - lo >= 5.0 - 1e-9)
    assert np.all(hi - pts.max(axis=0) >= 5.0 - 1e-9)
    # area of the triangulation equals the bounding rectangle: no holes
    assert mesh.areas().sum() == pytest.approx(np.prod(hi - lo), rel=1e-10)
    p = mesh.vertices[mesh.triangles]
    edge = np.linalg.norm(p[:, 1] - p[:, 0], axis=1)
    centroid = p.mean(axis=1)
    near = np.all((centroid > pts.min(axis=0)) & (centroid < pts.max(axis=0)), axis=1)
    assert edge[near].max() <= 0.05 * np.sqrt(2) + 1e-9
    with pytest.raises(MeshError):
        build_graded_mesh(pts, 0.05, 1.0, 0.5)


def test_fem_single_triangle():
    mesh = Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]))
    s = fem_matrices(mesh)
    np.testing.assert_allclose(s.c_diag, [1 / 6] * 3)
    assert s.c_diag.sum() == pytest.approx(0.5)
    G = s.G.toarray()
    np.testing.assert_allclose(G, [[1, -0.5, -0.5], [-0.5, 0.5, 0], [-0.5, 0, 0.5]], atol=1e-14)


def test_fem_identities():
    pts = np.random.default_rng(2).uniform(size=(15, 2))
    for mesh in (build_mesh(pts, 0.1), build_graded_mesh(pts, 0.1, 0.2, 2.0)):
        s = fem_matrices(mesh)
        assert np.all(s.c_diag > 0)
        assert s.c_diag.sum() == pytest.approx(mesh.areas().sum(), abs=1e-10)
        assert abs(s.G @ np.ones(s.n_vertices)).max() <= 1e-10
        assert abs(s.G - s.G.T).max() <= 1e-12
        assert sp.issparse(s.G)


def test_degenerate_triangle_rejected():
    mesh = Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]), np.array([[0, 1, 2]]))
    with pytest.raises(MeshError):
        fem_matrices(mesh)


def test_precision_scaling_and_pattern():
    mesh = build_mesh([[0, 0], [1, 1]], 0.1)
    s = fem_matrices(mesh)
    Q1 = precision_matrix(MaternParams(1.0, 0.4), s)
    Q2 = precision_matrix(MaternParams(2.0, 0.4), s)
    np.testing.assert_allclose(Q2.toarray(), 0.5 * Q1.toarray(), rtol=1e-12)
    assert abs(Q1 - Q1.T).max() < 1e-10
    # pattern is that of C, G and G C^-1 G
    GG = s.G @ sp.diags(1 / s.c_diag) @ s.G
    union = (abs(s.C) + abs(s.G) + abs(GG)) != 0
    assert ((Q1 != 0) != union).nnz == 0
    with pytest.raises(ValueError):
        precision_matrix(MaternParams(1.0, 0.4, nu=0.5), s)


def test_spde_covariance_matches_matern():
    rho = 0.5
    params = MaternParams(1.0, rho)
    # edge rho/10, margin well beyond one range to keep the boundary away
    mesh = build_mesh([[0, 0], [1, 1]], rho / 10, 0.0, min_margin=2 * rho)
    Q = precision_matrix(params, fem_matrices(mesh)).tocsc()
    rng = np.random.default_rng(4)
    pairs = []
    while len(pairs) < 30:
        a = rng.uniform(size=2)
        d = rng.uniform(0.1 * rho, 2 * rho)
        t = rng.uniform(0, 2 * np.pi)
        b = a + d * np.array([np.cos(t), np.sin(t)])
        if np.all((b >= 0) & (b <= 1)):
            pairs.append((a, b, d))
    pts = np.array([p for a, b, _ in pairs for p in (a, b)])
    A = projection_matrix(mesh, pts)
    X = spsolve(Q, A.T.toarray())
    cov = A @ X
    for k, (_, _, d) in enumerate(pairs):
        target = matern_corr(d, params)
        assert cov[2 * k, 2 * k + 1] == pytest.approx(target, rel=0.10)
    # marginal variance at interior points within 15 percent
    np.testing.assert_allclose(np.diag(cov), 1.0, rtol=0.15)


def test_projection_examples():
    mesh = build_mesh([[0, 0], [1, 1]], 0.5, 0.0)
    A = projection_matrix(mesh, [[0.5, 0.5]]).toarray()
    assert A.max() == pytest.approx(1.0)
    tri = mesh.vertices[mesh.triangles[3]]
    A = projection_matrix(mesh, [tri.mean(axis=0)]).toarray().ravel()
    np.testing.assert_allclose(np.sort(A[A > 0]), [1 / 3] * 3)
    with pytest.raises(MeshError):
        projection_matrix(mesh, [[3.0, 3.0]])


def test_mesh_json_roundtrip(tmp_path):
    mesh = build_mesh(np.random.default_rng(5).uniform(size=(5, 2)), 0.2)
    mesh.to_json(tmp_path / "mesh.json")
    back = Mesh.from_dict(json.loads((tmp_path / "mesh.json").read_text()))
    np.testing.assert_array_equal(back.triangles, mesh.triangles)
    np.testing.assert_allclose(back.vertices, mesh.vertices)
    pts = np.random.default_rng(6).uniform(size=(7, 2))
    assert abs(projection_matrix(back, pts) - projection_matrix(mesh, pts)).max() < 1e-12
