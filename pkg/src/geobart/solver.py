"""Sparse Cholesky factors and Woodbury evaluation of low-rank Gaussian densities.

All observation-level routines work with ``M = sigma_e2 I + A Q^-1 A'``
where ``Q`` is a sparse precision and ``A`` a sparse projection; no dense
N x N matrix is formed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy import linalg
from scipy.sparse.linalg import splu

from .errors import NotPD

LOG2PI = math.log(2.0 * math.pi)


@dataclass(eq=False)
class SparseFactor:
    """Cholesky factor of a symmetrically permuted SPD matrix.

    ``matrix[perm][:, perm] == L @ L.T``. Solves go through the underlying
    SuperLU object, which was computed without pivoting.
    """

    matrix: sp.csc_matrix
    L: sp.csc_matrix
    perm: np.ndarray
    logdet: float
    _lu: object

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        return self._lu.solve(b)

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        """Draw(s) from N(0, matrix^-1)."""
        z = rng.standard_normal(self.n if size is None else (self.n, size))
        w = np.empty_like(z)
        w[self.perm] = self.L @ z
        return self.solve(w)


def sparse_cholesky(Q, ordering: str = "MMD_AT_PLUS_A", jitter: bool = True) -> SparseFactor:
    """Factorize a sparse SPD matrix with a fill-reducing symmetric ordering.

    On failure a diagonal jitter of 1e-10, 1e-9, ..., 1e-6 times the mean
    diagonal is tried before raising `NotPD`.
    """
    Q = sp.csc_matrix(Q, dtype=float)
    n = Q.shape[0]
    scale = float(np.mean(Q.diagonal())) if n else 1.0
    ladder = [0.0]
    if jitter:
        ladder += [scale * 10.0 ** e for e in range(-10, -5)]
    for eps in ladder:
        M = Q if eps == 0 else (Q + eps * sp.identity(n, format="csc")).tocsc()
        try:
            lu = splu(M, permc_spec=ordering, diag_pivot_thresh=0.0,
                      options={"SymmetricMode": True})
        except RuntimeError:
            continue
        d = lu.U.diagonal()
        if np.all(d > 0) and np.all(np.isfinite(d)) and np.array_equal(lu.perm_r, lu.perm_c):
            L = (lu.L @ sp.diags(np.sqrt(d))).tocsc()
            perm = np.argsort(lu.perm_r)
            return SparseFactor(M, L, perm, float(np.log(d).sum()), lu)
    raise NotPD("sparse matrix is not positive definite")


def _as_projection(A, n_vertices: int, n_rows: int):
    if A is None:
        return sp.csr_matrix((n_rows, n_vertices))
    return sp.csr_matrix(A)


def inner_factor(A, Qfactor: SparseFactor, sigma_e2: float) -> SparseFactor:
    """Factor of ``Q + A'A / sigma_e2``."""
    A = sp.csr_matrix(A)
    return sparse_cholesky(Qfactor.matrix + (A.T @ A) / sigma_e2)


def woodbury_inverse_apply(A, Qfactor: SparseFactor, sigma_e2: float, v, inner=None):
    """Apply ``(sigma_e2 I + A Q^-1 A')^-1`` to `v` (vector or matrix)."""
    A = sp.csr_matrix(A)
    v = np.asarray(v, dtype=float)
    if inner is None:
        inner = inner_factor(A, Qfactor, sigma_e2)
    return v / sigma_e2 - (A @ inner.solve(A.T @ v)) / sigma_e2 ** 2


def _low_rank_terms(r, Ctilde, leaf_var, A, Qfactor, sigma_e2, inner):
    r = np.asarray(r, dtype=float)
    N = r.size
    A = _as_projection(A, Qfactor.n, N)
    if inner is None:
        inner = inner_factor(A, Qfactor, sigma_e2)
    C = np.zeros((N, 0)) if Ctilde is None else np.asarray(Ctilde, dtype=float).reshape(N, -1)
    Mr = woodbury_inverse_apply(A, Qfactor, sigma_e2, r, inner)
    MC = woodbury_inverse_apply(A, Qfactor, sigma_e2, C, inner) if C.shape[1] else C
    logdet_M = N * math.log(sigma_e2) + inner.logdet - Qfactor.logdet
    return r, C, Mr, MC, logdet_M


def lowrank_gaussian_logpdf(r, Ctilde, leaf_var, A, Qfactor: SparseFactor, sigma_e2: float,
                            inner=None) -> float:
    """Log density of ``N(0, leaf_var C~C~' + A Q^-1 A' + sigma_e2 I)`` at `r`.

    Two nested Woodbury layers: the sparse one inside `woodbury_inverse_apply`
    and a b x b one over the columns of `Ctilde`; the log-determinant comes
    from the matrix determinant lemma.
    """
    r, C, Mr, MC, logdet = _low_rank_terms(r, Ctilde, leaf_var, A, Qfactor, sigma_e2, inner)
    quad = float(r @ Mr)
    b = C.shape[1]
    if b and leaf_var > 0:
        Z = C.T @ MC
        g = C.T @ Mr
        S = np.eye(b) + leaf_var * Z
        Ls = linalg.cholesky(S, lower=True)
        logdet += 2.0 * np.log(np.diag(Ls)).sum()
        h = linalg.cho_solve((Ls, True), g)
        quad -= leaf_var * float(g @ h)
    return -0.5 * (r.size * LOG2PI + logdet + quad)


def leaf_posterior(r, Ctilde, leaf_var, A, Qfactor: SparseFactor, sigma_e2: float, inner=None):
    """Conditional mean and covariance of the leaf (or coefficient) vector."""
    r, C, Mr, MC, _ = _low_rank_terms(r, Ctilde, leaf_var, A, Qfactor, sigma_e2, inner)
    b = C.shape[1]
    if leaf_var <= 0:
        return np.zeros(b), np.zeros((b, b))
    Z = C.T @ MC
    g = C.T @ Mr
    S = np.eye(b) + leaf_var * Z
    V = leaf_var * linalg.solve(S, np.eye(b), assume_a="pos")
    V = 0.5 * (V + V.T)
    return V @ g, V


def conditional_field_draw(r_total, A, Qfactor: SparseFactor, sigma_e2: float,
                           rng: np.random.Generator, size: int | None = None, inner=None):
    """Draw the vertex field ``u`` given residuals ``r = A u + noise``."""
    A = sp.csr_matrix(A)
    if inner is None:
        inner = inner_factor(A, Qfactor, sigma_e2)
    mean = inner.solve(A.T @ np.asarray(r_total, dtype=float) / sigma_e2)
    draw = inner.sample(rng, size)
    return mean + draw if size is None else mean[:, None] + draw
