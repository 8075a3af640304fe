"""Cluster-level collapsed Gaussian likelihoods used inside the sampler.

Residuals of the form ``r = y - E f`` (``E`` the observation-to-cluster
expansion, ``f`` cluster-constant) enter the marginal likelihood of

    r ~ N(0, C~ S C~' + E K E' + sigma_e2 I_N)

only through their cluster means ``rbar`` and the fixed within-cluster sum
of squares of ``y``. With ``D = diag(n_i)`` the required cluster-level
matrix is ``P = E' M^-1 E = (sigma_e2 D^-1 + K)^-1``, ``M = sigma_e2 I + E K E'``.

Three field backends provide ``P``, ``log det M`` and ``rbar' P rbar``:
`SpdeField` (GMRF approximation ``K = A Q^-1 A'`` through Woodbury),
`DenseField` (exact Matérn ``K``) and `NullField` (``K = 0``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy import linalg

from .gp import MaternParams, covariance_matrix
from .solver import LOG2PI, SparseFactor, sparse_cholesky
from .spde import Mesh, SpdeSystem, fem_matrices, precision_matrix, projection_matrix


@dataclass(frozen=True)
class ClusterData:
    """Sufficient statistics of a clustered response."""

    counts: np.ndarray  # n_i
    ybar: np.ndarray  # cluster means
    within: float  # sum over clusters of sum_k (y_ik - ybar_i)^2

    @property
    def n_obs(self) -> int:
        return int(self.counts.sum())

    @classmethod
    def from_dataset(cls, dataset) -> "ClusterData":
        within = sum(float(((r - r.mean()) ** 2).sum()) for r in dataset.responses)
        return cls(dataset.counts.astype(float), dataset.cluster_means(), within)


class FieldState:
    """Likelihood quantities at fixed (sigma_e2, psi)."""

    sigma_e2: float
    params: MaternParams | None

    def logdet_M(self) -> float:
        raise NotImplementedError

    def quad(self, rbar) -> float:
        """``rbar' P rbar``."""
        raise NotImplementedError

    @property
    def P(self) -> np.ndarray:
        """Dense ``P`` (or its diagonal as a 1-D array when ``P`` is diagonal)."""
        raise NotImplementedError

    def apply_P(self, x):
        P = self.P
        if P.ndim == 2:
            return P @ x
        return P * x if np.ndim(x) == 1 else P[:, None] * x


class NullState(FieldState):
    def __init__(self, data: ClusterData, sigma_e2: float):
        self.data, self.sigma_e2, self.params = data, sigma_e2, None

    def logdet_M(self):
        return self.data.n_obs * math.log(self.sigma_e2)

    def quad(self, rbar):
        return float(np.sum(self.data.counts * rbar * rbar)) / self.sigma_e2

    @property
    def P(self):
        return self.data.counts / self.sigma_e2


class DenseState(FieldState):
    """Exact Matérn field: ``P = D^1/2 B^-1 D^1/2`` with ``B = sigma_e2 I + D^1/2 K D^1/2``."""

    def __init__(self, data: ClusterData, sigma_e2: float, params: MaternParams, K: np.ndarray):
        self.data, self.sigma_e2, self.params = data, sigma_e2, params
        self.sqd = np.sqrt(data.counts)
        B = sigma_e2 * np.eye(len(K)) + self.sqd[:, None] * K * self.sqd[None, :]
        self.chol = linalg.cho_factor(B, lower=True, check_finite=False)
        self.K = K
        self._P = None

    def logdet_M(self):
        n, N = len(self.sqd), self.data.n_obs
        return ((N - n) * math.log(self.sigma_e2)
                + 2.0 * np.log(np.diag(self.chol[0])).sum())

    def quad(self, rbar):
        w = self.sqd * rbar
        return float(w @ linalg.cho_solve(self.chol, w, check_finite=False))

    def apply_P(self, x):
        if self._P is not None:
            return self._P @ x
        d = self.sqd if np.ndim(x) == 1 else self.sqd[:, None]
        return d * linalg.cho_solve(self.chol, d * x, check_finite=False)

    @property
    def P(self):
        if self._P is None:
            Binv = linalg.cho_solve(self.chol, np.eye(len(self.sqd)), check_finite=False)
            P = self.sqd[:, None] * Binv * self.sqd[None, :]
            self._P = 0.5 * (P + P.T)
        return self._P


class SpdeState(FieldState):
    """GMRF field ``K = A Q^-1 A'``; ``P = D/s - D A F^-1 A' D / s^2``, ``F = Q + A'DA/s``."""

    def __init__(self, data: ClusterData, sigma_e2: float, params: MaternParams,
                 A: sp.csr_matrix, Qfactor: SparseFactor, AtDA: sp.csc_matrix):
        self.data, self.sigma_e2, self.params = data, sigma_e2, params
        self.A, self.Qfactor = A, Qfactor
        self.inner = sparse_cholesky(Qfactor.matrix + AtDA / sigma_e2)
        self._P = None

    def logdet_M(self):
        return self.data.n_obs * math.log(self.sigma_e2) + self.inner.logdet - self.Qfactor.logdet

    def quad(self, rbar):
        s = self.sigma_e2
        Dr = self.data.counts * rbar
        t = self.A.T @ Dr
        return float(rbar @ Dr) / s - float(t @ self.inner.solve(t)) / s ** 2

    def apply_P(self, x):
        if self._P is not None:
            return self._P @ x
        s = self.sigma_e2
        d = self.data.counts if np.ndim(x) == 1 else self.data.counts[:, None]
        Dx = d * x
        return Dx / s - d * (self.A @ self.inner.solve(self.A.T @ Dx)) / s ** 2

    @property
    def P(self):
        if self._P is None:
            s = self.sigma_e2
            AtD = (self.A.T @ sp.diags(self.data.counts)).toarray()
            H = self.inner.solve(AtD)  # F^-1 A' D
            P = np.diag(self.data.counts / s) - (AtD.T @ H) / s ** 2
            self._P = 0.5 * (P + P.T)
        return self._P


class NullField:
    """No spatial effect."""

    kind = "none"

    def __init__(self, data: ClusterData):
        self.data = data

    def condition(self, sigma_e2: float, params=None) -> NullState:
        return NullState(self.data, sigma_e2)


class DenseField:
    """Exact Matérn covariance between cluster locations."""

    kind = "exact"

    def __init__(self, data: ClusterData, locations):
        self.data = data
        self.locations = np.asarray(locations, dtype=float)
        self._cache = (None, None)

    def covariance(self, params: MaternParams) -> np.ndarray:
        if self._cache[0] != params:
            self._cache = (params, covariance_matrix(self.locations, params))
        return self._cache[1]

    def condition(self, sigma_e2: float, params: MaternParams) -> DenseState:
        return DenseState(self.data, sigma_e2, params, self.covariance(params))


class SpdeField:
    """GMRF approximation on a triangular mesh."""

    kind = "spde"

    def __init__(self, data: ClusterData, locations, mesh: Mesh, system: SpdeSystem | None = None):
        self.data = data
        self.mesh = mesh
        self.system = system if system is not None else fem_matrices(mesh)
        self.A = projection_matrix(mesh, locations).tocsr()
        self.AtDA = (self.A.T @ sp.diags(data.counts) @ self.A).tocsc()
        self._cache = (None, None)

    def q_factor(self, params: MaternParams) -> SparseFactor:
        if self._cache[0] != params:
            self._cache = (params, sparse_cholesky(precision_matrix(params, self.system)))
        return self._cache[1]

    def condition(self, sigma_e2: float, params: MaternParams) -> SpdeState:
        return SpdeState(self.data, sigma_e2, params, self.A, self.q_factor(params), self.AtDA)


def collapsed_loglik(state: FieldState, rbar) -> float:
    """Log density of the observation-level residual ``y - E f`` with ``rbar = ybar - f``."""
    d = state.data
    return -0.5 * (d.n_obs * LOG2PI + state.logdet_M() + d.within / state.sigma_e2
                   + state.quad(rbar))


@dataclass
class LinearTerms:
    """Collapsed terms for a cluster-level design ``C`` with ``N(0, prior_var I)`` coefficients."""

    loglik_delta: float  # log p(r | C) - log p(r | no design)
    mean: np.ndarray
    chol: np.ndarray | None  # lower factor of the posterior precision

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        if self.chol is None:
            return self.mean.copy()
        z = rng.standard_normal(self.mean.size)
        return self.mean + linalg.solve_triangular(self.chol, z, lower=True, trans="T",
                                                   check_finite=False)


def one_hot(col, b: int) -> np.ndarray:
    C = np.zeros((len(col), b))
    C[np.arange(len(col)), col] = 1.0
    return C


def design_terms(state: FieldState, Prbar, C, prior_var: float, col=None) -> LinearTerms:
    """Integrate coefficients with prior ``N(0, prior_var I)`` out of the likelihood.

    `Prbar` is ``P @ rbar``. `C` is an n x b design; pass `col` (leaf index
    per cluster) for one-hot designs to use the bincount fast path.
    """
    b = C.shape[1]
    if b == 0 or prior_var <= 0:
        return LinearTerms(0.0, np.zeros(b), None)
    if col is not None:
        P = state.P
        g = np.bincount(col, weights=Prbar, minlength=b)
        if P.ndim == 1:
            Z = np.diag(np.bincount(col, weights=P, minlength=b))
        else:
            Z = C.T @ (P @ C)
    else:
        g = C.T @ Prbar
        Z = C.T @ state.apply_P(C)
        Z = 0.5 * (Z + Z.T)
    Lam = Z + np.eye(b) / prior_var
    L = linalg.cholesky(Lam, lower=True, check_finite=False)
    h = linalg.solve_triangular(L, g, lower=True, check_finite=False)
    mean = linalg.solve_triangular(L, h, lower=True, trans="T", check_finite=False)
    delta = -0.5 * (b * math.log(prior_var) + 2.0 * np.log(np.diag(L)).sum() - float(h @ h))
    return LinearTerms(delta, mean, L)
