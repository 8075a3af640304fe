"""Matérn covariance, the dense Gaussian marginal likelihood and hyperparameter priors."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize, special, stats
from scipy.spatial.distance import cdist

from .errors import NotPD

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MaternParams:
    """Spatial variance, range and smoothness of a Matérn field."""

    sigma_m2: float
    rho: float
    nu: float = 1.0

    def __post_init__(self):
        if not (self.sigma_m2 >= 0 and self.rho > 0 and self.nu > 0):
            raise ValueError(f"invalid Matérn parameters {self}")

    @property
    def kappa(self) -> float:
        return math.sqrt(8.0 * self.nu) / self.rho

    @property
    def sigma_m(self) -> float:
        return math.sqrt(self.sigma_m2)

    @classmethod
    def from_kappa(cls, sigma_m2: float, kappa: float, nu: float = 1.0) -> "MaternParams":
        return cls(sigma_m2, math.sqrt(8.0 * nu) / kappa, nu)


@dataclass(frozen=True)
class PcPriorConfig:
    """Joint PC prior on (range, marginal sd); P(rho < rho0) = alpha1, P(sigma_m > sigma0) = alpha2."""

    rho0: float
    sigma0: float
    alpha1: float = 0.5
    alpha2: float = 0.5
    d: int = 2

    @property
    def lam1(self) -> float:
        return -math.log(self.alpha1) * self.rho0 ** (self.d / 2)

    @property
    def lam2(self) -> float:
        return -math.log(self.alpha2) / self.sigma0


@dataclass(frozen=True)
class SigmaEPriorConfig:
    """Scaled inverse chi-square prior ``nu_df * lam / chi2_{nu_df}`` on the nugget."""

    lam: float
    nu_df: float = 3.0
    q: float = 0.9

    @classmethod
    def calibrated(cls, sigma_hat2: float, nu_df: float = 3.0, q: float = 0.9) -> "SigmaEPriorConfig":
        """Choose ``lam`` so that ``P(sigma_e^2 <= sigma_hat2) = q``."""
        lam = sigma_hat2 * stats.chi2.ppf(1.0 - q, nu_df) / nu_df
        return cls(lam=float(lam), nu_df=nu_df, q=q)

    def cdf(self, x: float) -> float:
        return float(stats.chi2.sf(self.nu_df * self.lam / x, self.nu_df))


def matern_corr(dist, params: MaternParams):
    """Matérn correlation at distance(s) `dist`; equals 1 at distance 0."""
    d = np.asarray(dist, dtype=float)
    x = params.kappa * d
    nu = params.nu
    if nu == 0.5:
        out = np.exp(-x)
    elif nu == 1.5:
        out = (1.0 + x) * np.exp(-x)
    elif nu == 2.5:
        out = (1.0 + x + x * x / 3.0) * np.exp(-x)
    else:
        with np.errstate(invalid="ignore", over="ignore"):
            out = (2.0 ** (1.0 - nu) / special.gamma(nu)) * x ** nu * special.kv(nu, x)
        out = np.where(x == 0.0, 1.0, out)
        out = np.where(np.isnan(out) & (x > 0), 0.0, out)
    return out if out.ndim else float(out)


def covariance_matrix(locations, params: MaternParams, others=None) -> np.ndarray:
    """Dense Matérn covariance ``sigma_m2 * corr`` between location sets."""
    a = np.asarray(locations, dtype=float).reshape(-1, 2)
    b = a if others is None else np.asarray(others, dtype=float).reshape(-1, 2)
    dist = cdist(a, b)
    if not np.all(np.isfinite(dist)):
        raise ValueError("non-finite distances")
    K = params.sigma_m2 * matern_corr(dist, params)
    if others is None:
        K = 0.5 * (K + K.T)
        np.fill_diagonal(K, params.sigma_m2)
    return K


def jittered_cholesky(S: np.ndarray, scale: float | None = None) -> np.ndarray:
    """Lower Cholesky factor, adding 1e-10*scale, 1e-9*scale, ... 1e-6*scale on failure."""
    try:
        return linalg.cholesky(S, lower=True, check_finite=False)
    except linalg.LinAlgError:
        pass
    scale = float(np.mean(np.diag(S))) if scale is None else scale
    jitter = 1e-10 * scale
    while jitter <= 1e-6 * scale * (1 + 1e-9):
        try:
            return linalg.cholesky(S + jitter * np.eye(len(S)), lower=True, check_finite=False)
        except linalg.LinAlgError:
            jitter *= 10
    raise NotPD("matrix not positive definite after jitter")


def exact_marginal_loglik(residuals, C, leaf_var, sigma_e2, params: MaternParams,
                          incidence, locations) -> float:
    """Log density of ``N(0, leaf_var*C~C~' + Sigma~ + sigma_e2*I)`` by dense Cholesky.

    `residuals` are observation-level (length N); `C` is cluster-level (n x b)
    and is expanded through `incidence` together with the Matérn covariance
    of `locations`.
    """
    r = np.asarray(residuals, dtype=float)
    N = r.size
    idx = incidence.obs_to_loc
    K = covariance_matrix(locations, params)[np.ix_(idx, idx)]
    S = K + sigma_e2 * np.eye(N)
    C = np.asarray(C, dtype=float)
    if C.size:
        Ct = C.reshape(len(locations), -1)[idx]
        S += leaf_var * Ct @ Ct.T
    L = jittered_cholesky(S, scale=max(params.sigma_m2, sigma_e2))
    alpha = linalg.solve_triangular(L, r, lower=True, check_finite=False)
    return float(-0.5 * (N * math.log(2 * math.pi) + 2 * np.log(np.diag(L)).sum() + alpha @ alpha))


def pc_log_prior(params: MaternParams, config: PcPriorConfig) -> float:
    """Log joint PC prior density of (rho, sigma_m)."""
    rho, sm = params.rho, math.sqrt(params.sigma_m2)
    if not (rho > 0 and sm > 0):
        return -math.inf
    d = config.d
    l1, l2 = config.lam1, config.lam2
    return (math.log(d / 2) + math.log(l1) + math.log(l2) - (d / 2 + 1) * math.log(rho)
            - l1 * rho ** (-d / 2) - l2 * sm)


def sigma_e_log_prior(sigma_e2: float, config: SigmaEPriorConfig) -> float:
    """Log density of the scaled inverse chi-square prior at `sigma_e2`."""
    if not sigma_e2 > 0:
        return -math.inf
    nu, lam = config.nu_df, config.lam
    a = 0.5 * nu
    return (a * math.log(a * lam) - math.lgamma(a) - (a + 1) * math.log(sigma_e2)
            - a * lam / sigma_e2)


# prior calibration from working spatial models

def _cluster_stats(dataset):
    counts = dataset.counts.astype(float)
    ybar = dataset.cluster_means()
    within = sum(float(((r - r.mean()) ** 2).sum()) for r in dataset.responses)
    return counts, ybar, within


def _profile_loglik(theta, locations, counts, ybar, within, X, nu):
    """Gaussian log-likelihood with beta profiled out by GLS, at log(sigma_e2, sigma_m2, rho)."""
    se2, sm2, rho = np.exp(theta)
    n, N = len(counts), counts.sum()
    K = covariance_matrix(locations, MaternParams(sm2, rho, nu))
    S = K + np.diag(se2 / counts)
    try:
        L = linalg.cholesky(S, lower=True, check_finite=False)
    except linalg.LinAlgError:
        return -np.inf, None
    Xw = linalg.solve_triangular(L, X, lower=True, check_finite=False)
    yw = linalg.solve_triangular(L, ybar, lower=True, check_finite=False)
    beta, *_ = np.linalg.lstsq(Xw, yw, rcond=None)
    res = yw - Xw @ beta
    ll = -0.5 * ((N - n) * math.log(2 * math.pi * se2) + within / se2
                 + n * math.log(2 * math.pi) + 2 * np.log(np.diag(L)).sum() + res @ res
                 + np.log(counts).sum())
    return ll, beta


def fit_spatial_working_model(dataset, design: np.ndarray, nu: float = 1.0,
                              max_clusters: int = 1500, seed: int = 0,
                              min_range_spacings: float = 3.0) -> dict:
    """Maximum-likelihood fit of a linear model plus a Matérn field with nugget.

    Returns a dict with ``sigma_e2``, ``sigma_m2``, ``rho`` and ``beta``.
    Large datasets are subsampled to `max_clusters` clusters. The range is
    kept above `min_range_spacings` typical cluster spacings
    (``diam / sqrt(n)``): shorter ranges are not resolved by the cluster
    layout and only mimic an unstructured cluster effect.
    """
    counts, ybar, within = _cluster_stats(dataset)
    loc, X = dataset.locations, np.asarray(design, dtype=float)
    if len(counts) > max_clusters:
        keep = np.sort(np.random.default_rng(seed).choice(len(counts), max_clusters, replace=False))
        within = sum(float(((dataset.responses[i] - ybar[i]) ** 2).sum()) for i in keep)
        counts, ybar, loc, X = counts[keep], ybar[keep], loc[keep], X[keep]
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise ValueError("rank-deficient working-model design")
    diam = float(np.max(np.ptp(loc, axis=0))) or 1.0
    y = dataset.flat_responses()
    v = float(np.var(y)) or 1.0
    rho_min = min(min_range_spacings * diam / math.sqrt(len(counts)), diam)
    x0 = np.log([0.5 * v, 0.5 * v, max(diam / 5, 2 * rho_min)])
    bounds = [(math.log(v * 1e-6), math.log(v * 10)), (math.log(v * 1e-6), math.log(v * 10)),
              (math.log(rho_min), math.log(diam * 10))]

    def nll(theta):
        ll, _ = _profile_loglik(theta, loc, counts, ybar, within, X, nu)
        return -ll if np.isfinite(ll) else 1e300

    res = optimize.minimize(nll, x0, method="L-BFGS-B", bounds=bounds)
    if not np.isfinite(res.fun) or res.fun >= 1e300:
        raise RuntimeError("working model optimisation failed")
    ll, beta = _profile_loglik(res.x, loc, counts, ybar, within, X, nu)
    se2, sm2, rho = np.exp(res.x)
    return {"sigma_e2": float(se2), "sigma_m2": float(sm2), "rho": float(rho),
            "beta": beta, "loglik": float(ll)}


def calibrate_priors(dataset, *, nu: float = 1.0, nu_df: float = 3.0, q: float = 0.9,
                     alpha1: float = 0.5, alpha2: float = 0.5, design=None,
                     ) -> tuple[SigmaEPriorConfig, PcPriorConfig]:
    """Data-dependent priors for the nugget and the Matérn hyperparameters.

    The nugget prior is scaled so that its `q` quantile equals the residual
    variance of a linear-plus-spatial working model; the PC prior is centred
    at the range and marginal sd of an intercept-only spatial fit.
    """
    n = dataset.n
    if design is None:
        from .data_model import Standardizer

        Xs = Standardizer.fit(dataset.covariates).transform(dataset.covariates)
        design = np.column_stack([np.ones(n), Xs])
    y = dataset.flat_responses()
    diam = float(np.max(np.ptp(dataset.locations, axis=0))) or 1.0
    try:
        lin = fit_spatial_working_model(dataset, design, nu)
        sigma_hat2 = lin["sigma_e2"]
    except Exception as exc:  # noqa: BLE001
        log.warning("linear working model failed (%s); using sample variance", exc)
        sigma_hat2 = float(np.var(y))
    try:
        base = fit_spatial_working_model(dataset, np.ones((n, 1)), nu)
        rho0, sigma0 = base["rho"], math.sqrt(base["sigma_m2"])
    except Exception as exc:  # noqa: BLE001
        log.warning("intercept-only working model failed (%s); using diameter/5", exc)
        rho0, sigma0 = diam / 5, math.sqrt(float(np.var(y)))
    sigma0 = max(sigma0, 1e-3 * math.sqrt(float(np.var(y)) or 1.0))
    return (SigmaEPriorConfig.calibrated(sigma_hat2, nu_df, q),
            PcPriorConfig(rho0=rho0, sigma0=sigma0, alpha1=alpha1, alpha2=alpha2))
