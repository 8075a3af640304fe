"""Posterior predictive surfaces, areal aggregation, partial dependence and interval metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy import linalg

from .data_model import SpatialDataset
from .errors import DatasetError, MeshError
from .gp import covariance_matrix, jittered_cholesky
from .solver import conditional_field_draw, inner_factor, sparse_cholesky
from .spde import fem_matrices, precision_matrix, projection_matrix


@dataclass(frozen=True, eq=False)
class GriddedSurface:
    """Prediction cells with their covariates and, after prediction, per-draw values.

    Attributes:
        centers: (G, 2) cell centres.
        covariates: (G, P) covariates of each cell.
        density: optional (G,) non-negative weights used for areal aggregation.
        draws: optional (S, G) predicted values, one row per posterior draw.
    """

    centers: np.ndarray
    covariates: np.ndarray
    density: np.ndarray | None = None
    draws: np.ndarray | None = None
    cell_ids: tuple = ()
    names: tuple = ()

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=float).reshape(-1, 2)
        X = np.asarray(self.covariates, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if len(c) < 1 or X.shape[0] != len(c):
            raise DatasetError("surface needs >= 1 cell and one covariate row per cell")
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "covariates", X)
        if self.density is not None:
            d = np.asarray(self.density, dtype=float)
            if d.shape != (len(c),) or np.any(d < 0) or not np.all(np.isfinite(d)):
                raise DatasetError("density must be finite, non-negative, one value per cell")
            object.__setattr__(self, "density", d)
        if self.draws is not None:
            D = np.atleast_2d(np.asarray(self.draws, dtype=float))
            if D.shape[1] != len(c):
                raise DatasetError("draws must have one column per cell")
            object.__setattr__(self, "draws", D)
        object.__setattr__(self, "cell_ids", tuple(self.cell_ids) or tuple(range(len(c))))

    @property
    def n_cells(self) -> int:
        return len(self.centers)

    def with_draws(self, draws) -> "GriddedSurface":
        return replace(self, draws=draws)

    def summary(self, alpha: float = 0.05) -> dict:
        """Posterior mean and equal-tailed ``1 - alpha`` interval per cell."""
        if self.draws is None:
            raise ValueError("surface has no draws")
        return summarize(self.draws, alpha)

    def to_csv(self, path, alpha: float = 0.05) -> None:
        s = self.summary(alpha)
        pd.DataFrame({"cell_id": self.cell_ids, "x": self.centers[:, 0], "y": self.centers[:, 1],
                      "mean": s["mean"], "q025": s["lower"], "q975": s["upper"]}
                     ).to_csv(path, index=False, float_format="%.10g")

    @classmethod
    def read_raster(cls, path, covariates=None) -> "GriddedSurface":
        """Cells from CSV ``cell_id,x,y,<covariates...>[,density]``."""
        df = pd.read_csv(path)
        missing = [c for c in ("cell_id", "x", "y") if c not in df.columns]
        if missing:
            raise DatasetError(f"raster is missing columns {missing}")
        if covariates is None:
            covariates = [c for c in df.columns if c not in ("cell_id", "x", "y", "density")]
        absent = [c for c in covariates if c not in df.columns]
        if absent:
            raise DatasetError(f"raster is missing covariate columns {absent}")
        dens = df["density"].to_numpy(float) if "density" in df.columns else None
        return cls(df[["x", "y"]].to_numpy(float), df[list(covariates)].to_numpy(float), dens,
                   cell_ids=tuple(df["cell_id"].tolist()), names=tuple(covariates))

    def write_raster(self, path) -> None:
        data = {"cell_id": self.cell_ids, "x": self.centers[:, 0], "y": self.centers[:, 1]}
        names = self.names or tuple(f"cov_{p + 1}" for p in range(self.covariates.shape[1]))
        for p, name in enumerate(names):
            data[name] = self.covariates[:, p]
        if self.density is not None:
            data["density"] = self.density
        pd.DataFrame(data).to_csv(path, index=False, float_format="%.17g")


@dataclass(frozen=True)
class RegionSpec:
    """Cell-to-region map; ``cell_region[g] == -1`` leaves cell g unassigned."""

    cell_region: np.ndarray
    labels: tuple = ()

    def __post_init__(self):
        r = np.asarray(self.cell_region, dtype=int)
        if np.any(r < -1):
            raise DatasetError("region indices must be >= -1")
        n = int(r.max()) + 1 if r.size else 0
        labels = tuple(self.labels) or tuple(range(n))
        if len(labels) < n:
            raise DatasetError("fewer region labels than region indices")
        object.__setattr__(self, "cell_region", r)
        object.__setattr__(self, "labels", labels)

    @property
    def n_regions(self) -> int:
        return len(self.labels)

    @classmethod
    def from_labels(cls, cell_labels) -> "RegionSpec":
        """Build from one label per cell (None or NaN for unassigned cells)."""
        order, idx = {}, []
        for lab in cell_labels:
            if lab is None or (isinstance(lab, float) and math.isnan(lab)):
                idx.append(-1)
                continue
            idx.append(order.setdefault(lab, len(order)))
        return cls(np.array(idx, dtype=int), tuple(order))


def summarize(draws, alpha: float = 0.05) -> dict:
    """Column-wise mean and equal-tailed quantile interval of an (S, G) array."""
    D = np.atleast_2d(np.asarray(draws, dtype=float))
    lo, hi = np.quantile(D, [alpha / 2, 1 - alpha / 2], axis=0)
    mean = D.mean(axis=0)
    # guard against rounding placing the mean a hair outside the interval
    return {"mean": mean, "lower": np.minimum(lo, mean), "upper": np.maximum(hi, mean)}


# posterior predictive draws

def mean_function(draw, covariates, standardizer=None) -> np.ndarray:
    """Covariate part (forest or linear predictor, plus offset) of one draw at `covariates`."""
    X = np.asarray(covariates, dtype=float)
    out = np.full(X.shape[0], draw.offset)
    if draw.forest is not None:
        for tree in draw.forest:
            out += tree.predict(X)
    elif draw.beta is not None:
        if len(draw.beta) == 1:
            out += draw.beta[0]
        else:
            Xs = standardizer.transform(X) if standardizer is not None else X
            out += draw.beta[0] + Xs @ draw.beta[1:]
    return out


def _select_draws(samples, max_draws):
    draws = samples.draws
    if max_draws is not None and len(draws) > max_draws:
        idx = np.unique(np.linspace(0, len(draws) - 1, max_draws).round().astype(int))
        draws = [draws[i] for i in idx]
    return draws


class _SpdePredictor:
    def __init__(self, mesh, dataset, centers):
        self.system = fem_matrices(mesh)
        A = projection_matrix(mesh, dataset.locations).tocsr()
        self.A_obs = A[np.repeat(np.arange(dataset.n), dataset.counts)]
        try:
            self.A_grid = projection_matrix(mesh, centers).tocsr()
        except MeshError as exc:
            raise MeshError(f"prediction cell outside the mesh: {exc}") from exc

    def field(self, draw, r_obs, rng):
        Qf = sparse_cholesky(precision_matrix(draw.params, self.system))
        inner = inner_factor(self.A_obs, Qf, draw.sigma_e2)
        u = conditional_field_draw(r_obs, self.A_obs, Qf, draw.sigma_e2, rng, inner=inner)
        return self.A_grid @ u


class _ExactPredictor:
    """Joint draw of the field at cluster locations, then kriging to each cell.

    Cells get their exact conditional marginal given the cluster-level draw;
    the joint dependence between cells is not reproduced.
    """

    def __init__(self, dataset, centers):
        self.loc = dataset.locations
        self.centers = centers
        self.counts = dataset.counts.astype(float)

    def field(self, draw, rbar, rng):
        p = draw.params
        K = covariance_matrix(self.loc, p)
        S = K + np.diag(draw.sigma_e2 / self.counts)
        Ls = jittered_cholesky(S, scale=p.sigma_m2 + draw.sigma_e2)
        W = linalg.cho_solve((Ls, True), K)  # S^-1 K
        mean = W.T @ rbar
        cov = K - K @ W
        z = mean + jittered_cholesky(0.5 * (cov + cov.T), scale=max(p.sigma_m2, 1e-12)) \
            @ rng.standard_normal(len(rbar))
        Lk = jittered_cholesky(K, scale=p.sigma_m2)
        Kgc = covariance_matrix(self.centers, p, self.loc)
        B = linalg.solve_triangular(Lk, Kgc.T, lower=True)  # Lk^-1 K_cg
        krig = B.T @ linalg.solve_triangular(Lk, z, lower=True)
        var = np.clip(p.sigma_m2 - np.sum(B * B, axis=0), 0.0, None)
        return krig + np.sqrt(var) * rng.standard_normal(len(krig))


def predict_surface(samples, dataset: SpatialDataset, surface: GriddedSurface, *,
                    seed: int = 0, max_draws: int | None = None,
                    include_field: bool = True) -> GriddedSurface:
    """Per-draw predictions ``f(x_g) + field(s_g)`` on the cells of `surface`.

    The field at each draw is sampled from its conditional distribution
    given that draw's residuals ``y - mean`` and (sigma_e2, psi).
    """
    rng = np.random.default_rng(seed)
    draws = _select_draws(samples, max_draws)
    if not draws:
        raise ValueError("no posterior draws")
    spatial = include_field and draws[0].sigma_m2 is not None
    predictor = None
    if spatial:
        if samples.model == "bartsimp-exact":
            predictor = _ExactPredictor(dataset, surface.centers)
        elif samples.mesh is not None:
            predictor = _SpdePredictor(samples.mesh, dataset, surface.centers)
        else:
            raise ValueError("spatial samples without a mesh")
    y_obs = dataset.flat_responses()
    obs_idx = np.repeat(np.arange(dataset.n), dataset.counts)
    ybar = dataset.cluster_means()
    out = np.empty((len(draws), surface.n_cells))
    for s, d in enumerate(draws):
        out[s] = mean_function(d, surface.covariates, samples.standardizer)
        if predictor is None:
            continue
        fit = mean_function(d, dataset.covariates, samples.standardizer)
        if isinstance(predictor, _ExactPredictor):
            out[s] += predictor.field(d, ybar - fit, rng)
        else:
            out[s] += predictor.field(d, y_obs - fit[obs_idx], rng)
    return surface.with_draws(out)


# areal aggregation and partial dependence

def aggregate_areal(draws, density, regions: RegionSpec) -> np.ndarray:
    """Density-weighted mean of each region, per draw; returns (S, n_regions)."""
    D = np.atleast_2d(np.asarray(draws, dtype=float))
    w = np.asarray(density, dtype=float)
    if w.shape != (D.shape[1],) or len(regions.cell_region) != D.shape[1]:
        raise DatasetError("draws, density and region map must cover the same cells")
    if np.any(w < 0):
        raise DatasetError("densities must be non-negative")
    mask = regions.cell_region >= 0
    W = sp.csr_matrix((w[mask], (regions.cell_region[mask], np.flatnonzero(mask))),
                      shape=(regions.n_regions, D.shape[1]))
    totals = np.asarray(W.sum(axis=1)).ravel()
    if np.any(totals <= 0):
        bad = [regions.labels[i] for i in np.flatnonzero(totals <= 0)]
        raise DatasetError(f"regions with zero total density: {bad}")
    return (W @ D.T).T / totals


def partial_dependence(samples, dataset: SpatialDataset, var_index: int, value_grid) -> np.ndarray:
    """Forest partial dependence per draw; returns (S, len(value_grid)).

    Entry (s, v) averages the draw-s sum of trees over all clusters with
    covariate `var_index` set to ``value_grid[v]``. The spatial field is
    excluded.
    """
    grid = np.atleast_1d(np.asarray(value_grid, dtype=float))
    if grid.size == 0:
        raise ValueError("empty value grid")
    X = dataset.covariates
    if not 0 <= var_index < X.shape[1]:
        raise IndexError(f"var_index {var_index} out of range for {X.shape[1]} covariates")
    if samples.draws and samples.draws[0].forest is None:
        raise ValueError("partial dependence needs forest draws")
    n = X.shape[0]
    Xrep = np.tile(X, (grid.size, 1))
    Xrep[:, var_index] = np.repeat(grid, n)
    out = np.empty((len(samples.draws), grid.size))
    for s, d in enumerate(samples.draws):
        out[s] = mean_function(d, Xrep).reshape(grid.size, n).mean(axis=1)
    return out


# metrics

def interval_score(lower, upper, truth, alpha: float = 0.05) -> np.ndarray:
    """Per-cell interval score: width plus ``2/alpha`` times any miss distance."""
    lo, hi, f = (np.asarray(a, dtype=float) for a in (lower, upper, truth))
    return (hi - lo) + (2.0 / alpha) * (lo - f) * (f < lo) + (2.0 / alpha) * (f - hi) * (f > hi)


def compute_metrics(mean, lower, upper, truth, alpha: float = 0.05) -> dict:
    """RMSE, average interval length, coverage rate and average interval score."""
    arrays = [np.asarray(a, dtype=float).ravel() for a in (mean, lower, upper, truth)]
    if len({a.size for a in arrays}) != 1:
        raise ValueError("mean, interval bounds and truth must have the same size")
    m, lo, hi, f = arrays
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    return {
        "rmse": float(math.sqrt(np.mean((m - f) ** 2))),
        "ail": float(np.mean(hi - lo)),
        "acr": float(np.mean((lo <= f) & (f <= hi))),
        "ais": float(np.mean(interval_score(lo, hi, f, alpha))),
    }


def surface_metrics(surface: GriddedSurface, truth, alpha: float = 0.05) -> dict:
    s = surface.summary(alpha)
    return compute_metrics(s["mean"], s["lower"], s["upper"], truth, alpha)
