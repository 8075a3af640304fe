"""Simulated mixtures of covariate signal and spatial signal on a regular grid.

The unit square is split into ``side x side`` cells, each carrying two
uniform covariates. The truth surface mixes a step function of the
covariates with a Matérn field draw, ``f = (1 - omega) z + omega f0``.
Clusters sit at one uniform location inside each of ``n_clusters`` distinct
cells and observe ``f`` of their cell plus Gaussian noise.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .data_model import SpatialDataset
from .gp import MaternParams, covariance_matrix, jittered_cholesky
from .predict import GriddedSurface
from .solver import sparse_cholesky
from .spde import build_mesh, fem_matrices, precision_matrix, projection_matrix

SCENARIO_OMEGA = {1: 1.0, 2: 0.8, 3: 0.5, 4: 0.2, 5: 0.0}
DENSE_MAX_CELLS = 2500


@dataclass(frozen=True)
class ScenarioConfig:
    omega: float = 0.5
    side: int = 50
    n_clusters: int = 250
    min_obs: int = 5
    max_obs: int = 10
    sigma_e2: float = 1.0
    kappa: float = 2.5
    sigma_m2: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.omega <= 1.0:
            raise ValueError("omega must lie in [0, 1]")
        if self.side < 1 or not 1 <= self.n_clusters <= self.side ** 2:
            raise ValueError("need 1 <= n_clusters <= side**2")
        if not 1 <= self.min_obs <= self.max_obs:
            raise ValueError("need 1 <= min_obs <= max_obs")
        if self.sigma_e2 < 0 or self.sigma_m2 < 0 or self.kappa <= 0:
            raise ValueError("invalid variance or scale parameter")

    @classmethod
    def scenario(cls, number: int, **kwargs) -> "ScenarioConfig":
        """Config of numbered scenario 1..5 (omega = 1, .8, .5, .2, 0)."""
        if number not in SCENARIO_OMEGA:
            raise ValueError(f"scenario must be one of {sorted(SCENARIO_OMEGA)}")
        return cls(omega=SCENARIO_OMEGA[number], **kwargs)

    @property
    def params(self) -> MaternParams:
        return MaternParams.from_kappa(self.sigma_m2, self.kappa)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class Scenario:
    config: ScenarioConfig
    dataset: SpatialDataset
    surface: GriddedSurface  # grid cells and their covariates
    truth: np.ndarray  # f on every cell
    field: np.ndarray  # baseline field z on every cell
    cells: np.ndarray  # cell index of every cluster


def baseline_covariate_surface(x) -> np.ndarray | float:
    """Step function: 3 if x1 < 0.5, else 0 if x2 >= 0.5, else -2."""
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    out = np.where(x1 < 0.5, 3.0, np.where(x2 >= 0.5, 0.0, -2.0))
    return out if out.ndim else float(out)


def grid_centers(side: int) -> np.ndarray:
    """Cell centres of a ``side x side`` grid over the unit square, row-major in y."""
    c = (np.arange(side) + 0.5) / side
    gx, gy = np.meshgrid(c, c, indexing="xy")
    return np.column_stack([gx.ravel(), gy.ravel()])


def sample_baseline_field(centers, params: MaternParams, rng: np.random.Generator,
                          dense_max: int = DENSE_MAX_CELLS) -> np.ndarray:
    """Zero-mean Matérn field draw at `centers`.

    Exact dense Cholesky up to `dense_max` points; beyond that a fine-mesh
    GMRF (edge length range/20, margin one range) projected to the points.
    """
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)
    if params.sigma_m2 == 0:
        return np.zeros(len(centers))
    if len(centers) <= dense_max:
        K = covariance_matrix(centers, params)
        L = jittered_cholesky(K, scale=params.sigma_m2)
        return L @ rng.standard_normal(len(centers))
    if params.nu != 1.0:
        raise ValueError("the sparse sampler needs nu = 1")
    mesh = build_mesh(centers, params.rho / 20.0, 0.0, params.rho)
    Q = precision_matrix(params, fem_matrices(mesh))
    u = sparse_cholesky(Q).sample(rng)
    return projection_matrix(mesh, centers) @ u


def simulate_scenario(config: ScenarioConfig) -> Scenario:
    """Draw one replicate of the grid scenario."""
    rng = np.random.default_rng(config.seed)
    side = config.side
    centers = grid_centers(side)
    G = len(centers)
    X = rng.uniform(size=(G, 2))
    z = sample_baseline_field(centers, config.params, rng)
    f0 = baseline_covariate_surface(X)
    truth = (1.0 - config.omega) * z + config.omega * f0

    cells = np.sort(rng.choice(G, size=config.n_clusters, replace=False))
    h = 1.0 / side
    locations = centers[cells] - 0.5 * h + h * rng.uniform(size=(len(cells), 2))
    counts = rng.integers(config.min_obs, config.max_obs + 1, size=len(cells))
    sd = math.sqrt(config.sigma_e2)
    responses = [truth[c] + sd * rng.standard_normal(k) for c, k in zip(cells, counts)]
    dataset = SpatialDataset(locations, X[cells], responses, ("x1", "x2"),
                             tuple(int(c) for c in cells))
    surface = GriddedSurface(centers, X, names=("x1", "x2"))
    return Scenario(config, dataset, surface, truth, z, cells)
