"""Spatial datasets with clustered (jagged) responses.

A dataset holds ``n`` spatial clusters. Cluster ``i`` has a planar location
``s_i``, a covariate row ``x_i`` and ``n_i >= 1`` scalar responses. All
observations in a cluster share the location and the covariates.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import DatasetError, NonFiniteValue

REQUIRED_COLUMNS = ("cluster_id", "x", "y", "response")


@dataclass(frozen=True, eq=False)
class SpatialDataset:
    """Clustered spatial regression data.

    Attributes:
        locations: (n, 2) cluster coordinates.
        covariates: (n, P) covariate matrix, one row per cluster.
        responses: length-n list; entry i holds the n_i responses of cluster i.
        names: P covariate labels.
        cluster_ids: length-n labels, as read from file.
    """

    locations: np.ndarray
    covariates: np.ndarray
    responses: list
    names: tuple = ()
    cluster_ids: tuple = ()

    def __post_init__(self):
        loc = np.asarray(self.locations, dtype=float).reshape(-1, 2)
        cov = np.asarray(self.covariates, dtype=float)
        if cov.ndim == 1:
            cov = cov[:, None]
        resp = [np.atleast_1d(np.asarray(r, dtype=float)) for r in self.responses]
        n = len(loc)
        if n < 1:
            raise DatasetError("dataset needs at least one cluster")
        if cov.shape[0] != n or len(resp) != n:
            raise DatasetError(
                f"inconsistent sizes: {n} locations, {cov.shape[0]} covariate rows, "
                f"{len(resp)} response groups"
            )
        if any(r.size == 0 for r in resp):
            raise DatasetError("every cluster needs at least one response")
        if not np.all(np.isfinite(loc)) or not np.all(np.isfinite(cov)):
            raise NonFiniteValue("locations and covariates must be finite")
        if not all(np.all(np.isfinite(r)) for r in resp):
            raise NonFiniteValue("responses must be finite")
        names = tuple(self.names) or tuple(f"cov_{p + 1}" for p in range(cov.shape[1]))
        if len(names) != cov.shape[1]:
            raise DatasetError("one name per covariate column is required")
        ids = tuple(self.cluster_ids) or tuple(range(n))
        if len(set(ids)) != n:
            raise DatasetError("cluster ids must be unique")
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "covariates", cov)
        object.__setattr__(self, "responses", resp)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "cluster_ids", ids)

    @property
    def n(self) -> int:
        return len(self.locations)

    @property
    def n_covariates(self) -> int:
        return self.covariates.shape[1]

    @property
    def counts(self) -> np.ndarray:
        return np.array([r.size for r in self.responses], dtype=int)

    @property
    def n_obs(self) -> int:
        return int(self.counts.sum())

    def flat_responses(self) -> np.ndarray:
        return np.concatenate(self.responses)

    def cluster_sums(self) -> np.ndarray:
        return np.array([r.sum() for r in self.responses])

    def cluster_means(self) -> np.ndarray:
        return np.array([r.mean() for r in self.responses])

    def with_responses(self, responses) -> "SpatialDataset":
        return SpatialDataset(self.locations, self.covariates, responses, self.names, self.cluster_ids)

    def equals(self, other: "SpatialDataset", rtol: float = 1e-12) -> bool:
        if self.n != other.n or self.names != other.names:
            return False
        if not np.array_equal(self.counts, other.counts):
            return False
        return (
            np.allclose(self.locations, other.locations, rtol=rtol, atol=0)
            and np.allclose(self.covariates, other.covariates, rtol=rtol, atol=0)
            and np.allclose(self.flat_responses(), other.flat_responses(), rtol=rtol, atol=0)
        )


@dataclass(frozen=True)
class IncidenceMap:
    """Observation-to-cluster bookkeeping.

    ``obs_to_loc[k]`` is the cluster of flattened observation ``k``;
    observations are ordered cluster by cluster.
    """

    obs_to_loc: np.ndarray
    n_locations: int

    @property
    def n_obs(self) -> int:
        return len(self.obs_to_loc)

    @property
    def counts(self) -> np.ndarray:
        return np.bincount(self.obs_to_loc, minlength=self.n_locations)

    def expand(self, v):
        """Lift a cluster-level vector (or matrix, rows = clusters) to observations."""
        return np.asarray(v)[self.obs_to_loc]

    def collapse(self, v) -> np.ndarray:
        """Sum an observation-level vector within clusters (adjoint of `expand`)."""
        return np.bincount(self.obs_to_loc, weights=np.asarray(v, dtype=float), minlength=self.n_locations)

    def matrix(self):
        """Sparse N x n expansion operator E with E @ v == expand(v)."""
        import scipy.sparse as sp

        N = self.n_obs
        return sp.csr_matrix((np.ones(N), (np.arange(N), self.obs_to_loc)), shape=(N, self.n_locations))


def build_incidence(dataset: SpatialDataset) -> IncidenceMap:
    counts = dataset.counts
    return IncidenceMap(np.repeat(np.arange(dataset.n), counts), dataset.n)


@dataclass(frozen=True)
class ResponseScaling:
    """Affine map from the original response to ``[-0.5, 0.5]``.

    ``internal = (original - center) / scale``.
    """

    center: float = 0.0
    scale: float = 1.0

    @classmethod
    def fit(cls, y) -> "ResponseScaling":
        y = np.asarray(y, dtype=float)
        lo, hi = float(y.min()), float(y.max())
        scale = hi - lo
        if scale <= 0:
            scale = 1.0
        return cls(center=0.5 * (lo + hi), scale=scale)

    def forward(self, y):
        return (np.asarray(y, dtype=float) - self.center) / self.scale

    def inverse(self, y):
        return np.asarray(y, dtype=float) * self.scale + self.center


@dataclass(frozen=True)
class Standardizer:
    """Column-wise zero-mean/unit-variance transform fitted over clusters."""

    mean: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sd: np.ndarray = field(default_factory=lambda: np.ones(0))

    @classmethod
    def fit(cls, X) -> "Standardizer":
        X = np.asarray(X, dtype=float)
        sd = X.std(axis=0)
        sd[sd == 0] = 1.0
        return cls(X.mean(axis=0), sd)

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.sd

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "sd": self.sd.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Standardizer":
        return cls(np.asarray(d["mean"], float), np.asarray(d["sd"], float))


def scaled_dataset(dataset: SpatialDataset) -> tuple[SpatialDataset, ResponseScaling]:
    """Copy of `dataset` with responses min-max scaled to [-0.5, 0.5]."""
    scaling = ResponseScaling.fit(dataset.flat_responses())
    return dataset.with_responses([scaling.forward(r) for r in dataset.responses]), scaling


def _read_manifest(manifest) -> dict:
    if manifest is None:
        return {}
    if isinstance(manifest, (str, Path)):
        manifest = json.loads(Path(manifest).read_text())
    unknown = set(manifest) - {*REQUIRED_COLUMNS, "covariates"}
    if unknown:
        raise DatasetError(f"unknown manifest keys: {sorted(unknown)}")
    return dict(manifest)


def load_dataset(path, manifest=None) -> SpatialDataset:
    """Read a long-format CSV with one row per observation.

    Default header is ``cluster_id,x,y,response,<covariates...>``; every
    column after ``response`` is a covariate. `manifest` (dict or JSON path)
    may rename the required columns and list the covariate columns.
    """
    mapping = _read_manifest(manifest)
    df = pd.read_csv(path)
    cols = {c: mapping.get(c, c) for c in REQUIRED_COLUMNS}
    missing = [v for v in cols.values() if v not in df.columns]
    if missing:
        raise DatasetError(f"missing columns: {missing}")
    if "covariates" in mapping:
        cov_cols = list(mapping["covariates"])
        absent = [c for c in cov_cols if c not in df.columns]
        if absent:
            raise DatasetError(f"missing covariate columns: {absent}")
    else:
        pos = list(df.columns).index(cols["response"])
        cov_cols = [c for c in df.columns[pos + 1:] if c not in cols.values()]
    numeric = [cols["x"], cols["y"], cols["response"], *cov_cols]
    values = df[numeric].apply(pd.to_numeric, errors="coerce").to_numpy(dtype=float)
    if not np.all(np.isfinite(values)):
        raise NonFiniteValue(f"{path}: non-finite or non-numeric values")

    ids = df[cols["cluster_id"]].to_numpy()
    order, first = {}, []
    for k, cid in enumerate(ids):
        if cid not in order:
            order[cid] = len(order)
            first.append(k)
    groups = np.array([order[c] for c in ids])
    first = np.array(first)
    loc = values[first, 0:2]
    cov = values[first, 3:]
    if not np.array_equal(values[:, 0:2], loc[groups]):
        raise DatasetError("cluster with inconsistent coordinates")
    if not np.array_equal(values[:, 3:], cov[groups]):
        raise DatasetError("covariates must be constant within a cluster")
    responses = [values[groups == g, 2] for g in range(len(first))]
    cluster_ids = tuple(_plain(c) for c in order)
    return SpatialDataset(loc, cov, responses, tuple(cov_cols), cluster_ids)


def _plain(v):
    return v.item() if hasattr(v, "item") else v


def save_dataset(dataset: SpatialDataset, path) -> None:
    """Write `dataset` in the long CSV format read by `load_dataset`."""
    inc = build_incidence(dataset)
    idx = inc.obs_to_loc
    data = {
        "cluster_id": np.asarray(dataset.cluster_ids, dtype=object)[idx],
        "x": dataset.locations[idx, 0],
        "y": dataset.locations[idx, 1],
        "response": dataset.flat_responses(),
    }
    for p, name in enumerate(dataset.names):
        data[name] = dataset.covariates[idx, p]
    pd.DataFrame(data).to_csv(path, index=False, float_format="%.17g")
