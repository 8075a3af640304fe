"""Metropolis-within-Gibbs sampler for sum-of-trees plus Matérn field models.

Each outer iteration updates every tree structure (leaf values and the
spatial field integrated out), draws the tree's leaf values, then updates
the nugget variance and the Matérn hyperparameters by random-walk
Metropolis on the log scale, with the field integrated out of every
acceptance ratio.

The same machinery fits the comparators: a forest without spatial field
(``bart``), and linear spatial models whose coefficients are integrated out
like leaf values (``spde`` with all covariates, ``spde0`` intercept only).
All computations run on the response min-max scaled to [-0.5, 0.5]; stored
draws are on the original scale.
"""
from __future__ import annotations

import copy
import json
import logging
import math
import os
import pickle
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy import stats

from .data_model import ResponseScaling, SpatialDataset, Standardizer, scaled_dataset
from .errors import ConfigError
from .gp import (MaternParams, PcPriorConfig, SigmaEPriorConfig, calibrate_priors,
                 pc_log_prior, sigma_e_log_prior)
from .likelihood import (ClusterData, DenseField, FieldState, LinearTerms, NullField, SpdeField,
                         collapsed_loglik, design_terms, one_hot)
from .spde import Mesh, build_graded_mesh, build_mesh
from .tree import (DEFAULT_MOVE_PROBS, CutpointTable, DecisionTree, TreePriorConfig,
                   default_leaf_var, has_empty_leaf, propose_move, tree_log_prior)

log = logging.getLogger(__name__)

MODELS = ("bartsimp", "bartsimp-exact", "bart", "spde", "spde0")
FOREST_MODELS = ("bartsimp", "bartsimp-exact", "bart")
SPATIAL_MODELS = ("bartsimp", "bartsimp-exact", "spde", "spde0")


@dataclass
class PriorConfig:
    alpha: float = 0.95
    beta: float = 2.0
    k: float = 2.0
    leaf_var: float | None = None
    max_depth: int | None = None
    beta_var: float = 1.0
    nu: float = 1.0
    nu_df: float = 3.0
    q: float = 0.9
    sigma_hat2: float | None = None
    alpha1: float = 0.5
    alpha2: float = 0.5
    rho0: float | None = None
    sigma0: float | None = None


@dataclass
class MeshConfig:
    edge_frac: float = 0.2  # target edge length as a fraction of rho0
    target_edge_len: float | None = None
    extension_frac: float = 0.2
    range_margin: float = 1.0  # margin is at least this many rho0
    max_vertices: int = 20_000
    kind: str = "grid"  # or "graded": fine over the data, coarsening outward
    outer_frac: float = 10.0  # graded meshes reach this many data diameters out


@dataclass
class ChainConfig:
    model: str = "bartsimp"
    n_trees: int = 20
    n_iter: int = 4000
    burnin: int = 2000
    thin: int = 1
    seed: int = 0
    update_schedule: str = "sweep"  # or "per-tree"
    sigma_e_step: float = 0.1
    psi_step: float = 0.1
    adapt: bool = True
    move_probs: dict | None = None
    likelihood: bool = True
    fixed: tuple = ()
    reference_loglik: bool = False
    checkpoint_every: int = 0
    prior: PriorConfig = field(default_factory=PriorConfig)
    mesh: MeshConfig = field(default_factory=MeshConfig)

    def __post_init__(self):
        if isinstance(self.prior, dict):
            self.prior = _build(PriorConfig, self.prior)
        if isinstance(self.mesh, dict):
            self.mesh = _build(MeshConfig, self.mesh)
        self.fixed = tuple(self.fixed)
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}; choose from {MODELS}")
        if self.update_schedule not in ("sweep", "per-tree"):
            raise ConfigError("update_schedule must be 'sweep' or 'per-tree'")
        if self.n_iter < 1 or not 0 <= self.burnin < self.n_iter or self.thin < 1:
            raise ConfigError("need n_iter >= 1, 0 <= burnin < n_iter and thin >= 1")
        if self.mesh.kind not in ("graded", "grid"):
            raise ConfigError("mesh kind must be 'graded' or 'grid'")
        unknown = set(self.fixed) - {"trees", "leaves", "sigma_e", "psi"}
        if unknown:
            raise ConfigError(f"unknown fixed components {sorted(unknown)}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ChainConfig":
        return _build(cls, d)


def _build(cls, d):
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**d)


@dataclass
class ChainState:
    forest: list
    nodes: list
    fits: np.ndarray  # (m, n) cluster-level fit of each tree
    total: np.ndarray  # (n,) sum of fits
    beta: np.ndarray | None
    sigma_e2: float
    params: MaternParams | None
    rng: np.random.Generator
    iteration: int = 0
    steps: dict = field(default_factory=dict)
    accept: dict = field(default_factory=dict)
    field_state: FieldState | None = None

    def __getstate__(self):
        d = self.__dict__.copy()
        d["field_state"] = None
        return d

    def count(self, name: str, accepted: bool) -> None:
        a = self.accept.setdefault(name, [0, 0])
        a[0] += int(accepted)
        a[1] += 1


@dataclass
class Draw:
    iteration: int
    sigma_e2: float
    sigma_m2: float | None
    rho: float | None
    offset: float
    forest: list | None = None
    beta: np.ndarray | None = None
    loglik: float | None = None

    def to_dict(self) -> dict:
        d = {"iteration": self.iteration, "sigma_e2": self.sigma_e2, "sigma_m2": self.sigma_m2,
             "rho": self.rho, "offset": self.offset, "loglik": self.loglik}
        if self.forest is not None:
            d["forest"] = [t.to_dict() for t in self.forest]
        if self.beta is not None:
            d["beta"] = np.asarray(self.beta).tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Draw":
        forest = [DecisionTree.from_dict(t) for t in d["forest"]] if "forest" in d else None
        beta = np.asarray(d["beta"], float) if "beta" in d else None
        return cls(d["iteration"], d["sigma_e2"], d["sigma_m2"], d["rho"], d["offset"],
                   forest, beta, d.get("loglik"))

    @property
    def params(self) -> MaternParams | None:
        if self.sigma_m2 is None:
            return None
        return MaternParams(self.sigma_m2, self.rho)


@dataclass
class PosteriorSamples:
    """Stored draws (original response scale) and run metadata."""

    model: str
    draws: list
    n_iter: int
    burnin: int
    thin: int
    seed: int
    acceptance: dict = field(default_factory=dict)
    loglik_trace: list = field(default_factory=list)
    reference_trace: list = field(default_factory=list)
    scaling: ResponseScaling = field(default_factory=ResponseScaling)
    priors: dict = field(default_factory=dict)
    mesh: Mesh | None = None
    standardizer: Standardizer | None = None
    config: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.draws)

    def acceptance_rates(self) -> dict:
        return {k: (a / b if b else float("nan")) for k, (a, b) in self.acceptance.items()}

    def sigma_e2(self) -> np.ndarray:
        return np.array([d.sigma_e2 for d in self.draws])

    def manifest(self) -> dict:
        return {
            "model": self.model, "n_draws": len(self.draws), "n_iter": self.n_iter,
            "burnin": self.burnin, "thin": self.thin, "seed": self.seed,
            "acceptance": self.acceptance, "acceptance_rates": self.acceptance_rates(),
            "scaling": {"center": self.scaling.center, "scale": self.scaling.scale},
            "priors": self.priors, "config": self.config,
            "standardizer": self.standardizer.to_dict() if self.standardizer else None,
            "loglik_trace": self.loglik_trace, "reference_trace": self.reference_trace,
        }

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "draws.jsonl", "w") as fh:
            for d in self.draws:
                fh.write(json.dumps(d.to_dict()) + "\n")
        (out / "manifest.json").write_text(json.dumps(self.manifest(), indent=1))
        if self.mesh is not None:
            self.mesh.to_json(out / "mesh.json")

    @classmethod
    def read(cls, out_dir) -> "PosteriorSamples":
        out = Path(out_dir)
        man = json.loads((out / "manifest.json").read_text())
        with open(out / "draws.jsonl") as fh:
            draws = [Draw.from_dict(json.loads(line)) for line in fh if line.strip()]
        mesh = None
        if (out / "mesh.json").exists():
            mesh = Mesh.from_dict(json.loads((out / "mesh.json").read_text()))
        std = Standardizer.from_dict(man["standardizer"]) if man.get("standardizer") else None
        return cls(man["model"], draws, man["n_iter"], man["burnin"], man["thin"], man["seed"],
                   man["acceptance"], man["loglik_trace"], man["reference_trace"],
                   ResponseScaling(**man["scaling"]), man["priors"], mesh, std, man["config"])


def _log_accept(rng, log_ratio: float) -> bool:
    return log_ratio >= 0 or math.log(rng.random()) < log_ratio


class Sampler:
    """One chain of the sampler over an internally scaled dataset."""

    def __init__(self, dataset: SpatialDataset, config: ChainConfig,
                 priors: tuple[SigmaEPriorConfig, PcPriorConfig] | None = None):
        self.config = config
        self.dataset, self.scaling = scaled_dataset(dataset)
        self.data = ClusterData.from_dataset(self.dataset)
        self.cuts = CutpointTable(self.dataset.covariates)
        pc_cfg = config.prior
        self.sigma_prior, self.pc_prior = priors if priors is not None else self._calibrate()
        leaf_var = pc_cfg.leaf_var if pc_cfg.leaf_var is not None else default_leaf_var(config.n_trees, pc_cfg.k)
        self.tree_prior = TreePriorConfig(pc_cfg.alpha, pc_cfg.beta, leaf_var, pc_cfg.max_depth)
        self.move_probs = config.move_probs or DEFAULT_MOVE_PROBS
        self.standardizer = None
        self.design = None
        if config.model in ("spde", "spde0"):
            n = self.dataset.n
            if config.model == "spde":
                self.standardizer = Standardizer.fit(self.dataset.covariates)
                Xs = self.standardizer.transform(self.dataset.covariates)
                self.design = np.column_stack([np.ones(n), Xs])
            else:
                self.design = np.ones((n, 1))
            if np.linalg.matrix_rank(self.design) < self.design.shape[1]:
                raise ValueError("rank-deficient design matrix")
        self.mesh = None
        self.field = self._make_field(config.model)
        self.reference = None
        if config.reference_loglik and config.model in ("bartsimp", "spde", "spde0"):
            self.reference = DenseField(self.data, self.dataset.locations)

    # setup

    def _calibrate(self):
        """Priors on the internal scale; user-supplied sigma_hat2 / sigma0 are in response units."""
        p = self.config.prior
        s = self.scaling.scale
        sig = pc = None
        if p.sigma_hat2 is not None:
            sig = SigmaEPriorConfig.calibrated(p.sigma_hat2 / s ** 2, p.nu_df, p.q)
        if p.rho0 is not None and p.sigma0 is not None:
            pc = PcPriorConfig(p.rho0, p.sigma0 / s, p.alpha1, p.alpha2)
        if sig is None or pc is None:
            sig0, pc0 = calibrate_priors(self.dataset, nu=p.nu, nu_df=p.nu_df, q=p.q,
                                         alpha1=p.alpha1, alpha2=p.alpha2)
            sig = sig or sig0
            pc = pc or PcPriorConfig(p.rho0 if p.rho0 is not None else pc0.rho0,
                                     p.sigma0 / s if p.sigma0 is not None else pc0.sigma0,
                                     p.alpha1, p.alpha2)
        return sig, pc

    def _make_field(self, model):
        if model == "bart":
            return NullField(self.data)
        if model == "bartsimp-exact":
            return DenseField(self.data, self.dataset.locations)
        m = self.config.mesh
        rho0 = self.pc_prior.rho0
        edge = m.target_edge_len or m.edge_frac * rho0
        loc = self.dataset.locations
        margin = m.range_margin * rho0
        extent = np.ptp(loc, axis=0).max()
        while True:
            if m.kind == "grid":
                mesh = build_mesh(loc, edge, m.extension_frac, margin)
            else:
                buffer = max(m.extension_frac * extent, edge)
                outer = max(m.outer_frac * extent, margin, buffer)
                mesh = build_graded_mesh(loc, edge, buffer, outer)
            if mesh.n_vertices <= m.max_vertices:
                break
            edge *= 1.25
        self.mesh = mesh
        return SpdeField(self.data, loc, mesh)

    def sigma_hat2(self) -> float:
        """Nugget value at which the prior's calibration quantile sits."""
        s = self.sigma_prior
        return s.nu_df * s.lam / float(stats.chi2.ppf(1 - s.q, s.nu_df))

    def init_state(self) -> ChainState:
        cfg = self.config
        rng = np.random.default_rng(cfg.seed)
        n = self.dataset.n
        is_forest = cfg.model in FOREST_MODELS
        m = cfg.n_trees if is_forest else 0
        params = None
        if cfg.model != "bart":
            params = MaternParams(self.pc_prior.sigma0 ** 2, self.pc_prior.rho0, cfg.prior.nu)
        st = ChainState(
            forest=[DecisionTree() for _ in range(m)],
            nodes=[np.zeros(n, dtype=np.intp) for _ in range(m)],
            fits=np.zeros((m, n)), total=np.zeros(n),
            beta=None if is_forest else np.zeros(self.design.shape[1]),
            sigma_e2=self.sigma_hat2(), params=params, rng=rng,
            steps={"sigma_e": cfg.sigma_e_step, "psi": cfg.psi_step},
        )
        self.restore(st)
        return st

    def condition(self, sigma_e2: float, params) -> FieldState | None:
        """Field state at (sigma_e2, psi); None for prior-only chains."""
        if not self.config.likelihood:
            return None
        return self.field.condition(sigma_e2, params)

    def restore(self, st: ChainState) -> ChainState:
        st.field_state = self.condition(st.sigma_e2, st.params)
        return st

    # targets

    def _prbar(self, st, rbar):
        return st.field_state.apply_P(rbar) if self.config.likelihood else None

    def _tree_terms(self, st, tree, nodes, Prbar) -> LinearTerms:
        leaves = tree.leaves()
        b = len(leaves)
        if not self.config.likelihood:
            return LinearTerms(0.0, np.zeros(b), np.eye(b) / math.sqrt(self.tree_prior.leaf_var))
        colmap = np.empty(len(tree.var), dtype=np.intp)
        colmap[leaves] = np.arange(b)
        col = colmap[nodes]
        return design_terms(st.field_state, Prbar, one_hot(col, b), self.tree_prior.leaf_var, col=col)

    def hyper_loglik(self, st: ChainState, fs: FieldState) -> float:
        """Likelihood term of the nugget / Matérn updates under field state `fs`."""
        if not self.config.likelihood:
            return 0.0
        if self.design is None:
            return collapsed_loglik(fs, self.data.ybar - st.total)
        rbar = self.data.ybar
        terms = design_terms(fs, fs.apply_P(rbar), self.design, self.config.prior.beta_var)
        return collapsed_loglik(fs, rbar) + terms.loglik_delta

    def loglik(self, st: ChainState, fs: FieldState | None = None) -> float:
        """Marginal log-likelihood of the current residual given all mean parameters."""
        fs = fs or st.field_state
        fit = st.total if self.design is None else self.design @ st.beta
        return collapsed_loglik(fs, self.data.ybar - fit)

    # updates

    def update_tree(self, st: ChainState, j: int) -> LinearTerms:
        """Metropolis update of tree `j`; returns the leaf terms of the resulting tree."""
        tree, nodes = st.forest[j], st.nodes[j]
        rbar = self.data.ybar - (st.total - st.fits[j])
        Prbar = self._prbar(st, rbar)
        cur = self._tree_terms(st, tree, nodes, Prbar)
        if "trees" in self.config.fixed:
            return cur
        prop = propose_move(tree, st.rng, self.cuts, config=self.tree_prior,
                            probs=self.move_probs, nodes=nodes)
        if prop.move == "none":
            st.count("tree:none", True)
            return cur
        if has_empty_leaf(prop.tree, prop.nodes) or not math.isfinite(prop.log_ratio):
            st.count("tree:" + prop.move, False)
            return cur
        new = self._tree_terms(st, prop.tree, prop.nodes, Prbar)
        log_a = (new.loglik_delta - cur.loglik_delta
                 + tree_log_prior(prop.tree, self.tree_prior, self.cuts)
                 - tree_log_prior(tree, self.tree_prior, self.cuts) + prop.log_ratio)
        accepted = _log_accept(st.rng, log_a)
        st.count("tree:" + prop.move, accepted)
        if not accepted:
            return cur
        st.forest[j], st.nodes[j] = prop.tree, prop.nodes
        return new

    def update_leaves(self, st: ChainState, j: int, terms: LinearTerms | None = None) -> None:
        tree, nodes = st.forest[j], st.nodes[j]
        if "leaves" in self.config.fixed:
            return
        if terms is None:
            rbar = self.data.ybar - (st.total - st.fits[j])
            terms = self._tree_terms(st, tree, nodes, self._prbar(st, rbar))
        mu = terms.draw(st.rng)
        tree.set_leaf_values(mu)
        fit = np.asarray(tree.value)[nodes]
        st.total += fit - st.fits[j]
        st.fits[j] = fit

    def update_beta(self, st: ChainState) -> None:
        fs = st.field_state
        if not self.config.likelihood:
            st.beta = st.rng.normal(0.0, math.sqrt(self.config.prior.beta_var), self.design.shape[1])
            return
        rbar = self.data.ybar
        terms = design_terms(fs, fs.apply_P(rbar), self.design, self.config.prior.beta_var)
        st.beta = terms.draw(st.rng)

    def _adapt(self, st, name, accepted, target):
        if not (self.config.adapt and st.iteration <= self.config.burnin):
            return
        gamma = min(0.5, 2.0 / (1.0 + st.iteration) ** 0.6)
        st.steps[name] = float(np.clip(st.steps[name] * math.exp(gamma * (accepted - target)),
                                       1e-4, 5.0))

    def update_sigma_e(self, st: ChainState) -> None:
        step = st.steps["sigma_e"]
        if "sigma_e" in self.config.fixed or step <= 0:
            return
        cur_s2 = st.sigma_e2
        new_s2 = cur_s2 * math.exp(step * st.rng.standard_normal())
        fs_new = self.condition(new_s2, st.params)
        log_a = (self.hyper_loglik(st, fs_new) - self.hyper_loglik(st, st.field_state)
                 + sigma_e_log_prior(new_s2, self.sigma_prior)
                 - sigma_e_log_prior(cur_s2, self.sigma_prior)
                 + math.log(new_s2) - math.log(cur_s2))
        accepted = _log_accept(st.rng, log_a)
        st.count("sigma_e", accepted)
        if accepted:
            st.sigma_e2, st.field_state = new_s2, fs_new
        self._adapt(st, "sigma_e", accepted, 0.44)

    def update_psi(self, st: ChainState) -> None:
        step = st.steps["psi"]
        if st.params is None or "psi" in self.config.fixed or step <= 0:
            return
        cur = st.params
        z = st.rng.standard_normal(2)
        new = MaternParams(cur.sigma_m2 * math.exp(step * z[0]), cur.rho * math.exp(step * z[1]), cur.nu)
        fs_new = self.condition(st.sigma_e2, new)

        def log_prior(p):
            # density of (log sigma_m2, log rho): p(rho, sigma_m) * rho * sigma_m / 2
            return pc_log_prior(p, self.pc_prior) + math.log(p.rho) + 0.5 * math.log(p.sigma_m2)

        log_a = (self.hyper_loglik(st, fs_new) - self.hyper_loglik(st, st.field_state)
                 + log_prior(new) - log_prior(cur))
        accepted = _log_accept(st.rng, log_a)
        st.count("psi", accepted)
        if accepted:
            st.params, st.field_state = new, fs_new
        self._adapt(st, "psi", accepted, 0.23)

    def step(self, st: ChainState) -> None:
        """One outer iteration."""
        st.iteration += 1
        per_tree = self.config.update_schedule == "per-tree"
        if self.design is None:
            for j in range(len(st.forest)):
                terms = self.update_tree(st, j)
                self.update_leaves(st, j, terms)
                if per_tree:
                    self.update_sigma_e(st)
                    self.update_psi(st)
        if not per_tree or self.design is not None or not st.forest:
            self.update_sigma_e(st)
            self.update_psi(st)
        if self.design is not None:
            self.update_beta(st)

    def check_state(self, st: ChainState, atol: float = 1e-10) -> None:
        """Raise if cached fits disagree with the forest."""
        for j, tree in enumerate(st.forest):
            fit = tree.predict(self.cuts.X)
            if not np.allclose(fit, st.fits[j], rtol=0, atol=atol):
                raise AssertionError(f"tree {j} fit cache is stale")
        if st.forest and not np.allclose(st.fits.sum(axis=0), st.total, rtol=0, atol=atol):
            raise AssertionError("total fit cache is stale")

    # output

    def record(self, st: ChainState) -> Draw:
        s = self.scaling.scale
        sm2 = st.params.sigma_m2 * s * s if st.params is not None else None
        rho = st.params.rho if st.params is not None else None
        forest = [t.scaled(s) for t in st.forest] if self.design is None else None
        beta = st.beta * s if st.beta is not None else None
        return Draw(st.iteration, st.sigma_e2 * s * s, sm2, rho, self.scaling.center,
                    forest, beta, None)

    def samples(self, draws, st, trace, ref_trace) -> PosteriorSamples:
        cfg = self.config
        s = self.scaling.scale
        priors = {
            "sigma_e": {"lam": self.sigma_prior.lam * s * s, "nu_df": self.sigma_prior.nu_df,
                        "q": self.sigma_prior.q},
            "pc": {"rho0": self.pc_prior.rho0, "sigma0": self.pc_prior.sigma0 * s,
                   "alpha1": self.pc_prior.alpha1, "alpha2": self.pc_prior.alpha2},
            "tree": {"alpha": self.tree_prior.alpha, "beta": self.tree_prior.beta,
                     "leaf_var": self.tree_prior.leaf_var * s * s,
                     "max_depth": self.tree_prior.max_depth},
        }
        return PosteriorSamples(cfg.model, draws, cfg.n_iter, cfg.burnin, cfg.thin, cfg.seed,
                                copy.deepcopy(st.accept), list(trace), list(ref_trace),
                                self.scaling, priors, self.mesh, self.standardizer, cfg.to_dict())

    def run(self, state: ChainState | None = None, draws=None, trace=None, ref_trace=None,
            checkpoint=None, check_every: int = 0) -> PosteriorSamples:
        cfg = self.config
        st = state if state is not None else self.init_state()
        if st.field_state is None:
            self.restore(st)
        draws = [] if draws is None else draws
        trace = [] if trace is None else trace
        ref_trace = [] if ref_trace is None else ref_trace
        while st.iteration < cfg.n_iter:
            self.step(st)
            trace.append(self.loglik(st) if self.config.likelihood else float("nan"))
            if self.reference is not None:
                ref_fs = self.reference.condition(st.sigma_e2, st.params)
                ref_trace.append(self.loglik(st, ref_fs))
            if check_every and st.iteration % check_every == 0:
                self.check_state(st)
            if st.iteration > cfg.burnin and (st.iteration - cfg.burnin) % cfg.thin == 0:
                d = self.record(st)
                d.loglik = trace[-1]
                draws.append(d)
            if checkpoint and cfg.checkpoint_every and st.iteration % cfg.checkpoint_every == 0:
                save_checkpoint(checkpoint, st, draws, trace, ref_trace)
        return self.samples(draws, st, trace, ref_trace)


def save_checkpoint(path, state, draws, trace, ref_trace) -> None:
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        pickle.dump({"state": state, "draws": draws, "trace": trace, "ref_trace": ref_trace}, fh)
    os.replace(tmp, path)


def run_chain(dataset: SpatialDataset, config: ChainConfig | None = None, *, priors=None,
              checkpoint=None, resume: bool = False, check_every: int = 0) -> PosteriorSamples:
    """Run one chain; with `resume` continue from the checkpoint file if present."""
    config = config or ChainConfig()
    sampler = Sampler(dataset, config, priors)
    if resume and checkpoint and Path(checkpoint).exists():
        with open(checkpoint, "rb") as fh:
            saved = pickle.load(fh)
        return sampler.run(saved["state"], saved["draws"], saved["trace"], saved["ref_trace"],
                           checkpoint=checkpoint, check_every=check_every)
    return sampler.run(checkpoint=checkpoint, check_every=check_every)


def fit_comparator(dataset: SpatialDataset, kind: str, config: ChainConfig | None = None,
                   **kwargs) -> PosteriorSamples:
    """Fit one of the comparison models: ``bart``, ``spde`` or ``spde0``."""
    aliases = {"BART_ONLY": "bart", "SPDE_LINEAR": "spde", "SPDE0": "spde0"}
    kind = aliases.get(kind, kind)
    if kind not in ("bart", "spde", "spde0"):
        raise ConfigError(f"unknown comparator {kind!r}")
    config = copy.deepcopy(config or ChainConfig())
    config.model = kind
    return run_chain(dataset, config, **kwargs)


def max_workers() -> int:
    env = os.environ.get("GEOBART_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _chain_task(args):
    dataset, config, priors = args
    return run_chain(dataset, config, priors=priors)


def run_chains(dataset: SpatialDataset, config: ChainConfig, n_chains: int = 1) -> PosteriorSamples:
    """Independent chains (seeds derived from ``config.seed``) merged into one sample."""
    first = Sampler(dataset, config)
    priors = (first.sigma_prior, first.pc_prior)
    seeds = np.random.SeedSequence(config.seed).spawn(n_chains) if n_chains > 1 else None
    configs = []
    for c in range(n_chains):
        cfg = copy.deepcopy(config)
        if seeds is not None:
            cfg.seed = int(seeds[c].generate_state(1)[0])
        configs.append(cfg)
    tasks = [(dataset, cfg, priors) for cfg in configs]
    workers = min(max_workers(), n_chains)
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_chain_task, tasks))
    else:
        results = [_chain_task(t) for t in tasks]
    merged = results[0]
    for other in results[1:]:
        merged.draws.extend(other.draws)
        for k, (a, b) in other.acceptance.items():
            acc = merged.acceptance.setdefault(k, [0, 0])
            acc[0] += a
            acc[1] += b
    merged.config["n_chains"] = n_chains
    return merged
