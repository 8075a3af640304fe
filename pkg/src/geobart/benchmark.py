"""Simulation study: every model on replicated grid scenarios, scored on the full grid."""
from __future__ import annotations

import copy
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .predict import predict_surface, surface_metrics
from .sampler import MODELS, ChainConfig, Sampler, run_chain
from .simgen import ScenarioConfig, simulate_scenario

log = logging.getLogger(__name__)

METRICS = ("rmse", "ail", "acr", "ais")


@dataclass
class BenchmarkConfig:
    scenarios: tuple = (1, 2, 3, 4, 5)
    replicates: int = 5
    models: tuple = MODELS
    n_clusters: int = 250
    side: int = 50
    n_iter: int = 4000
    burnin: int = 2000
    thin: int = 1
    alpha: float = 0.05
    seed: int = 0
    max_pred_draws: int | None = None
    chain: dict = field(default_factory=dict)  # extra ChainConfig fields

    def __post_init__(self):
        self.scenarios = tuple(int(s) for s in self.scenarios)
        self.models = tuple(self.models)
        bad = set(self.models) - set(MODELS)
        if bad:
            raise ValueError(f"unknown models {sorted(bad)}")

    def scenario_config(self, scenario: int, replicate: int) -> ScenarioConfig:
        seed = int(np.random.SeedSequence([self.seed, scenario, replicate]).generate_state(1)[0])
        return ScenarioConfig.scenario(scenario, side=self.side, n_clusters=self.n_clusters, seed=seed)

    def chain_config(self, model: str, seed: int) -> ChainConfig:
        base = dict(self.chain)
        base.update(model=model, n_iter=self.n_iter, burnin=self.burnin, thin=self.thin, seed=seed)
        return ChainConfig.from_dict(base)


def run_task(cfg: BenchmarkConfig, scenario: int, replicate: int, models=None) -> list[dict]:
    """Simulate one replicate and score each model; priors are calibrated once per dataset."""
    sc_cfg = cfg.scenario_config(scenario, replicate)
    sc = simulate_scenario(sc_cfg)
    models = models or cfg.models
    priors = None
    rows = []
    for model in models:
        chain_cfg = cfg.chain_config(model, sc_cfg.seed)
        if priors is None:
            calib = Sampler(sc.dataset, replace(chain_cfg, model="bart"))
            priors = (calib.sigma_prior, calib.pc_prior)
        t0 = time.perf_counter()
        samples = run_chain(sc.dataset, chain_cfg, priors=priors)
        fit_time = time.perf_counter() - t0
        pred = predict_surface(samples, sc.dataset, sc.surface, seed=sc_cfg.seed,
                               max_draws=cfg.max_pred_draws)
        m = surface_metrics(pred, sc.truth, cfg.alpha)
        post = {"sigma_e2": float(np.mean(samples.sigma_e2()))}
        if samples.draws and samples.draws[0].rho is not None:
            post["rho"] = float(np.mean([d.rho for d in samples.draws]))
            post["sigma_m2"] = float(np.mean([d.sigma_m2 for d in samples.draws]))
        rows.append({"scenario": scenario, "replicate": replicate, "model": model,
                     "seconds": fit_time, **m, **post,
                     "acceptance": samples.acceptance_rates()})
    return rows


def _task(args):
    cfg, scenario, replicate, models, cache = args
    if cache is not None and cache.exists():
        return json.loads(cache.read_text())
    rows = run_task(cfg, scenario, replicate, models)
    if cache is not None:
        cache.parent.mkdir(parents=True, exist_ok=True)
        tmp = cache.with_suffix(".tmp")
        tmp.write_text(json.dumps(rows))
        tmp.replace(cache)
    return rows


def run_benchmark(cfg: BenchmarkConfig, cache_dir=None, workers: int = 1) -> list[dict]:
    """All (scenario, replicate, model) results; cached per task under `cache_dir`."""
    tasks = []
    for s in cfg.scenarios:
        for r in range(cfg.replicates):
            for model in cfg.models:
                cache = None
                if cache_dir is not None:
                    cache = Path(cache_dir) / f"s{s}_r{r}_{model}.json"
                tasks.append((cfg, s, r, (model,), cache))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_task, tasks))
    else:
        results = []
        for t in tasks:
            results.append(_task(t))
            log.info("done scenario %s replicate %s model %s", t[1], t[2], t[3][0])
    return [row for rows in results for row in rows]


def summarize_results(rows: list[dict]) -> list[dict]:
    """Mean and SD over replicates of each metric, per (scenario, model)."""
    groups = {}
    for row in rows:
        groups.setdefault((row["scenario"], row["model"]), []).append(row)
    table = []
    for (s, model), rs in sorted(groups.items(), key=lambda kv: (kv[0][0], MODELS.index(kv[0][1]))):
        out = {"scenario": s, "model": model, "n": len(rs)}
        for m in METRICS + ("sigma_e2", "seconds"):
            vals = np.array([r[m] for r in rs], dtype=float)
            out[f"{m}_mean"] = float(vals.mean())
            out[f"{m}_sd"] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        table.append(out)
    return table


def format_table(table: list[dict]) -> str:
    head = f"{'scen':>4} {'model':<15}" + "".join(f"{m:>18}" for m in METRICS)
    lines = [head]
    for row in table:
        cells = "".join(f"{row[m + '_mean']:>10.4f} ({row[m + '_sd']:.3f})" for m in METRICS)
        lines.append(f"{row['scenario']:>4} {row['model']:<15}{cells}")
    return "\n".join(lines)


def benchmark_config_from_dict(d: dict) -> BenchmarkConfig:
    d = copy.deepcopy(d)
    known = set(BenchmarkConfig.__dataclass_fields__)
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown benchmark keys {sorted(unknown)}")
    return BenchmarkConfig(**d)
