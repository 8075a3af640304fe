"""Command-line interface: ``geobart {simulate,fit,predict,aggregate,pd,benchmark}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import benchmark as bench
from .data_model import load_dataset, save_dataset
from .errors import ConfigError, GeoBartError
from .predict import (GriddedSurface, RegionSpec, aggregate_areal, compute_metrics,
                      partial_dependence, predict_surface, summarize)
from .sampler import MODELS, ChainConfig, MeshConfig, PosteriorSamples, PriorConfig, run_chain, run_chains
from .simgen import ScenarioConfig, simulate_scenario

log = logging.getLogger("geobart")


@dataclass
class RunConfig:
    """JSON run configuration; every key is optional.

    ``chain`` holds `ChainConfig` fields other than ``prior``/``mesh``
    (plus ``n_chains``); ``prior`` and ``mesh`` hold `PriorConfig` and
    `MeshConfig` fields; ``alpha`` is the interval level used by
    prediction summaries and metrics.
    """

    model: str = "bartsimp"
    chain: dict = field(default_factory=dict)
    prior: dict = field(default_factory=dict)
    mesh: dict = field(default_factory=dict)
    alpha: float = 0.05
    max_pred_draws: int | None = None
    n_chains: int = 1

    @classmethod
    def load(cls, path) -> "RunConfig":
        if path is None:
            return cls()
        d = json.loads(Path(path).read_text())
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def chain_config(self, **overrides) -> ChainConfig:
        d = dict(self.chain)
        for k in ("prior", "mesh", "model"):
            if k in d:
                raise ConfigError(f"'{k}' belongs at the top level of the run config")
        d.update({k: v for k, v in overrides.items() if v is not None})
        d.setdefault("model", self.model)
        d["prior"] = _checked(PriorConfig, self.prior)
        d["mesh"] = _checked(MeshConfig, self.mesh)
        return ChainConfig.from_dict(d)


def _checked(cls, d):
    unknown = set(d) - set(cls.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**d)


def _omega(text: str) -> float:
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError("omega must lie in [0, 1]")
    return v


def _int_list(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, default=_json_default))


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(type(o))


# subcommands

def cmd_simulate(args) -> None:
    kwargs = dict(side=args.side, n_clusters=args.n_clusters, seed=args.seed)
    if args.scenario is not None:
        cfg = ScenarioConfig.scenario(args.scenario, **kwargs)
    else:
        cfg = ScenarioConfig(omega=args.omega, **kwargs)
    sc = simulate_scenario(cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(sc.dataset, out / "dataset.csv")
    sc.surface.write_raster(out / "grid.csv")
    pd.DataFrame({"cell_id": sc.surface.cell_ids, "x": sc.surface.centers[:, 0],
                  "y": sc.surface.centers[:, 1], "truth": sc.truth}
                 ).to_csv(out / "truth.csv", index=False, float_format="%.17g")
    _write_json(out / "config.json", cfg.to_dict())


def cmd_fit(args) -> None:
    run = RunConfig.load(args.config)
    if args.model is not None:
        run.model = args.model
    cfg = run.chain_config(model=run.model, seed=args.seed, n_iter=args.n_iter, burnin=args.burnin,
                           thin=args.thin, update_schedule=args.update_schedule,
                           n_trees=args.n_trees, checkpoint_every=args.checkpoint_every)
    ds = load_dataset(args.data, args.manifest)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_chains = args.n_chains or run.n_chains
    if n_chains > 1:
        samples = run_chains(ds, cfg, n_chains)
    else:
        ckpt = out / "checkpoint.pkl" if cfg.checkpoint_every else None
        samples = run_chain(ds, cfg, checkpoint=ckpt, resume=args.resume)
    samples.write(out)


def cmd_predict(args) -> None:
    run = RunConfig.load(args.config)
    alpha = args.alpha if args.alpha is not None else run.alpha
    samples = PosteriorSamples.read(args.samples)
    ds = load_dataset(args.data, args.manifest)
    grid = GriddedSurface.read_raster(args.grid, covariates=list(ds.names))
    max_draws = args.max_draws if args.max_draws is not None else run.max_pred_draws
    pred = predict_surface(samples, ds, grid, seed=args.seed, max_draws=max_draws)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pred.to_csv(out / "surface.csv", alpha)
    np.savez_compressed(out / "surface_draws.npz", draws=pred.draws,
                        cell_id=np.asarray(pred.cell_ids))
    if args.truth:
        truth = pd.read_csv(args.truth).set_index("cell_id").loc[list(pred.cell_ids), "truth"]
        s = pred.summary(alpha)
        metrics = compute_metrics(s["mean"], s["lower"], s["upper"], truth.to_numpy(float), alpha)
        _write_json(out / "metrics.json", {"alpha": alpha, **metrics})


def cmd_aggregate(args) -> None:
    data = np.load(args.draws, allow_pickle=False)
    draws, cell_ids = data["draws"], list(data["cell_id"])
    grid = pd.read_csv(args.grid).set_index("cell_id")
    if "density" not in grid.columns:
        raise ConfigError("grid file needs a 'density' column")
    density = grid.loc[cell_ids, "density"].to_numpy(float)
    reg = pd.read_csv(args.regions).set_index("cell_id")["region"]
    labels = [reg.get(c) if c in reg.index else None for c in cell_ids]
    regions = RegionSpec.from_labels(labels)
    vals = aggregate_areal(draws, density, regions)
    s = summarize(vals, args.alpha)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pd.DataFrame({"region": regions.labels, "mean": s["mean"], "q025": s["lower"],
                  "q975": s["upper"]}).to_csv(out / "regions.csv", index=False, float_format="%.10g")


def cmd_pd(args) -> None:
    samples = PosteriorSamples.read(args.samples)
    ds = load_dataset(args.data, args.manifest)
    var = int(args.var) if args.var.isdigit() else list(ds.names).index(args.var)
    if args.values:
        grid = np.array([float(v) for v in args.values.split(",")])
    else:
        x = ds.covariates[:, var]
        grid = np.linspace(x.min(), x.max(), args.n_values)
    vals = partial_dependence(samples, ds, var, grid)
    s = summarize(vals, args.alpha)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pd.DataFrame({"value": grid, "mean": s["mean"], "q025": s["lower"], "q975": s["upper"]}
                 ).to_csv(out / f"pd_{ds.names[var]}.csv", index=False, float_format="%.10g")


def cmd_benchmark(args) -> None:
    d = json.loads(Path(args.config).read_text()) if args.config else {}
    cfg = bench.benchmark_config_from_dict(d)
    for key in ("replicates", "n_iter", "burnin", "n_clusters", "max_pred_draws"):
        v = getattr(args, key)
        if v is not None:
            setattr(cfg, key, v)
    if args.scenarios:
        cfg.scenarios = tuple(_int_list(args.scenarios))
    if args.models:
        cfg.models = tuple(args.models.split(","))
    cfg.seed = args.seed
    cfg.__post_init__()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cache = Path(args.cache_dir) if args.cache_dir else out / "cache"
    rows = bench.run_benchmark(cfg, cache, workers=min(bench_workers(), args.workers or 1))
    with open(out / "results.jsonl", "w") as fh:
        for r in rows:
            fh.write(json.dumps(r, default=_json_default) + "\n")
    table = bench.summarize_results(rows)
    pd.DataFrame(table).to_csv(out / "summary.csv", index=False)
    (out / "summary.txt").write_text(bench.format_table(table) + "\n")
    _write_json(out / "benchmark_config.json", asdict(cfg))
    print(bench.format_table(table))


def bench_workers() -> int:
    from .sampler import max_workers

    return max_workers()


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="geobart", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="run configuration JSON")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out-dir", required=True)

    s = sub.add_parser("simulate", help="simulate a grid scenario")
    common(s, config=False)
    g = s.add_mutually_exclusive_group()
    g.add_argument("--omega", type=_omega, default=0.5)
    g.add_argument("--scenario", type=int, choices=(1, 2, 3, 4, 5))
    s.add_argument("--side", type=int, default=50)
    s.add_argument("--n-clusters", type=int, default=250)
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="run the sampler")
    common(f)
    f.add_argument("--data", required=True)
    f.add_argument("--manifest")
    f.add_argument("--model", choices=MODELS)
    f.add_argument("--n-iter", type=int)
    f.add_argument("--burnin", type=int)
    f.add_argument("--thin", type=int)
    f.add_argument("--n-trees", type=int)
    f.add_argument("--n-chains", type=int)
    f.add_argument("--update-schedule", choices=("sweep", "per-tree"))
    f.add_argument("--checkpoint-every", type=int)
    f.add_argument("--resume", action="store_true")
    f.set_defaults(func=cmd_fit)

    pr = sub.add_parser("predict", help="posterior predictive surface on a grid")
    common(pr)
    pr.add_argument("--samples", required=True)
    pr.add_argument("--data", required=True)
    pr.add_argument("--manifest")
    pr.add_argument("--grid", required=True, help="CSV cell_id,x,y,<covariates>[,density]")
    pr.add_argument("--truth", help="CSV cell_id,truth; writes metrics.json")
    pr.add_argument("--alpha", type=float)
    pr.add_argument("--max-draws", type=int)
    pr.set_defaults(func=cmd_predict)

    a = sub.add_parser("aggregate", help="density-weighted regional summaries")
    common(a, config=False)
    a.add_argument("--draws", required=True, help="surface_draws.npz from predict")
    a.add_argument("--grid", required=True)
    a.add_argument("--regions", required=True, help="CSV cell_id,region")
    a.add_argument("--alpha", type=float, default=0.05)
    a.set_defaults(func=cmd_aggregate)

    d = sub.add_parser("pd", help="partial dependence of the forest")
    common(d, config=False)
    d.add_argument("--samples", required=True)
    d.add_argument("--data", required=True)
    d.add_argument("--manifest")
    d.add_argument("--var", required=True, help="covariate name or index")
    d.add_argument("--values", help="comma-separated grid")
    d.add_argument("--n-values", type=int, default=20)
    d.add_argument("--alpha", type=float, default=0.05)
    d.set_defaults(func=cmd_pd)

    b = sub.add_parser("benchmark", help="simulation study over scenarios and models")
    common(b)
    b.add_argument("--scenarios", help="e.g. 1,3,5")
    b.add_argument("--models", help="comma-separated subset of " + ",".join(MODELS))
    b.add_argument("--replicates", type=int)
    b.add_argument("--n-iter", type=int)
    b.add_argument("--burnin", type=int)
    b.add_argument("--n-clusters", type=int)
    b.add_argument("--max-pred-draws", type=int)
    b.add_argument("--cache-dir")
    b.add_argument("--workers", type=int)
    b.set_defaults(func=cmd_benchmark)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (GeoBartError, ValueError, KeyError, OSError) as exc:
        print(f"geobart {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
