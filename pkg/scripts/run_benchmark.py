"""Desk-scale simulation study: five scenarios x five models, scored on the 50x50 grid.

Results are cached per (scenario, replicate, model) so the run can be
interrupted and resumed; the acceptance suite reads the same cache.

    python scripts/run_benchmark.py --out results/benchmark
"""
import argparse
import json
import logging
from dataclasses import asdict
from pathlib import Path

from geobart.benchmark import BenchmarkConfig, format_table, run_benchmark, summarize_results


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="results/benchmark")
    p.add_argument("--replicates", type=int, default=5)
    p.add_argument("--n-iter", type=int, default=4000)
    p.add_argument("--burnin", type=int, default=2000)
    p.add_argument("--max-pred-draws", type=int, default=1000)
    p.add_argument("--scenarios", default="1,2,3,4,5")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = BenchmarkConfig(scenarios=tuple(int(s) for s in args.scenarios.split(",")),
                          replicates=args.replicates, n_iter=args.n_iter, burnin=args.burnin,
                          max_pred_draws=args.max_pred_draws, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(asdict(cfg), indent=1))
    rows = run_benchmark(cfg, out / "cache", workers=args.workers)
    table = summarize_results(rows)
    (out / "summary.json").write_text(json.dumps(table, indent=1))
    (out / "summary.txt").write_text(format_table(table) + "\n")
    print(format_table(table))


if __name__ == "__main__":
    main()
