"""SPDE minus dense collapsed log-likelihood over a (sigma_m2, rho) grid at fixed state.

Shows how the discretisation gap depends on the mesh edge and outer margin:

    python scripts/loglik_mesh_scan.py --edge 0.02 --outer 50
"""
import argparse

import numpy as np

from geobart.data_model import scaled_dataset
from geobart.gp import MaternParams
from geobart.likelihood import ClusterData, DenseField, SpdeField, collapsed_loglik
from geobart.simgen import ScenarioConfig, simulate_scenario
from geobart.spde import build_graded_mesh


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--edge", type=float, default=0.02)
    p.add_argument("--outer", type=float, default=50.0)
    p.add_argument("--buffer", type=float, default=0.2)
    p.add_argument("--scenario", type=int, default=3)
    p.add_argument("--n-clusters", type=int, default=50)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--sigma-e2", type=float, default=0.02)
    p.add_argument("--sigma-m2", default="0.003,0.03,0.3")
    p.add_argument("--rho", default="0.05,0.1,0.2,0.4,1,2,5,10,20,50")
    args = p.parse_args()

    sc = simulate_scenario(ScenarioConfig.scenario(args.scenario, n_clusters=args.n_clusters,
                                                   seed=args.seed))
    ds, _ = scaled_dataset(sc.dataset)
    data = ClusterData.from_dataset(ds)
    rbar = data.ybar - data.ybar.mean()
    dense = DenseField(data, ds.locations)
    mesh = build_graded_mesh(ds.locations, args.edge, args.buffer, args.outer)
    spde = SpdeField(data, ds.locations, mesh)
    rhos = [float(r) for r in args.rho.split(",")]
    print(f"{mesh.n_vertices} vertices; rows sigma_m2, columns rho = {rhos}")
    for sm in (float(s) for s in args.sigma_m2.split(",")):
        row = []
        for rho in rhos:
            prm = MaternParams(sm, rho)
            row.append(collapsed_loglik(spde.condition(args.sigma_e2, prm), rbar)
                       - collapsed_loglik(dense.condition(args.sigma_e2, prm), rbar))
        print(f"{sm:>8g} " + " ".join(f"{v:7.2f}" for v in row), flush=True)


if __name__ == "__main__":
    main()
