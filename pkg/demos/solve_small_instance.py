"""Solve one generated instance with the full discretization and with DDD.

Run: python demos/solve_small_instance.py [--trips 60] [--seed 0] [--delta-max 3]

Prints the DDD iteration log for each scheme, then checks that every scheme
reaches the full-discretization optimum.
"""

import argparse
import time

from tripshift import DddConfig, GenParams, generate_instance, solve_ddd, solve_fd
from tripshift.instance import instance_summary
from tripshift.timenet import SCHEMES


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--trips", type=int, default=60)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--delta-max", type=int, default=3)
    args = ap.parse_args()

    inst = generate_instance(GenParams(args.trips, seed=args.seed))
    print("instance:", instance_summary(inst))

    t0 = time.perf_counter()
    fd = solve_fd(inst, args.delta_max)
    print(f"full discretization: cost {fd.cost}, {fd.vehicles} vehicles, "
          f"{fd.flow.model.network.node_count} nodes, {time.perf_counter() - t0:.2f}s")

    for scheme in SCHEMES:
        t0 = time.perf_counter()
        sol, recs = solve_ddd(inst, DddConfig(delta_max=args.delta_max, scheme=scheme))
        print(f"\nDDD / {scheme}: cost {sol.cost} in {len(recs)} iterations "
              f"({time.perf_counter() - t0:.2f}s)")
        print(f"  {'iter':>4} {'lb':>10} {'ub':>8} {'nodes':>6} {'added':>6}")
        for r in recs:
            ub = "-" if r.ub is None else r.ub
            print(f"  {r.index:>4} {r.lb:>10.1f} {ub:>8} {r.nodes:>6} {r.points_added:>6}")
        assert sol.cost == fd.cost


if __name__ == "__main__":
    main()
