"""Compare the three refinement strategies on a hand-built flow.

Two vehicles work six trips at a single station. Their network paths cross,
so the greedy split of the flow into duties is not the one the vehicles
drove, and it contains a duty that cannot be timed in reality.

Run: python demos/refinement_strategies.py
"""

from collections import defaultdict

import numpy as np

from tripshift.instance import DEPOT, STATION, TRIP, WAIT, Instance, Location, Trip
from tripshift.mip import build_model
from tripshift.mip.model import FlowSolution
from tripshift.refine import STRATEGIES, check_duty, extract_duties, refine
from tripshift.timenet import LONG, DepotEnd, DepotStart, build_partial_network, initial_time_points

DELTA = 1


def route(net, depot, paths):
    """Integer flow that sends one vehicle along each trip sequence."""
    model = build_model(net)
    arcs = net.layer_arcs(depot)
    out = defaultdict(list)
    for i, a in enumerate(arcs):
        out[a.tail].append(i)
    x = np.zeros(model.problem.num_cols, dtype=np.int64)

    def step(node, pick):
        i = next(i for i in out[node] if pick(arcs[i]))
        x[model.column(depot, i)] += 1
        return arcs[i].head

    for trips in paths:
        node = step(DepotStart(depot), lambda a: True)
        for m in trips:
            while not any(arcs[i].kind == TRIP and arcs[i].trip == m for i in out[node]):
                node = step(node, lambda a: a.kind == WAIT)
            node = step(node, lambda a, m=m: a.kind == TRIP and a.trip == m)
        while not isinstance(node, DepotEnd):
            node = step(node, lambda a: isinstance(a.head, DepotEnd) or a.kind == WAIT)
    obj = int(model.problem.c @ x)
    return FlowSolution(model, x, obj, float(obj), "optimal")


def main():
    times = [(11, 12), (12, 14), (12, 14), (13, 15), (13, 15), (15, 17)]
    inst = Instance([Location(0, 0, 0, DEPOT), Location(1, 5, 0, STATION)],
                    [Trip(i, 1, 1, s, e) for i, (s, e) in enumerate(times)],
                    [[0, 5], [5, 0]])
    tps = initial_time_points(inst, DELTA)
    net = build_partial_network(inst, DELTA, tps, LONG)
    sol = route(net, 0, [(0, 2, 5), (1, 3, 4)])
    print("time points:", tps.to_dict())
    print("flow cost:", sol.objective)
    for d in extract_duties(sol, net):
        rep = check_duty(d, inst, DELTA)
        print(f"greedy duty {d.trips}: {'feasible' if rep.feasible else 'infeasible'}, pi={rep.pi}")
    print()
    for s in STRATEGIES:
        res = refine(s, sol, net, tps, inst, DELTA)
        print(f"{s:>17}: implementable={res.implementable} "
              f"duties={[d.trips for d in res.duties]} new points={res.points}")


if __name__ == "__main__":
    main()
