"""Shared builders and independent oracles for the test suite."""

from __future__ import annotations

import itertools
from collections import defaultdict

import numpy as np
from hypothesis import strategies as st

from tripshift.instance import (
    DEADHEAD, DEPOT, STATION, TRIP, WAIT, Instance, Location, Trip,
)
from tripshift.mip.model import FlowSolution, build_model
from tripshift.timenet import DepotEnd, DepotStart, StationNode


def tiny_instance(tt, kinds, trips, horizon=(0, 1800), pull=500) -> Instance:
    """``trips`` holds ``(from, to, dep, arr)`` tuples; ids follow list order."""
    locs = [Location(i, float(i), 0.0, k) for i, k in enumerate(kinds)]
    ts = [Trip(i, a, b, s, e) for i, (a, b, s, e) in enumerate(trips)]
    return Instance(locs, ts, tt, pull, horizon)


def one_station(trips, depot_dist=5, horizon=(0, 1800)) -> Instance:
    """One depot and one station; every trip starts and ends at the station."""
    tt = [[0, depot_dist], [depot_dist, 0]]
    return tiny_instance(tt, [DEPOT, STATION], [(1, 1, s, e) for s, e in trips], horizon)


def brute_force_duty(instance, trips, delta):
    """All feasible shift vectors of a trip sequence (direct deadheads), vectorized."""
    ms = [instance.trip(t) for t in trips]
    k = len(ms)
    grid = np.array(list(itertools.product(range(-delta, delta + 1), repeat=k)), dtype=np.int64)
    starts = np.array([m.start_time for m in ms]) + grid
    ok = np.ones(len(grid), dtype=bool)
    for i in range(k - 1):
        gap = ms[i].duration + instance.travel(ms[i].end_location, ms[i + 1].start_location)
        ok &= starts[:, i] + gap <= starts[:, i + 1]
    return starts[ok]


def independent_cost(duties, instance, delta):
    """Cost of a schedule recomputed from scratch; raises AssertionError on infeasibility."""
    served = []
    cost = 0
    for d in duties:
        assert not d.closed and d.depot in instance.depots
        ms = [instance.trip(t) for t in d.trips]
        assert len(d.pi) == len(ms)
        for m, p in zip(ms, d.pi):
            assert m.start_time - delta <= p <= m.start_time + delta
        for (a, pa), (b, pb) in zip(zip(ms, d.pi), zip(ms[1:], d.pi[1:])):
            assert pa + a.duration + instance.tt[a.end_location, b.start_location] <= pb
            cost += int(instance.tt[a.end_location, b.start_location])
        cost += 2 * instance.pull_fixed_cost
        cost += int(instance.tt[d.depot, ms[0].start_location])
        cost += int(instance.tt[ms[-1].end_location, d.depot])
        served += list(d.trips)
    assert sorted(served) == sorted(t.id for t in instance.trips)
    return cost


def flow_from_paths(network, depot, paths) -> FlowSolution:
    """Integer flow routing each trip sequence at one station, earliest arcs first."""
    model = build_model(network)
    arcs = network.layer_arcs(depot)
    by_tail = defaultdict(list)
    for i, a in enumerate(arcs):
        by_tail[a.tail].append(i)
    x = np.zeros(model.problem.num_cols, dtype=np.int64)

    def use(i):
        x[model.column(depot, i)] += 1

    for trips in paths:
        loc = network.station_arcs[network.trip_arcs[trips[0]][0]].tail.location
        node = next(arcs[i].head for i in by_tail[DepotStart(depot)]
                    if arcs[i].head.location == loc)
        use(next(i for i in by_tail[DepotStart(depot)] if arcs[i].head == node))
        for m in trips:
            while True:
                trip = [i for i in by_tail[node] if arcs[i].kind == TRIP and arcs[i].trip == m]
                if trip:
                    use(trip[0])
                    node = arcs[trip[0]].head
                    break
                wait = [i for i in by_tail[node] if arcs[i].kind == WAIT]
                if not wait:
                    raise ValueError(f"trip {m} not reachable")
                use(wait[0])
                node = arcs[wait[0]].head
        while True:
            pin = [i for i in by_tail[node] if isinstance(arcs[i].head, DepotEnd)]
            if pin:
                use(pin[0])
                break
            wait = [i for i in by_tail[node] if arcs[i].kind == WAIT]
            use(wait[0])
            node = arcs[wait[0]].head
    obj = int(model.problem.c @ x)
    return FlowSolution(model, x, obj, float(obj), "optimal")


def _adjacency(network):
    wait, dh, anyarc = defaultdict(list), defaultdict(list), defaultdict(list)
    for a in network.station_arcs:
        if a.kind == WAIT:
            wait[a.tail].append(a.head)
        elif a.kind == DEADHEAD:
            dh[a.tail].append(a.head)
        if a.kind != TRIP:
            anyarc[a.tail].append(a.head)
    return wait, dh, anyarc


def _closure(start, adj):
    seen = set(start)
    stack = list(start)
    while stack:
        v = stack.pop()
        for w in adj[v]:
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return seen


def route_exists(network, trips, vias=None, chains=False) -> bool:
    """Exhaustive search for a path traversing ``trips`` in order.

    Between consecutive trips the path may wait and use deadheads: a single
    direct one by default, the given via locations when ``vias`` is set, or
    any chain of deadheads when ``chains`` is true. No other trip arc is used.
    """
    wait, dh, anyarc = _adjacency(network)
    reach = None
    for k, m in enumerate(trips):
        arcs = [network.station_arcs[i] for i in network.trip_arcs[m]]
        heads = {a.head for a in arcs if reach is None or a.tail in reach}
        if not heads:
            return False
        if k + 1 == len(trips):
            return True
        if chains:
            reach = _closure(heads, anyarc)
            continue
        here = arcs[0].head.location
        target = network.station_arcs[network.trip_arcs[trips[k + 1]][0]].tail.location
        reach = _closure(heads, wait)
        for loc in list(vias[k] if vias is not None else ()) + [target]:
            if loc == here:
                continue
            reach = _closure({w for v in reach for w in dh[v] if w.location == loc}, wait)
            here = loc
            if not reach:
                return False
    return True


def station(loc, t):
    return StationNode(loc, t)


def _partitions(items):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in _partitions(rest):
        yield [[first]] + part
        for k in range(len(part)):
            yield part[:k] + [[first] + part[k]] + part[k + 1:]


def brute_force_optimum(instance, delta):
    """Minimum schedule cost by enumerating partitions, orders and depots."""
    best = None
    ids = [t.id for t in instance.trips]
    feasible = {}
    for part in _partitions(ids):
        cost = 0
        for block in part:
            key = tuple(sorted(block))
            if key not in feasible:
                opts = []
                for order in itertools.permutations(key):
                    if len(brute_force_duty(instance, order, delta)):
                        ms = [instance.trip(t) for t in order]
                        inner = sum(int(instance.tt[a.end_location, b.start_location])
                                    for a, b in zip(ms, ms[1:]))
                        for d in instance.depots:
                            opts.append(inner + 2 * instance.pull_fixed_cost
                                        + int(instance.tt[d, ms[0].start_location])
                                        + int(instance.tt[ms[-1].end_location, d]))
                feasible[key] = min(opts) if opts else None
            if feasible[key] is None:
                cost = None
                break
            cost += feasible[key]
        if cost is not None and (best is None or cost < best):
            best = cost
    return best


@st.composite
def tiny_instances(draw, max_trips=5, max_delta=3):
    """Two stations and two depots on a line, a few trips clustered in time."""
    pos = [0, draw(st.integers(1, 6)), draw(st.integers(1, 6)), 12]
    pos[2] = pos[1] + pos[2]
    kinds = [DEPOT, STATION, STATION, DEPOT]
    tt = [[abs(a - b) for b in pos] for a in pos]
    n = draw(st.integers(1, max_trips))
    trips = []
    for _ in range(n):
        a = draw(st.sampled_from([1, 2]))
        b = draw(st.sampled_from([1, 2]))
        s = draw(st.integers(20, 60))
        dur = max(1, tt[a][b]) + draw(st.integers(0, 6))
        trips.append((a, b, s, s + dur))
    return tiny_instance(tt, kinds, trips), draw(st.integers(0, max_delta))


# three stations on a line plus one depot; used for random duty checks
DUTY_TT = [[0, 4, 6, 9], [4, 0, 2, 5], [6, 2, 0, 3], [9, 5, 3, 0]]


@st.composite
def random_duties(draw):
    n = draw(st.integers(1, 6))
    trips = []
    t = draw(st.integers(100, 120))
    for _ in range(n):
        a = draw(st.sampled_from([1, 2, 3]))
        b = draw(st.sampled_from([1, 2, 3]))
        dur = max(1, DUTY_TT[a][b]) + draw(st.integers(0, 5))
        trips.append((a, b, t, t + dur))
        t += draw(st.integers(-3, 14))
    inst = tiny_instance(DUTY_TT, [DEPOT, STATION, STATION, STATION], trips)
    return inst, tuple(range(n)), draw(st.integers(0, 3))
