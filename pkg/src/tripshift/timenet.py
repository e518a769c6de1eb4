"""Layered time-space networks: full discretization and partial (DDD) networks.

All depot layers share the same station subgraph; only pull-out and pull-in
arcs differ between layers. The network therefore stores the station arcs
once and the depot arcs per layer. Arc indices inside a layer are
``0..len(station_arcs)-1`` for station arcs followed by that layer's depot
arcs.
"""

from __future__ import annotations

import bisect
import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from .instance import (
    DEADHEAD, PULL_IN, PULL_OUT, TRIP, WAIT, Instance, InstanceError, arc_cost,
)

SHORT = "short"
MEDIUM = "medium"
LONG = "long"
SCHEMES = (SHORT, MEDIUM, LONG)


class NetworkError(ValueError):
    pass


@dataclass(frozen=True, slots=True, order=True)
class StationNode:
    location: int
    time: int


@dataclass(frozen=True, slots=True, order=True)
class DepotStart:
    depot: int


@dataclass(frozen=True, slots=True, order=True)
class DepotEnd:
    depot: int


NodeKey = StationNode | DepotStart | DepotEnd

KIND_ORDER = {TRIP: 0, DEADHEAD: 1, WAIT: 2, PULL_IN: 3, PULL_OUT: 4}


@dataclass(frozen=True, slots=True)
class Arc:
    tail: NodeKey
    head: NodeKey
    kind: str
    cost: int
    true_length: int | None = None
    modeled_length: int | None = None
    trip: int | None = None
    shift: int | None = None

    def sort_key(self):
        return (_node_order(self.tail), _node_order(self.head), KIND_ORDER[self.kind],
                -1 if self.trip is None else self.trip)


def _node_order(node: NodeKey):
    if isinstance(node, StationNode):
        return (1, node.location, node.time)
    if isinstance(node, DepotStart):
        return (0, node.depot, 0)
    return (2, node.depot, 0)


def node_time(node: NodeKey) -> float:
    if isinstance(node, StationNode):
        return node.time
    return float("-inf") if isinstance(node, DepotStart) else float("inf")


# ---------------------------------------------------------------------------
# time points


class TimePointSet:
    """Per-location sorted, duplicate-free discretization times."""

    def __init__(self, points: dict[int, Iterable[int]] | None = None):
        self._pts: dict[int, list[int]] = {}
        for loc, times in (points or {}).items():
            ts = sorted(set(int(t) for t in times))
            if ts:
                self._pts[loc] = ts

    def __getitem__(self, location: int) -> list[int]:
        return self._pts.get(location, [])

    def __contains__(self, point) -> bool:
        loc, t = point
        ts = self._pts.get(loc)
        if not ts:
            return False
        i = bisect.bisect_left(ts, t)
        return i < len(ts) and ts[i] == t

    def __len__(self) -> int:
        return sum(len(v) for v in self._pts.values())

    def __eq__(self, other) -> bool:
        return isinstance(other, TimePointSet) and self._pts == other._pts

    def __repr__(self) -> str:
        return f"TimePointSet({self._pts!r})"

    def locations(self) -> list[int]:
        return sorted(self._pts)

    def copy(self) -> "TimePointSet":
        out = TimePointSet()
        out._pts = {k: list(v) for k, v in self._pts.items()}
        return out

    def points(self) -> Iterator[tuple[int, int]]:
        for loc in sorted(self._pts):
            for t in self._pts[loc]:
                yield loc, t

    def rho(self, location: int, t: int) -> int | None:
        ts = self._pts.get(location)
        if not ts:
            return None
        i = bisect.bisect_right(ts, t)
        return ts[i - 1] if i else None

    def successor(self, location: int, t: int | None) -> int | None:
        """First time point strictly after ``t`` (the first point when ``t`` is None)."""
        ts = self._pts.get(location)
        if not ts:
            return None
        if t is None:
            return ts[0]
        i = bisect.bisect_right(ts, t)
        return ts[i] if i < len(ts) else None

    def add(self, location: int, t: int) -> bool:
        ts = self._pts.setdefault(location, [])
        i = bisect.bisect_left(ts, t)
        if i < len(ts) and ts[i] == t:
            return False
        ts.insert(i, t)
        return True

    def to_dict(self) -> dict[int, list[int]]:
        return {k: list(v) for k, v in sorted(self._pts.items())}


def rho(tps: TimePointSet, location: int, t: int) -> int | None:
    """Latest time point at ``location`` at or before ``t``."""
    return tps.rho(location, t)


def add_time_points(tps: TimePointSet, points: Iterable[tuple[int, int]],
                    horizon: tuple[int, int] | None = None) -> int:
    """Add points in place; return how many were not already present."""
    new = 0
    for loc, t in points:
        if horizon is not None and not horizon[0] <= t <= horizon[1]:
            raise NetworkError(f"time point ({loc}, {t}) outside horizon {horizon}")
        new += tps.add(loc, t)
    return new


def initial_time_points(instance: Instance, delta_max: int) -> TimePointSet:
    if delta_max < 0:
        raise ValueError("delta_max must be >= 0")
    pts: dict[int, set[int]] = defaultdict(set)
    for m in instance.trips:
        pts[m.start_location].add(m.start_time - delta_max)
        pts[m.end_location].add(m.end_time - delta_max)
    return TimePointSet(pts)


def full_time_points(instance: Instance, delta_max: int) -> TimePointSet:
    """Every start and end time of every allowed shift."""
    pts: dict[int, set[int]] = defaultdict(set)
    for m in instance.trips:
        for d in range(-delta_max, delta_max + 1):
            pts[m.start_location].add(m.start_time + d)
            pts[m.end_location].add(m.end_time + d)
    return TimePointSet(pts)


# ---------------------------------------------------------------------------
# network container


@dataclass
class LayeredNetwork:
    depots: tuple[int, ...]
    station_nodes: tuple[StationNode, ...]
    station_arcs: tuple[Arc, ...]
    depot_arcs: dict[int, tuple[Arc, ...]]
    trip_arcs: dict[int, tuple[int, ...]]
    delta_max: int
    scheme: str | None = None
    _node_index: dict = field(default=None, repr=False)

    def layer_arcs(self, depot: int) -> tuple[Arc, ...]:
        return self.station_arcs + self.depot_arcs[depot]

    def layer_nodes(self, depot: int) -> tuple[NodeKey, ...]:
        return (DepotStart(depot),) + self.station_nodes + (DepotEnd(depot),)

    @property
    def nodes_per_layer(self) -> int:
        return len(self.station_nodes) + 2

    @property
    def node_count(self) -> int:
        return self.nodes_per_layer * len(self.depots)

    @property
    def arc_count(self) -> int:
        return sum(len(self.station_arcs) + len(a) for a in self.depot_arcs.values())

    def station_node_index(self) -> dict[StationNode, int]:
        if self._node_index is None:
            self._node_index = {n: i for i, n in enumerate(self.station_nodes)}
        return self._node_index

    def stats(self) -> dict[str, int]:
        return {
            "layers": len(self.depots),
            "nodes": self.node_count,
            "arcs": self.arc_count,
            "station_nodes": len(self.station_nodes),
            "trip_arcs": sum(len(v) for v in self.trip_arcs.values()),
            "deadhead_arcs": sum(a.kind == DEADHEAD for a in self.station_arcs),
        }

    def dump_jsonl(self) -> Iterator[str]:
        for d in self.depots:
            for a in self.layer_arcs(d):
                yield json.dumps({
                    "layer": d, "tail": _node_json(a.tail), "head": _node_json(a.head),
                    "kind": a.kind, "cost": a.cost, "true_len": a.true_length,
                    "model_len": a.modeled_length, "trip": a.trip,
                })


def _node_json(node: NodeKey):
    if isinstance(node, StationNode):
        return [node.location, node.time]
    return ("start:" if isinstance(node, DepotStart) else "end:") + str(node.depot)


def _assemble(instance: Instance, nodes_by_loc: dict[int, list[int]], trip_arcs: list[Arc],
              deadheads: list[Arc], delta_max: int, scheme: str | None) -> LayeredNetwork:
    waits = []
    station_nodes = []
    for loc in sorted(nodes_by_loc):
        ts = nodes_by_loc[loc]
        station_nodes.extend(StationNode(loc, t) for t in ts)
        for a, b in zip(ts, ts[1:]):
            waits.append(Arc(StationNode(loc, a), StationNode(loc, b), WAIT, 0, b - a, b - a))

    station_arcs = sorted(trip_arcs, key=Arc.sort_key)
    station_arcs += sorted(deadheads, key=Arc.sort_key)
    station_arcs += waits
    index: dict[int, list[int]] = {m.id: [] for m in instance.trips}
    for i, a in enumerate(station_arcs):
        if a.kind == TRIP:
            index[a.trip].append(i)

    depot_arcs = {}
    for d in instance.depots:
        arcs = []
        for loc in sorted(nodes_by_loc):
            ts = nodes_by_loc[loc]
            tau = instance.travel(d, loc)
            arcs.append(Arc(DepotStart(d), StationNode(loc, ts[0]), PULL_OUT,
                            arc_cost(PULL_OUT, d, loc, instance), tau))
        for loc in sorted(nodes_by_loc):
            ts = nodes_by_loc[loc]
            tau = instance.travel(loc, d)
            arcs.append(Arc(StationNode(loc, ts[-1]), DepotEnd(d), PULL_IN,
                            arc_cost(PULL_IN, loc, d, instance), tau))
        depot_arcs[d] = tuple(arcs)

    return LayeredNetwork(
        depots=instance.depots,
        station_nodes=tuple(station_nodes),
        station_arcs=tuple(station_arcs),
        depot_arcs=depot_arcs,
        trip_arcs={k: tuple(v) for k, v in index.items()},
        delta_max=delta_max,
        scheme=scheme,
    )


def _deadhead(tail: StationNode, head: StationNode, instance: Instance) -> Arc:
    tau = instance.travel(tail.location, head.location)
    return Arc(tail, head, DEADHEAD, arc_cost(DEADHEAD, tail.location, head.location, instance),
               tau, head.time - tail.time)


def aggregate_deadheads(arcs: Iterable[Arc]) -> list[Arc]:
    """Two-stage first-match / latest-first-match reduction of deadheading arcs.

    Non-deadhead arcs pass through untouched. Every dropped connection stays
    reachable through a retained arc combined with waiting arcs, provided the
    waiting chains are present in the network.
    """
    others = []
    first: dict[tuple, Arc] = {}
    for a in arcs:
        if a.kind != DEADHEAD:
            others.append(a)
            continue
        key = (a.tail, a.head.location)
        cur = first.get(key)
        if cur is None or a.head.time < cur.head.time:
            first[key] = a
    latest: dict[tuple, Arc] = {}
    for a in first.values():
        key = (a.head, a.tail.location)
        cur = latest.get(key)
        if cur is None or a.tail.time > cur.tail.time:
            latest[key] = a
    return others + sorted(latest.values(), key=Arc.sort_key)


def build_full_network(instance: Instance, delta_max: int, aggregate: bool = True) -> LayeredNetwork:
    """Fully discretized network with one trip arc per trip and shift."""
    if delta_max < 0:
        raise ValueError("delta_max must be >= 0")
    lo, hi = instance.horizon
    nodes: dict[int, set[int]] = defaultdict(set)
    starts: dict[int, set[int]] = defaultdict(set)
    ends: set[StationNode] = set()
    trip_arcs = []
    for m in instance.trips:
        for d in range(-delta_max, delta_max + 1):
            s, e = m.start_time + d, m.end_time + d
            if s < lo or e > hi:
                raise InstanceError(f"trip {m.id} with shift {d:+d} leaves horizon {instance.horizon}")
            nodes[m.start_location].add(s)
            nodes[m.end_location].add(e)
            starts[m.start_location].add(s)
            ends.add(StationNode(m.end_location, e))
            trip_arcs.append(Arc(StationNode(m.start_location, s), StationNode(m.end_location, e),
                                 TRIP, 0, m.duration, m.duration, m.id, d))

    start_lists = {l: sorted(ts) for l, ts in starts.items()}
    deadheads = []
    for tail in sorted(ends):
        k, t = tail.location, tail.time
        for l, ts in start_lists.items():
            if l == k:
                continue
            i = bisect.bisect_left(ts, t + instance.travel(k, l))
            if aggregate:
                if i < len(ts):
                    deadheads.append(_deadhead(tail, StationNode(l, ts[i]), instance))
            else:
                deadheads.extend(_deadhead(tail, StationNode(l, s), instance) for s in ts[i:])
    if aggregate:
        deadheads = aggregate_deadheads(deadheads)

    nodes_by_loc = {l: sorted(ts) for l, ts in nodes.items()}
    return _assemble(instance, nodes_by_loc, trip_arcs, deadheads, delta_max, None)


def build_partial_network(instance: Instance, delta_max: int, tps: TimePointSet,
                          scheme: str = LONG) -> LayeredNetwork:
    """Partially time-expanded network over the time points in ``tps``."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    lo, hi = instance.horizon
    for loc, t in tps.points():
        if not lo <= t <= hi:
            raise NetworkError(f"time point ({loc}, {t}) outside horizon {instance.horizon}")
    for m in instance.trips:
        for point in ((m.start_location, m.start_time - delta_max),
                      (m.end_location, m.end_time - delta_max)):
            if point not in tps:
                raise NetworkError(f"time points lack mandatory point {point} of trip {m.id}")

    # trip arcs: one per start node inside the window, rounded down at the end;
    # of several arcs sharing a head only the latest tail is kept
    trip_arcs = []
    heads: set[StationNode] = set()
    for m in instance.trips:
        ts = tps[m.start_location]
        i = bisect.bisect_left(ts, m.start_time - delta_max)
        j = bisect.bisect_right(ts, m.start_time + delta_max)
        by_head: dict[int, int] = {}
        for t in ts[i:j]:
            by_head[tps.rho(m.end_location, t + m.duration)] = t
        for h, t in sorted(by_head.items()):
            head = StationNode(m.end_location, h)
            heads.add(head)
            trip_arcs.append(Arc(StationNode(m.start_location, t), head, TRIP, 0,
                                 m.duration, h - t, m.id, t - m.start_time))

    starts_at: dict[int, list[int]] = defaultdict(list)
    for m in instance.trips:
        starts_at[m.start_location].append(m.start_time)
    for v in starts_at.values():
        v.sort()

    deadheads = []
    for tail in sorted(heads):
        k, t = tail.location, tail.time
        for l in sorted(starts_at):
            if l == k:
                continue
            h = deadhead_head(tps, starts_at[l], l, t + instance.travel(k, l), delta_max, scheme)
            if h is not None:
                deadheads.append(_deadhead(tail, StationNode(l, h), instance))
    deadheads = aggregate_deadheads(deadheads)

    nodes_by_loc = {l: list(tps[l]) for l in tps.locations()}
    return _assemble(instance, nodes_by_loc, trip_arcs, deadheads, delta_max, scheme)


def deadhead_head(tps: TimePointSet, trip_starts: list[int], location: int, arrival: int,
                  delta_max: int, scheme: str) -> int | None:
    """Head time at ``location`` of a deadhead whose true arrival is ``arrival``.

    ``trip_starts`` are the sorted timetabled start times of trips leaving
    ``location``. Returns None when no suitable node exists.
    """
    r = tps.rho(location, arrival)
    if r is None:
        # nothing at or before the arrival: the earliest node is the only target
        return tps.successor(location, None)
    if scheme == SHORT:
        return r
    if scheme == MEDIUM:
        up = r < arrival - 2 * delta_max
    else:
        # some trip with a start arc at r must still be able to depart at arrival
        i = bisect.bisect_left(trip_starts, arrival - delta_max)
        up = not (i < len(trip_starts) and trip_starts[i] <= r + delta_max)
    return tps.successor(location, r) if up else r
