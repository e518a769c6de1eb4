"""Duties, continuous-time feasibility and discretization refinement.

A flow solution on a partial network is split into duties (trip sequences
per vehicle). A duty is implementable when departures inside the shift
windows exist that respect true trip and travel times. Non-implementable
duties yield time points which, once added, remove the duty from the
rebuilt network.

Paths in a partial network may chain several deadheads between two trips.
A vehicle drives the direct connection in reality, but the chained route can
be shorter in the network because every leg is rounded down separately. The
refinement points therefore also cover the intermediate locations of the
chain the duty actually used, which keeps that route out of the rebuilt
network as well.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .instance import DEADHEAD, PULL_IN, PULL_OUT, TRIP, Instance
from .mip.model import FlowSolution, solve_exact_cover
from .timenet import (
    KIND_ORDER, DepotEnd, LayeredNetwork, StationNode, TimePointSet, node_time,
)

log = logging.getLogger("tripshift.refine")

DUTY = "duty"
FEWER_TIME_POINTS = "fewer-timepoints"
FEWER_ITERATIONS = "fewer-iterations"
STRATEGIES = (DUTY, FEWER_TIME_POINTS, FEWER_ITERATIONS)

DEFAULT_CAP = 10_000
DEFAULT_STEP_CAP = 500_000


class RefineError(RuntimeError):
    pass


@dataclass(frozen=True)
class Duty:
    depot: int | None
    trips: tuple[int, ...]
    # intermediate deadhead locations per connection (trip i -> i+1; closed duties wrap around)
    vias: tuple[tuple[int, ...], ...] = ()
    closed: bool = False
    pi: tuple[int, ...] = field(default=(), compare=False)

    def __post_init__(self):
        want = len(self.trips) if self.closed else max(len(self.trips) - 1, 0)
        if not self.vias:
            object.__setattr__(self, "vias", ((),) * want)
        elif len(self.vias) != want:
            raise ValueError(f"duty needs {want} via tuples, got {len(self.vias)}")

    @property
    def has_vias(self) -> bool:
        return any(self.vias)

    def with_pi(self, pi) -> "Duty":
        return Duty(self.depot, self.trips, self.vias, self.closed, tuple(int(p) for p in pi))


@dataclass(frozen=True)
class FeasibilityReport:
    feasible: bool
    pi: tuple[int, ...]            # earliest departures; the prefix up to j* when infeasible
    bottleneck: int | None = None  # 0-based j*
    trips: tuple[int, ...] = ()    # checked sequence (unrolled for closed duties)


def unrolled(duty: Duty, delta_max: int) -> tuple[tuple[int, ...], tuple[tuple[int, ...], ...]]:
    """Trip and via sequence a closed duty would need to run forever.

    Every round of a circulation takes at least one minute of true time, so
    ``2*delta_max + 2`` rounds always push some repeated trip past its window.
    """
    if not duty.closed:
        return duty.trips, duty.vias
    reps = 2 * delta_max + 2
    trips = duty.trips * reps
    vias = (duty.vias * reps)[:len(trips) - 1]
    return trips, vias


def _earliest(instance: Instance, trips, vias, delta_max: int, use_vias: bool):
    """Earliest departures plus the true arrival times at via locations."""
    pi: list[int] = []
    via_times: list[list[int]] = []
    for i, m_id in enumerate(trips):
        m = instance.trip(m_id)
        lo = m.start_time - delta_max
        if i == 0:
            p = lo
        else:
            prev = instance.trip(trips[i - 1])
            t = pi[-1] + prev.duration
            here = prev.end_location
            times = []
            if use_vias:
                for v in vias[i - 1]:
                    t += instance.travel(here, v)
                    here = v
                    times.append(t)
            via_times.append(times)
            t += instance.travel(here, m.start_location)
            p = max(t, lo)
        pi.append(p)
        if p > m.start_time + delta_max:
            return pi, via_times, i
    return pi, via_times, None


def check_duty(duty: Duty, instance: Instance, delta_max: int) -> FeasibilityReport:
    """Earliest-departure recursion over the duty's trips using direct deadheads."""
    trips, vias = unrolled(duty, delta_max)
    if not trips:
        return FeasibilityReport(True, (), None, ())
    pi, _, j = _earliest(instance, trips, vias, delta_max, use_vias=False)
    return FeasibilityReport(j is None, tuple(pi), j, tuple(trips))


def _route_points(instance: Instance, trips, vias, delta_max: int, use_vias: bool):
    pi, via_times, j = _earliest(instance, trips, vias, delta_max, use_vias)
    if j is None:
        return []
    pts = []
    for i in range(j):
        m = instance.trip(trips[i])
        pts.append((m.start_location, pi[i]))
        pts.append((m.end_location, pi[i] + m.duration))
        if use_vias and i < len(via_times):
            pts.extend(zip(vias[i], via_times[i]))
    pts.append((instance.trip(trips[j]).start_location, pi[j]))
    return pts


def refinement_points(duty: Duty, report: FeasibilityReport, instance: Instance,
                      delta_max: int) -> list[tuple[int, int]]:
    """Time points that cut ``duty`` from the network, sorted and deduplicated.

    Times past the end of the horizon are clamped to it: such a point still
    lies after every start window it has to block.
    """
    if report.feasible:
        raise RefineError(f"refinement requested for feasible duty {duty.trips}")
    trips, vias = unrolled(duty, delta_max)
    pts = _route_points(instance, trips, vias, delta_max, use_vias=False)
    if duty.has_vias:
        pts += _route_points(instance, trips, vias, delta_max, use_vias=True)
    hi = instance.horizon[1]
    return sorted({(loc, min(t, hi)) for loc, t in pts})


def missing_points(points, tps: TimePointSet) -> int:
    return sum(p not in tps for p in set(points))


def duty_cost(duty: Duty, instance: Instance) -> int:
    """Cost of operating the duty with direct deadheads (closed duties carry no pull arcs)."""
    if not duty.trips:
        return 0
    ms = [instance.trip(t) for t in duty.trips]
    cost = sum(instance.travel(a.end_location, b.start_location) for a, b in zip(ms, ms[1:]))
    if duty.closed:
        return cost + instance.travel(ms[-1].end_location, ms[0].start_location)
    f = instance.pull_fixed_cost
    return (cost + 2 * f + instance.travel(duty.depot, ms[0].start_location)
            + instance.travel(ms[-1].end_location, duty.depot))


# ---------------------------------------------------------------------------
# decomposition of flow solutions


def _arc_key(arc):
    return (node_time(arc.head), KIND_ORDER[arc.kind], -1 if arc.trip is None else arc.trip)


def _layer_support(solution: FlowSolution, depot: int):
    arcs = solution.model.network.layer_arcs(depot)
    flow = solution.layer_flow(depot)
    out = defaultdict(list)
    for i in flow:
        out[arcs[i].tail].append(i)
    for v in out.values():
        v.sort(key=lambda i: _arc_key(arcs[i]))
    return arcs, flow, out


class _SequenceBuilder:
    """Collects trips and deadhead chains while walking a path."""

    def __init__(self, arcs):
        self.arcs = arcs
        self.trips: list[int] = []
        self.vias: list[tuple[int, ...]] = []
        self.chain: list[int] = []
        self.lead: list[int] = []  # deadhead heads before the first trip

    def push(self, i: int) -> None:
        a = self.arcs[i]
        if a.kind == TRIP:
            if self.trips:
                self.vias.append(tuple(self.chain[:-1]))
            self.trips.append(a.trip)
            self.chain = []
        elif a.kind == DEADHEAD:
            (self.chain if self.trips else self.lead).append(a.head.location)

    def closed_vias(self) -> tuple[tuple[int, ...], ...]:
        # the wrap-around connection continues from the tail chain into the lead chain
        wrap = (self.chain + self.lead)[:-1] if (self.chain or self.lead) else []
        return tuple(self.vias) + (tuple(wrap),)


def extract_duties(solution: FlowSolution, network: LayeredNetwork | None = None) -> list[Duty]:
    """Greedy path stripping of every layer, then leftover circulations as closed duties.

    Walks start at each pull-out arc (one per unit of flow) and always take the
    first arc with residual flow in the order (head time, arc kind, trip id).
    Walks and circulations without trips are dropped.
    """
    duties = []
    for d in solution.model.network.depots:
        arcs, residual, out = _layer_support(solution, d)
        starts = [i for i in sorted(residual, key=lambda i: arcs[i].sort_key())
                  if arcs[i].kind == PULL_OUT]
        for s in starts:
            while residual[s] > 0:
                residual[s] -= 1
                seq = _SequenceBuilder(arcs)
                node = arcs[s].head
                while not isinstance(node, DepotEnd):
                    nxt = next((i for i in out[node] if residual[i] > 0), None)
                    if nxt is None:
                        raise RefineError(f"flow conservation broken at {node} in layer {d}")
                    residual[nxt] -= 1
                    seq.push(nxt)
                    node = arcs[nxt].head
                if seq.trips:
                    duties.append(Duty(d, tuple(seq.trips), tuple(seq.vias)))
        duties.extend(_circulations(arcs, residual, out, d))
    covered = sorted(t for du in duties for t in du.trips)
    if covered != sorted(solution.model.trip_rows):
        raise RefineError("duty decomposition does not cover every trip exactly once")
    return duties


def _circulations(arcs, residual, out, depot) -> list[Duty]:
    found = []
    while True:
        left = sorted((i for i, f in residual.items() if f > 0), key=lambda i: arcs[i].sort_key())
        if not left:
            return found
        node = arcs[left[0]].tail
        pos = {node: 0}
        path = []
        while True:
            nxt = next((i for i in out[node] if residual[i] > 0), None)
            if nxt is None:
                raise RefineError(f"leftover flow is not a circulation at {node}")
            path.append(nxt)
            node = arcs[nxt].head
            if node in pos:
                break
            pos[node] = len(path)
        cycle = path[pos[node]:]
        for i in cycle:
            residual[i] -= 1
        trip_pos = [k for k, i in enumerate(cycle) if arcs[i].kind == TRIP]
        if not trip_pos:
            continue
        # rotate so the cycle opens with its smallest trip
        first = min(trip_pos, key=lambda k: arcs[cycle[k]].trip)
        seq = _SequenceBuilder(arcs)
        for i in cycle[first:] + cycle[:first]:
            seq.push(i)
        found.append(Duty(depot, tuple(seq.trips), seq.closed_vias(), closed=True))


@dataclass
class Component:
    depot: int
    arcs: dict[int, int]           # layer arc index -> flow (station arcs only)
    entries: dict[StationNode, int]
    exits: dict[StationNode, int]
    trips: frozenset[int]
    cost: int = 0                  # network cost of the component incl. its pull arcs
    greedy: list[Duty] = field(default_factory=list)


def decompose_components(solution: FlowSolution, network: LayeredNetwork | None = None) -> list[Component]:
    """Connected components of each layer's flow support without depot arcs."""
    comps = []
    for d in solution.model.network.depots:
        arcs, flow, _ = _layer_support(solution, d)
        parent: dict = {}

        def find(x):
            while parent.setdefault(x, x) != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for i in flow:
            a = arcs[i]
            if a.kind in (PULL_OUT, PULL_IN):
                find(a.head if a.kind == PULL_OUT else a.tail)
            else:
                ra, rb = find(a.tail), find(a.head)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
        groups: dict = {}
        for i in sorted(flow):
            a = arcs[i]
            node = a.head if a.kind == PULL_OUT else a.tail
            c = groups.setdefault(find(node), Component(d, {}, {}, {}, frozenset()))
            c.cost += a.cost * flow[i]
            if a.kind == PULL_OUT:
                c.entries[a.head] = c.entries.get(a.head, 0) + flow[i]
            elif a.kind == PULL_IN:
                c.exits[a.tail] = c.exits.get(a.tail, 0) + flow[i]
            else:
                c.arcs[i] = flow[i]
                if a.kind == TRIP:
                    c.trips = c.trips | {a.trip}
        comps.extend(groups[k] for k in sorted(groups))
    return comps


def attach_greedy(components: list[Component], duties: list[Duty]) -> None:
    owner = {}
    for k, c in enumerate(components):
        for t in c.trips:
            owner[(c.depot, t)] = k
    for du in duties:
        components[owner[(du.depot, du.trips[0])]].greedy.append(du)


@dataclass
class DutyCandidates:
    component: Component
    duties: list[Duty]
    reports: list[FeasibilityReport]
    points: list[list[tuple[int, int]]]   # refinement points (empty for feasible duties)
    n_p: list[int]
    covers: dict[int, list[int]]          # trip -> candidate indices
    truncated: bool = False
    delta_p: list[int] | None = None

    @property
    def infeasible(self) -> list[int]:
        return [k for k, r in enumerate(self.reports) if not r.feasible]


def enumerate_duties(component: Component, network: LayeredNetwork, instance: Instance,
                     delta_max: int, tps: TimePointSet, cap: int = DEFAULT_CAP,
                     step_cap: int = DEFAULT_STEP_CAP) -> DutyCandidates:
    """All trip sequences routable through the component's flow, entry to exit.

    Depth-first search over residual capacities; sequences are deduplicated and
    the greedy duties of the component are always part of the result.
    """
    arcs = network.layer_arcs(component.depot)
    out = defaultdict(list)
    for i in component.arcs:
        out[arcs[i].tail].append(i)
    for v in out.values():
        v.sort(key=lambda i: _arc_key(arcs[i]))
    residual = dict(component.arcs)
    seen: dict[tuple, Duty] = {}
    steps = 0
    truncated = False

    def dfs(node, seq: _SequenceBuilder):
        nonlocal steps, truncated
        if truncated:
            return
        steps += 1
        if len(seen) >= cap or steps > step_cap:
            truncated = True
            return
        if node in component.exits and seq.trips:
            key = (tuple(seq.trips), False)
            if key not in seen:
                seen[key] = Duty(component.depot, tuple(seq.trips), tuple(seq.vias))
        for i in out[node]:
            if residual[i] <= 0:
                continue
            residual[i] -= 1
            state = (list(seq.trips), list(seq.vias), list(seq.chain), list(seq.lead))
            seq.push(i)
            dfs(arcs[i].head, seq)
            seq.trips, seq.vias, seq.chain, seq.lead = state
            residual[i] += 1

    for entry in sorted(component.entries):
        dfs(entry, _SequenceBuilder(arcs))
    for du in component.greedy:
        seen.setdefault((du.trips, du.closed), du)

    duties = [seen[k] for k in sorted(seen)]
    reports, points, n_p = [], [], []
    covers: dict[int, list[int]] = defaultdict(list)
    for k, du in enumerate(duties):
        rep = check_duty(du, instance, delta_max)
        pts = [] if rep.feasible else refinement_points(du, rep, instance, delta_max)
        reports.append(rep)
        points.append(pts)
        n_p.append(missing_points(pts, tps))
        for t in du.trips:
            covers[t].append(k)
    if truncated:
        log.warning("duty enumeration truncated at %d sequences (%d steps) in a %d-trip component",
                    len(seen), steps, len(component.trips))
    return DutyCandidates(component, duties, reports, points, n_p, dict(covers), truncated)


def optimize_decomposition(cands: DutyCandidates, weights, instance: Instance | None = None,
                           max_cost: int | None = None, allowed=None, backend=None):
    """Exact set partitioning of the component's trips over the candidates.

    ``max_cost`` bounds the summed duty cost, ``allowed`` restricts the usable
    candidates. Returns ``(selected indices, objective)``; when no exact cover
    exists the greedy duties are returned with objective None.
    """
    idx = list(range(len(cands.duties))) if allowed is None else list(allowed)
    trips = sorted(cands.component.trips)
    pos = {t: r for r, t in enumerate(trips)}
    covers = [[pos[t] for t in cands.duties[k].trips] for k in idx]
    w = [float(weights[k]) for k in idx]
    extra = []
    if max_cost is not None:
        extra.append(([duty_cost(cands.duties[k], instance) for k in idx], -np.inf, max_cost))
    chosen, obj = solve_exact_cover(w, covers, len(trips), extra, backend=backend)
    if chosen is None:
        log.warning("no exact cover among %d candidates (truncated=%s); using greedy duties",
                    len(idx), cands.truncated)
        greedy = {(du.trips, du.closed) for du in cands.component.greedy}
        return [k for k, du in enumerate(cands.duties) if (du.trips, du.closed) in greedy], None
    return sorted(idx[k] for k in chosen), obj


# ---------------------------------------------------------------------------
# strategies


@dataclass
class RefineResult:
    points: list[tuple[int, int]]          # proposed, sorted and deduplicated
    duties: list[Duty]                     # decomposition offered as schedule
    reports: list[FeasibilityReport]
    implementable: bool
    report: dict
    refined: list[tuple[Duty, list[tuple[int, int]]]] = field(default_factory=list)


def refine(strategy: str, solution: FlowSolution, network: LayeredNetwork, tps: TimePointSet,
           instance: Instance, delta_max: int, cap: int = DEFAULT_CAP, backend=None) -> RefineResult:
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown refinement strategy {strategy!r}")
    greedy = extract_duties(solution, network)
    g_reports = [check_duty(du, instance, delta_max) for du in greedy]
    report = {"strategy": strategy, "duties_checked": len(greedy),
              "infeasible_greedy": sum(not r.feasible for r in g_reports)}

    if strategy == DUTY:
        refined = [(du, refinement_points(du, r, instance, delta_max))
                   for du, r in zip(greedy, g_reports) if not r.feasible]
        points = sorted({p for _, pts in refined for p in pts})
        report.update(proposed=len(points), components=None)
        return RefineResult(points, greedy, g_reports, not refined, report, refined)

    comps = decompose_components(solution, network)
    attach_greedy(comps, greedy)
    duties, reports, refined = [], [], []
    sizes, truncated, candidates = [], 0, 0
    for comp in comps:
        cands = enumerate_duties(comp, network, instance, delta_max, tps, cap)
        candidates += len(cands.duties)
        sizes.append(len(comp.trips))
        truncated += cands.truncated
        greedy_keys = {(du.trips, du.closed) for du in comp.greedy}
        if not comp.trips:
            sel = []
        elif all(cands.reports[k].feasible for k, du in enumerate(cands.duties)
                 if (du.trips, du.closed) in greedy_keys):
            # zero weight already: the greedy duties are an optimal selection
            sel = [k for k, du in enumerate(cands.duties) if (du.trips, du.closed) in greedy_keys]
        else:
            sel, _ = optimize_decomposition(cands, cands.n_p, instance, comp.cost, backend=backend)
        duties += [cands.duties[k] for k in sel]
        reports += [cands.reports[k] for k in sel]
        pool = sel if strategy == FEWER_TIME_POINTS else range(len(cands.duties))
        refined += [(cands.duties[k], cands.points[k]) for k in pool
                    if not cands.reports[k].feasible]
    points = sorted({p for _, pts in refined for p in pts})
    implementable = all(r.feasible for r in reports)
    report.update(proposed=len(points), components=len(comps), component_sizes=sizes,
                  candidates=candidates, truncated=truncated,
                  infeasible_selected=sum(not r.feasible for r in reports),
                  infeasible_candidates=len(refined) if strategy == FEWER_ITERATIONS else None)
    return RefineResult(points, duties, reports, implementable, report, refined)
