"""Dynamic discretization discovery for the MDVSP with trip shifting."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

from .instance import Instance
from .mip import (
    OPTIMAL, TIME_LIMIT, FlowSolution, Tolerance, ToleranceState, build_model, get_backend,
    next_tolerance, solve_model,
)
from .refine import (
    DEFAULT_CAP, FEWER_ITERATIONS, STRATEGIES, Duty, RefineResult, check_duty, duty_cost,
    extract_duties, refine,
)
from .timenet import (
    LONG, SCHEMES, LayeredNetwork, TimePointSet, add_time_points, build_full_network,
    build_partial_network, initial_time_points,
)

log = logging.getLogger("tripshift.ddd")

GAP_LIMIT = "gap-limit"
RUN_LOG_COLUMNS = ("iter", "lb", "ub", "gap", "nodes", "arcs", "points_added", "wall_ms")


class ScheduleError(ValueError):
    pass


@dataclass
class DddConfig:
    delta_max: int = 3
    scheme: str = LONG
    strategy: str = FEWER_ITERATIONS
    epsilon: float = 1.0
    epsilon_mode: str = "absolute"       # or "relative": gap / UB
    time_limit: float | None = None      # seconds
    ub_repair_threshold: int = 100
    enumeration_cap: int = DEFAULT_CAP
    adaptive_tolerance: bool = True      # False solves every iteration to optimality
    backend: str = "highs"
    threads: int = 1
    max_iterations: int | None = None

    def validate(self) -> None:
        if self.delta_max < 0:
            raise ValueError("delta_max must be >= 0")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.epsilon_mode not in ("absolute", "relative"):
            raise ValueError(f"unknown epsilon mode {self.epsilon_mode!r}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.ub_repair_threshold < 0 or self.enumeration_cap < 1:
            raise ValueError("repair threshold and enumeration cap must be positive")

    def make_backend(self):
        if self.backend == "highs":
            return get_backend("highs", threads=self.threads)
        return get_backend(self.backend)


@dataclass
class IterationRecord:
    index: int
    lb: float
    ub: float | None
    gap: float | None
    nodes: int
    arcs: int
    points_added: int
    wall_ms: int
    dual_bound: float = 0.0
    network_objective: int | None = None
    tolerance: str = ""
    implementable: bool = False
    repaired: bool = False
    report: dict = field(default_factory=dict)


@dataclass
class ScheduleSolution:
    duties: list[Duty]
    cost: int | None
    vehicles: int
    deadhead_minutes: int
    deviations: dict[int, int]     # trip -> realized departure minus timetable
    status: str
    lower_bound: float = -math.inf
    source: str = ""
    flow: FlowSolution | None = field(default=None, repr=False)

    @property
    def gap(self) -> float | None:
        return None if self.cost is None else self.cost - self.lower_bound

    def to_dict(self) -> dict:
        return {
            "status": self.status, "cost": self.cost, "vehicles": self.vehicles,
            "deadhead_minutes": self.deadhead_minutes,
            "lower_bound": None if not math.isfinite(self.lower_bound) else self.lower_bound,
            "source": self.source,
            "duties": [{"depot": d.depot, "trips": list(d.trips), "pi": list(d.pi)}
                       for d in self.duties],
        }


def schedule_cost(duties, instance: Instance) -> int:
    return sum(duty_cost(d, instance) for d in duties)


def validate_schedule(duties, instance: Instance, delta_max: int) -> int:
    """Check a schedule against the raw instance and return its cost.

    Every trip must be served exactly once, by a duty that starts and ends at
    a depot, inside its shift window and with enough time for the trip and the
    following deadhead.
    """
    seen: dict[int, int] = {}
    depots = set(instance.depots)
    for k, d in enumerate(duties):
        if d.closed or d.depot not in depots:
            raise ScheduleError(f"duty {k} is not anchored at a depot")
        if len(d.pi) != len(d.trips) or not d.trips:
            raise ScheduleError(f"duty {k} lacks departure times")
        for i, (m_id, p) in enumerate(zip(d.trips, d.pi)):
            if m_id in seen:
                raise ScheduleError(f"trip {m_id} served by duties {seen[m_id]} and {k}")
            seen[m_id] = k
            m = instance.trip(m_id)
            if abs(p - m.start_time) > delta_max:
                raise ScheduleError(f"trip {m_id} departs at {p}, outside window of {m.start_time}")
            if i:
                prev = instance.trip(d.trips[i - 1])
                ready = d.pi[i - 1] + prev.duration + instance.travel(prev.end_location,
                                                                      m.start_location)
                if ready > p:
                    raise ScheduleError(f"duty {k}: trip {m_id} departs at {p} before {ready}")
    missing = sorted(set(t.id for t in instance.trips) - set(seen))
    if missing:
        raise ScheduleError(f"trips not served: {missing[:10]}")
    return schedule_cost(duties, instance)


def make_schedule(duties, instance: Instance, delta_max: int, status: str, lower_bound: float,
                  source: str, flow: FlowSolution | None = None) -> ScheduleSolution:
    cost = validate_schedule(duties, instance, delta_max)
    vehicles = len(duties)
    dev = {}
    for d in duties:
        for m_id, p in zip(d.trips, d.pi):
            dev[m_id] = p - instance.trip(m_id).start_time
    return ScheduleSolution(list(duties), cost, vehicles, cost - vehicles * instance.pull_fixed_cost,
                            dict(sorted(dev.items())), status, lower_bound, source, flow)


def _timed(duties, instance, delta_max):
    out = []
    for d in duties:
        rep = check_duty(d, instance, delta_max)
        if not rep.feasible:
            return None
        out.append(d.with_pi(rep.pi))
    return out


def gap(ub: float | None, lb: float, mode: str = "absolute") -> float | None:
    if ub is None:
        return None
    if mode == "relative":
        return (ub - lb) / abs(ub) if ub else (0.0 if ub == lb else math.inf)
    return ub - lb


def terminated(g: float | None, epsilon: float) -> bool:
    """``g < epsilon``; a zero epsilon accepts a gap closed up to the solver floor."""
    if g is None:
        return False
    return g < epsilon or (epsilon == 0 and g <= 1e-6)


# ---------------------------------------------------------------------------
# full discretization


def solve_fd(instance: Instance, delta_max: int, tolerance: Tolerance | None = None,
             time_limit: float | None = None, backend=None, aggregate: bool = True) -> ScheduleSolution:
    instance.check_shift_fits(delta_max)
    net = build_full_network(instance, delta_max, aggregate=aggregate)
    sol = solve_model(build_model(net), tolerance or Tolerance.exact(), time_limit, backend)
    if sol.objective is None:
        return ScheduleSolution([], None, 0, 0, {}, TIME_LIMIT, sol.dual_bound, "fd", sol)
    duties = _timed(extract_duties(sol, net), instance, delta_max)
    if duties is None:
        raise ScheduleError("full-network duty is not implementable")
    status = OPTIMAL if sol.status == OPTIMAL else (TIME_LIMIT if sol.status == TIME_LIMIT
                                                    else GAP_LIMIT)
    out = make_schedule(duties, instance, delta_max, status, sol.dual_bound, "fd", sol)
    if out.cost > sol.objective:
        raise ScheduleError(f"realized cost {out.cost} exceeds network objective {sol.objective}")
    return out


def repair_upper_bound(duties, reports, instance: Instance, config: DddConfig, lower_bound: float,
                       time_limit: float | None = None, backend=None) -> ScheduleSolution | None:
    """Keep the feasible duties and re-solve the remaining trips on a full network."""
    keep = [d.with_pi(r.pi) for d, r in zip(duties, reports) if r.feasible]
    rest = sorted(t for d, r in zip(duties, reports) if not r.feasible for t in d.trips)
    if len(rest) > config.ub_repair_threshold:
        return None
    if rest:
        sub = solve_fd(instance.subset(rest), config.delta_max, Tolerance.exact(), time_limit,
                       backend)
        if sub.cost is None:
            return None
        keep += sub.duties
    return make_schedule(keep, instance, config.delta_max, GAP_LIMIT, lower_bound, "repair")


# ---------------------------------------------------------------------------
# the DDD loop


@dataclass
class IterationEvent:
    record: IterationRecord
    network: LayeredNetwork
    solution: FlowSolution
    result: RefineResult
    tps: TimePointSet        # after refinement
    applied: bool            # False when the loop stopped before adding the points
    incumbent: ScheduleSolution | None = None   # schedule behind the logged UB


def solve_ddd(instance: Instance, config: DddConfig,
              observer: Callable[[IterationEvent], None] | None = None
              ) -> tuple[ScheduleSolution, list[IterationRecord]]:
    config.validate()
    instance.check_shift_fits(config.delta_max)
    backend = config.make_backend()
    delta = config.delta_max
    tps = initial_time_points(instance, delta)
    state = ToleranceState()
    t0 = time.perf_counter()
    lb = -math.inf
    best: ScheduleSolution | None = None
    records: list[IterationRecord] = []
    force_exact = not config.adaptive_tolerance
    status = None

    def remaining():
        if config.time_limit is None:
            return None
        return config.time_limit - (time.perf_counter() - t0)

    it = 0
    while True:
        it += 1
        t_it = time.perf_counter()
        tol = Tolerance.exact() if force_exact else next_tolerance(state, best is not None)
        net = build_partial_network(instance, delta, tps, config.scheme)
        sol = solve_model(build_model(net), tol, remaining(), backend)
        lb = max(lb, sol.dual_bound)
        if sol.objective is None:
            status = TIME_LIMIT
            break

        res = refine(config.strategy, sol, net, tps, instance, delta, config.enumeration_cap,
                     backend)
        if res.implementable:
            timed = _timed(res.duties, instance, delta)
            cand = make_schedule(timed, instance, delta, GAP_LIMIT, lb, "ddd", sol)
            if best is None or cand.cost < best.cost:
                best = cand
        repaired = False
        if not terminated(gap(best and best.cost, lb, config.epsilon_mode), config.epsilon) \
                and not res.implementable:
            rep = repair_upper_bound(res.duties, res.reports, instance, config, lb,
                                     remaining(), backend)
            if rep is not None and (best is None or rep.cost < best.cost):
                best, repaired = rep, True

        ub = best.cost if best else None
        done = terminated(gap(ub, lb, config.epsilon_mode), config.epsilon)
        added = 0 if done else add_time_points(tps, res.points, instance.horizon)
        g = gap(ub, lb, config.epsilon_mode)
        rec = IterationRecord(it, lb, ub, g, net.node_count, net.arc_count, added,
                              int(round((time.perf_counter() - t_it) * 1000)), sol.dual_bound,
                              sol.objective, f"{tol.mode}:{tol.value:g}", res.implementable,
                              repaired, res.report)
        records.append(rec)
        state.record(lb, ub)
        log.info("iter=%d lb=%.3f ub=%s gap=%s nodes=%d arcs=%d added=%d", it, lb, ub, g,
                 net.node_count, net.arc_count, added)
        if observer is not None:
            observer(IterationEvent(rec, net, sol, res, tps, not done, best))
        if done:
            status = OPTIMAL
            break
        if added == 0:
            if force_exact and not res.implementable:
                raise RuntimeError(f"iteration {it} found no new time points for a "
                                   "non-implementable solution")
            # nothing left to refine here: the gap is the solver's, so close it exactly
            force_exact = True
        if config.time_limit is not None and remaining() <= 0:
            status = TIME_LIMIT
            break
        if config.max_iterations is not None and it >= config.max_iterations:
            status = GAP_LIMIT
            break

    if best is None:
        return ScheduleSolution([], None, 0, 0, {}, status, lb, "ddd"), records
    best.status = status
    best.lower_bound = lb
    return best, records


# ---------------------------------------------------------------------------
# run log


def run_log_rows(records: list[IterationRecord]) -> list[dict]:
    rows = []
    for r in records:
        rows.append({
            "iter": r.index, "lb": f"{r.lb:.6f}",
            "ub": "" if r.ub is None else r.ub,
            "gap": "" if r.gap is None else f"{r.gap:.6f}",
            "nodes": r.nodes, "arcs": r.arcs, "points_added": r.points_added,
            "wall_ms": r.wall_ms,
        })
    return rows


def write_run_log(records: list[IterationRecord], fh, config: dict | None = None) -> None:
    if config is not None:
        fh.write("# " + json.dumps(config, sort_keys=True) + "\n")
    w = csv.DictWriter(fh, fieldnames=RUN_LOG_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(run_log_rows(records))


def read_csv_report(text: str) -> list[dict]:
    """Parse a report written by this package, skipping ``#`` provenance lines."""
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(io.StringIO("\n".join(lines))))


def config_dict(config: DddConfig) -> dict:
    return asdict(config)
