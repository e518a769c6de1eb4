"""Deviation minimization at fixed schedule cost."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass

import numpy as np

from .ddd import ScheduleSolution, make_schedule
from .instance import Instance
from .refine import (
    Duty, RefineError, attach_greedy, check_duty, decompose_components, duty_cost,
    enumerate_duties, DEFAULT_CAP,
)
from .mip.model import solve_exact_cover

log = logging.getLogger("tripshift.postprocess")

PER_DUTY = "per-duty"
OPTIMIZED = "optimized"
WORST = "worst"
RANDOM = "random"
MODES = (PER_DUTY, OPTIMIZED, WORST, RANDOM)

DEVIATION_COLUMNS = ("trip_id", "t_s", "pi", "delta_plus", "delta_minus", "dev_s")


@dataclass(frozen=True)
class DeviationSchedule:
    trips: tuple[int, ...]
    pi: tuple[int, ...]
    delta_plus: tuple[int, ...]
    delta_minus: tuple[int, ...]

    @property
    def total(self) -> int:
        return sum(self.delta_plus) + sum(self.delta_minus)


def minimize_duty_deviation(duty: Duty, instance: Instance, delta_max: int) -> DeviationSchedule:
    """Exact minimum of the summed absolute shifts of one duty.

    Dynamic program over shift states, solved backwards. Among optimal
    schedules the vector of absolute shifts is lexicographically smallest and,
    after that, departures are as early as possible.
    """
    if not check_duty(duty, instance, delta_max).feasible:
        raise RefineError(f"duty {duty.trips} is not implementable")
    ms = [instance.trip(t) for t in duty.trips]
    shifts = range(-delta_max, delta_max + 1)
    # best[s] = (total, |shift| tail, shift tail) for the suffix starting with shift s
    best = {s: (abs(s), (abs(s),), (s,)) for s in shifts}
    for i in range(len(ms) - 2, -1, -1):
        a, b = ms[i], ms[i + 1]
        gap = a.duration + instance.travel(a.end_location, b.start_location)
        nxt = best
        best = {}
        for s in shifts:
            ready = a.start_time + s + gap
            opts = [v for s2, v in nxt.items() if b.start_time + s2 >= ready]
            if opts:
                t, devs, sh = min(opts)
                best[s] = (t + abs(s), (abs(s),) + devs, (s,) + sh)
    _, _, sh = min(best.values())
    pi = tuple(m.start_time + s for m, s in zip(ms, sh))
    return DeviationSchedule(duty.trips, pi, tuple(max(s, 0) for s in sh),
                             tuple(max(-s, 0) for s in sh))


def deviation_total(schedule: ScheduleSolution) -> int:
    return sum(abs(v) for v in schedule.deviations.values())


def _apply(duties, instance, delta_max, memo):
    out = []
    for d in duties:
        key = (d.depot, d.trips)
        if key not in memo:
            memo[key] = minimize_duty_deviation(d, instance, delta_max)
        out.append(d.with_pi(memo[key].pi))
    return out


def postprocess_solution(schedule: ScheduleSolution, mode: str, instance: Instance,
                         delta_max: int, cap: int = DEFAULT_CAP, seed: int = 0,
                         backend=None) -> ScheduleSolution:
    """Re-time the schedule (and, except for per-duty, re-decompose its flow).

    ``optimized`` picks the decomposition of minimum total deviation among the
    feasible duties routable through each flow component, with the duty count
    and the summed duty cost of the component held fixed. ``worst`` maximizes
    the same quantity and ``random`` draws seeded random weights; both exist
    for comparison tables.
    """
    if mode not in MODES:
        raise ValueError(f"unknown post-processing mode {mode!r}")
    memo: dict = {}
    if mode == PER_DUTY or schedule.flow is None:
        if mode != PER_DUTY:
            log.warning("schedule has no source flow; falling back to per-duty post-processing")
        duties = _apply(schedule.duties, instance, delta_max, memo)
        return _finish(duties, schedule, instance, delta_max, mode)

    flow = schedule.flow
    comps = decompose_components(flow)
    attach_greedy(comps, list(schedule.duties))
    rng = np.random.default_rng(seed)
    duties = []
    for comp in comps:
        if not comp.trips:
            continue
        cands = enumerate_duties(comp, flow.model.network, instance, delta_max,
                                 _NoPoints(), cap)
        own = [du for du in comp.greedy]
        if cands.truncated:
            log.warning("candidate set truncated; per-duty post-processing for %d trips",
                        len(comp.trips))
            duties += _apply(own, instance, delta_max, memo)
            continue
        ok = [k for k, r in enumerate(cands.reports) if r.feasible]
        dev = []
        for k in ok:
            du = cands.duties[k]
            key = (du.depot, du.trips)
            if key not in memo:
                memo[key] = minimize_duty_deviation(du, instance, delta_max)
            dev.append(memo[key].total)
        cands.delta_p = [0] * len(cands.duties)
        for k, v in zip(ok, dev):
            cands.delta_p[k] = v
        if mode == OPTIMIZED:
            w = dev
        elif mode == WORST:
            w = [-v for v in dev]
        else:
            w = rng.random(len(ok)).tolist()
        trips = sorted(comp.trips)
        pos = {t: r for r, t in enumerate(trips)}
        covers = [[pos[t] for t in cands.duties[k].trips] for k in ok]
        cost_row = [duty_cost(cands.duties[k], instance) for k in ok]
        own_cost = sum(duty_cost(du, instance) for du in own)
        extra = [(cost_row, own_cost), ([1] * len(ok), len(own))]
        chosen, _ = solve_exact_cover(w, covers, len(trips), extra, backend=backend)
        if chosen is None:
            raise RefineError("the schedule's own duties should always be a valid selection")
        duties += _apply([cands.duties[ok[k]] for k in chosen], instance, delta_max, memo)
    return _finish(duties, schedule, instance, delta_max, mode)


class _NoPoints:
    """Stand-in time-point set; enumeration only needs feasibility here."""

    def __contains__(self, point) -> bool:
        return True


def _finish(duties, schedule, instance, delta_max, mode):
    out = make_schedule(duties, instance, delta_max, schedule.status, schedule.lower_bound,
                        f"{schedule.source}+{mode}", schedule.flow)
    if out.cost != schedule.cost or out.vehicles != schedule.vehicles:
        raise RefineError(f"post-processing changed cost {schedule.cost} -> {out.cost} or "
                          f"vehicles {schedule.vehicles} -> {out.vehicles}")
    return out


def average_deviation_seconds(schedule: ScheduleSolution) -> float:
    n = len(schedule.deviations)
    return 60.0 * deviation_total(schedule) / n if n else 0.0


def write_deviation_report(schedule: ScheduleSolution, instance: Instance, fh,
                           config: dict | None = None) -> None:
    if config is not None:
        fh.write("# " + json.dumps(config, sort_keys=True) + "\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(DEVIATION_COLUMNS)
    for m_id, s in schedule.deviations.items():
        t_s = instance.trip(m_id).start_time
        w.writerow([m_id, t_s, t_s + s, max(s, 0), max(-s, 0), 60 * abs(s)])
    w.writerow(["mean", "", "", "", "", f"{average_deviation_seconds(schedule):.6f}"])
