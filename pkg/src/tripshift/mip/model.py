"""Integer multicommodity-flow model over a layered network."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from ..timenet import LayeredNetwork
from .backends import (
    FEASIBLE, INFEASIBLE, OPTIMAL, TIME_LIMIT, MipProblem, Tolerance, get_backend,
)

log = logging.getLogger("tripshift.mip")


class ModelError(RuntimeError):
    pass


@dataclass
class FlowModel:
    network: LayeredNetwork
    problem: MipProblem
    offsets: dict[int, int]       # depot -> first column of its layer
    sizes: dict[int, int]         # depot -> number of columns in its layer
    num_conservation_rows: int
    trip_rows: dict[int, int]     # trip id -> cover row

    def column(self, depot: int, arc_index: int) -> int:
        return self.offsets[depot] + arc_index


@dataclass
class FlowSolution:
    model: FlowModel
    flows: np.ndarray             # integer value per column
    objective: int | None
    dual_bound: float
    status: str
    seconds: float = 0.0

    def layer_flow(self, depot: int) -> dict[int, int]:
        """Arc index -> positive flow for one layer."""
        o, n = self.model.offsets[depot], self.model.sizes[depot]
        seg = self.flows[o:o + n]
        nz = np.flatnonzero(seg)
        return {int(i): int(seg[i]) for i in nz}

    @property
    def feasible(self) -> bool:
        return self.status in (OPTIMAL, FEASIBLE) or (
            self.status == TIME_LIMIT and self.objective is not None)


def build_model(network: LayeredNetwork) -> FlowModel:
    """Flow conservation at every station node of every layer plus one cover row per trip."""
    node_idx = network.station_node_index()
    n_nodes = len(node_idx)
    n_station = len(network.station_arcs)

    for trip, arcs in network.trip_arcs.items():
        if not arcs:
            raise ModelError(f"trip {trip} has no trip arc in any layer")

    # station-arc incidence, shared by all layers
    tail_s = np.array([node_idx[a.tail] for a in network.station_arcs], dtype=np.int64)
    head_s = np.array([node_idx[a.head] for a in network.station_arcs], dtype=np.int64)
    cost_s = np.array([a.cost for a in network.station_arcs], dtype=float)
    trip_rows = {m: i for i, m in enumerate(sorted(network.trip_arcs))}
    n_cons = n_nodes * len(network.depots)

    rows, cols, vals, costs = [], [], [], []
    offsets, sizes = {}, {}
    col = 0
    trip_arc_rows = []
    trip_arc_cols = []
    for li, d in enumerate(network.depots):
        base = li * n_nodes
        offsets[d] = col
        depot_arcs = network.depot_arcs[d]
        sizes[d] = n_station + len(depot_arcs)
        idx = np.arange(col, col + n_station)
        rows += [base + tail_s, base + head_s]
        cols += [idx, idx]
        vals += [np.full(n_station, -1.0), np.full(n_station, 1.0)]
        costs.append(cost_s)
        for m, arc_ids in network.trip_arcs.items():
            trip_arc_rows.extend([n_cons + trip_rows[m]] * len(arc_ids))
            trip_arc_cols.extend(col + i for i in arc_ids)
        col += n_station
        for a in depot_arcs:
            if a.kind == "pull_out":
                rows.append(np.array([base + node_idx[a.head]]))
                vals.append(np.array([1.0]))
            else:
                rows.append(np.array([base + node_idx[a.tail]]))
                vals.append(np.array([-1.0]))
            cols.append(np.array([col]))
            costs.append(np.array([float(a.cost)]))
            col += 1

    rows.append(np.array(trip_arc_rows, dtype=np.int64))
    cols.append(np.array(trip_arc_cols, dtype=np.int64))
    vals.append(np.ones(len(trip_arc_rows)))
    n_rows = n_cons + len(trip_rows)
    A = sparse.csr_matrix(
        (np.concatenate(vals) if vals else np.zeros(0),
         (np.concatenate(rows) if rows else np.zeros(0, int),
          np.concatenate(cols) if cols else np.zeros(0, int))),
        shape=(n_rows, col),
    )
    rhs = np.concatenate([np.zeros(n_cons), np.ones(len(trip_rows))])
    n_trips = max(1, len(trip_rows))
    problem = MipProblem(
        c=np.concatenate(costs) if costs else np.zeros(0),
        A=A,
        row_lo=rhs,
        row_hi=rhs.copy(),
        col_lo=np.zeros(col),
        col_hi=np.full(col, float(n_trips)),
        integrality=np.ones(col, dtype=bool),
    )
    return FlowModel(network, problem, offsets, sizes, n_cons, trip_rows)


def solve_model(model: FlowModel, tolerance: Tolerance | None = None,
                time_limit: float | None = None, backend=None) -> FlowSolution:
    if tolerance is None:
        tolerance = Tolerance.exact()
    if backend is None or isinstance(backend, str):
        backend = get_backend(backend or "highs")
    res = backend.solve(model.problem, tolerance, time_limit)
    if res.status == INFEASIBLE:
        raise ModelError(
            f"flow model infeasible ({model.problem.num_cols} columns, "
            f"{len(model.trip_rows)} trips); the network does not cover every trip"
        )
    if res.x is None:
        flows = np.zeros(model.problem.num_cols, dtype=np.int64)
        objective = None
    else:
        flows = np.rint(res.x).astype(np.int64)
        objective = int(round(float(model.problem.c @ flows)))
    log.info("flow-solve status=%s primal=%s dual=%.3f cols=%d sec=%.3f",
             res.status, objective, res.dual_bound, model.problem.num_cols, res.seconds)
    return FlowSolution(model, flows, objective, float(res.dual_bound), res.status, res.seconds)


def check_flow_solution(solution: FlowSolution) -> None:
    """Assert conservation and cover rows hold exactly."""
    A = solution.model.problem.A
    lhs = A @ solution.flows
    bad = np.flatnonzero(np.abs(lhs - solution.model.problem.row_lo) > 1e-9)
    if len(bad):
        raise ModelError(f"flow solution violates rows {bad[:10].tolist()}")
    if (solution.flows < 0).any():
        raise ModelError("negative flow")


# ---------------------------------------------------------------------------
# adaptive tolerance


@dataclass
class ToleranceState:
    initial: Tolerance = field(default_factory=lambda: Tolerance.relative(0.01))
    divisor: float = 10.0
    history: list[tuple[float, float | None]] = field(default_factory=list)

    def record(self, lb: float, ub: float | None) -> None:
        self.history.append((lb, ub))


def next_tolerance(state: ToleranceState, has_feasible_ub: bool) -> Tolerance:
    """Relative 1% until a feasible solution exists, then a tenth of the current gap."""
    if not has_feasible_ub or not state.history or state.history[-1][1] is None:
        return state.initial
    lb, ub = state.history[-1]
    if ub < lb:
        raise ValueError(f"upper bound {ub} below lower bound {lb}")
    return Tolerance.absolute(max((ub - lb) / state.divisor, 0.0))


# ---------------------------------------------------------------------------
# small binary covering programs


def solve_exact_cover(weights, covers, num_items: int, extra_rows=(), backend=None):
    """Minimize ``sum w_p z_p`` with every item covered exactly once.

    ``covers[p]`` lists the items of candidate ``p``. ``extra_rows`` holds
    ``(coefficients, lo, hi)`` side rows over the candidates (``(coefficients,
    rhs)`` for equalities). Returns the selected candidate indices and the
    objective, or ``(None, None)`` when no exact cover exists.
    """
    n = len(weights)
    if n == 0:
        return ([], 0.0) if num_items == 0 else (None, None)
    rows, cols = [], []
    for p, items in enumerate(covers):
        for i in items:
            rows.append(i)
            cols.append(p)
    A = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(num_items, n))
    lo = np.ones(num_items)
    hi = np.ones(num_items)
    if extra_rows:
        A = sparse.vstack([A] + [sparse.csr_matrix(np.asarray(r[0], dtype=float).reshape(1, -1))
                                 for r in extra_rows]).tocsr()
        lo = np.concatenate([lo, [float(r[1]) for r in extra_rows]])
        hi = np.concatenate([hi, [float(r[-1]) for r in extra_rows]])
    problem = MipProblem(np.asarray(weights, dtype=float), A, lo, hi,
                         np.zeros(n), np.ones(n), np.ones(n, dtype=bool))
    if backend is None or isinstance(backend, str):
        backend = get_backend(backend or "highs")
    res = backend.solve(problem, Tolerance.exact())
    if res.x is None:
        return None, None
    z = np.rint(res.x).astype(int)
    return np.flatnonzero(z).tolist(), float(np.asarray(weights, dtype=float) @ z)
