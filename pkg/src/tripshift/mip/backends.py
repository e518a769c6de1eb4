"""Exact integer-program backends.

A backend solves ``min c.x  s.t.  row_lo <= A x <= row_hi, col_lo <= x <= col_hi``
with a subset of the columns integral, honouring a relative or absolute
optimality tolerance, and reports both the primal value and a valid dual
bound.
"""

from __future__ import annotations

import heapq
import logging
import math
import time
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

log = logging.getLogger("tripshift.mip")

OPTIMAL = "optimal"
FEASIBLE = "feasible"
INFEASIBLE = "infeasible"
TIME_LIMIT = "time-limit"

# absolute gaps below this are treated as closed
GAP_FLOOR = 1e-6


@dataclass(frozen=True)
class Tolerance:
    mode: str
    value: float

    def __post_init__(self):
        if self.mode not in ("relative", "absolute"):
            raise ValueError(f"unknown tolerance mode {self.mode!r}")
        if self.value < 0 or (self.mode == "relative" and self.value > 1):
            raise ValueError(f"bad {self.mode} tolerance {self.value}")

    @classmethod
    def relative(cls, value: float) -> "Tolerance":
        return cls("relative", value)

    @classmethod
    def absolute(cls, value: float) -> "Tolerance":
        return cls("absolute", value)

    @classmethod
    def exact(cls) -> "Tolerance":
        return cls("absolute", 0.0)

    def allowed_gap(self, primal: float) -> float:
        if self.mode == "absolute":
            return max(self.value, GAP_FLOOR)
        return max(self.value * abs(primal), GAP_FLOOR)


@dataclass
class MipProblem:
    c: np.ndarray
    A: sparse.csr_matrix
    row_lo: np.ndarray
    row_hi: np.ndarray
    col_lo: np.ndarray
    col_hi: np.ndarray
    integrality: np.ndarray  # bool per column

    @property
    def num_cols(self) -> int:
        return len(self.c)


@dataclass
class MipResult:
    x: np.ndarray | None
    objective: float | None
    dual_bound: float
    status: str
    nodes: int = 0
    seconds: float = 0.0


def _trivial(problem: MipProblem) -> MipResult | None:
    if problem.num_cols:
        return None
    ok = np.all(problem.row_lo <= 0) and np.all(problem.row_hi >= 0)
    if ok:
        return MipResult(np.zeros(0), 0.0, 0.0, OPTIMAL)
    return MipResult(None, None, math.inf, INFEASIBLE)


class HighsBackend:
    """HiGHS branch-and-cut through ``highspy``."""

    name = "highs"

    def __init__(self, threads: int = 1, seed: int = 0):
        self.threads = threads
        self.seed = seed

    def solve(self, problem: MipProblem, tolerance: Tolerance,
              time_limit: float | None = None) -> MipResult:
        triv = _trivial(problem)
        if triv is not None:
            return triv
        import highspy

        t0 = time.perf_counter()
        h = highspy.Highs()
        h.setOptionValue("output_flag", False)
        h.setOptionValue("random_seed", self.seed)
        h.setOptionValue("threads", self.threads)
        if tolerance.mode == "relative":
            h.setOptionValue("mip_rel_gap", max(tolerance.value, 0.0))
            h.setOptionValue("mip_abs_gap", GAP_FLOOR)
        else:
            h.setOptionValue("mip_rel_gap", 0.0)
            h.setOptionValue("mip_abs_gap", max(tolerance.value, GAP_FLOOR))
        if time_limit is not None:
            h.setOptionValue("time_limit", float(max(time_limit, 0.01)))

        A = problem.A.tocsc()
        lp = highspy.HighsLp()
        lp.num_col_ = problem.num_cols
        lp.num_row_ = A.shape[0]
        lp.col_cost_ = np.asarray(problem.c, dtype=float)
        lp.col_lower_ = np.asarray(problem.col_lo, dtype=float)
        lp.col_upper_ = np.asarray(problem.col_hi, dtype=float)
        lp.row_lower_ = np.asarray(problem.row_lo, dtype=float)
        lp.row_upper_ = np.asarray(problem.row_hi, dtype=float)
        lp.a_matrix_.format_ = highspy.MatrixFormat.kColwise
        lp.a_matrix_.start_ = A.indptr.astype(np.int32)
        lp.a_matrix_.index_ = A.indices.astype(np.int32)
        lp.a_matrix_.value_ = A.data.astype(float)
        lp.integrality_ = [highspy.HighsVarType.kInteger if i else highspy.HighsVarType.kContinuous
                           for i in problem.integrality]
        h.passModel(lp)
        h.run()

        status = h.getModelStatus()
        info = h.getInfo()
        seconds = time.perf_counter() - t0
        has_sol = info.primal_solution_status == 2  # kSolutionStatusFeasible
        x = np.array(h.getSolution().col_value) if has_sol else None
        obj = info.objective_function_value if has_sol else None
        bound = info.mip_dual_bound if problem.integrality.any() else obj
        if status == highspy.HighsModelStatus.kOptimal:
            out = OPTIMAL if obj - bound <= GAP_FLOOR * (1 + abs(obj)) else FEASIBLE
        elif status == highspy.HighsModelStatus.kInfeasible:
            out, bound = INFEASIBLE, math.inf
        elif status == highspy.HighsModelStatus.kTimeLimit:
            out = TIME_LIMIT
        else:
            raise RuntimeError(f"HiGHS returned {h.modelStatusToString(status)}")
        if bound is None or not math.isfinite(bound):
            bound = -math.inf if out != INFEASIBLE else math.inf
        log.debug("solve backend=highs status=%s primal=%s bound=%.3f nodes=%s sec=%.3f",
                  out, obj, bound, info.mip_node_count, seconds)
        return MipResult(x, obj, bound, out, int(max(info.mip_node_count, 0)), seconds)


class BranchAndBoundBackend:
    """Best-first branch and bound over LP relaxations solved by ``linprog``.

    Meant for small models and for cross-checking other backends.
    """

    name = "bnb"

    def __init__(self, int_tol: float = 1e-6, node_limit: int = 100_000):
        self.int_tol = int_tol
        self.node_limit = node_limit

    def _lp(self, problem, eq, ub, lo, hi):
        A_eq, b_eq, A_ub, b_ub = eq + ub
        res = linprog(problem.c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                      bounds=list(zip(lo, hi)), method="highs")
        if res.status == 2:
            return None, math.inf
        if res.status != 0:
            raise RuntimeError(f"LP relaxation failed: {res.message}")
        return res.x, res.fun

    def solve(self, problem: MipProblem, tolerance: Tolerance,
              time_limit: float | None = None) -> MipResult:
        triv = _trivial(problem)
        if triv is not None:
            return triv
        t0 = time.perf_counter()
        A = problem.A.tocsr()
        is_eq = problem.row_lo == problem.row_hi
        eq = (A[is_eq], problem.row_lo[is_eq]) if is_eq.any() else (None, None)
        fin_hi = ~is_eq & np.isfinite(problem.row_hi)
        fin_lo = ~is_eq & np.isfinite(problem.row_lo)
        if fin_hi.any() or fin_lo.any():
            A_ub = sparse.vstack([A[fin_hi], -A[fin_lo]]).tocsr()
            b_ub = np.concatenate([problem.row_hi[fin_hi], -problem.row_lo[fin_lo]])
            ub = (A_ub, b_ub)
        else:
            ub = (None, None)
        hi_inf = np.where(np.isfinite(problem.col_hi), problem.col_hi, None)

        best_x, best_obj = None, math.inf
        counter = 0
        x, val = self._lp(problem, eq, ub, problem.col_lo.astype(float), hi_inf)
        heap = [] if x is None else [(val, counter, problem.col_lo.astype(float), hi_inf, x)]
        nodes = 0
        status = OPTIMAL
        while heap:
            if best_x is not None and heap[0][0] >= best_obj - tolerance.allowed_gap(best_obj):
                break
            if nodes >= self.node_limit or (time_limit is not None
                                            and time.perf_counter() - t0 > time_limit):
                status = TIME_LIMIT
                break
            val, _, lo, hi, x = heapq.heappop(heap)
            nodes += 1
            frac = np.abs(x - np.rint(x))
            frac[~problem.integrality] = 0.0
            j = int(np.argmax(frac))
            if frac[j] <= self.int_tol:
                if val < best_obj:
                    best_obj, best_x = val, np.where(problem.integrality, np.rint(x), x)
                continue
            for side in (0, 1):
                lo2, hi2 = lo.copy(), hi.copy()
                if side == 0:
                    hi2[j] = math.floor(x[j])
                else:
                    lo2[j] = math.ceil(x[j])
                x2, v2 = self._lp(problem, eq, ub, lo2, hi2)
                if x2 is not None and v2 < best_obj:
                    counter += 1
                    heapq.heappush(heap, (v2, counter, lo2, hi2, x2))
            log.debug("bnb node=%d open=%d lb=%.3f ub=%.3f", nodes, len(heap),
                      heap[0][0] if heap else best_obj, best_obj)

        bound = min([heap[0][0]] if heap else [], default=best_obj)
        bound = min(bound, best_obj)
        if best_x is None:
            if status == TIME_LIMIT:
                return MipResult(None, None, bound, TIME_LIMIT, nodes, time.perf_counter() - t0)
            return MipResult(None, None, math.inf, INFEASIBLE, nodes, time.perf_counter() - t0)
        if status == OPTIMAL and best_obj - bound > GAP_FLOOR * (1 + abs(best_obj)):
            status = FEASIBLE
        return MipResult(best_x, float(problem.c @ best_x), bound, status, nodes,
                         time.perf_counter() - t0)


BACKENDS = {"highs": HighsBackend, "bnb": BranchAndBoundBackend}


def get_backend(name: str = "highs", **kwargs):
    try:
        return BACKENDS[name](**kwargs)
    except KeyError:
        raise ValueError(f"unknown backend {name!r}; choose from {sorted(BACKENDS)}") from None
