from .backends import (
    FEASIBLE, INFEASIBLE, OPTIMAL, TIME_LIMIT, BranchAndBoundBackend, HighsBackend,
    MipProblem, MipResult, Tolerance, get_backend,
)
from .model import (
    FlowModel, FlowSolution, ModelError, ToleranceState, build_model, check_flow_solution,
    next_tolerance, solve_exact_cover, solve_model,
)

__all__ = [
    "FEASIBLE", "INFEASIBLE", "OPTIMAL", "TIME_LIMIT", "BranchAndBoundBackend",
    "HighsBackend", "MipProblem", "MipResult", "Tolerance", "get_backend", "FlowModel",
    "FlowSolution", "ModelError", "ToleranceState", "build_model", "check_flow_solution",
    "next_tolerance", "solve_exact_cover", "solve_model",
]
