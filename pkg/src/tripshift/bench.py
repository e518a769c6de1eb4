"""Benchmark grid over instances, shift limits, schemes and refinement strategies."""

from __future__ import annotations

import csv
import json
import logging
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .ddd import DddConfig, solve_ddd, solve_fd
from .instance import Instance, instance_from_dict, instance_to_dict

log = logging.getLogger("tripshift.bench")

RUN_COLUMNS = ("instance", "solver", "delta_max", "scheme", "strategy", "status", "obj",
               "iterations", "nodes", "arcs", "first_lb", "final_lb", "time_s", "error")
CELL_COLUMNS = ("solver", "delta_max", "scheme", "strategy", "runs", "failed", "Obj.", "Iter.",
                "Nodes", "1st LB", "Time")
TRAJECTORY_COLUMNS = ("iter", "elapsed_s", "lb", "ub")


@dataclass(frozen=True)
class Task:
    name: str
    instance: dict          # serialized instance, cheap to ship to workers
    solver: str             # "ddd" or "fd"
    config: DddConfig


def build_tasks(instances: dict[str, Instance], deltas, schemes, strategies, base: DddConfig,
                with_fd: bool = False) -> list[Task]:
    tasks = []
    for name in sorted(instances):
        data = instance_to_dict(instances[name])
        for d in deltas:
            if with_fd:
                tasks.append(Task(name, data, "fd", replace(base, delta_max=d)))
            for sc in schemes:
                for st in strategies:
                    tasks.append(Task(name, data, "ddd",
                                      replace(base, delta_max=d, scheme=sc, strategy=st)))
    return tasks


def run_task(task: Task) -> tuple[dict, list[dict]]:
    cfg = task.config
    row = {"instance": task.name, "solver": task.solver, "delta_max": cfg.delta_max,
           "scheme": cfg.scheme if task.solver == "ddd" else "",
           "strategy": cfg.strategy if task.solver == "ddd" else "",
           "status": "error", "obj": "", "iterations": "", "nodes": "", "arcs": "",
           "first_lb": "", "final_lb": "", "time_s": "", "error": ""}
    traj = []
    t0 = time.perf_counter()
    try:
        inst = instance_from_dict(task.instance)
        if task.solver == "fd":
            sol = solve_fd(inst, cfg.delta_max, time_limit=cfg.time_limit,
                           backend=cfg.make_backend())
            net = sol.flow.model.network if sol.flow is not None else None
            row.update(iterations=1, first_lb=_fmt(sol.lower_bound),
                       nodes=net.node_count if net else "", arcs=net.arc_count if net else "")
        else:
            elapsed = [0.0]

            def observe(ev):
                elapsed[0] = time.perf_counter() - t0
                r = ev.record
                traj.append({"iter": r.index, "elapsed_s": f"{elapsed[0]:.3f}",
                             "lb": _fmt(r.lb), "ub": "" if r.ub is None else r.ub})

            sol, recs = solve_ddd(inst, cfg, observer=observe)
            row.update(iterations=len(recs), first_lb=_fmt(recs[0].lb) if recs else "",
                       nodes=recs[-1].nodes if recs else "", arcs=recs[-1].arcs if recs else "")
        row.update(status=sol.status, obj="" if sol.cost is None else sol.cost,
                   final_lb=_fmt(sol.lower_bound))
    except Exception as exc:  # recorded per row; the grid keeps going
        row["error"] = f"{type(exc).__name__}: {exc}"
        log.error("task %s/%s failed:\n%s", task.name, task.solver, traceback.format_exc())
    row["time_s"] = f"{time.perf_counter() - t0:.3f}"
    return row, traj


def _fmt(v: float) -> str:
    return f"{v:.6f}"


def run_grid(tasks: list[Task], workers: int = 1) -> list[tuple[dict, list[dict]]]:
    if workers <= 1:
        out = [run_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(run_task, tasks))
    return sorted(out, key=lambda rt: _row_key(rt[0]))


def _row_key(row: dict):
    return (row["solver"], int(row["delta_max"]), row["scheme"], row["strategy"], row["instance"])


def cell_averages(rows: list[dict]) -> list[dict]:
    cells: dict[tuple, list[dict]] = {}
    for r in rows:
        cells.setdefault((r["solver"], int(r["delta_max"]), r["scheme"], r["strategy"]), []).append(r)
    out = []
    for key in sorted(cells):
        rs = cells[key]
        ok = [r for r in rs if not r["error"] and r["obj"] != ""]

        def avg(col):
            vals = [float(r[col]) for r in ok if r[col] != ""]
            return f"{np.mean(vals):.1f}" if vals else ""

        out.append({"solver": key[0], "delta_max": key[1], "scheme": key[2], "strategy": key[3],
                    "runs": len(rs), "failed": len(rs) - len(ok), "Obj.": avg("obj"),
                    "Iter.": avg("iterations"), "Nodes": avg("nodes"), "1st LB": avg("first_lb"),
                    "Time": avg("time_s")})
    return out


def write_csv(path: Path, columns, rows, config: dict | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if config is not None:
            fh.write("# " + json.dumps(config, sort_keys=True) + "\n")
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def write_reports(results, out_dir: Path, config: dict | None = None,
                  trajectories: bool = True) -> tuple[Path, Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = [r for r, _ in results]
    runs = out_dir / "runs.csv"
    cells = out_dir / "cells.csv"
    write_csv(runs, RUN_COLUMNS, rows, config)
    write_csv(cells, CELL_COLUMNS, cell_averages(rows), config)
    if trajectories:
        tdir = out_dir / "trajectories"
        tdir.mkdir(exist_ok=True)
        for row, traj in results:
            if row["solver"] != "ddd" or not traj:
                continue
            name = f"{row['instance']}_d{row['delta_max']}_{row['scheme']}_{row['strategy']}.csv"
            write_csv(tdir / name, TRAJECTORY_COLUMNS, traj)
    return runs, cells
