"""Command line: ``tripshift gen | solve | bench``.

Exit codes: 0 optimal, 2 stopped on a gap or time limit, 1 usage or
validation error. Settings resolve as flag > ``TRIPSHIFT_*`` environment
variable > ``--config`` JSON file > built-in default.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .bench import build_tasks, run_grid, write_reports
from .ddd import DddConfig, solve_ddd, solve_fd, write_run_log
from .instance import (
    GenParams, InstanceError, generate_instance, instance_summary, load_instance, save_instance,
)
from .mip import OPTIMAL, Tolerance
from .postprocess import (
    MODES as PP_MODES, average_deviation_seconds, postprocess_solution, write_deviation_report,
)
from .refine import STRATEGIES
from .timenet import SCHEMES

log = logging.getLogger("tripshift")

EXIT_OK, EXIT_USAGE, EXIT_LIMIT = 0, 1, 2
ENV_PREFIX = "TRIPSHIFT_"

# setting -> (type, default)
SETTINGS = {
    "delta_max": (int, 3),
    "scheme": (str, "long"),
    "refine": (str, "fewer-iterations"),
    "solver": (str, "ddd"),
    "postprocess": (str, None),
    "time_limit": (float, None),
    "epsilon": (float, 1.0),
    "threads": (int, 1),
    "backend": (str, "highs"),
    "workers": (int, 1),
    "seed": (int, 1),
    "count": (int, 1),
    "trips": (int, None),
    "out": (str, "."),
}


# settings that take comma-separated lists in bench
BENCH_LISTS = ("delta_max", "scheme", "refine")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _list(kind):
    def parse(text):
        return [kind(v) for v in str(text).split(",") if v != ""]
    return parse


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tripshift", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("--config", help="JSON file with default settings")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate seeded random instances")
    g.add_argument("--trips", type=int)
    g.add_argument("--count", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--short-fraction", type=float, default=0.4)
    g.add_argument("--locations", type=int, help="number of stations (default trips/10)")
    g.add_argument("--depots", type=int, default=4)
    g.add_argument("--out")

    s = sub.add_parser("solve", help="solve one instance file")
    s.add_argument("instance")
    which = s.add_mutually_exclusive_group()
    which.add_argument("--fd", dest="solver", action="store_const", const="fd")
    which.add_argument("--ddd", dest="solver", action="store_const", const="ddd")
    _solver_flags(s)
    s.add_argument("--postprocess", choices=PP_MODES)
    s.add_argument("--dump-network", action="store_true",
                   help="write the last network's arcs as JSON lines")

    b = sub.add_parser("bench", help="run a benchmark grid")
    b.add_argument("instances", nargs="*", help="instance files (or generate with --trips)")
    b.add_argument("--trips", type=int)
    b.add_argument("--count", type=int)
    b.add_argument("--seed", type=int)
    b.add_argument("--locations", type=int)
    b.add_argument("--delta-max", dest="delta_max", type=_list(int))
    b.add_argument("--scheme", type=_list(str))
    b.add_argument("--refine", type=_list(str))
    b.add_argument("--fd", action="store_true", help="add a full-discretization baseline row")
    b.add_argument("--time-limit", dest="time_limit", type=float)
    b.add_argument("--epsilon", type=float)
    b.add_argument("--threads", type=int)
    b.add_argument("--backend")
    b.add_argument("--workers", type=int)
    b.add_argument("--no-trajectories", action="store_true")
    b.add_argument("--out")
    return p


def _solver_flags(s):
    s.add_argument("--delta-max", dest="delta_max", type=int)
    s.add_argument("--scheme", choices=SCHEMES)
    s.add_argument("--refine", choices=STRATEGIES)
    s.add_argument("--time-limit", dest="time_limit", type=float)
    s.add_argument("--epsilon", type=float)
    s.add_argument("--threads", type=int)
    s.add_argument("--backend")
    s.add_argument("--out")


def resolve(args: argparse.Namespace, env=None) -> dict:
    """Effective settings after applying flag > env > config file > default."""
    env = os.environ if env is None else env
    cfg = {}
    if getattr(args, "config", None):
        try:
            cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        unknown = sorted(set(cfg) - set(SETTINGS))
        if unknown:
            raise UsageError(f"unknown config keys {unknown}")
    out = {}
    for key, (kind, default) in SETTINGS.items():
        val = getattr(args, key, None)
        if val is None and ENV_PREFIX + key.upper() in env:
            raw = env[ENV_PREFIX + key.upper()]
            multi = args.command == "bench" and key in BENCH_LISTS
            try:
                val = _list(kind)(raw) if multi else kind(raw)
            except ValueError:
                raise UsageError(f"bad value {raw!r} for {ENV_PREFIX + key.upper()}") from None
        if val is None:
            val = cfg.get(key, default)
        out[key] = val
    return out


def _ddd_config(st: dict, delta, scheme, strategy) -> DddConfig:
    cfg = DddConfig(delta_max=delta, scheme=scheme, strategy=strategy, epsilon=st["epsilon"],
                    time_limit=st["time_limit"], backend=st["backend"], threads=st["threads"])
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return cfg


def cmd_gen(args, st) -> int:
    if st["trips"] is None or st["trips"] < 1:
        raise UsageError("--trips must be a positive count")
    if st["count"] < 1:
        raise UsageError("--count must be >= 1")
    out = Path(st["out"])
    out.mkdir(parents=True, exist_ok=True)
    print(f"{'file':<24} {'trips':>5} {'short':>5} {'long':>5} {'stations':>8} {'depots':>6}")
    for k in range(st["count"]):
        params = GenParams(num_trips=st["trips"], short_fraction=args.short_fraction,
                           num_locations=args.locations, num_depots=args.depots,
                           seed=st["seed"] + k)
        try:
            params.validate()
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        inst = generate_instance(params)
        path = save_instance(inst, out / f"{st['trips']}M_seed{params.seed}.json")
        s = instance_summary(inst)
        print(f"{path.name:<24} {s['trips']:>5} {s['short']:>5} {s['long']:>5} "
              f"{s['stations']:>8} {s['depots']:>6}")
    return EXIT_OK


def cmd_solve(args, st) -> int:
    if st["solver"] == "fd" and (args.scheme or args.refine):
        raise UsageError("--scheme and --refine apply to --ddd only")
    if st["postprocess"] and st["postprocess"] not in PP_MODES:
        raise UsageError(f"--postprocess must be one of {PP_MODES}")
    inst = load_instance(args.instance)
    cfg = _ddd_config(st, st["delta_max"], st["scheme"], st["refine"])
    try:
        inst.check_shift_fits(cfg.delta_max)
    except InstanceError as exc:
        raise UsageError(str(exc)) from None
    out = Path(st["out"])
    out.mkdir(parents=True, exist_ok=True)
    header = {"command": "solve", "instance": Path(args.instance).name, **st}
    header.pop("out", None)

    records = []
    last_net = [None]
    if st["solver"] == "fd":
        sol = solve_fd(inst, cfg.delta_max, Tolerance.exact(), cfg.time_limit, cfg.make_backend())
        last_net[0] = sol.flow.model.network if sol.flow is not None else None
    else:
        reports = open(out / "refinement.jsonl", "w", encoding="utf-8")

        def observe(ev):
            reports.write(json.dumps({"iter": ev.record.index, **ev.result.report,
                                      "points_added": ev.record.points_added},
                                     sort_keys=True) + "\n")
            last_net[0] = ev.network

        try:
            sol, records = solve_ddd(inst, cfg, observer=observe)
        finally:
            reports.close()
        with open(out / "runlog.csv", "w", newline="", encoding="utf-8") as fh:
            write_run_log(records, fh, header)

    if st["postprocess"] and sol.cost is not None:
        sol = postprocess_solution(sol, st["postprocess"], inst, cfg.delta_max)
        with open(out / "deviations.csv", "w", newline="", encoding="utf-8") as fh:
            write_deviation_report(sol, inst, fh, header)
    if args.dump_network and last_net[0] is not None:
        with open(out / "network.jsonl", "w", encoding="utf-8") as fh:
            for line in last_net[0].dump_jsonl():
                fh.write(line + "\n")
    doc = {"config": header, **sol.to_dict(), "iterations": len(records)}
    (out / "schedule.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n",
                                       encoding="utf-8")
    lb = sol.lower_bound
    print(f"status={sol.status} cost={sol.cost} lb={lb:.3f} vehicles={sol.vehicles} "
          f"deadhead_min={sol.deadhead_minutes} iterations={len(records) or 1}"
          + (f" avg_dev_s={average_deviation_seconds(sol):.2f}" if sol.cost is not None else ""))
    return EXIT_OK if sol.status == OPTIMAL else EXIT_LIMIT


def cmd_bench(args, st) -> int:
    instances = {}
    for path in args.instances:
        instances[Path(path).stem] = load_instance(path)
    if st["trips"] is not None:
        for k in range(st["count"]):
            params = GenParams(num_trips=st["trips"], num_locations=args.locations,
                               seed=st["seed"] + k)
            try:
                params.validate()
            except ValueError as exc:
                raise UsageError(str(exc)) from None
            instances[f"{st['trips']}M_seed{params.seed}"] = generate_instance(params)
    if not instances:
        raise UsageError("bench needs instance files or --trips")
    deltas, schemes, strategies = (
        st[k] if isinstance(st[k], list) else [st[k]] for k in BENCH_LISTS)
    for s in schemes:
        if s not in SCHEMES:
            raise UsageError(f"unknown scheme {s!r}")
    for s in strategies:
        if s not in STRATEGIES:
            raise UsageError(f"unknown refinement strategy {s!r}")
    base = _ddd_config(st, 0, schemes[0], strategies[0])
    tasks = build_tasks(instances, deltas, schemes, strategies, base, with_fd=args.fd)
    results = run_grid(tasks, st["workers"])
    header = {"command": "bench", **{k: v for k, v in st.items() if k != "out"}}
    runs, cells = write_reports(results, Path(st["out"]), header,
                                trajectories=not args.no_trajectories)
    failed = sum(1 for r, _ in results if r["error"])
    print(f"{len(results)} runs ({failed} failed) -> {runs} and {cells}")
    return EXIT_OK if not failed and all(r["status"] == OPTIMAL for r, _ in results) else EXIT_LIMIT


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s %(message)s")
    try:
        st = resolve(args)
        return {"gen": cmd_gen, "solve": cmd_solve, "bench": cmd_bench}[args.command](args, st)
    except UsageError as exc:
        print(f"tripshift: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InstanceError, ValueError, OSError) as exc:
        print(f"tripshift: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
