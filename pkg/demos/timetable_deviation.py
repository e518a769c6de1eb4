"""How much does the timetable move, and how much does that save?

Solves a set of instances at shift limits 0..3, then re-times the optimal
schedule with each post-processing mode. Cost stays fixed; only departure
deviations change.

Run: python demos/timetable_deviation.py [--trips 60] [--count 3]
"""

import argparse

from tripshift import GenParams, generate_instance, solve_fd
from tripshift.postprocess import MODES, average_deviation_seconds, postprocess_solution


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--trips", type=int, default=60)
    ap.add_argument("--count", type=int, default=3)
    args = ap.parse_args()

    for seed in range(args.count):
        inst = generate_instance(GenParams(args.trips, seed=seed))
        costs = [solve_fd(inst, d).cost for d in range(4)]
        saving = 100.0 * (costs[0] - costs[3]) / costs[0]
        print(f"seed {seed}: cost by shift limit {costs} -> {saving:.2f}% saved at 3 minutes")
        raw = solve_fd(inst, 3)
        line = [f"raw {average_deviation_seconds(raw):6.1f}s"]
        for mode in MODES:
            sol = postprocess_solution(raw, mode, inst, 3, seed=seed)
            assert sol.cost == raw.cost
            line.append(f"{mode} {average_deviation_seconds(sol):6.1f}s")
        print("  mean deviation per trip:", ", ".join(line))


if __name__ == "__main__":
    main()
