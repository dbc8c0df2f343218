"""wcus completion time as the number of loaded records grows."""

import argparse
import json
import os

from datacase.bench import PROFILES, builtin_workload, measure


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--records", type=int, nargs="+", default=[10_000, 20_000, 30_000])
    ap.add_argument("--txns", type=int, default=2_000)
    ap.add_argument("--workload", default="wcus")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--reps", type=int, default=1)
    ap.add_argument("--out", default="results/scalability.json")
    args = ap.parse_args()

    curves = {name: [] for name in PROFILES}
    for n in args.records:
        spec, ops = builtin_workload(args.workload, n, args.txns, args.seed)
        for name, profile in PROFILES.items():
            median, _ = measure(profile, spec, ops, reps=args.reps)
            curves[name].append(median)
            print(f"{n:>7} {name:<9} {median:8.3f}s", flush=True)
    for name, c in curves.items():
        print(f"{name:<9} non-decreasing: {all(a <= b for a, b in zip(c, c[1:]))}")

    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    with open(args.out, "w") as fh:
        json.dump({"config": vars(args), "seconds": curves}, fh, indent=1, sort_keys=True)


if __name__ == "__main__":
    main()
