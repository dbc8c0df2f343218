"""Completion time of every profile on every built-in workload (median of reps)."""

import argparse
import json
import os

from datacase.bench import BUILTIN_MIXES, PROFILES, builtin_workload, measure


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--records", type=int, default=10_000)
    ap.add_argument("--txns", type=int, default=2_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--reps", type=int, default=3)
    ap.add_argument("--out", default="results/ordering.json")
    args = ap.parse_args()

    table = {}
    for w in BUILTIN_MIXES:
        spec, ops = builtin_workload(w, args.records, args.txns, args.seed)
        for name, profile in PROFILES.items():
            median, runs = measure(profile, spec, ops, reps=args.reps)
            table.setdefault(w, {})[name] = median
            print(f"{w:<8} {name:<9} {median:8.3f}s", flush=True)

    print()
    for w, row in table.items():
        ok = row["P_Base"] <= row["P_GBench"] <= row["P_SYS"]
        print(f"{w:<8} Base <= GBench <= SYS: {ok}")
    overhead = {w: table[w]["P_SYS"] / table[w]["P_Base"] for w in table}
    print("SYS/Base overhead: " + ", ".join(f"{w} {r:.2f}x" for w, r in overhead.items()))

    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    with open(args.out, "w") as fh:
        json.dump({"config": vars(args), "median_seconds": table, "overhead": overhead},
                  fh, indent=1, sort_keys=True)


if __name__ == "__main__":
    main()
