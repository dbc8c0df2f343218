"""Store size over personal data size for each profile, after loading and after a run."""

import argparse
import json
import os
import tempfile

from datacase.bench import PROFILES, builtin_workload, load_phase, run, space_factor


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--records", type=int, default=10_000)
    ap.add_argument("--txns", type=int, default=2_000)
    ap.add_argument("--workload", default="wcus")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="results/space_factor.json")
    args = ap.parse_args()

    rows = {}
    spec, ops = builtin_workload(args.workload, args.records, args.txns, args.seed)
    for name, profile in PROFILES.items():
        with tempfile.TemporaryDirectory() as tmp:
            store = load_phase(profile, args.records, args.seed, os.path.join(tmp, "s"))
            loaded = space_factor(store)
            after = run(store, profile, spec, ops, audit=False).space_factor
            store.close()
        rows[name] = {"after_load": loaded, f"after_{args.workload}": after}
        print(f"{name:<9} load {loaded:6.2f}x   after {args.workload} {after:6.2f}x", flush=True)
    print(f"SYS/Base after load: {rows['P_SYS']['after_load'] / rows['P_Base']['after_load']:.2f}")

    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    with open(args.out, "w") as fh:
        json.dump({"config": vars(args), "factors": rows}, fh, indent=1, sort_keys=True)


if __name__ == "__main__":
    main()
