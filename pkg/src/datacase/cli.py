"""Command-line entry point: ``datacase <command> ...``.

Data commands act on the store named by ``$DATACASE_STORE`` or ``--store``
(the environment wins) and hold an exclusive lock on it while they run.
Machine output is JSON lines on stdout; engine errors exit 1 with one JSON
line on stderr; usage errors exit 2.
"""

from __future__ import annotations

import argparse
import fcntl
import json
import os
import sys
from contextlib import contextmanager

from . import bench, checker
from .errors import DataCaseError, StoreLocked
from .model import (COMPLIANCE_ERASE, Category, DataUnit, Entity, EntityKind, ErasureMode,
                    Policy, format_time, parse_time)
from .store import ACCESS_CONTROL, LOGGING, Store, StoreConfig

LOCK_NAME = "store.lock"
MAX_EXIT = 125


def _time(text: str) -> int:
    try:
        return parse_time(text)
    except (ValueError, DataCaseError) as exc:
        raise argparse.ArgumentTypeError(f"not an ISO-8601 time: {text!r}") from exc


def _entity(text: str) -> Entity:
    try:
        return Entity.parse(text)
    except DataCaseError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _policy(text: str) -> Policy:
    """``purpose,kind:id,begin,end`` with ISO-8601 bounds."""
    parts = text.split(",")
    if len(parts) != 4:
        raise argparse.ArgumentTypeError(f"policy must be purpose,entity,begin,end: {text!r}")
    purpose, who, begin, end = parts
    try:
        return Policy(purpose, _entity(who), _time(begin), _time(end))
    except DataCaseError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _emit(doc) -> None:
    sys.stdout.write(json.dumps(doc, sort_keys=True) + "\n")


def _store_path(args) -> str:
    path = os.environ.get("DATACASE_STORE") or args.store
    if not path:
        raise SystemExit("datacase: no store given (use --store or DATACASE_STORE)")
    return path


@contextmanager
def _locked(path: str):
    fd = os.open(os.path.join(path, LOCK_NAME), os.O_RDWR | os.O_CREAT, 0o644)
    try:
        try:
            fcntl.flock(fd, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError:
            raise StoreLocked(f"{path} is in use by another process") from None
        yield
    finally:
        os.close(fd)


@contextmanager
def _open(args):
    path = _store_path(args)
    if not os.path.exists(os.path.join(path, "manifest.json")):
        raise DataCaseError(f"{path} is not a store (run `datacase init` first)")
    with _locked(path):
        store = Store.open(path)
        try:
            yield store
        finally:
            store.close()


# -- commands ------------------------------------------------------------------

def cmd_init(args) -> int:
    path = _store_path(args)
    if args.profile:
        config = bench.get_profile(args.profile).store_config(args.seed)
    else:
        config = StoreConfig(access_control=args.access_control, logging=args.logging,
                             encrypted_at_rest=args.encrypted, seed=args.seed)
    Store.create(path, config).close()
    _emit({"store": path, "access_control": config.access_control, "logging": config.logging})
    return 0


def cmd_put(args) -> int:
    value = bytes.fromhex(args.value_hex) if args.value_hex is not None else args.value.encode()
    policies = set(args.policy)
    if args.erase_by is not None:
        policies.add(Policy(COMPLIANCE_ERASE, args.entity, args.time, args.erase_by))
    unit = DataUnit(args.unit_id, {Entity(s, EntityKind.DATA_SUBJECT) for s in args.subject},
                    set(args.origin), ((value, args.time),), policies, Category(args.category))
    with _open(args) as store:
        store.put(unit, args.entity, args.purpose, args.time, args.regulation_required)
    _emit({"unit_id": unit.id, "policies": len(policies), "time": format_time(args.time)})
    return 0


def cmd_get(args) -> int:
    with _open(args) as store:
        value = store.get(args.unit_id, args.entity, args.purpose, args.time)
    doc = {"unit_id": args.unit_id, "value": None, "encoding": None}
    if value is not None:
        try:
            doc.update(value=value.decode("utf-8"), encoding="utf-8")
        except UnicodeDecodeError:
            doc.update(value=value.hex(), encoding="hex")
    _emit(doc)
    return 0


def cmd_erase(args) -> int:
    with _open(args) as store:
        rep = store.erase(args.unit_id, ErasureMode(args.mode), args.entity, args.time,
                          purpose=args.purpose)
    _emit({"unit_id": rep.unit_id, "mode": rep.mode.value, "status": rep.status.value,
           "erased_units": list(rep.erased_units), "bytes_destroyed": rep.bytes_destroyed,
           "ledger_redacted": rep.ledger_redacted})
    return 0


def cmd_restore(args) -> int:
    with _open(args) as store:
        status = store.restore_access(args.unit_id, args.time, args.entity)
    _emit({"unit_id": args.unit_id, "status": status.value})
    return 0


def cmd_compact(args) -> int:
    with _open(args) as store:
        reclaimed = store.compact(args.level)
    _emit({"level": args.level, "bytes_reclaimed": reclaimed})
    return 0


def cmd_audit(args) -> int:
    with _open(args) as store:
        found = checker.audit(store, args.now, include_metadata=args.include_metadata)
    for line in checker.report_lines(found, args.timestamps):
        sys.stdout.write(line + "\n")
    sys.stdout.write(f"{len(found)} violations\n")
    return min(len({v.kind for v in found}), MAX_EXIT)


def cmd_characterize(args) -> int:
    mark = {True: "yes", False: "no"}
    deviates = 0
    print(f"{'mode':<26}{'IR':<5}{'II':<5}Inv")
    for row in checker.characterize_all():
        print(f"{row.mode.value:<26}{mark[row.IR]:<5}{mark[row.II]:<5}{mark[row.Inv]}")
        if (row.IR, row.II, row.Inv) != checker.EXPECTED_TABLE[row.mode]:
            deviates += 1
    return 1 if deviates else 0


def cmd_bench(args) -> int:
    profile = (bench.load_profile_config(args.profile_config) if args.profile_config
               else bench.get_profile(args.profile))
    if args.config:
        spec, ops, named = bench.load_workload_config(args.config)
        if named and not args.profile_config and args.profile == "P_Base":
            profile = bench.get_profile(named)
    else:
        spec, ops = bench.builtin_workload(args.workload, args.records, args.txns, args.seed)
    median, runs = bench.measure(profile, spec, ops, reps=args.reps, warmup=not args.no_warmup,
                                 workdir=args.workdir, audit=True)
    chosen = sorted(runs, key=lambda m: m.completion_time)[len(runs) // 2]
    doc = chosen.to_dict(wall_clock=True)
    doc["repetitions"] = [m.completion_time for m in runs]
    os.makedirs(args.results, exist_ok=True)
    out = os.path.join(args.results, f"{profile.name}-{spec.name}.json")
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
    _, table = bench.report([chosen])
    sys.stdout.write(table)
    sys.stdout.write(f"median {median:.3f}s over {len(runs)} runs -> {out}\n")
    return 0


def cmd_report(args) -> int:
    metrics = []
    for path in args.results:
        with open(path, encoding="utf-8") as fh:
            metrics.append(bench.metrics_from_dict(json.load(fh)))
    doc, table = bench.report(metrics, wall_clock=not args.no_timings)
    sys.stdout.write(doc + "\n" if args.json else table)
    return 0


def cmd_export(args) -> int:
    with _open(args) as store:
        if args.out:
            with open(args.out, "w", encoding="utf-8") as fh:
                n = store.ledger.export_jsonl(fh)
            _emit({"records": n, "out": args.out})
        else:
            store.ledger.export_jsonl(sys.stdout)
    return 0


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="datacase", description=__doc__.splitlines()[0])
    p.add_argument("--store", help="store directory ($DATACASE_STORE overrides)")
    sub = p.add_subparsers(dest="command", required=True)

    def actor(sp, purpose="service"):
        sp.add_argument("--entity", type=_entity, default=Entity("controller"),
                        help="kind:id acting on the data (default controller:controller)")
        sp.add_argument("--purpose", default=purpose)
        sp.add_argument("--time", type=_time, required=True, help="ISO-8601 UTC")

    sp = sub.add_parser("init", help="create an empty store")
    sp.add_argument("--profile", help="take the configuration of a built-in profile")
    sp.add_argument("--access-control", choices=ACCESS_CONTROL, default="role-based")
    sp.add_argument("--logging", choices=LOGGING, default="row-level-csv")
    sp.add_argument("--encrypted", action="store_true", help="encrypt units at rest")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_init)

    sp = sub.add_parser("put", help="create a data unit")
    sp.add_argument("unit_id")
    val = sp.add_mutually_exclusive_group(required=True)
    val.add_argument("--value")
    val.add_argument("--value-hex")
    sp.add_argument("--subject", action="append", default=[], help="data-subject id (repeatable)")
    sp.add_argument("--origin", action="append", default=[])
    sp.add_argument("--policy", action="append", type=_policy, default=[],
                    help="purpose,kind:id,begin,end (repeatable)")
    sp.add_argument("--erase-by", type=_time,
                    help="add a compliance-erase policy for --entity ending at this time")
    sp.add_argument("--category", choices=[c.value for c in Category], default="base")
    sp.add_argument("--regulation-required", action="store_true")
    actor(sp)
    sp.set_defaults(func=cmd_put)

    sp = sub.add_parser("get", help="read a unit's current value")
    sp.add_argument("unit_id")
    actor(sp)
    sp.set_defaults(func=cmd_get)

    sp = sub.add_parser("erase", help="erase a unit")
    sp.add_argument("unit_id")
    sp.add_argument("--mode", choices=[m.value for m in ErasureMode], default="delete")
    actor(sp, COMPLIANCE_ERASE)
    sp.set_defaults(func=cmd_erase)

    sp = sub.add_parser("restore", help="undo reversible inaccessibility")
    sp.add_argument("unit_id")
    actor(sp, COMPLIANCE_ERASE)
    sp.set_defaults(func=cmd_restore)

    sp = sub.add_parser("compact", help="reclaim tombstoned space")
    sp.add_argument("--level", choices=("incremental", "full"), default="incremental")
    sp.set_defaults(func=cmd_compact)

    sp = sub.add_parser("audit", help="check the compliance invariants")
    sp.add_argument("--now", type=_time, help="audit time (default: last recorded action)")
    sp.add_argument("--timestamps", action="store_true", help="include detection times")
    sp.add_argument("--include-metadata", action="store_true")
    sp.set_defaults(func=cmd_audit)

    sp = sub.add_parser("characterize", help="measure IR/II/Inv for every erasure mode")
    sp.set_defaults(func=cmd_characterize)

    sp = sub.add_parser("bench", help="load, run and report one workload")
    sp.add_argument("--profile", default="P_Base", help=f"one of {sorted(bench.PROFILES)}")
    sp.add_argument("--profile-config", help="JSON profile definition")
    sp.add_argument("--workload", default="wcus", choices=sorted(bench.BUILTIN_MIXES))
    sp.add_argument("--config", help="TOML or JSON workload file (overrides --workload)")
    sp.add_argument("--records", type=int, default=10_000)
    sp.add_argument("--txns", type=int, default=2_000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--reps", type=int, default=3)
    sp.add_argument("--no-warmup", action="store_true")
    sp.add_argument("--results", default="results")
    sp.add_argument("--workdir", help="where scratch stores are created")
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("report", help="tabulate bench result files")
    sp.add_argument("results", nargs="+")
    sp.add_argument("--json", action="store_true")
    sp.add_argument("--no-timings", action="store_true", help="omit wall-clock fields")
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("export-ledger", help="dump the action history as JSON lines")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DataCaseError as exc:
        sys.stderr.write(json.dumps({"error": exc.code, "message": str(exc)}, sort_keys=True) + "\n")
        return 1
    except OSError as exc:
        sys.stderr.write(json.dumps({"error": "io", "message": str(exc)}, sort_keys=True) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
