"""Deterministic GDPR-style workloads, compliance profiles and their metrics."""

from __future__ import annotations

import gc
import hashlib
import json
import os
import random
import shutil
import statistics
import tempfile
import time
from dataclasses import dataclass, field
from typing import Optional

from . import checker
from .errors import DataCaseError, DirectoryNotEmpty, UnknownWorkload, ValidationError
from .model import (COMPLIANCE_ERASE, DataUnit, Entity, EntityKind, ErasureMode, Policy,
                    format_time, subject)
from .store import Store, StoreConfig

OP_CLASSES = ("create", "data-read", "data-update", "data-delete",
              "metadata-read", "metadata-update")

BUILTIN_MIXES = {
    "wcon": {"create": 25, "data-delete": 25, "metadata-update": 50},
    "wpro": {"data-read": 80, "metadata-read": 20},
    "wcus": {"data-read": 20, "data-update": 20, "data-delete": 20,
             "metadata-read": 20, "metadata-update": 20},
    "ycsb-c": {"data-read": 100},
}

T0 = 1672531200                 # 2023-01-01T00:00:00Z
YEAR = 365 * 24 * 3600
N_PURPOSES = 20
N_PROCESSORS = 50
N_PAIRS = N_PURPOSES * N_PROCESSORS
VALUE_SIZE = 64
MARKER_SIZE = 16

CONTROLLER = Entity("controller", EntityKind.CONTROLLER)
SERVICE = "service"


def processor(j: int) -> Entity:
    return Entity(f"proc{j:02d}", EntityKind.PROCESSOR)


def pair(index: int) -> tuple:
    """(purpose, processor) of a metadata pair index."""
    return f"purpose{index // N_PROCESSORS:02d}", processor(index % N_PROCESSORS)


def unit_key(i: int) -> str:
    return f"u{i:08d}"


# -- workloads ---------------------------------------------------------------

@dataclass(frozen=True)
class Op:
    kind: str
    key: int
    pair: int = -1
    variant: str = ""

    def to_json(self) -> str:
        return json.dumps({"kind": self.kind, "key": self.key, "pair": self.pair,
                           "variant": self.variant}, sort_keys=True)


@dataclass(frozen=True)
class WorkloadSpec:
    name: str
    mix: tuple          # ((op class, percent), ...) in declaration order
    n_records: int
    n_txns: int
    seed: int = 0

    def __post_init__(self):
        total = sum(p for _, p in self.mix)
        if abs(total - 100) > 1e-9:
            raise ValidationError(f"mix of {self.name!r} sums to {total}, not 100")
        for cls, p in self.mix:
            if cls not in OP_CLASSES:
                raise ValidationError(f"unknown op class {cls!r}")
            if p < 0:
                raise ValidationError("mix percentages must be non-negative")
        if self.n_records < 0 or self.n_txns < 0:
            raise ValidationError("sizes must be non-negative")

    def counts(self) -> dict:
        return mix_counts(dict(self.mix), self.n_txns)


def mix_counts(mix: dict, n: int) -> dict:
    """Largest-remainder apportionment of ``n`` operations; ties go to the earlier class."""
    exact = [(cls, pct * n / 100) for cls, pct in mix.items()]
    counts = {cls: int(q) for cls, q in exact}
    short = n - sum(counts.values())
    ranked = sorted(range(len(exact)), key=lambda i: (-(exact[i][1] - int(exact[i][1])), i))
    for i in ranked[:short]:
        counts[exact[i][0]] += 1
    return counts


def builtin_workload(name: str, n_records: int, n_txns: int, seed: int = 0) -> tuple:
    """Return ``(spec, ops)`` for one of wcon, wpro, wcus, ycsb-c."""
    if name not in BUILTIN_MIXES:
        raise UnknownWorkload(f"unknown workload {name!r}; expected one of {sorted(BUILTIN_MIXES)}")
    spec = WorkloadSpec(name, tuple(BUILTIN_MIXES[name].items()), n_records, n_txns, seed)
    return spec, generate_ops(spec)


def generate_ops(spec: WorkloadSpec) -> list:
    rng = random.Random(f"ops:{spec.name}:{spec.seed}")
    labels = [cls for cls, n in spec.counts().items() for _ in range(n)]
    rng.shuffle(labels)
    ops = []
    created = 0
    for kind in labels:
        population = spec.n_records + created
        if kind == "create":
            ops.append(Op(kind, spec.n_records + created, rng.randrange(N_PAIRS)))
            created += 1
            continue
        key = rng.randrange(population) if population else 0
        if kind == "metadata-read":
            ops.append(Op(kind, key, rng.randrange(N_PAIRS)))
        elif kind == "metadata-update":
            # policy mutation and policy creation, half each
            if rng.random() < 0.5:
                ops.append(Op(kind, key, -1, "mutate"))
            else:
                ops.append(Op(kind, key, rng.randrange(N_PAIRS), "add"))
        else:
            ops.append(Op(kind, key))
    return ops


def stream_bytes(ops) -> bytes:
    return "".join(op.to_json() + "\n" for op in ops).encode()


def load_workload_config(path: str) -> tuple:
    """Read a TOML or JSON workload file: name or custom ``mix``, sizes and seed."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if path.endswith(".toml"):
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        doc = tomllib.loads(raw.decode("utf-8"))
    else:
        doc = json.loads(raw)
    n_records, n_txns, seed = int(doc["n_records"]), int(doc["n_txns"]), int(doc.get("seed", 0))
    if "mix" in doc:
        spec = WorkloadSpec(doc.get("name", "custom"), tuple(doc["mix"].items()),
                            n_records, n_txns, seed)
        return spec, generate_ops(spec), doc.get("profile")
    spec, ops = builtin_workload(doc["name"], n_records, n_txns, seed)
    return spec, ops, doc.get("profile")


# -- compliance profiles -----------------------------------------------------

@dataclass(frozen=True)
class ComplianceProfile:
    name: str
    access_control: str
    logging: str
    encrypted_at_rest: bool
    erase_mode_for_deletes: ErasureMode
    compaction: str            # none | incremental | full, run after every delete
    redact_logs_on_erase: bool
    encrypt_logs: bool = False
    # incremental compaction skips segments with a smaller tombstoned share
    vacuum_threshold: float = 0.0

    def store_config(self, seed: int = 0) -> StoreConfig:
        roles = role_purposes = None
        if self.access_control == "role-based":
            roles = {CONTROLLER.id: "controller"}
            roles.update({processor(j).id: "processor" for j in range(N_PROCESSORS)})
            role_purposes = {"controller": [SERVICE, COMPLIANCE_ERASE],
                             "processor": [f"purpose{k:02d}" for k in range(N_PURPOSES)]}
        return StoreConfig(access_control=self.access_control, logging=self.logging,
                           encrypted_at_rest=self.encrypted_at_rest,
                           encrypt_logs=self.encrypt_logs,
                           redact_logs_on_erase=self.redact_logs_on_erase,
                           roles=roles, role_purposes=role_purposes, seed=seed)


P_BASE = ComplianceProfile("P_Base", "role-based", "row-level-csv", True,
                           ErasureMode.DELETE, "incremental", False, vacuum_threshold=0.2)
P_GBENCH = ComplianceProfile("P_GBench", "metadata-join", "full-query", True,
                             ErasureMode.DELETE, "none", False)
P_SYS = ComplianceProfile("P_SYS", "fine-grained", "full-query-plus-policy-log", True,
                          ErasureMode.STRONG_DELETE, "full", True, encrypt_logs=True)
PROFILES = {p.name: p for p in (P_BASE, P_GBENCH, P_SYS)}


def get_profile(name: str) -> ComplianceProfile:
    for key, p in PROFILES.items():
        if key.lower() == name.lower():
            return p
    raise DataCaseError(f"unknown profile {name!r}; expected one of {sorted(PROFILES)}")


def load_profile_config(path: str) -> ComplianceProfile:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    doc["erase_mode_for_deletes"] = ErasureMode(doc["erase_mode_for_deletes"])
    return ComplianceProfile(**doc)


# -- load and run ------------------------------------------------------------

def unit_policies(pair_index: int, t_b: int = T0) -> frozenset:
    purpose, proc = pair(pair_index)
    return frozenset({
        Policy(SERVICE, CONTROLLER, t_b, T0 + YEAR),
        Policy(COMPLIANCE_ERASE, CONTROLLER, t_b, T0 + 2 * YEAR),
        Policy(purpose, proc, t_b, T0 + YEAR),
    })


def make_value(seed: int, key: int, t: int) -> bytes:
    """64-byte record: random 16-byte marker, then data id and recorded time."""
    marker = random.Random(f"value:{seed}:{key}:{t}").randbytes(MARKER_SIZE)
    body = f"{key:08d}|{format_time(t)}".encode()
    return marker + body.ljust(VALUE_SIZE - MARKER_SIZE, b".")


def make_unit(seed: int, key: int, pair_index: int, t: int) -> DataUnit:
    return DataUnit(unit_key(key), {subject(f"subject{key:08d}")}, {f"device{key % 97:02d}"},
                    ((make_value(seed, key, t), t),), unit_policies(pair_index))


def load_phase(profile: ComplianceProfile, n_records: int, seed: int, directory: str) -> Store:
    """Create a store in an empty ``directory`` holding ``n_records`` base units."""
    if os.path.isdir(directory) and os.listdir(directory):
        raise DirectoryNotEmpty(f"{directory} is not empty")
    store = Store.create(directory, profile.store_config(seed))
    rng = random.Random(f"load:{seed}")
    for i in range(n_records):
        t = T0 + i
        store.put(make_unit(seed, i, rng.randrange(N_PAIRS), t), CONTROLLER, SERVICE, t)
    store.flush()
    return store


def run_start(n_records: int) -> int:
    return T0 + n_records + 1


@dataclass
class RunMetrics:
    profile: str
    workload: str
    n_records: int
    n_txns: int
    seed: int
    completion_time: float = 0.0
    latencies: dict = field(default_factory=dict)    # op class -> [seconds]
    op_counts: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)
    space_factor: float = 1.0
    g6_violations: int = 0
    g17_violations: int = 0

    def histogram(self) -> dict:
        """Per-class latency counts in power-of-two microsecond buckets."""
        out = {}
        for cls, values in sorted(self.latencies.items()):
            buckets: dict = {}
            for v in values:
                us = max(1, int(v * 1e6))
                bound = 1 << (us - 1).bit_length()
                buckets[bound] = buckets.get(bound, 0) + 1
            out[cls] = {f"<={b}us": n for b, n in sorted(buckets.items())}
        return out

    def to_dict(self, wall_clock: bool = True) -> dict:
        doc = {
            "profile": self.profile, "workload": self.workload,
            "n_records": self.n_records, "n_txns": self.n_txns, "seed": self.seed,
            "op_counts": dict(sorted(self.op_counts.items())),
            "errors": dict(sorted(self.errors.items())),
            "space_factor": round(self.space_factor, 6),
            "g6_violations": self.g6_violations, "g17_violations": self.g17_violations,
        }
        if wall_clock:
            doc["completion_time"] = self.completion_time
            doc["latency_histogram"] = self.histogram()
        return doc


def _execute(store: Store, profile: ComplianceProfile, op: Op, t: int, seed: int) -> None:
    uid = unit_key(op.key)
    if op.kind == "create":
        store.put(make_unit(seed, op.key, op.pair, t), CONTROLLER, SERVICE, t)
    elif op.kind == "data-read":
        store.get(uid, CONTROLLER, SERVICE, t)
    elif op.kind == "data-update":
        store.update_value(uid, make_value(seed, op.key, t), CONTROLLER, SERVICE, t)
    elif op.kind == "data-delete":
        store.erase(uid, profile.erase_mode_for_deletes, CONTROLLER, t)
        if profile.compaction != "none":
            store.compact(profile.compaction, profile.vacuum_threshold)
    elif op.kind == "metadata-read":
        purpose, proc = pair(op.pair)
        store.scan(purpose, proc, t)
    elif op.kind == "metadata-update":
        current = store.current_policies(uid)
        if op.variant == "add":
            purpose, proc = pair(op.pair)
            new = current | {Policy(purpose, proc, t, T0 + YEAR)}
        else:
            new = frozenset(Policy(p.purpose, p.entity, p.t_b, p.t_f + 86400)
                            if p.entity.kind is EntityKind.PROCESSOR else p for p in current)
        store.update_policies(uid, new, CONTROLLER, SERVICE, t)
    else:
        raise ValidationError(f"unknown op class {op.kind!r}")


def run(store: Store, profile: ComplianceProfile, spec: WorkloadSpec, ops: Optional[list] = None,
        *, audit: bool = True) -> RunMetrics:
    """Execute the op stream against a loaded store and collect metrics."""
    if ops is None:
        ops = generate_ops(spec)
    metrics = RunMetrics(profile.name, spec.name, spec.n_records, spec.n_txns, spec.seed)
    lat = {cls: [] for cls in OP_CLASSES if dict(spec.mix).get(cls)}
    t = run_start(spec.n_records)
    clock = time.perf_counter
    gc.collect()
    collecting = gc.isenabled()
    gc.disable()   # as timeit does: keep collector pauses out of the timings
    started = clock()
    for i, op in enumerate(ops):
        s = clock()
        try:
            _execute(store, profile, op, t + i, spec.seed)
        except DataCaseError as exc:
            metrics.errors[exc.code] = metrics.errors.get(exc.code, 0) + 1
        lat[op.kind].append(clock() - s)
    metrics.completion_time = clock() - started
    if collecting:
        gc.enable()
    metrics.latencies = {k: v for k, v in lat.items() if v}
    metrics.op_counts = {k: len(v) for k, v in lat.items() if v}
    store.flush()
    metrics.space_factor = space_factor(store)
    if audit:
        now = t + len(ops)
        metrics.g6_violations = len(checker.check_g6(store.ledger, store, now=now))
        metrics.g17_violations = len(checker.check_g17(store, store.ledger, now))
    return metrics


def space_factor(store: Store) -> float:
    """Total store size over live personal value bytes (1.0 when there is no personal data)."""
    store.flush()
    personal = store.personal_bytes()
    if personal == 0:
        return 1.0
    return store.disk_usage() / personal


def store_digest(path: str) -> str:
    h = hashlib.sha256()
    for root, dirs, files in os.walk(path):
        dirs.sort()
        for name in sorted(files):
            if name.endswith(".lock"):
                continue
            full = os.path.join(root, name)
            h.update(os.path.relpath(full, path).encode() + b"\0")
            with open(full, "rb") as fh:
                h.update(fh.read())
    return h.hexdigest()


def measure(profile: ComplianceProfile, spec: WorkloadSpec, ops: Optional[list] = None, *,
            reps: int = 3, warmup: bool = True, workdir: Optional[str] = None,
            audit: bool = False) -> tuple:
    """Median completion time over ``reps`` runs, each on a fresh copy of one loaded store.

    The optional warm-up replays the first tenth of the ops and is not
    counted. Returns ``(median seconds, [RunMetrics, ...])``.
    """
    if ops is None:
        ops = generate_ops(spec)
    results = []
    base = tempfile.mkdtemp(prefix="datacase-bench-", dir=workdir)
    pristine = os.path.join(base, "loaded")
    load_phase(profile, spec.n_records, spec.seed, pristine).close()

    def once(name: str, stream: list) -> RunMetrics:
        d = os.path.join(base, name)
        shutil.copytree(pristine, d)
        store = Store.open(d)
        try:
            return run(store, profile, spec, stream, audit=audit)
        finally:
            store.close()
            shutil.rmtree(d, ignore_errors=True)

    try:
        if warmup:
            once("warmup", ops[:max(1, len(ops) // 10)])
        for rep in range(reps):
            results.append(once(f"rep{rep}", ops))
    finally:
        shutil.rmtree(base, ignore_errors=True)
    return statistics.median(m.completion_time for m in results), results


# -- reporting ---------------------------------------------------------------

def report(metrics: list, wall_clock: bool = True) -> tuple:
    """Deterministic JSON document and a plain-text table keyed by (profile, workload)."""
    ordered = sorted(metrics, key=lambda m: (m.n_records, m.profile, m.workload, m.n_txns, m.seed))
    doc = json.dumps([m.to_dict(wall_clock) for m in ordered], sort_keys=True, indent=1)
    header = f"{'profile':<10} {'workload':<8} {'records':>8} {'txns':>6} {'time(s)':>9} {'space':>7} {'errors':>6}"
    lines = [header, "-" * len(header)]
    for m in ordered:
        lines.append(f"{m.profile:<10} {m.workload:<8} {m.n_records:>8} {m.n_txns:>6} "
                     f"{m.completion_time:>9.3f} {m.space_factor:>7.2f} {sum(m.errors.values()):>6}")
    return doc, "\n".join(lines) + "\n"


def metrics_from_dict(doc: dict) -> RunMetrics:
    m = RunMetrics(doc["profile"], doc["workload"], doc["n_records"], doc["n_txns"], doc["seed"])
    m.completion_time = doc.get("completion_time", 0.0)
    m.op_counts = doc.get("op_counts", {})
    m.errors = doc.get("errors", {})
    m.space_factor = doc.get("space_factor", 1.0)
    m.g6_violations = doc.get("g6_violations", 0)
    m.g17_violations = doc.get("g17_violations", 0)
    return m
