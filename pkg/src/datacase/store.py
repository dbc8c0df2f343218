"""Policy-enforcing embedded store with four erasure interpretations.

Directory layout::

    segments/seg-<n>.dat   data units (see ``segments``)
    metadata/seg-<n>.dat   policy rows, only with ``access_control="metadata-join"``
                           or ``"fine-grained"``
    actions.log            action history (see ``ledger``)
    denied.log             refused access attempts, JSON lines
    metadata.log           policy versions per unit (see ``history``)
    query.log, policy.log  per-access logs, depending on ``logging``
    policy.idx             journal of the (purpose, entity) secondary index over
                           the metadata table, with separate metadata only
    escrow.bin             keys of reversibly inaccessible units
    index.bin, metadata.idx, guard.idx
                           index snapshots written by ``flush``
    manifest.json          configuration and provenance edges

Copies tracked per unit are the live segment record, its index entry and the
in-memory read cache. Ledger and log payloads never hold value bytes, only
digests, so they are not value copies; strong and permanent deletion still
redact them. Operating-system page cache and filesystem journals are outside
the model.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import threading
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional

from . import codec
from .auxlog import AuxLog
from .history import PolicyHistory
from .errors import (DirectoryNotEmpty, DuplicateId, ErasedInput, Inaccessible,
                     InvalidTransition, PolicyDenied, UnknownUnit, ValidationError)
from .ledger import SENTINEL, Ledger, RedactionReason, digest_of
from .model import (COMPLIANCE_ERASE, ActionKind, ActionRecord, Category, DataUnit,
                    Entity, EntityKind, ErasureMode, ErasureStatus, Policy,
                    ProvenanceEdge, Timestamp, derive_unit, format_time,
                    is_policy_consistent, state_at)
from .segments import FLAG_ESCROWED, SegmentStore

ACCESS_CONTROL = ("role-based", "metadata-join", "fine-grained")
LOGGING = ("none", "row-level-csv", "full-query", "full-query-plus-policy-log")
SANITIZE_PASSES = (0x00, 0xFF, "random")
SYSTEM = Entity("system", EntityKind.CONTROLLER)

_ESCROW_MAGIC = b"DCESCROW"
_U16 = struct.Struct(">H")
_ESCROW_ENTRY = struct.Struct(">32sQ")


@dataclass
class StoreConfig:
    access_control: str = "role-based"
    logging: str = "row-level-csv"
    encrypted_at_rest: bool = False
    encrypt_logs: bool = False
    # scrub query/policy logs of units removed by strong or permanent delete
    redact_logs_on_erase: bool = False
    purpose_map: Optional[dict] = None      # purpose -> [action kind, ...]
    roles: Optional[dict] = None            # entity id -> role
    role_purposes: Optional[dict] = None    # role -> [purpose, ...]
    guard_metadata: bool = False
    cache_size: int = 256
    max_segment_bytes: int = 64 * 1024
    fsync: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.access_control not in ACCESS_CONTROL:
            raise ValidationError(f"access_control must be one of {ACCESS_CONTROL}")
        if self.logging not in LOGGING:
            raise ValidationError(f"logging must be one of {LOGGING}")

    @property
    def separate_metadata(self) -> bool:
        return self.access_control != "role-based"


@dataclass(frozen=True)
class Location:
    kind: str        # segment | index | cache
    ref: str
    escrowed: bool = False


@dataclass(frozen=True)
class CopySet:
    unit_id: str
    locations: frozenset = frozenset()

    def __len__(self) -> int:
        return len(self.locations)

    def kinds(self) -> set:
        return {loc.kind for loc in self.locations}


@dataclass(frozen=True)
class EscrowEntry:
    unit_id: str
    key: bytes
    created_at: Timestamp


@dataclass(frozen=True)
class ErasureReport:
    unit_id: str
    mode: ErasureMode
    status: ErasureStatus
    erased_units: tuple
    bytes_destroyed: int
    ledger_redacted: int


@dataclass
class _Meta:
    category: Category
    subjects: frozenset
    history: list = field(default_factory=list)  # [(ledger position, frozenset of Policy)]
    grants: dict = field(default_factory=dict)   # (purpose, entity) -> [(t_b, t_f)] of current policies

    @property
    def policies(self) -> frozenset:
        return self.history[-1][1]

    def push(self, pos: int, policies: frozenset) -> None:
        self.history.append((pos, policies))
        grants: dict = {}
        for p in policies:
            grants.setdefault((p.purpose, p.entity), []).append((p.t_b, p.t_f))
        self.grants = grants

    def grants_at(self, key: tuple, t: int) -> bool:
        windows = self.grants.get(key)
        return windows is not None and any(b <= t <= f for b, f in windows)


class Store:
    """A directory-backed store. Mutations are serialized by one internal lock."""

    def __init__(self, path: str, config: StoreConfig, *, _create: bool = False):
        self.path = path
        self.config = config
        self._lock = threading.RLock()
        self._at_rest_key = (hashlib.blake2b(b"at-rest", key=self._seed_key()).digest()
                             if config.encrypted_at_rest else None)
        log_key = (hashlib.blake2b(b"logs", key=self._seed_key()).digest()
                   if config.encrypt_logs else None)
        self.segments = SegmentStore(os.path.join(path, "segments"),
                                     max_segment_bytes=config.max_segment_bytes,
                                     fsync=config.fsync, seed=config.seed)
        self.metadata = (SegmentStore(os.path.join(path, "metadata"),
                                      max_segment_bytes=config.max_segment_bytes,
                                      fsync=config.fsync, seed=config.seed + 1)
                         if config.separate_metadata else None)
        self.ledger = Ledger(os.path.join(path, "actions.log"), fsync=config.fsync)
        self.query_log = (AuxLog(os.path.join(path, "query.log"), log_key)
                          if config.logging != "none" else None)
        self.policy_log = (AuxLog(os.path.join(path, "policy.log"), log_key)
                           if config.logging == "full-query-plus-policy-log" else None)
        # secondary index over the metadata table, keyed by (purpose, entity)
        self.policy_index = (AuxLog(os.path.join(path, "policy.idx"), log_key)
                             if config.separate_metadata else None)
        self._denied = open(os.path.join(path, "denied.log"), "a", encoding="utf-8")
        self._meta_log = PolicyHistory(os.path.join(path, "metadata.log"), fsync=config.fsync)
        self._meta: dict = {}
        self._status: dict = {}
        self._edges: dict = {}
        self._children: dict = {}
        self._escrow: dict = {}
        self._cache: OrderedDict = OrderedDict()
        self._mtable: dict = {}      # uid -> policies, the separate metadata table
        self._guard: dict = {}       # (purpose, entity) -> set of uids
        self._key_counter = 0
        self._purpose_map = ({p: frozenset(ActionKind(a) for a in kinds)
                              for p, kinds in config.purpose_map.items()}
                             if config.purpose_map else None)
        if not _create:
            self._recover()
        self._write_manifest()

    # -- lifecycle -------------------------------------------------------

    @classmethod
    def create(cls, path: str, config: Optional[StoreConfig] = None) -> "Store":
        if os.path.isdir(path) and os.listdir(path):
            raise DirectoryNotEmpty(f"{path} is not empty")
        os.makedirs(path, exist_ok=True)
        return cls(path, config or StoreConfig(), _create=True)

    @classmethod
    def open(cls, path: str) -> "Store":
        manifest = os.path.join(path, "manifest.json")
        if not os.path.exists(manifest):
            raise FileNotFoundError(f"{path} is not a store (no manifest.json)")
        with open(manifest, encoding="utf-8") as fh:
            doc = json.load(fh)
        return cls(path, StoreConfig(**doc["config"]))

    def __enter__(self) -> "Store":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def close(self) -> None:
        with self._lock:
            if self._denied.closed:
                return
            self.flush()
            self.segments.close()
            if self.metadata is not None:
                self.metadata.close()
            self.ledger.close()
            for log in (self.query_log, self.policy_log, self.policy_index):
                if log is not None:
                    log.close()
            self._denied.close()
            self._meta_log.close()

    def _seed_key(self) -> bytes:
        return hashlib.sha256(f"datacase-seed-{self.config.seed}".encode()).digest()

    def _write_manifest(self) -> None:
        doc = {
            "format": "datacase-store",
            "version": 1,
            "config": asdict(self.config),
            "edges": [
                {"derived_id": e.derived_id, "input_ids": sorted(e.input_ids),
                 "f_descriptor": e.f_descriptor, "invertible": e.invertible,
                 "subjects_identifiable": e.subjects_identifiable}
                for _, e in sorted(self._edges.items())
            ],
        }
        tmp = os.path.join(self.path, "manifest.json.tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True, indent=1)
        os.replace(tmp, os.path.join(self.path, "manifest.json"))

    def _recover(self) -> None:
        with open(os.path.join(self.path, "manifest.json"), encoding="utf-8") as fh:
            doc = json.load(fh)
        for e in doc.get("edges", []):
            self._add_edge(ProvenanceEdge(e["derived_id"], frozenset(e["input_ids"]),
                                          e["f_descriptor"], e["invertible"],
                                          e["subjects_identifiable"]))
        for pos, uid, category, subjects, policies in self._meta_log.rows():
            meta = self._meta.get(uid)
            if meta is None:
                meta = self._meta[uid] = _Meta(category, subjects)
            meta.push(pos, policies)
        for uid in self._meta:
            self._status[uid] = ErasureStatus.LIVE
        for r in self.ledger:
            if r.action is ActionKind.ERASE:
                new = ErasureStatus.after(r.erase_mode)
                if new.rank > self._status.get(r.unit_id, ErasureStatus.LIVE).rank:
                    self._status[r.unit_id] = new
            elif r.detail == "restore-access":
                self._status[r.unit_id] = ErasureStatus.LIVE
        self._escrow = self._read_escrow()
        for uid, meta in self._meta.items():
            if self._status[uid] is ErasureStatus.LIVE or self._status[uid] is ErasureStatus.REVERSIBLY_INACCESSIBLE:
                if self.config.separate_metadata:
                    self._mtable[uid] = meta.policies
                if self.config.access_control == "fine-grained":
                    self._guard_add(uid, meta.policies)

    def flush(self) -> None:
        """Persist index snapshots and the manifest."""
        with self._lock:
            self._write_index(os.path.join(self.path, "index.bin"), self.segments)
            if self.metadata is not None:
                self._write_index(os.path.join(self.path, "metadata.idx"), self.metadata)
            if self.config.access_control == "fine-grained":
                with open(os.path.join(self.path, "guard.idx"), "w", encoding="utf-8") as fh:
                    for (purpose, entity), uids in sorted(self._guard.items()):
                        for uid in sorted(uids):
                            fh.write(f"{purpose}\t{entity}\t{uid}\n")
            self._write_manifest()
            self._denied.flush()

    @staticmethod
    def _write_index(path: str, segs: SegmentStore) -> None:
        parts = []
        for uid, slot in sorted(segs.index.items()):
            u = uid.encode("utf-8")
            parts.append(_U16.pack(len(u)) + u + struct.pack(">IQI", slot.segment, slot.offset, slot.length))
        with open(path, "wb") as fh:
            fh.write(b"".join(parts))

    # -- escrow ----------------------------------------------------------

    def _read_escrow(self) -> dict:
        path = os.path.join(self.path, "escrow.bin")
        out = {}
        if not os.path.exists(path):
            return out
        with open(path, "rb") as fh:
            data = fh.read()
        pos = len(_ESCROW_MAGIC)
        while pos < len(data):
            (n,) = _U16.unpack_from(data, pos)
            uid = data[pos + 2:pos + 2 + n].decode("utf-8")
            key, created = _ESCROW_ENTRY.unpack_from(data, pos + 2 + n)
            out[uid] = EscrowEntry(uid, key, created)
            pos += 2 + n + _ESCROW_ENTRY.size
        return out

    def _write_escrow(self) -> None:
        parts = [_ESCROW_MAGIC]
        for uid, entry in sorted(self._escrow.items()):
            u = uid.encode("utf-8")
            parts.append(_U16.pack(len(u)) + u + _ESCROW_ENTRY.pack(entry.key, entry.created_at))
        path = os.path.join(self.path, "escrow.bin")
        with open(path + ".tmp", "wb") as fh:
            fh.write(b"".join(parts))
        os.replace(path + ".tmp", path)

    def has_escrow(self, unit_id: str) -> bool:
        return unit_id in self._escrow

    # -- registry helpers ------------------------------------------------

    def _add_edge(self, edge: ProvenanceEdge) -> None:
        self._edges[edge.derived_id] = edge
        for i in edge.input_ids:
            self._children.setdefault(i, set()).add(edge.derived_id)

    def _record_meta(self, uid: str, pos: int, policies: frozenset,
                     category: Optional[Category] = None, subjects=None) -> None:
        meta = self._meta.get(uid)
        if meta is None:
            meta = self._meta[uid] = _Meta(category, frozenset(subjects))
        meta.push(pos, policies)
        self._meta_log.append(pos, uid, meta.category, meta.subjects, policies)

    def _guard_add(self, uid: str, policies: Iterable[Policy]) -> None:
        for p in policies:
            self._guard.setdefault((p.purpose, p.entity), set()).add(uid)

    def _guard_remove(self, uid: str, policies: Iterable[Policy]) -> None:
        for p in policies:
            uids = self._guard.get((p.purpose, p.entity))
            if uids is not None:
                uids.discard(uid)
                if not uids:
                    del self._guard[(p.purpose, p.entity)]

    def _require(self, uid: str) -> _Meta:
        meta = self._meta.get(uid)
        if meta is None:
            raise UnknownUnit(f"unknown unit {uid!r}")
        return meta

    # -- physical access -------------------------------------------------

    def _store_blob(self, unit: DataUnit) -> bytes:
        blob = codec.encode_unit(unit, with_policies=not self.config.separate_metadata)
        if self._at_rest_key is not None:
            blob = codec.xor_transform(blob, self._at_rest_key, unit.id.encode())
        self.segments.write(unit.id, blob)
        if self.metadata is not None and self._mtable.get(unit.id) != unit.policies:
            self._write_policy_row(unit.id, unit.policies)
        self._cache.pop(unit.id, None)
        return blob

    def _write_policy_row(self, uid: str, policies: frozenset) -> None:
        old = self._mtable.get(uid, frozenset())
        row = codec.encode_policies(policies)
        if self._at_rest_key is not None:
            row = codec.xor_transform(row, self._at_rest_key, b"policies:" + uid.encode())
        self.metadata.write(uid, row)
        self._mtable[uid] = policies
        self._index_policies(uid, old, policies)

    def _read_policy_row(self, uid: str) -> frozenset:
        _, row = self.metadata.read(uid)
        if self._at_rest_key is not None:
            row = codec.xor_transform(row, self._at_rest_key, b"policies:" + uid.encode())
        return codec.decode_policies(row)

    def _index_policies(self, uid: str, old: frozenset, new: frozenset) -> None:
        for sign, changed in (("-", old - new), ("+", new - old)):
            for p in sorted(changed):
                self.policy_index.append(uid, f"{sign}{p.purpose}\t{p.entity}\t{p.t_b}\t{p.t_f}")

    def _load_unit(self, uid: str) -> DataUnit:
        unit = self._cache.get(uid)
        if unit is not None:
            self._cache.move_to_end(uid)
            return unit
        flags, blob = self.segments.read(uid)
        if flags & FLAG_ESCROWED:
            raise Inaccessible(f"unit {uid!r} is reversibly inaccessible")
        if self._at_rest_key is not None:
            blob = codec.xor_transform(blob, self._at_rest_key, uid.encode())
        unit = codec.decode_unit(uid, blob)
        if self.metadata is not None:
            # the join: policies live in their own table
            unit = unit.with_policies(self._read_policy_row(uid))
        if self.config.cache_size:
            self._cache[uid] = unit
            if len(self._cache) > self.config.cache_size:
                self._cache.popitem(last=False)
        return unit

    # -- enforcement -----------------------------------------------------

    def _authorize(self, record: ActionRecord, unit: DataUnit,
                   category: Category) -> Optional[str]:
        """Return a denial reason, or None when the action may proceed."""
        if category is Category.METADATA and not self.config.guard_metadata:
            return None
        mode = self.config.access_control
        if mode == "role-based" and self.config.roles is not None and not record.regulation_required:
            role = self.config.roles.get(record.entity.id)
            allowed = (self.config.role_purposes or {}).get(role, ())
            if record.purpose not in allowed:
                return f"role {role!r} may not act for {record.purpose!r}"
        if mode == "fine-grained" and not record.regulation_required:
            holders = self._guard.get((record.purpose, record.entity), ())
            if unit.id not in holders and record.action is not ActionKind.CREATE:
                return "no guard for (purpose, entity)"
        state = state_at(unit, record.time)
        if not is_policy_consistent(record, state, self._purpose_map):
            return "no active policy for (purpose, entity)"
        return None

    def _deny(self, record: ActionRecord, reason: str, error=PolicyDenied):
        self._denied.write(json.dumps({
            "unit_id": record.unit_id, "purpose": record.purpose,
            "entity": str(record.entity), "action": record.action_label,
            "time": format_time(record.time), "reason": reason,
        }, sort_keys=True) + "\n")
        self._denied.flush()
        raise error(f"{record.action_label} on {record.unit_id!r} by {record.entity} "
                    f"for {record.purpose!r} denied: {reason}")

    def _log_access(self, record: ActionRecord, policies: Iterable[Policy] = ()) -> None:
        level = self.config.logging
        if level == "none":
            return
        uid = record.unit_id
        if level == "row-level-csv":
            self.query_log.append(uid, f"{record.time},{record.action_label},{uid},"
                                       f"{record.entity.id},{record.purpose}")
            return
        verb = {ActionKind.READ: "SELECT value FROM units",
                ActionKind.CREATE: "INSERT INTO units",
                ActionKind.UPDATE_VALUE: "UPDATE units SET value = ?",
                ActionKind.UPDATE_METADATA: "UPDATE policies SET window = ?",
                ActionKind.ERASE: "DELETE FROM units"}.get(record.action, record.action.value)
        self.query_log.append(uid, (
            f"time={format_time(record.time)} entity={record.entity} purpose={record.purpose} "
            f"query=\"{verb} WHERE unit_id = '{uid}'\" response={record.digest.hex()}"))
        if self.policy_log is not None:
            evaluated = ";".join(
                f"<{p.purpose},{p.entity},{format_time(p.t_b)},{format_time(p.t_f)}>="
                f"{'active' if p.t_b <= record.time <= p.t_f else 'inactive'}"
                for p in sorted(policies))
            self.policy_log.append(uid, f"{format_time(record.time)} {uid} {record.action_label} "
                                        f"{record.entity} {record.purpose} [{evaluated}]")

    def _append(self, record: ActionRecord, policies: Iterable[Policy] = ()) -> int:
        pos = self.ledger.append(record)
        self._log_access(record, policies)
        return pos

    # -- data operations -------------------------------------------------

    def put(self, unit: DataUnit, entity: Entity, purpose: str, t: Timestamp,
            regulation_required: bool = False) -> str:
        with self._lock:
            if unit.id in self._meta:
                raise DuplicateId(f"unit {unit.id!r} already exists")
            if unit.category is Category.DERIVED:
                raise ValidationError("derived units are created with derive()")
            blob_digest = digest_of(codec.encode_unit(unit))
            record = ActionRecord(unit.id, purpose, entity, ActionKind.CREATE, t,
                                  regulation_required, digest=blob_digest)
            reason = self._authorize(record, unit, unit.category)
            if reason:
                self._deny(record, reason)
            self._create(unit, record)
            return unit.id

    def _create(self, unit: DataUnit, record: ActionRecord) -> None:
        self._store_blob(unit)
        pos = self._append(record, unit.policies)
        self._record_meta(unit.id, pos, unit.policies, unit.category, unit.subjects)
        self._status[unit.id] = ErasureStatus.LIVE
        if self.config.access_control == "fine-grained":
            self._guard_add(unit.id, unit.policies)

    def _live_unit(self, uid: str, record: ActionRecord) -> tuple:
        meta = self._require(uid)
        status = self._status[uid]
        if status is not ErasureStatus.LIVE:
            self._deny(record, f"unit is {status.value}", Inaccessible)
        return meta, self._load_unit(uid)

    def get(self, unit_id: str, entity: Entity, purpose: str, t: Timestamp) -> Optional[bytes]:
        with self._lock:
            record = ActionRecord(unit_id, purpose, entity, ActionKind.READ, t)
            meta, unit = self._live_unit(unit_id, record)
            reason = self._authorize(record, unit, meta.category)
            if reason:
                self._deny(record, reason)
            value = unit.value_at(t)
            record = ActionRecord(unit_id, purpose, entity, ActionKind.READ, t,
                                  digest=digest_of(value or b""))
            self._append(record, unit.policies)
            return value

    def update_value(self, unit_id: str, value: bytes, entity: Entity, purpose: str,
                     t: Timestamp) -> int:
        with self._lock:
            record = ActionRecord(unit_id, purpose, entity, ActionKind.UPDATE_VALUE, t)
            meta, unit = self._live_unit(unit_id, record)
            reason = self._authorize(record, unit, meta.category)
            if reason:
                self._deny(record, reason)
            if unit.values and t <= unit.values[-1][1]:
                raise ValidationError(f"update at {t} does not follow the latest version")
            new = unit.with_value(bytes(value), t)
            self._store_blob(new)
            self._append(ActionRecord(unit_id, purpose, entity, ActionKind.UPDATE_VALUE, t,
                                      digest=digest_of(bytes(value))), unit.policies)
            return len(new.values)

    def update_policies(self, unit_id: str, policies: Iterable[Policy], entity: Entity,
                        purpose: str, t: Timestamp) -> frozenset:
        """Replace the unit's policy set (a metadata update)."""
        policies = frozenset(policies)
        with self._lock:
            record = ActionRecord(unit_id, purpose, entity, ActionKind.UPDATE_METADATA, t)
            meta, unit = self._live_unit(unit_id, record)
            reason = self._authorize(record, unit, meta.category)
            if reason:
                self._deny(record, reason)
            if self.metadata is not None:
                self._write_policy_row(unit_id, policies)
                self._cache.pop(unit_id, None)
            else:
                self._store_blob(unit.with_policies(policies))
            if self.config.access_control == "fine-grained":
                self._guard_remove(unit_id, unit.policies)
                self._guard_add(unit_id, policies)
            pos = self._append(ActionRecord(unit_id, purpose, entity, ActionKind.UPDATE_METADATA, t,
                                            digest=digest_of(codec.encode_policies(policies))),
                               unit.policies | policies)
            self._record_meta(unit_id, pos, policies)
            return policies

    def scan(self, purpose: str, entity: Entity, t: Timestamp) -> list:
        """Read every live unit holding an active policy for (purpose, entity).

        A full scan over the unit metadata; each match is read (and logged)
        as ``entity`` for ``purpose``. Returns ``[(unit_id, value), ...]``.
        """
        with self._lock:
            mode = self.config.access_control
            key = (purpose, entity)
            live = ErasureStatus.LIVE
            status = self._status
            if mode == "role-based":
                if self.config.roles is not None:
                    role = self.config.roles.get(entity.id)
                    if purpose not in (self.config.role_purposes or {}).get(role, ()):
                        return []
                matches = [uid for uid, meta in self._meta.items()
                           if key in meta.grants and status[uid] is live and meta.grants_at(key, t)]
            elif mode == "metadata-join":
                # join the unit table with the separate metadata table
                mtable, meta = self._mtable, self._meta
                matches = [uid for uid in self.segments.index
                           if uid in mtable and key in meta[uid].grants
                           and status[uid] is live and meta[uid].grants_at(key, t)]
            else:
                matches = []
                mtable = self._mtable
                for uid in self.segments.index:
                    if uid not in mtable or status[uid] is not live:
                        continue
                    # evaluate every attached policy, no short-circuit
                    active = [p for p in mtable[uid] if p.t_b <= t <= p.t_f]
                    if any(p.purpose == purpose and p.entity == entity for p in active):
                        matches.append(uid)
            out = []
            for uid in matches:
                try:
                    out.append((uid, self.get(uid, entity, purpose, t)))
                except PolicyDenied:
                    continue
            return out

    def derive(self, input_ids: list, value: bytes, f_descriptor: str, invertible: bool,
               entity: Entity, purpose: str, t: Timestamp, *, unit_id: Optional[str] = None,
               subjects_identifiable: bool = True) -> str:
        """Create a derived unit from live inputs and record its provenance edge."""
        with self._lock:
            inputs = []
            for uid in input_ids:
                self._require(uid)
                if self._status[uid] is not ErasureStatus.LIVE:
                    raise ErasedInput(f"input {uid!r} is {self._status[uid].value}")
                inputs.append(self._load_unit(uid))
            unit, edge = derive_unit(inputs, f_descriptor, invertible, t, value=bytes(value),
                                     unit_id=unit_id, subjects_identifiable=subjects_identifiable)
            if unit.id in self._meta:
                raise DuplicateId(f"unit {unit.id!r} already exists")
            reads = []
            for src in inputs:
                r = ActionRecord(src.id, purpose, entity, ActionKind.READ, t,
                                 digest=digest_of(src.value_at(t) or b""),
                                 detail=f"derive:{unit.id}")
                reason = self._authorize(r, src, self._meta[src.id].category)
                if reason:
                    self._deny(r, reason)
                reads.append((r, src.policies))
            create = ActionRecord(unit.id, purpose, entity, ActionKind.CREATE, t,
                                  digest=digest_of(codec.encode_unit(unit)),
                                  detail=f"derive:{f_descriptor}")
            reason = self._authorize(create, unit, Category.DERIVED)
            if reason:
                self._deny(create, reason)
            for r, pols in reads:
                self._append(r, pols)
            self._create(unit, create)
            self._add_edge(edge)
            self._write_manifest()
            return unit.id

    # -- erasure ---------------------------------------------------------

    def status_of(self, unit_id: str) -> ErasureStatus:
        with self._lock:
            self._require(unit_id)
            return self._status[unit_id]

    def make_inaccessible(self, unit_id: str, t: Timestamp, entity: Entity = SYSTEM,
                          purpose: str = COMPLIANCE_ERASE) -> ErasureStatus:
        with self._lock:
            self._require(unit_id)
            if self._status[unit_id] is not ErasureStatus.LIVE:
                raise InvalidTransition(f"unit {unit_id!r} is {self._status[unit_id].value}")
            self._key_counter += 1
            key = hashlib.blake2b(f"{unit_id}|{t}|{self._key_counter}".encode(),
                                  key=self._seed_key()).digest()[:32]
            _, blob = self.segments.read(unit_id)
            self.segments.rewrite(unit_id, codec.xor_transform(blob, key, unit_id.encode()),
                                  FLAG_ESCROWED)
            self._cache.pop(unit_id, None)
            self._escrow[unit_id] = EscrowEntry(unit_id, key, t)
            self._write_escrow()
            self._status[unit_id] = ErasureStatus.REVERSIBLY_INACCESSIBLE
            self._append(ActionRecord(unit_id, purpose, entity, ActionKind.ERASE, t, True,
                                      ErasureMode.REVERSIBLY_INACCESSIBLE, SENTINEL))
            return self._status[unit_id]

    def restore_access(self, unit_id: str, t: Timestamp, entity: Entity = SYSTEM,
                       purpose: str = COMPLIANCE_ERASE) -> ErasureStatus:
        with self._lock:
            self._require(unit_id)
            if self._status[unit_id] is not ErasureStatus.REVERSIBLY_INACCESSIBLE:
                raise InvalidTransition(f"unit {unit_id!r} is {self._status[unit_id].value}")
            entry = self._escrow.pop(unit_id)
            _, blob = self.segments.read(unit_id)
            self.segments.rewrite(unit_id, codec.xor_transform(blob, entry.key, unit_id.encode()), 0)
            self._write_escrow()
            self._status[unit_id] = ErasureStatus.LIVE
            self._append(ActionRecord(unit_id, purpose, entity, ActionKind.UPDATE_METADATA, t, True,
                                      digest=SENTINEL, detail="restore-access"))
            return self._status[unit_id]

    def cascade_closure(self, unit_id: str) -> list:
        """Units a strong delete of ``unit_id`` removes, the unit itself first.

        Follows provenance edges downward through derived units whose edge
        marks subjects as identifiable and whose subjects overlap the root's.
        """
        root_subjects = self._require(unit_id).subjects
        order = [unit_id]
        seen = {unit_id}
        frontier = [unit_id]
        while frontier:
            nxt = []
            for uid in frontier:
                for child in sorted(self._children.get(uid, ())):
                    if child in seen:
                        continue
                    edge = self._edges[child]
                    if edge.subjects_identifiable and self._meta[child].subjects & root_subjects:
                        seen.add(child)
                        order.append(child)
                        nxt.append(child)
            frontier = nxt
        return order

    def _destroy(self, uid: str, passes: tuple = ()) -> int:
        destroyed = 0
        if uid in self.segments.index:
            destroyed += self.segments.remove(uid, passes)
        if self.metadata is not None and uid in self.metadata.index:
            self.metadata.remove(uid, passes)
        if uid in self._mtable:
            self._index_policies(uid, self._mtable.pop(uid), frozenset())
        self._cache.pop(uid, None)
        if self._escrow.pop(uid, None) is not None:
            self._write_escrow()
        if self.config.access_control == "fine-grained":
            self._guard_remove(uid, self._meta[uid].policies)
        return destroyed

    def erase(self, unit_id: str, mode, entity: Entity, t: Timestamp,
              purpose: str = COMPLIANCE_ERASE, regulation_required: bool = True) -> ErasureReport:
        mode = ErasureMode(mode)
        with self._lock:
            meta = self._require(unit_id)
            current = self._status[unit_id]
            target = ErasureStatus.after(mode)
            if target.rank <= current.rank:
                raise InvalidTransition(f"cannot {mode.value} a unit that is {current.value}")
            record = ActionRecord(unit_id, purpose, entity, ActionKind.ERASE, t,
                                  regulation_required, mode, SENTINEL)
            if not regulation_required:
                view = DataUnit(unit_id, meta.subjects, (), (), meta.policies, meta.category)
                if not is_policy_consistent(record, state_at(view, t), self._purpose_map):
                    self._deny(record, "no active policy for (purpose, entity)")
            if mode is ErasureMode.REVERSIBLY_INACCESSIBLE:
                status = self.make_inaccessible(unit_id, t, entity, purpose)
                return ErasureReport(unit_id, mode, status, (unit_id,), 0, 0)
            passes = SANITIZE_PASSES if mode is ErasureMode.PERMANENT_DELETE else ()
            if mode is ErasureMode.DELETE:
                members = [unit_id]
            else:
                members = [u for u in self.cascade_closure(unit_id)
                           if u == unit_id or self._status[u].rank < target.rank]
            destroyed = redacted = 0
            reason = (RedactionReason.PERMANENT_DELETE if mode is ErasureMode.PERMANENT_DELETE
                      else RedactionReason.STRONG_DELETE)
            for uid in members:
                destroyed += self._destroy(uid, passes)
                if mode is not ErasureMode.DELETE:
                    redacted += self.ledger.redact_values(uid, reason, t, entity)
                    if self.config.redact_logs_on_erase:
                        for log in (self.query_log, self.policy_log, self.policy_index):
                            if log is not None:
                                log.scrub(uid)
                self._status[uid] = target
                detail = "" if uid == unit_id else f"cascade:{unit_id}"
                self._append(ActionRecord(uid, purpose, entity, ActionKind.ERASE, t,
                                          regulation_required, mode, SENTINEL, detail))
            return ErasureReport(unit_id, mode, target, tuple(members), destroyed, redacted)

    def compact(self, level: str = "incremental", min_dead_fraction: float = 0.0) -> int:
        with self._lock:
            reclaimed = self.segments.compact(level, min_dead_fraction)
            if self.metadata is not None:
                reclaimed += self.metadata.compact(level, min_dead_fraction)
            return reclaimed

    def copies_of(self, unit_id: str) -> CopySet:
        with self._lock:
            locs = set()
            slot = self.segments.index.get(unit_id)
            if slot is not None:
                escrowed = bool(slot.flags & FLAG_ESCROWED)
                locs.add(Location("segment", f"seg-{slot.segment}@{slot.offset}", escrowed))
                locs.add(Location("index", f"index:{unit_id}", escrowed))
            if unit_id in self._cache:
                locs.add(Location("cache", f"cache:{unit_id}"))
            return CopySet(unit_id, frozenset(locs))

    # -- read-only views for auditing -----------------------------------

    def unit_ids(self) -> list:
        return list(self._meta)

    def category_of(self, unit_id: str) -> Category:
        return self._require(unit_id).category

    def subjects_of(self, unit_id: str) -> frozenset:
        return self._require(unit_id).subjects

    def current_policies(self, unit_id: str) -> frozenset:
        return self._require(unit_id).policies

    def policy_history(self, unit_id: str) -> list:
        return list(self._require(unit_id).history)

    def policies_for_position(self, unit_id: str, position: int) -> frozenset:
        """Policy set governing the ledger record at ``position``.

        That is the version in force before the record was applied; a unit's
        creating record is judged against the policies it was created with.
        """
        history = self._meta[unit_id].history if unit_id in self._meta else []
        chosen = None
        for pos, policies in history:
            if pos < position:
                chosen = policies
            else:
                break
        if chosen is None:
            for pos, policies in history:
                if pos == position:
                    return policies
            return frozenset()
        return chosen

    def view_for_position(self, unit_id: str, position: int) -> DataUnit:
        meta = self._meta.get(unit_id)
        if meta is None:
            return DataUnit(unit_id, (), (), (), (), Category.DERIVED)
        return DataUnit(unit_id, meta.subjects, (), (), self.policies_for_position(unit_id, position),
                        meta.category)

    def edges(self) -> list:
        return list(self._edges.values())

    def live_units(self) -> list:
        return [u for u, s in self._status.items() if s is ErasureStatus.LIVE]

    @property
    def purpose_map(self) -> Optional[dict]:
        return self._purpose_map

    # -- test hooks ------------------------------------------------------

    def force_record(self, record: ActionRecord) -> int:
        """Append a record without any enforcement. Test hook for auditing scenarios."""
        with self._lock:
            return self.ledger.append(record)

    def force_read(self, unit_id: str, entity: Entity, purpose: str, t: Timestamp) -> Optional[bytes]:
        """Read bypassing policy and status checks, recording the read. Test hook."""
        with self._lock:
            self._require(unit_id)
            value = None
            if unit_id in self.segments.index:
                try:
                    value = self._load_unit(unit_id).value_at(t)
                except Inaccessible:
                    value = None
            self.ledger.append(ActionRecord(unit_id, purpose, entity, ActionKind.READ, t,
                                            digest=digest_of(value or b""), detail="forced"))
            return value

    # -- sizing ----------------------------------------------------------

    def disk_usage(self) -> int:
        total = 0
        for root, _, files in os.walk(self.path):
            for name in files:
                if name.endswith(".lock"):
                    continue
                total += os.path.getsize(os.path.join(root, name))
        return total

    def personal_bytes(self) -> int:
        """Bytes of value versions held in stored units, escrowed ones included."""
        total = 0
        with self._lock:
            for uid in list(self.segments.index):
                flags, blob = self.segments.read(uid)
                if flags & FLAG_ESCROWED:
                    blob = codec.xor_transform(blob, self._escrow[uid].key, uid.encode())
                if self._at_rest_key is not None:
                    blob = codec.xor_transform(blob, self._at_rest_key, uid.encode())
                total += sum(len(v) for v, _ in codec.decode_unit(uid, blob).values)
        return total
