"""Domain types and pure predicates for data units, policies and actions.

Times are integer seconds since the Unix epoch. Policy windows are inclusive
at both ends.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from typing import Iterable, Optional

from .errors import EmptyInputs, ValidationError

COMPLIANCE_ERASE = "compliance-erase"

Timestamp = int


def parse_time(text: str) -> Timestamp:
    """Parse an ISO-8601 string into epoch seconds (naive input is UTC)."""
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    value = int(dt.timestamp())
    if value < 0:
        raise ValidationError(f"time before epoch: {text}")
    return value


def format_time(t: Timestamp) -> str:
    return datetime.fromtimestamp(t, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


class EntityKind(str, enum.Enum):
    DATA_SUBJECT = "data-subject"
    CONTROLLER = "controller"
    PROCESSOR = "processor"
    AUDITOR = "auditor"


@dataclass(frozen=True, order=True)
class Entity:
    id: str
    kind: EntityKind = EntityKind.CONTROLLER

    def __post_init__(self):
        if not self.id:
            raise ValidationError("entity id must be non-empty")
        if not isinstance(self.kind, EntityKind):
            object.__setattr__(self, "kind", EntityKind(self.kind))

    @classmethod
    def parse(cls, text: str, default_kind: EntityKind = EntityKind.CONTROLLER) -> "Entity":
        """Parse ``"id"`` or ``"kind:id"``."""
        kind, sep, ident = text.partition(":")
        if sep and kind in {k.value for k in EntityKind}:
            return cls(ident, EntityKind(kind))
        return cls(text, default_kind)

    def __str__(self) -> str:
        return f"{self.kind.value}:{self.id}"


def subject(ident: str) -> Entity:
    return Entity(ident, EntityKind.DATA_SUBJECT)


@dataclass(frozen=True, order=True)
class Policy:
    """Grant for ``entity`` to use a unit for ``purpose`` during [t_b, t_f]."""

    purpose: str
    entity: Entity
    t_b: Timestamp
    t_f: Timestamp

    def __post_init__(self):
        if not self.purpose:
            raise ValidationError("purpose must be non-empty")
        if self.t_b < 0 or self.t_f < 0:
            raise ValidationError("policy times must be non-negative")
        if self.t_b > self.t_f:
            raise ValidationError(f"policy window inverted: {self.t_b} > {self.t_f}")


def policy_active(policy: Policy, t: Timestamp) -> bool:
    return policy.t_b <= t <= policy.t_f


class Category(str, enum.Enum):
    BASE = "base"
    DERIVED = "derived"
    METADATA = "metadata"


class ErasureMode(str, enum.Enum):
    """The four erasure interpretations, declared from least to most strict."""

    REVERSIBLY_INACCESSIBLE = "reversibly_inaccessible"
    DELETE = "delete"
    STRONG_DELETE = "strong_delete"
    PERMANENT_DELETE = "permanent_delete"

    @property
    def rank(self) -> int:
        return _MODE_ORDER.index(self)


_MODE_ORDER = list(ErasureMode)


class ErasureStatus(str, enum.Enum):
    """Position of a unit on the erasure timeline, in increasing strictness."""

    LIVE = "live"
    REVERSIBLY_INACCESSIBLE = "reversibly_inaccessible"
    DELETED = "deleted"
    STRONG_DELETED = "strong_deleted"
    PERMANENTLY_DELETED = "permanently_deleted"

    @property
    def rank(self) -> int:
        return _STATUS_ORDER.index(self)

    @classmethod
    def after(cls, mode: ErasureMode) -> "ErasureStatus":
        return _STATUS_ORDER[mode.rank + 1]


_STATUS_ORDER = list(ErasureStatus)


class ActionKind(str, enum.Enum):
    CREATE = "create"
    READ = "read"
    UPDATE_VALUE = "update-value"
    UPDATE_METADATA = "update-metadata"
    ERASE = "erase"
    SHARE = "share"
    CONTRACT = "contract"


@dataclass(frozen=True)
class DataUnit:
    id: str
    subjects: frozenset
    origins: frozenset = frozenset()
    values: tuple = ()  # ((bytes, Timestamp), ...) strictly increasing in time
    policies: frozenset = frozenset()
    category: Category = Category.BASE

    def __post_init__(self):
        if not self.id:
            raise ValidationError("unit id must be non-empty")
        object.__setattr__(self, "subjects", frozenset(self.subjects))
        object.__setattr__(self, "origins", frozenset(self.origins))
        object.__setattr__(self, "policies", frozenset(self.policies))
        object.__setattr__(self, "values", tuple((bytes(v), int(t)) for v, t in self.values))
        object.__setattr__(self, "category", Category(self.category))
        if self.category is Category.BASE and len(self.subjects) != 1:
            raise ValidationError(f"base unit {self.id!r} must have exactly one data-subject")
        for s in self.subjects:
            if s.kind is not EntityKind.DATA_SUBJECT:
                raise ValidationError(f"subject {s} is not a data-subject")
        times = [t for _, t in self.values]
        if any(a >= b for a, b in zip(times, times[1:])):
            raise ValidationError(f"value timestamps of {self.id!r} not strictly increasing")

    def value_at(self, t: Timestamp) -> Optional[bytes]:
        current = None
        for v, vt in self.values:
            if vt > t:
                break
            current = v
        return current

    def with_value(self, value: bytes, t: Timestamp) -> "DataUnit":
        return replace(self, values=self.values + ((value, t),))

    def with_policies(self, policies: Iterable[Policy]) -> "DataUnit":
        return replace(self, policies=frozenset(policies))


@dataclass(frozen=True)
class UnitState:
    unit_id: str
    subjects: frozenset
    origins: frozenset
    value: Optional[bytes]
    policies: frozenset


def active_policies(policies: Iterable[Policy], t: Timestamp) -> frozenset:
    return frozenset(p for p in policies if policy_active(p, t))


def state_at(unit: DataUnit, t: Timestamp) -> UnitState:
    return UnitState(unit.id, unit.subjects, unit.origins, unit.value_at(t),
                     active_policies(unit.policies, t))


@dataclass(frozen=True)
class ActionRecord:
    """One action-history tuple. ``digest`` summarizes the resulting state."""

    unit_id: str
    purpose: str
    entity: Entity
    action: ActionKind
    time: Timestamp
    regulation_required: bool = False
    erase_mode: Optional[ErasureMode] = None
    digest: bytes = bytes(16)
    detail: str = ""
    redacted: bool = False

    def __post_init__(self):
        object.__setattr__(self, "action", ActionKind(self.action))
        if self.erase_mode is not None:
            object.__setattr__(self, "erase_mode", ErasureMode(self.erase_mode))
        if self.action is ActionKind.ERASE and self.erase_mode is None:
            raise ValidationError("erase records must carry an erasure mode")
        if len(self.digest) != 16:
            raise ValidationError("digest must be 16 bytes")

    @property
    def action_label(self) -> str:
        if self.action is ActionKind.ERASE:
            return f"erase({self.erase_mode.value})"
        return self.action.value


def is_policy_consistent(record: ActionRecord, state: UnitState,
                         purpose_map: Optional[dict] = None) -> bool:
    """True iff an active policy matches (purpose, entity) or regulation requires it.

    ``purpose_map`` optionally restricts each purpose to a set of action kinds;
    purposes absent from the map are unrestricted.
    """
    if record.regulation_required:
        return True
    if purpose_map is not None:
        allowed = purpose_map.get(record.purpose)
        if allowed is not None and record.action not in allowed:
            return False
    return any(p.purpose == record.purpose and p.entity == record.entity
               for p in state.policies)


@dataclass(frozen=True)
class ProvenanceEdge:
    derived_id: str
    input_ids: frozenset
    f_descriptor: str
    invertible: bool
    subjects_identifiable: bool = True

    def __post_init__(self):
        object.__setattr__(self, "input_ids", frozenset(self.input_ids))
        if not self.input_ids:
            raise EmptyInputs("provenance edge needs at least one input")
        if self.derived_id in self.input_ids:
            raise ValidationError("derived unit cannot be its own input")


def restrict_policies(policy_sets: list) -> frozenset:
    """Per-(purpose, entity) window intersection across every input policy set."""
    windows = None
    for policies in policy_sets:
        mine: dict = {}
        for p in policies:
            # several windows for one key: keep each, intersect pairwise below
            mine.setdefault((p.purpose, p.entity), []).append((p.t_b, p.t_f))
        if windows is None:
            windows = mine
            continue
        merged = {}
        for key, spans in windows.items():
            if key not in mine:
                continue
            out = []
            for b1, f1 in spans:
                for b2, f2 in mine[key]:
                    b, f = max(b1, b2), min(f1, f2)
                    if b <= f:
                        out.append((b, f))
            if out:
                merged[key] = out
        windows = merged
    result = set()
    for (purpose, entity), spans in (windows or {}).items():
        for b, f in spans:
            result.add(Policy(purpose, entity, b, f))
    return frozenset(result)


def derive_unit(inputs: list, f_descriptor: str, invertible: bool, t: Timestamp, *,
                value: bytes = b"", unit_id: Optional[str] = None,
                subjects_identifiable: bool = True) -> tuple:
    """Build a derived unit from ``inputs`` and the provenance edge recording it."""
    if not inputs:
        raise EmptyInputs("derive_unit needs at least one input")
    subjects = frozenset().union(*(u.subjects for u in inputs))
    origins = frozenset().union(*(u.origins for u in inputs))
    policies = restrict_policies([u.policies for u in inputs])
    if unit_id is None:
        unit_id = f"{f_descriptor}(" + ",".join(sorted(u.id for u in inputs)) + ")"
    unit = DataUnit(unit_id, subjects, origins, ((value, t),), policies, Category.DERIVED)
    edge = ProvenanceEdge(unit_id, frozenset(u.id for u in inputs), f_descriptor,
                          invertible, subjects_identifiable)
    return unit, edge

