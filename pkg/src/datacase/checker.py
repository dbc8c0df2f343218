"""Compliance invariant checks over a store and its action history.

All checks are read-only. Each violation names the ledger positions (and, for
inference, provenance edges) from which it can be re-derived.
"""

from __future__ import annotations

import json
import tempfile
from dataclasses import dataclass
from typing import Optional

from .errors import DataCaseError, UnitLive
from .model import (COMPLIANCE_ERASE, ActionKind, Category, DataUnit, Entity, EntityKind,
                    ErasureMode, ErasureStatus, Policy, active_policies,
                    format_time, is_policy_consistent, state_at, subject)

G6 = "G6-inconsistent-action"
G17_MISSING_POLICY = "G17-missing-policy"
G17_LATE = "G17-late-erase"
G17_MISSING_ERASE = "G17-missing-erase"
IR = "erasure-inconsistent-read"
II = "erasure-inconsistent-inference"
KINDS = (G6, G17_MISSING_POLICY, G17_LATE, G17_MISSING_ERASE, IR, II)


@dataclass(frozen=True)
class Violation:
    kind: str
    unit_id: str
    evidence: tuple   # ledger positions first, then "edge:<derived id>" strings
    detected_at: int

    def __post_init__(self):
        if not self.evidence:
            raise ValueError("a violation needs evidence")

    @property
    def key(self) -> tuple:
        return (self.kind, self.unit_id, self.evidence)

    def sort_key(self) -> tuple:
        first = self.evidence[0]
        return (self.kind, self.unit_id, first if isinstance(first, int) else -1,
                tuple(str(e) for e in self.evidence))

    def to_json(self, timestamps: bool = False) -> str:
        doc = {"kind": self.kind, "unit_id": self.unit_id, "evidence": list(self.evidence)}
        if timestamps:
            doc["detected_at"] = format_time(self.detected_at)
        return json.dumps(doc, sort_keys=True)


@dataclass(frozen=True)
class ErasureCharacterization:
    mode: ErasureMode
    IR: bool
    II: bool
    Inv: bool


# Feasibility of erasure-inconsistent reads, inferences and inversion per mode.
EXPECTED_TABLE = {
    ErasureMode.REVERSIBLY_INACCESSIBLE: (False, True, True),
    ErasureMode.DELETE: (False, True, False),
    ErasureMode.STRONG_DELETE: (False, False, False),
    ErasureMode.PERMANENT_DELETE: (False, False, False),
}


def _now(ledger, now: Optional[int]) -> int:
    if now is not None:
        return now
    return ledger.last_time or 0


def _skip(store, uid: str, include_metadata: bool) -> bool:
    if include_metadata:
        return False
    try:
        return store.category_of(uid) is Category.METADATA
    except DataCaseError:
        return False


def _evidence_for(ledger, uid: str) -> tuple:
    positions = ledger.positions_of(uid)
    return tuple(positions) if positions else (f"unit:{uid}",)


def check_g6(ledger, store, *, now: Optional[int] = None, include_metadata: bool = False) -> list:
    """One violation per action that no active policy or regulation justified."""
    now = _now(ledger, now)
    out = []
    for i, r in enumerate(ledger.records()):
        if _skip(store, r.unit_id, include_metadata):
            continue
        state = state_at(store.view_for_position(r.unit_id, i), r.time)
        if not is_policy_consistent(r, state, store.purpose_map):
            out.append(Violation(G6, r.unit_id, (i,), now))
    return out


def _qualifying_erase(record, erase_policies) -> tuple:
    """(is compliance erase by a policy entity, deadline met)."""
    if record is None or record.action is not ActionKind.ERASE or record.purpose != COMPLIANCE_ERASE:
        return False, False
    deadlines = [p.t_f for p in erase_policies if p.entity == record.entity]
    if not deadlines:
        return False, False
    return True, record.time <= max(deadlines)


def check_g17(store, ledger, now: int, *, include_metadata: bool = False) -> list:
    """Erasure-deadline invariant: every unit carries a compliance-erase policy and,
    once its deadline has passed, its final action is a compliance erase made in time."""
    out = []
    for uid in store.unit_ids():
        if _skip(store, uid, include_metadata):
            continue
        erase_policies = [p for p in store.current_policies(uid) if p.purpose == COMPLIANCE_ERASE]
        if not erase_policies:
            out.append(Violation(G17_MISSING_POLICY, uid, _evidence_for(ledger, uid), now))
            continue
        positions = ledger.positions_of(uid)
        last = ledger[positions[-1]] if positions else None
        qualifies, in_time = _qualifying_erase(last, erase_policies)
        if in_time:
            continue
        if now <= max(p.t_f for p in erase_policies):
            continue
        if qualifies:
            out.append(Violation(G17_LATE, uid, (positions[-1],), now))
        else:
            out.append(Violation(G17_MISSING_ERASE, uid, _evidence_for(ledger, uid), now))
    return out


def detect_ir(ledger, store, *, now: Optional[int] = None, include_metadata: bool = False) -> list:
    """Reads performed while the unit had no active policy at all."""
    now = _now(ledger, now)
    out = []
    for i, r in enumerate(ledger.records()):
        if r.action is not ActionKind.READ or _skip(store, r.unit_id, include_metadata):
            continue
        view = store.view_for_position(r.unit_id, i)
        if not active_policies(view.policies, r.time):
            out.append(Violation(IR, r.unit_id, (i,), now))
    return out


def detect_ii(provenance, store, *, now: Optional[int] = None) -> list:
    """Erased units still reconstructible through an invertible edge to a live dependant.

    A dependant counts only if its edge marks the data subjects as
    identifiable and it shares a subject with the erased unit.
    """
    ledger = store.ledger
    now = _now(ledger, now)
    by_input: dict = {}
    for edge in provenance:
        for uid in edge.input_ids:
            by_input.setdefault(uid, []).append(edge)
    out = []
    for uid in sorted(by_input):
        try:
            status = store.status_of(uid)
        except DataCaseError:
            continue
        if status is ErasureStatus.LIVE:
            continue
        erase_positions = [i for i in ledger.positions_of(uid)
                           if ledger[i].action is ActionKind.ERASE]
        if not erase_positions:
            continue
        subjects = store.subjects_of(uid)
        edges = sorted(
            e.derived_id for e in by_input[uid]
            if e.invertible and e.subjects_identifiable
            and store.status_of(e.derived_id) is ErasureStatus.LIVE
            and store.subjects_of(e.derived_id) & subjects)
        if edges:
            out.append(Violation(II, uid, (erase_positions[-1],) + tuple(f"edge:{d}" for d in edges), now))
    return out


def classify_inv(unit_id: str, store) -> bool:
    """Whether an erased unit can still be restored exactly."""
    if store.status_of(unit_id) is ErasureStatus.LIVE:
        raise UnitLive(f"unit {unit_id!r} is live")
    return store.has_escrow(unit_id)


def audit(store, now: Optional[int] = None, *, include_metadata: bool = False) -> list:
    ledger = store.ledger
    now = _now(ledger, now)
    found = (check_g6(ledger, store, now=now, include_metadata=include_metadata)
             + check_g17(store, ledger, now, include_metadata=include_metadata)
             + detect_ir(ledger, store, now=now, include_metadata=include_metadata)
             + detect_ii(store.edges(), store, now=now))
    return sorted(found, key=Violation.sort_key)


def report_lines(violations, timestamps: bool = False) -> list:
    return [v.to_json(timestamps) for v in sorted(violations, key=Violation.sort_key)]


def characterize(mode) -> ErasureCharacterization:
    """Run a base unit with one invertible derived child through ``mode`` and
    measure which erasure properties remain feasible."""
    from .store import Store, StoreConfig

    mode = ErasureMode(mode)
    ctrl = Entity("controller", EntityKind.CONTROLLER)
    owner = subject("s1")
    policies = {Policy("service", ctrl, 0, 1000), Policy("access", owner, 0, 1000),
                Policy(COMPLIANCE_ERASE, ctrl, 0, 2000)}
    with tempfile.TemporaryDirectory() as tmp:
        with Store.create(f"{tmp}/store", StoreConfig(logging="none", cache_size=0)) as store:
            store.put(DataUnit("x", {owner}, {"o"}, ((b"personal value", 10),), policies),
                      ctrl, "service", 10)
            store.derive(["x"], b"f(personal value)", "f", True, ctrl, "service", 20, unit_id="y")
            store.erase("x", mode, ctrl, 100)
            # reads by the subject and the controller, inside and after the policy windows
            for who, purpose, t in ((owner, "access", 150), (ctrl, "service", 150),
                                    (owner, "access", 1500), (ctrl, "service", 1500)):
                try:
                    store.get("x", who, purpose, t)
                except DataCaseError:
                    pass
            ir = any(v.unit_id == "x" for v in detect_ir(store.ledger, store))
            ii = any(v.unit_id == "x" for v in detect_ii(store.edges(), store))
            inv = classify_inv("x", store)
    return ErasureCharacterization(mode, ir, ii, inv)


def characterize_all() -> list:
    return [characterize(m) for m in ErasureMode]
