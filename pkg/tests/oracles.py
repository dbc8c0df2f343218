"""Independent reference implementations used by the test-suite.

Nothing here calls the checker or the store's audit views: instances are
generated through the public store API while the generator keeps its own
account of policies, statuses, subjects and provenance, and the oracles
recompute expected results from that account plus the raw ledger records.
"""

from __future__ import annotations

import os
import random
from dataclasses import dataclass, field

import networkx as nx

from datacase.errors import DataCaseError
from datacase.model import (COMPLIANCE_ERASE, ActionKind, ActionRecord, DataUnit, Entity,
                            EntityKind, ErasureMode, Policy)
from datacase.store import Store, StoreConfig

ENTITIES = (Entity("e0"), Entity("e1"), Entity("p0", EntityKind.PROCESSOR))
PURPOSES = ("billing", "ads", "service")
SUBJECTS = tuple(Entity(f"s{i}", EntityKind.DATA_SUBJECT) for i in range(5))

_STRICTNESS = {ErasureMode.REVERSIBLY_INACCESSIBLE: 1, ErasureMode.DELETE: 2,
               ErasureMode.STRONG_DELETE: 3, ErasureMode.PERMANENT_DELETE: 4}


@dataclass
class Truth:
    """What the generator knows about an instance, kept apart from the store."""

    policies: dict = field(default_factory=dict)     # uid -> current frozenset
    subjects: dict = field(default_factory=dict)     # uid -> frozenset
    strictness: dict = field(default_factory=dict)   # uid -> 0 live .. 4 permanent
    governing: dict = field(default_factory=dict)    # ledger position -> policies judged against
    edges: list = field(default_factory=list)        # (derived, inputs, invertible, identifiable)
    now: int = 0


def cascade_oracle(root: str, truth: Truth) -> set:
    """Units a strong delete of ``root`` must remove: descendants of ``root`` in the
    provenance graph restricted to subject-identifiable edges and units sharing a
    data subject with the root."""
    g = nx.DiGraph()
    g.add_node(root)
    mine = truth.subjects[root]
    for derived, inputs, _, identifiable in truth.edges:
        if not identifiable or not truth.subjects[derived] & mine:
            continue
        for src in inputs:
            if src == root or truth.subjects[src] & mine:
                g.add_edge(src, derived)
    return {root} | nx.descendants(g, root)


def random_dag(rng: random.Random, max_nodes: int = 30) -> list:
    """Nodes in topological order as (parents, subject, invertible, identifiable)."""
    nodes = []
    for i in range(rng.randrange(1, max_nodes + 1)):
        parents = sorted(rng.sample(range(i), rng.randrange(0, min(i, 3) + 1))) if i else []
        nodes.append((parents, rng.choice(("s0", "s1", "s2")), rng.random() < 0.6,
                      rng.random() < 0.8))
    return nodes


def build_dag(path: str, nodes: list, entity: Entity = ENTITIES[0]) -> tuple:
    """A store holding ``nodes`` (see ``random_dag``), with the matching Truth."""
    store = Store.create(path, StoreConfig(logging="none"))
    truth = Truth()
    pols = {Policy("service", entity, 0, 100), Policy(COMPLIANCE_ERASE, entity, 0, 100)}
    for i, (parents, who, invertible, identifiable) in enumerate(nodes):
        uid = f"n{i}"
        if not parents:
            subj = Entity(who, EntityKind.DATA_SUBJECT)
            store.put(DataUnit(uid, {subj}, {"device"}, ((b"v", 1),), pols), entity, "service", 1)
            truth.subjects[uid] = frozenset({subj})
        else:
            inputs = tuple(f"n{p}" for p in parents)
            store.derive(list(inputs), b"d", "f", invertible, entity, "service", 1,
                         unit_id=uid, subjects_identifiable=identifiable)
            truth.subjects[uid] = frozenset().union(*(truth.subjects[p] for p in inputs))
            truth.edges.append((uid, inputs, invertible, identifiable))
        truth.strictness[uid] = 0
    return store, truth


def _pick_active(rng, policies, t):
    live = [p for p in policies if p.t_b <= t <= p.t_f and p.purpose != COMPLIANCE_ERASE]
    return rng.choice(sorted(live)) if live else None


def _random_policies(rng, t, erase_policy: bool) -> set:
    out = {Policy(rng.choice(PURPOSES), rng.choice(ENTITIES), t - rng.randrange(0, 5),
                  t + rng.randrange(0, 150))}
    for _ in range(rng.randrange(0, 3)):
        b = t + rng.randrange(-40, 120)
        out.add(Policy(rng.choice(PURPOSES), rng.choice(ENTITIES), max(b, 0),
                       max(b, 0) + rng.randrange(0, 200)))
    if erase_policy:
        out.add(Policy(COMPLIANCE_ERASE, rng.choice(ENTITIES[:2]), t, t + rng.randrange(20, 300)))
    return out


def build_instance(rng: random.Random, path: str, max_units: int = 50,
                   max_records: int = 500) -> tuple:
    """Drive a fresh store through random lawful and injected unlawful actions.

    Injected faults: forced reads and updates outside any policy, removal of the
    compliance-erase policy, units created without one, late erasure, erasure
    by the wrong party, and plain deletes that leave invertible dependants.
    """
    store = Store.create(path, StoreConfig(logging="none", cache_size=8,
                                           access_control=rng.choice(
                                               ["role-based", "metadata-join", "fine-grained"])))
    truth = Truth()
    t = 1000
    # headroom: one cascade step appends at most two records per unit, and the
    # final injection adds two units and four records
    n_units = rng.randrange(1, max_units - 1)
    target = rng.randrange(n_units, max_records - 4 - 2 * max_units)
    made = 0

    def record(before: int, created: dict) -> None:
        for pos in range(before, len(store.ledger)):
            uid = store.ledger[pos].unit_id
            truth.governing[pos] = created.get(uid, truth.policies.get(uid, frozenset()))

    def live() -> list:
        return sorted(u for u, s in truth.strictness.items() if s == 0)

    steps = 0
    while len(store.ledger) < target and steps < 4 * max_records:
        steps += 1
        if made >= n_units and not live():
            break
        t += rng.randrange(1, 15)
        before = len(store.ledger)
        created: dict = {}
        roll = rng.random()
        try:
            if made < n_units and (roll < 0.25 or not live()):
                uid = f"u{made}"
                made += 1
                pols = _random_policies(rng, t, erase_policy=rng.random() < 0.85)
                subj = rng.choice(SUBJECTS)
                if rng.random() < 0.45 and live():
                    src = rng.choice(live())
                    grant = _pick_active(rng, truth.policies[src], t)
                    if grant is None:
                        continue
                    invertible = rng.random() < 0.6
                    identifiable = rng.random() < 0.8
                    store.derive([src], rng.randbytes(8), "f", invertible, grant.entity,
                                 grant.purpose, t, unit_id=uid, subjects_identifiable=identifiable)
                    derived_pols = store.current_policies(uid)
                    created[uid] = derived_pols
                    truth.policies[uid] = derived_pols
                    truth.subjects[uid] = truth.subjects[src]
                    truth.edges.append((uid, (src,), invertible, identifiable))
                else:
                    grant = _pick_active(rng, pols, t)
                    unit = DataUnit(uid, {subj}, {"device"}, ((rng.randbytes(8), t),), pols)
                    store.put(unit, grant.entity, grant.purpose, t)
                    created[uid] = frozenset(pols)
                    truth.policies[uid] = frozenset(pols)
                    truth.subjects[uid] = frozenset({subj})
                truth.strictness[uid] = 0
            elif roll < 0.45 and live():
                uid = rng.choice(live())
                grant = _pick_active(rng, truth.policies[uid], t)
                if grant is not None:
                    store.get(uid, grant.entity, grant.purpose, t)
            elif roll < 0.55 and live():
                # injected: read without regard to policy
                store.force_read(rng.choice(live()), rng.choice(ENTITIES), rng.choice(PURPOSES), t)
            elif roll < 0.58 and truth.strictness:
                # injected: arbitrary action straight into the history
                uid = rng.choice(sorted(truth.strictness))
                store.force_record(ActionRecord(uid, rng.choice(PURPOSES), rng.choice(ENTITIES),
                                                rng.choice([ActionKind.UPDATE_VALUE, ActionKind.SHARE]),
                                                t, regulation_required=rng.random() < 0.2))
            elif roll < 0.75 and live():
                uid = rng.choice(live())
                grant = _pick_active(rng, truth.policies[uid], t)
                if grant is None:
                    continue
                new = set(truth.policies[uid])
                if rng.random() < 0.3:
                    new = {p for p in new if p.purpose != COMPLIANCE_ERASE}
                new |= _random_policies(rng, t, erase_policy=rng.random() < 0.3)
                store.update_policies(uid, new, grant.entity, grant.purpose, t)
                truth.policies[uid] = frozenset(new)
            elif roll < 0.95 and truth.strictness:
                uid = rng.choice(sorted(truth.strictness))
                mode = rng.choice([ErasureMode.REVERSIBLY_INACCESSIBLE, ErasureMode.DELETE,
                                   ErasureMode.DELETE, ErasureMode.STRONG_DELETE])
                if _STRICTNESS[mode] <= truth.strictness[uid]:
                    continue
                erasers = [p.entity for p in truth.policies[uid] if p.purpose == COMPLIANCE_ERASE]
                who = rng.choice(erasers) if erasers and rng.random() < 0.85 else rng.choice(ENTITIES)
                if rng.random() < 0.4:
                    t += rng.randrange(0, 250)   # may push past the deadline
                store.erase(uid, mode, who, t)
                targets = cascade_oracle(uid, truth) if _STRICTNESS[mode] >= 3 else {uid}
                for u in targets:
                    truth.strictness[u] = max(truth.strictness[u], _STRICTNESS[mode])
            elif truth.strictness:
                uid = rng.choice(sorted(truth.strictness))
                if truth.strictness[uid] == 1:
                    store.restore_access(uid, t)
                    truth.strictness[uid] = 0
        except DataCaseError:
            pass
        finally:
            record(before, created)
    if rng.random() < 0.6:
        # injected: hide or delete a parent whose invertible child stays live
        t += 1
        subj = rng.choice(SUBJECTS)
        pols = frozenset({Policy("service", ENTITIES[0], t, t + 100),
                          Policy(COMPLIANCE_ERASE, ENTITIES[0], t, t + 100)})
        before = len(store.ledger)
        store.put(DataUnit("parent", {subj}, {"device"}, ((b"raw", t),), pols),
                  ENTITIES[0], "service", t)
        store.derive(["parent"], b"f(raw)", "f", True, ENTITIES[0], "service", t, unit_id="child")
        mode = rng.choice([ErasureMode.REVERSIBLY_INACCESSIBLE, ErasureMode.DELETE])
        store.erase("parent", mode, ENTITIES[0], t + 1)
        truth.policies["parent"] = pols
        truth.policies["child"] = store.current_policies("child")
        truth.subjects["parent"] = truth.subjects["child"] = frozenset({subj})
        truth.strictness["parent"], truth.strictness["child"] = _STRICTNESS[mode], 0
        truth.edges.append(("child", ("parent",), True, True))
        record(before, {"parent": pols, "child": truth.policies["child"]})
        t += 1
    truth.now = t + rng.choice([0, rng.randrange(1, 600)])
    return store, truth


def brute_force(store: Store, truth: Truth) -> set:
    """Every violation an audit at ``truth.now`` must report, as (kind, unit, evidence)."""
    ledger = store.ledger
    records = [ledger[i] for i in range(len(ledger))]
    positions: dict = {}
    for i, r in enumerate(records):
        positions.setdefault(r.unit_id, []).append(i)
    out = set()
    for i, r in enumerate(records):
        pols = truth.governing[i]
        active = [p for p in pols if p.t_b <= r.time <= p.t_f]
        if not r.regulation_required and not any(
                p.purpose == r.purpose and p.entity == r.entity for p in active):
            out.add(("G6-inconsistent-action", r.unit_id, (i,)))
        if r.action is ActionKind.READ and not active:
            out.add(("erasure-inconsistent-read", r.unit_id, (i,)))
    for uid, pols in truth.policies.items():
        mine = positions.get(uid, [])
        erase_pols = [p for p in pols if p.purpose == COMPLIANCE_ERASE]
        if not erase_pols:
            out.add(("G17-missing-policy", uid, tuple(mine)))
            continue
        last = records[mine[-1]]
        by_entity = [p.t_f for p in erase_pols if p.entity == last.entity]
        qualifying = (last.action is ActionKind.ERASE and last.purpose == COMPLIANCE_ERASE
                      and bool(by_entity))
        if qualifying and last.time <= max(by_entity):
            continue
        if truth.now <= max(p.t_f for p in erase_pols):
            continue
        if qualifying:
            out.add(("G17-late-erase", uid, (mine[-1],)))
        else:
            out.add(("G17-missing-erase", uid, tuple(mine)))
    dependants: dict = {}
    for derived, inputs, invertible, identifiable in truth.edges:
        for src in inputs:
            if (invertible and identifiable and truth.strictness[derived] == 0
                    and truth.subjects[derived] & truth.subjects[src]):
                dependants.setdefault(src, []).append(derived)
    for src, kids in dependants.items():
        if truth.strictness[src] == 0:
            continue
        erases = [i for i in positions[src] if records[i].action is ActionKind.ERASE]
        out.add(("erasure-inconsistent-inference", src,
                 (erases[-1],) + tuple(f"edge:{d}" for d in sorted(kids))))
    return out


def marker_counts(root: str, markers: dict) -> dict:
    """Occurrences of each marker across the raw bytes of every file under ``root``."""
    blobs = []
    for dirpath, _, files in os.walk(root):
        for name in files:
            with open(os.path.join(dirpath, name), "rb") as fh:
                blobs.append(fh.read())
    return {key: sum(b.count(m) for b in blobs) for key, m in markers.items()}
