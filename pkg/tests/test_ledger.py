import io
import json

import pytest
from hypothesis import given, settings, strategies as st

from datacase.errors import TimeRegression, UnknownUnit
from datacase.ledger import SENTINEL, Ledger, RedactionReason, decode_body, digest_of, encode_record
from datacase.model import ActionKind, ActionRecord, Entity, EntityKind, ErasureMode


@st.composite
def records(draw, t=None):
    action = draw(st.sampled_from(list(ActionKind)))
    return ActionRecord(
        unit_id=draw(st.text(min_size=1, max_size=12)),
        purpose=draw(st.text(min_size=1, max_size=10)),
        entity=Entity(draw(st.text(min_size=1, max_size=8)), draw(st.sampled_from(list(EntityKind)))),
        action=action,
        time=draw(st.integers(0, 2**40)) if t is None else t,
        regulation_required=draw(st.booleans()),
        erase_mode=draw(st.sampled_from(list(ErasureMode))) if action is ActionKind.ERASE else None,
        digest=draw(st.binary(min_size=16, max_size=16)),
        detail=draw(st.text(max_size=20)),
        redacted=draw(st.booleans()),
    )


@given(records())
def test_encoding_roundtrip(r):
    blob = encode_record(r)
    assert decode_body(blob[4:-4]) == r


def rec(uid, t, action=ActionKind.READ, digest=b"\x01" * 16):
    return ActionRecord(uid, "billing", Entity("netflix"), action, t, digest=digest)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.sampled_from("abc"), st.integers(0, 5)), max_size=30))
def test_reopen_restores_every_record(tmp_path_factory, steps):
    path = tmp_path_factory.mktemp("ledger") / "actions.log"
    led = Ledger(str(path))
    t = 0
    written = []
    for uid, dt in steps:
        t += dt
        written.append(rec(uid, t))
        led.append(written[-1])
    led.close()
    again = Ledger(str(path))
    assert again.records() == written
    for uid in "abc":
        assert again.history_of(uid) == [r for r in written if r.unit_id == uid]
    again.close()


def test_append_rejects_time_regression():
    led = Ledger()
    led.append(rec("a", 10))
    with pytest.raises(TimeRegression):
        led.append(rec("a", 9))
    assert len(led) == 1


def test_torn_tail_is_dropped(tmp_path):
    path = tmp_path / "actions.log"
    led = Ledger(str(path))
    for t in range(3):
        led.append(rec("a", t))
    led.close()
    data = path.read_bytes()
    path.write_bytes(data[:-5])
    again = Ledger(str(path))
    assert len(again) == 2
    again.append(rec("a", 7))
    again.close()
    assert [r.time for r in Ledger(str(path)).records()] == [0, 1, 7]


def test_redaction_rewrites_in_place_and_persists(tmp_path):
    path = tmp_path / "actions.log"
    led = Ledger(str(path))
    secret = digest_of(b"secret")
    led.append(rec("a", 1, digest=secret))
    led.append(rec("b", 2, digest=secret))
    led.append(rec("a", 3, digest=secret))
    changed = led.redact_values("a", RedactionReason.STRONG_DELETE, 4)
    assert changed == 2
    assert all(r.digest == SENTINEL and r.redacted for r in led.history_of("a"))
    assert led.last_record("a").detail == "redact:strong-delete"
    assert led[1].digest == secret and not led[1].redacted
    assert [m.position for m in led.redactions] == [0, 2]
    led.close()
    assert path.read_bytes().count(secret) == 1
    again = Ledger(str(path))
    assert [m.position for m in again.redactions] == [0, 2]
    assert again.records() == led.records()


def test_redaction_of_unknown_unit():
    with pytest.raises(UnknownUnit):
        Ledger().redact_values("ghost", "strong-delete", 0)


def test_export_fields_are_fixed():
    led = Ledger()
    led.append(ActionRecord("a", "compliance-erase", Entity("netflix"), ActionKind.ERASE, 0,
                            True, ErasureMode.DELETE))
    out = io.StringIO()
    assert led.export_jsonl(out) == 1
    doc = json.loads(out.getvalue())
    assert doc == {"unit_id": "a", "purpose": "compliance-erase", "entity": "controller:netflix",
                   "action": "erase(delete)", "time": "1970-01-01T00:00:00Z",
                   "regulation_required": True, "redacted": False}


def test_audit_scan_positions():
    led = Ledger()
    for t, kind in enumerate([ActionKind.READ, ActionKind.SHARE, ActionKind.READ]):
        led.append(rec("a", t, kind))
    assert led.audit_scan(lambda r: r.action is ActionKind.READ) == [0, 2]
