import pytest
from hypothesis import given, strategies as st

from datacase.errors import EmptyInputs, ValidationError
from datacase.model import (COMPLIANCE_ERASE, ActionKind, ActionRecord, Category, DataUnit, Entity,
                            EntityKind, ErasureMode, ErasureStatus, Policy, derive_unit,
                            format_time, is_policy_consistent, parse_time, restrict_policies,
                            state_at, subject)

ENTS = [Entity("netflix"), Entity("bank", EntityKind.PROCESSOR), subject("bob")]
PURPOSES = ["billing", "ads", "analytics"]

times = st.integers(min_value=0, max_value=400)


@st.composite
def policies(draw):
    b = draw(times)
    return Policy(draw(st.sampled_from(PURPOSES)), draw(st.sampled_from(ENTS)), b,
                  b + draw(st.integers(0, 200)))


policy_sets = st.frozensets(policies(), max_size=6)


def unit(pols=(), uid="x", values=((b"v", 0),)):
    return DataUnit(uid, {subject("bob")}, {"app"}, values, pols)


def test_time_roundtrip_and_utc_default():
    assert format_time(parse_time("2023-01-02T03:04:05Z")) == "2023-01-02T03:04:05Z"
    assert parse_time("2023-01-02T03:04:05") == parse_time("2023-01-02T03:04:05+00:00")
    assert parse_time("2023-01-02T05:04:05+02:00") == parse_time("2023-01-02T03:04:05Z")


@given(st.integers(0, 4_000_000_000))
def test_format_then_parse_is_identity(t):
    assert parse_time(format_time(t)) == t


def test_entity_parse_and_str():
    e = Entity.parse("processor:bank")
    assert e == Entity("bank", EntityKind.PROCESSOR) and str(e) == "processor:bank"
    assert Entity.parse("plain") == Entity("plain", EntityKind.CONTROLLER)
    with pytest.raises(ValidationError):
        Entity("")


def test_policy_window_validation():
    with pytest.raises(ValidationError):
        Policy("billing", ENTS[0], 10, 9)
    with pytest.raises(ValidationError):
        Policy("", ENTS[0], 1, 2)
    assert Policy("billing", ENTS[0], 5, 5).t_f == 5


def test_base_unit_needs_one_subject_and_ordered_versions():
    with pytest.raises(ValidationError):
        DataUnit("x", {subject("a"), subject("b")})
    with pytest.raises(ValidationError):
        DataUnit("x", {Entity("netflix")})
    with pytest.raises(ValidationError):
        unit(values=((b"a", 5), (b"b", 5)))
    u = unit(values=((b"a", 1), (b"b", 7)))
    assert u.value_at(0) is None and u.value_at(6) == b"a" and u.value_at(7) == b"b"


def test_window_bounds_are_inclusive():
    p = Policy("billing", ENTS[0], 10, 20)
    for t, ok in ((9, False), (10, True), (20, True), (21, False)):
        r = ActionRecord("x", "billing", ENTS[0], ActionKind.READ, t)
        assert is_policy_consistent(r, state_at(unit({p}), t)) is ok


def test_regulation_required_is_always_consistent():
    r = ActionRecord("x", COMPLIANCE_ERASE, ENTS[1], ActionKind.ERASE, 99, True, ErasureMode.DELETE)
    assert is_policy_consistent(r, state_at(unit(), 99))


def test_purpose_map_restricts_actions():
    p = Policy("billing", ENTS[0], 0, 100)
    pm = {"billing": {ActionKind.READ}}
    read = ActionRecord("x", "billing", ENTS[0], ActionKind.READ, 5)
    share = ActionRecord("x", "billing", ENTS[0], ActionKind.SHARE, 5)
    s = state_at(unit({p}), 5)
    assert is_policy_consistent(read, s, pm) and not is_policy_consistent(share, s, pm)
    assert is_policy_consistent(share, s)


@given(policy_sets, st.sampled_from(PURPOSES), st.sampled_from(ENTS), times, st.booleans())
def test_consistency_matches_enumeration(pols, purpose, who, t, required):
    r = ActionRecord("x", purpose, who, ActionKind.READ, t, required)
    expected = required or any(p.purpose == purpose and p.entity == who and p.t_b <= t <= p.t_f
                               for p in pols)
    assert is_policy_consistent(r, state_at(unit(pols), t)) == expected


def test_erase_record_requires_mode():
    with pytest.raises(ValidationError):
        ActionRecord("x", COMPLIANCE_ERASE, ENTS[0], ActionKind.ERASE, 1)
    r = ActionRecord("x", COMPLIANCE_ERASE, ENTS[0], ActionKind.ERASE, 1,
                     erase_mode=ErasureMode.STRONG_DELETE)
    assert r.action_label == "erase(strong_delete)"


def test_erasure_order():
    ranks = [m.rank for m in ErasureMode]
    assert ranks == sorted(ranks)
    assert ErasureStatus.after(ErasureMode.REVERSIBLY_INACCESSIBLE) is ErasureStatus.REVERSIBLY_INACCESSIBLE
    assert ErasureStatus.after(ErasureMode.PERMANENT_DELETE) is ErasureStatus.PERMANENTLY_DELETED


@given(st.lists(policy_sets, min_size=1, max_size=4), times)
def test_restricted_policies_grant_only_what_every_input_grants(sets, t):
    derived = restrict_policies(sets)
    for p in derived:
        for pols in sets:
            assert any(q.purpose == p.purpose and q.entity == p.entity
                       and q.t_b <= p.t_b and p.t_f <= q.t_f for q in pols)
    # conversely, any key active in all inputs at t stays active in the result
    for purpose in PURPOSES:
        for who in ENTS:
            everywhere = all(any(q.purpose == purpose and q.entity == who and q.t_b <= t <= q.t_f
                                 for q in pols) for pols in sets)
            if len(sets) == 1:
                here = any(p.purpose == purpose and p.entity == who and p.t_b <= t <= p.t_f
                           for p in derived)
                assert here == everywhere
            elif everywhere:
                assert any(p.purpose == purpose and p.entity == who and p.t_b <= t <= p.t_f
                           for p in derived)


def test_derive_unit_unions_subjects_and_builds_edge():
    a = DataUnit("a", {subject("s1")}, {"o1"}, ((b"1", 0),), {Policy("ads", ENTS[0], 0, 50)})
    b = DataUnit("b", {subject("s2")}, {"o2"}, ((b"2", 0),), {Policy("ads", ENTS[0], 10, 80)})
    d, edge = derive_unit([a, b], "avg", False, 30)
    assert d.category is Category.DERIVED
    assert d.subjects == {subject("s1"), subject("s2")} and d.origins == {"o1", "o2"}
    assert d.policies == {Policy("ads", ENTS[0], 10, 50)}
    assert edge.input_ids == {"a", "b"} and edge.derived_id == d.id and not edge.invertible


def test_derive_unit_rejects_empty_inputs():
    with pytest.raises(EmptyInputs):
        derive_unit([], "f", True, 0)
