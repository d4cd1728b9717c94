import itertools
import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from edd.data import AttributeSchema, SignClass, default_classes, default_schema
from edd.verify import (
    Belnap,
    ConditionKB,
    KBError,
    Policy,
    belnap_category,
    candidate_classes,
    candidates_for_facts,
    decide,
    default_kb,
    facts_of,
    format_fact,
    parse_fact,
    verify,
)

from oracles import belnap_oracle, candidate_oracle
from scenarios import (
    REPLAY_CASES,
    REPLAY_CLASSES,
    REPLAY_SCHEMA,
    TOY_CLASSES,
    TOY_SCHEMA,
    replay_kb,
    toy_kb_handmade,
)

SCHEMA = default_schema()
CLASSES = default_classes(SCHEMA)


# -- worked examples ----------------------------------------------------------------


@pytest.mark.parametrize("predicted, attrs, cands, category, decision", REPLAY_CASES)
def test_worked_example_replay(predicted, attrs, cands, category, decision):
    kb = replay_kb()
    p = REPLAY_CLASSES.index(predicted)
    got = candidate_classes(attrs, kb)
    assert {REPLAY_CLASSES[c] for c in got} == cands
    assert belnap_category(p, got).value == category
    assert decide(p, got) == decision
    r = verify(p, attrs, kb)
    assert r.decision == decision and r.category.value == category
    assert f"category {category}" in r.justification


def test_missing_digit_justification_names_the_gap():
    _, attrs, _, _, _ = REPLAY_CASES[1]
    r = verify(0, attrs, replay_kb())
    assert "symbol_a=digit8" in r.justification
    assert "no sufficient condition" in r.justification


# -- category and decision ---------------------------------------------------------------


def test_belnap_categories():
    assert belnap_category(2, {2}) is Belnap.TRUE
    assert belnap_category(2, {1, 2}) is Belnap.BOTH
    assert belnap_category(2, {1}) is Belnap.FALSE
    assert belnap_category(2, set()) is Belnap.NONE


def test_all_classes_as_candidates_rejects():
    for p in range(5):
        assert decide(p, range(5)) == "reject"


def test_permissive_policy_accepts_both_only():
    assert decide(1, {1, 2}, Policy.PERMISSIVE) == "accept"
    assert decide(1, {2}, "permissive") == "reject"
    assert decide(1, set(), "permissive") == "reject"
    assert decide(1, {1, 2}) == "reject"


@given(st.integers(0, 6), st.sets(st.integers(0, 6)))
def test_category_partition_and_strict_decision(pred, cands):
    cat = belnap_category(pred, cands)
    assert cat.value == belnap_oracle(pred, cands)
    assert (decide(pred, cands) == "accept") == (cat is Belnap.TRUE)


# -- exhaustive oracle ---------------------------------------------------------------------


def _plain(kb):
    return [set(n) for n in kb.necessary], [[set(s) for s in ss] for ss in kb.sufficient]


@pytest.mark.parametrize("make_kb", [toy_kb_handmade, lambda: default_kb(TOY_SCHEMA, TOY_CLASSES)])
def test_exhaustive_agreement_with_set_oracle(make_kb):
    kb = make_kb()
    nec, suf = _plain(kb)
    combos = list(itertools.product(*[range(n) for n in TOY_SCHEMA.sizes]))
    assert len(combos) <= 500
    seen = set()
    for code in combos:
        facts = set(zip(TOY_SCHEMA.names, TOY_SCHEMA.decode(code)))
        want = candidate_oracle(facts, nec, suf)
        got = candidate_classes(code, kb)
        assert set(got) == want, code
        for p in range(5):
            cat = belnap_category(p, got)
            assert cat.value == belnap_oracle(p, want)
            assert decide(p, got) == ("accept" if want == {p} else "reject")
            seen.add(cat)
    if make_kb is toy_kb_handmade:
        assert seen == set(Belnap)


@st.composite
def random_kbs(draw):
    schema = TOY_SCHEMA
    facts = [(g.name, v) for g in schema.groups for v in g.values]
    fact_sets = st.frozensets(st.sampled_from(facts), max_size=3)
    n = draw(st.integers(1, 5))
    necessary = tuple(draw(fact_sets) for _ in range(n))
    sufficient = tuple(
        tuple(draw(st.lists(st.frozensets(st.sampled_from(facts), min_size=1, max_size=3), min_size=1, max_size=3)))
        for _ in range(n)
    )
    return ConditionKB(schema, tuple(f"c{i}" for i in range(n)), necessary, sufficient)


@given(random_kbs())
def test_random_kbs_agree_with_oracle(kb):
    nec, suf = _plain(kb)
    for code in itertools.product(*[range(n) for n in TOY_SCHEMA.sizes]):
        facts = set(zip(TOY_SCHEMA.names, TOY_SCHEMA.decode(code)))
        assert set(candidate_classes(code, kb)) == candidate_oracle(facts, nec, suf)


@given(random_kbs(), st.tuples(*[st.integers(0, n - 1) for n in TOY_SCHEMA.sizes]), st.data())
def test_removing_a_fact_never_adds_a_candidate(kb, code, data):
    facts = facts_of(code, TOY_SCHEMA)
    drop = data.draw(st.sampled_from(sorted(facts)))
    assert candidates_for_facts(facts - {drop}, kb) <= candidates_for_facts(facts, kb)


# -- default KB ----------------------------------------------------------------------------


def test_default_kb_is_sound_on_clean_attributes():
    kb = default_kb(SCHEMA, CLASSES)
    for c in CLASSES:
        cands = candidate_classes(SCHEMA.encode(c.assignment), kb)
        assert c.id in cands
        assert verify(c.id, SCHEMA.encode(c.assignment), kb).accepted


def test_default_kb_structure():
    kb = default_kb(SCHEMA, CLASSES)
    keep_right = [c.id for c in CLASSES if c.name == "keep_right"][0]
    assert frozenset({("symbol", "chevron")}) in kb.sufficient[keep_right]
    for c in CLASSES:
        defining = dict(zip(SCHEMA.names, c.assignment))
        assert kb.necessary[c.id] == frozenset({("shape", defining["shape"]), ("symbol", defining["symbol"])})
    kb.check_against(CLASSES)


def test_default_kb_falls_back_to_full_assignment():
    classes = [
        SignClass(0, "a", ("red", "none", "circle", "bar")),
        SignClass(1, "b", ("blue", "none", "circle", "bar")),
        SignClass(2, "c", ("red", "black", "square", "dot")),
        SignClass(3, "d", ("blue", "black", "square", "dot")),
    ]
    kb = default_kb(SCHEMA, classes)
    for c in classes:
        assert kb.sufficient[c.id] == (frozenset(zip(SCHEMA.names, c.assignment)),)


def test_default_kb_rejects_indistinguishable_classes():
    a = CLASSES[0]
    with pytest.raises(KBError, match="indistinguishable"):
        default_kb(SCHEMA, [a, SignClass(1, "twin", a.assignment)])


def test_default_kb_reaches_accept_none_and_both():
    kb = default_kb(SCHEMA, CLASSES)
    names = kb.class_names
    stop, no_entry = names.index("stop"), names.index("no_entry")
    # clean stop sign
    assert verify(stop, ("red", "none", "octagon", "bar"), kb).category is Belnap.TRUE
    # octagon with a digit: stop's necessary symbol missing, nothing else fits
    assert verify(stop, ("red", "none", "octagon", "digit8"), kb).category is Belnap.NONE
    # black border and blue main colour are each sufficient for a different class
    end80, min80 = names.index("end_speed_limit_80"), names.index("minimum_speed_80")
    r = verify(end80, ("blue", "black", "circle", "digit8"), kb)
    assert r.category is Belnap.BOTH and set(r.candidates) == {end80, min80}
    assert not r.accepted
    assert verify(no_entry, ("red", "none", "octagon", "bar"), kb).category is Belnap.FALSE


# -- KB validation and file --------------------------------------------------------------


def test_kb_validation_errors():
    kb = replay_kb()
    with pytest.raises(KBError, match="unknown attribute group"):
        ConditionKB(REPLAY_SCHEMA, ("x",), (frozenset({("colour", "red")}),), ((frozenset({("shape", "round")}),),))
    with pytest.raises(KBError, match="not a value"):
        ConditionKB(REPLAY_SCHEMA, ("x",), (frozenset({("shape", "hexagon")}),), ((frozenset({("shape", "round")}),),))
    with pytest.raises(KBError, match="no sufficient"):
        ConditionKB(REPLAY_SCHEMA, ("x",), (frozenset(),), ((),))
    with pytest.raises(KBError, match="empty sufficient"):
        ConditionKB(REPLAY_SCHEMA, ("x",), (frozenset(),), ((frozenset(),),))
    with pytest.raises(KBError, match="every class"):
        ConditionKB(REPLAY_SCHEMA, ("x", "y"), kb.necessary[:1], kb.sufficient[:1])


def test_check_against_detects_contradiction():
    kb = default_kb(SCHEMA, CLASSES)
    bad = ConditionKB(SCHEMA, kb.class_names, (frozenset({("shape", "square")}),) + kb.necessary[1:], kb.sufficient)
    with pytest.raises(KBError, match="contradict"):
        bad.check_against(CLASSES)


def test_attrs_must_cover_every_group():
    kb = replay_kb()
    with pytest.raises(KBError, match="one value per group"):
        candidate_classes((0, 0), kb)
    with pytest.raises(KBError, match="out of range"):
        candidate_classes((0, 0, 0, 0, 9), kb)


def test_kb_file_round_trip(tmp_path):
    kb = toy_kb_handmade()
    kb.save(tmp_path / "kb.json")
    back = ConditionKB.load(tmp_path / "kb.json", TOY_SCHEMA)
    assert back == kb
    kb2 = ConditionKB.from_dict(json.loads((tmp_path / "kb.json").read_text()))
    assert kb2.to_dict() == kb.to_dict()


def test_kb_file_errors(tmp_path):
    p = tmp_path / "kb.json"
    p.write_text("{not json")
    with pytest.raises(KBError, match="JSON"):
        ConditionKB.load(p)
    d = toy_kb_handmade().to_dict()
    d["format_version"] = 2
    with pytest.raises(KBError, match="version"):
        ConditionKB.from_dict(d)
    with pytest.raises(KBError, match="schema"):
        ConditionKB.from_dict(toy_kb_handmade().to_dict(), SCHEMA)


@given(st.sampled_from([(g.name, v) for g in SCHEMA.groups for v in g.values]))
def test_fact_text_round_trip(fact):
    assert parse_fact(format_fact(fact)) == fact


@pytest.mark.parametrize("bad", ["shape", "=round", "shape=", ""])
def test_parse_fact_errors(bad):
    with pytest.raises(KBError):
        parse_fact(bad)
