from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cirag.backend import ReplayBackend, Role
from cirag.exceptions import IntegrationParseError
from cirag.integration import (
    NO_QUESTION,
    HistoryContext,
    IntegrationDecision,
    IterationRecord,
    append_history,
    build_integration_prompt,
    parse_integration_output,
    render_decision,
    run_integration,
)
from cirag.triples import CandidateTripleSet, Triple

from conftest import CASE_DIR, CASE_QUESTION

_RULES = json.loads((CASE_DIR / "script.json").read_text(encoding="utf-8"))["rules"]
STEP2_OUTPUT, STEP1_OUTPUT = [r["response"] for r in _RULES if r["role"] == "INTEGRATE"]

T1 = CandidateTripleSet(CASE_QUESTION, 1, [
    Triple.from_raw("God's Gift to Women", "directed by", "Michael Curtiz", "d1", 0),
    Triple.from_raw("Aldri annet enn bråk", "directed by", "Edith Carlmar", "d2", 0),
    Triple.from_raw("Dan Milne", "is", "British actor", "d3", 0),
])
T2 = CandidateTripleSet("What are the birth years of Michael Curtiz and Edith Carlmar?", 2, [
    Triple.from_raw("Michael Curtiz", "born on", "December 24, 1886", "d5", 0),
    Triple.from_raw("Edith Carlmar", "born on", "15 November 1911", "d4", 0),
    Triple.from_raw("Edith Carlmar", "died on", "17 May 2003", "d4", 0),
])


def step1_decision() -> IntegrationDecision:
    return parse_integration_output(STEP1_OUTPUT, [T1])


def test_first_round_prompt_has_one_observation_block():
    p = build_integration_prompt(CASE_QUESTION, T1)
    assert p.count("[[ ## Original Query ## ]]\n" + CASE_QUESTION) == 1
    body = p.split("[[ ## Original Query ## ]]", 1)[1]
    assert body.count("[[ ## fact_before_filter ## ]]") == 1
    assert body.count("[[ ## thought ## ]]") == 0
    assert '["god s gift to women", "directed by", "michael curtiz"]' in body


def test_second_round_prompt_has_full_cycle():
    h = append_history(HistoryContext(), IterationRecord.from_decision(1, step1_decision(), T2))
    body = build_integration_prompt(CASE_QUESTION, T1, h).split("[[ ## Original Query ## ]]", 1)[1]
    assert body.count("[[ ## fact_before_filter ## ]]") == 2
    for marker in ("thought", "fact_after_filter", "question"):
        assert body.count(f"[[ ## {marker} ## ]]") == 1
    # step-1 core triples and the birth-date candidates both present
    assert '{"fact": [["god s gift to women", "directed by", "michael curtiz"]' in body
    assert '["michael curtiz", "born on", "december 24 1886"]' in body
    assert "What are the birth years of Michael Curtiz and Edith Carlmar?" in body


def test_parse_step1_case_study():
    d = step1_decision()
    assert [t.normalized for t in d.core_triples] == [
        "(god s gift to women, directed by, michael curtiz)",
        "(aldri annet enn br k, directed by, edith carlmar)",
    ]
    assert d.next_query == "What are the birth years of Michael Curtiz and Edith Carlmar?"
    assert d.rationale.startswith("The query asks:")
    # resolved triples keep provenance from the candidates
    assert d.core_triples[0].doc_id == "d1"


def test_parse_no_question_and_spacing_tolerance():
    d = parse_integration_output(STEP2_OUTPUT, [T1, T2])
    assert d.next_query is None
    assert {t.normalized for t in d.core_triples} == {
        "(edith carlmar, born on, 15 november 1911)",
        "(michael curtiz, born on, december 24 1886)",
    }


def test_parse_empty_fact_list():
    raw = "[[ ## thought ## ]]\nnothing useful\n\n[[ ## fact_after_filter ## ]]\n{\"fact\": []}\n\n[[ ## question ## ]]\nWho?"
    d = parse_integration_output(raw, [T1])
    assert d.core_triples == ()
    assert d.next_query == "Who?"


def test_parse_drops_unmatched_rows():
    raw = ('[[ ## thought ## ]]\nx\n[[ ## fact_after_filter ## ]]\n'
           '{"fact": [["god s gift to women", "directed by", "michael curtiz"], ["made", "up", "fact"], ["short"]]}\n'
           '[[ ## question ## ]]\n<no question>')
    d = parse_integration_output(raw, [T1])
    assert len(d.core_triples) == 1
    assert d.dropped_rows == 2


def test_parse_tolerates_marker_whitespace_and_extra_markers():
    raw = ('[[##thought##]] x\n[[ ##  fact_after_filter ## ]] {"fact": []}\n'
           '[[ ## question ## ]]: Next?\n[[ ## fact_before_filter ## ]]\nhallucinated')
    d = parse_integration_output(raw, [T1])
    assert d.next_query == "Next?"


@pytest.mark.parametrize("raw", [
    "",
    "no markers at all",
    "[[ ## thought ## ]]\nx\n[[ ## question ## ]]\ny",
    "[[ ## thought ## ]]\nx\n[[ ## fact_after_filter ## ]]\nnot json\n[[ ## question ## ]]\ny",
    '[[ ## thought ## ]]\nx\n[[ ## fact_after_filter ## ]]\n{"fact": 3}\n[[ ## question ## ]]\ny',
])
def test_malformed_output_raises_typed_error(raw):
    with pytest.raises(IntegrationParseError):
        parse_integration_output(raw, [T1])


@settings(max_examples=300)
@given(st.text())
def test_parser_never_panics(raw):
    try:
        d = parse_integration_output(raw, [T1, T2])
    except IntegrationParseError:
        return
    presented = {t.normalized for t in T1} | {t.normalized for t in T2}
    assert all(t.normalized in presented for t in d.core_triples)


_word = st.text(alphabet="abcdefgh", min_size=1, max_size=6)
_phrase = st.lists(_word, min_size=1, max_size=3).map(" ".join)
_prose = st.text(alphabet=st.sampled_from(list("abcXYZ ,.?'\"\n0123")), max_size=60).map(str.strip).filter(
    lambda s: not s.startswith(":"))


@st.composite
def decisions(draw):
    fields = draw(st.lists(st.tuples(_phrase, _phrase, _phrase), min_size=0, max_size=6,
                           unique_by=lambda f: f))
    cands = CandidateTripleSet("q", 1, [Triple(*f, f"d{i}", i) for i, f in enumerate(fields)])
    core = tuple(t for t in cands if draw(st.booleans()))
    nxt = draw(st.one_of(st.none(), _prose.filter(bool)))
    return cands, IntegrationDecision(draw(_prose), core, nxt)


@settings(max_examples=300)
@given(decisions())
def test_render_parse_roundtrip(case):
    cands, decision = case
    parsed = parse_integration_output(render_decision(decision), [cands])
    assert parsed == decision
    assert parse_integration_output(render_decision(parsed), [cands]) == parsed


def test_terminal_render_ends_with_sentinel():
    d = IntegrationDecision("done", (), None)
    assert render_decision(d).endswith(NO_QUESTION)


def test_run_integration_valid():
    b = ReplayBackend().add(Role.INTEGRATE, STEP1_OUTPUT)
    d = run_integration(CASE_QUESTION, T1, HistoryContext(), b)
    assert d == step1_decision()
    assert d.retries == 0 and not d.fallback
    assert b.call_count(Role.INTEGRATE) == 1


def test_run_integration_garbage_twice_falls_back():
    b = ReplayBackend().add(Role.INTEGRATE, "garbage")
    d = run_integration(CASE_QUESTION, T1, HistoryContext(), b)
    assert d.fallback and d.core_triples == () and d.next_query is None
    assert b.call_count(Role.INTEGRATE) == 2


def test_run_integration_garbage_then_valid():
    b = ReplayBackend().add(Role.INTEGRATE, ["garbage", STEP1_OUTPUT])
    d = run_integration(CASE_QUESTION, T1, HistoryContext(), b)
    assert d.retries == 1 and not d.fallback
    assert len(d.core_triples) == 2


def test_append_history_order_and_rendering():
    d1 = step1_decision()
    h1 = append_history(HistoryContext(), IterationRecord.from_decision(1, d1, T2))
    assert len(h1) == 1
    d2 = IntegrationDecision("more", (), "A brand new question?")
    h2 = append_history(h1, IterationRecord.from_decision(2, d2, CandidateTripleSet("A brand new question?", 3)))
    assert [r.iteration for r in h2] == [1, 2]
    assert "A brand new question?" in build_integration_prompt(CASE_QUESTION, T1, h2)
    with pytest.raises(ValueError):
        append_history(h2, IterationRecord.from_decision(5, d2))


def test_record_requires_query_for_candidates():
    with pytest.raises(ValueError):
        IterationRecord(1, "x", (), None, T2)


def test_char_budget_blanks_oldest_thoughts_first():
    d1 = step1_decision()
    h = append_history(HistoryContext(), IterationRecord.from_decision(1, d1, T2))
    full = build_integration_prompt(CASE_QUESTION, T1, h)
    trimmed = build_integration_prompt(CASE_QUESTION, T1, h, char_budget=len(full) - 1)
    assert d1.rationale not in trimmed
    assert d1.next_query in trimmed
    assert '"michael curtiz"' in trimmed
