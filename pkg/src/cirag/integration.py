"""History-conditioned filtering of candidate triples and next-query planning.

The integrator sees the original question, the first round's candidates and
every earlier round's (thought, kept facts, question, next candidates), and
must answer with three marked sections::

    [[ ## thought ## ]]
    ...
    [[ ## fact_after_filter ## ]]
    {"fact": [["s", "r", "o"], ...]}
    [[ ## question ## ]]
    next question, or <no question>
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from . import prompts
from .backend import Backend, CompletionRequest, Role
from .exceptions import ExtractionError, IntegrationParseError
from .extraction import parse_json_object
from .triples import CandidateTripleSet, Triple, dedupe, row_key

logger = logging.getLogger(__name__)

NO_QUESTION = "<no question>"
NO_FACTS = "(none)"


def _marker(name: str) -> re.Pattern:
    return re.compile(r"\[\[\s*##\s*" + re.escape(name) + r"\s*##\s*\]\]", re.IGNORECASE)


THOUGHT = _marker("thought")
FACT_AFTER = _marker("fact_after_filter")
QUESTION = _marker("question")
ANY_MARKER = re.compile(r"\[\[\s*##[^\]]*##\s*\]\]")


@dataclass(frozen=True)
class IntegrationDecision:
    rationale: str
    core_triples: tuple[Triple, ...] = ()
    next_query: str | None = None
    dropped_rows: int = field(default=0, compare=False)
    retries: int = field(default=0, compare=False)
    fallback: bool = field(default=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "rationale": self.rationale,
            "core_triples": [t.to_dict() for t in self.core_triples],
            "next_query": self.next_query,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IntegrationDecision":
        return cls(d["rationale"], tuple(Triple.from_dict(t) for t in d["core_triples"]), d["next_query"])


@dataclass(frozen=True)
class IterationRecord:
    """One finished round.

    ``next_candidates`` is set whenever the loop went on to retrieve for
    ``next_query``; a round cut off by the iteration budget keeps its query but
    has no next candidates.
    """

    iteration: int
    rationale: str
    core_triples: tuple[Triple, ...]
    next_query: str | None
    next_candidates: CandidateTripleSet | None = None

    def __post_init__(self):
        if self.next_candidates is not None and self.next_query is None:
            raise ValueError("next_candidates given without a next_query")

    @property
    def decision(self) -> IntegrationDecision:
        return IntegrationDecision(self.rationale, self.core_triples, self.next_query)

    @classmethod
    def from_decision(cls, iteration: int, decision: IntegrationDecision,
                      next_candidates: CandidateTripleSet | None = None) -> "IterationRecord":
        return cls(iteration, decision.rationale, decision.core_triples, decision.next_query, next_candidates)


@dataclass(frozen=True)
class HistoryContext:
    records: tuple[IterationRecord, ...] = ()

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


def append_history(history: HistoryContext, record: IterationRecord) -> HistoryContext:
    if record.iteration != len(history) + 1:
        raise ValueError(
            f"record for iteration {record.iteration} cannot follow {len(history)} records"
        )
    return HistoryContext(history.records + (record,))


def _block(name: str, body: str) -> str:
    return f"[[ ## {name} ## ]]\n{body}\n\n"


def _facts(cands: CandidateTripleSet) -> str:
    return cands.render_lines() if len(cands) else NO_FACTS


def render_decision(decision: IntegrationDecision) -> str:
    """Sectioned text a model would emit for ``decision``."""
    facts = json.dumps({"fact": [list(t.fields) for t in decision.core_triples]}, ensure_ascii=False)
    return (
        _block("thought", decision.rationale)
        + _block("fact_after_filter", facts)
        + f"[[ ## question ## ]]\n{decision.next_query or NO_QUESTION}"
    )


def render_observation(cands: CandidateTripleSet) -> str:
    return "\n\n" + _block("fact_before_filter", _facts(cands))


def _render(question: str, initial: CandidateTripleSet, records: Sequence[IterationRecord]) -> str:
    parts = [
        prompts.load_template("integration").rstrip("\n"),
        "\n\n",
        _block("Original Query", question),
        _block("fact_before_filter", _facts(initial)),
    ]
    for rec in records:
        parts.append(render_decision(rec.decision))
        if rec.next_candidates is not None:
            parts.append(render_observation(rec.next_candidates))
    return "".join(parts)


def build_integration_prompt(question: str, initial_candidates: CandidateTripleSet,
                             history: HistoryContext = HistoryContext(),
                             char_budget: int | None = None) -> str:
    """Render the integration prompt for round ``len(history) + 1``.

    The prompt ends right where the model's thought section should begin.
    Past a ``char_budget``, thoughts are blanked oldest first; triples and
    questions are always kept.
    """
    records = list(history.records)
    text = _render(question, initial_candidates, records)
    i = 0
    while char_budget is not None and len(text) > char_budget and i < len(records):
        records[i] = replace(records[i], rationale="")
        text = _render(question, initial_candidates, records)
        i += 1
    return text


def presented_candidates(initial: CandidateTripleSet, history: HistoryContext) -> list[CandidateTripleSet]:
    sets = [initial]
    sets.extend(r.next_candidates for r in history if r.next_candidates is not None)
    return sets


def candidate_lookup(sets: Iterable[CandidateTripleSet]) -> dict[str, Triple]:
    """Normalized serialization -> triple, newest round winning."""
    lookup: dict[str, Triple] = {}
    for cands in reversed(list(sets)):
        for t in cands:
            lookup.setdefault(t.normalized, t)
    return lookup


def parse_integration_output(raw: str, candidates: dict[str, Triple] | Sequence[CandidateTripleSet] = ()
                             ) -> IntegrationDecision:
    """Parse sectioned integrator output.

    Kept facts are resolved against ``candidates`` by normalized
    serialization; rows that match no candidate are dropped.
    """
    if not isinstance(candidates, dict):
        candidates = candidate_lookup(candidates)
    m_t = THOUGHT.search(raw)
    m_f = FACT_AFTER.search(raw, m_t.end()) if m_t else None
    m_q = QUESTION.search(raw, m_f.end()) if m_f else None
    if not (m_t and m_f and m_q):
        missing = [n for n, m in (("thought", m_t), ("fact_after_filter", m_f), ("question", m_q)) if not m]
        raise IntegrationParseError(f"missing section marker(s): {', '.join(missing)}", raw)

    thought = _strip_colon(raw[m_t.end() : m_f.start()])
    try:
        rows = parse_json_object(raw[m_f.end() : m_q.start()], "fact")
    except ExtractionError as exc:
        raise IntegrationParseError("fact_after_filter is not a {\"fact\": [...]} object", raw) from exc
    if not isinstance(rows, list):
        raise IntegrationParseError("'fact' is not a list", raw)

    tail = raw[m_q.end() :]
    nxt = ANY_MARKER.search(tail)
    question = _strip_colon(tail[: nxt.start()] if nxt else tail)
    if not question or NO_QUESTION in question.lower():
        question = None

    core, dropped = [], 0
    for row in rows:
        if not isinstance(row, list) or len(row) != 3:
            dropped += 1
            continue
        hit = candidates.get(row_key(row))
        if hit is None:
            dropped += 1
        else:
            core.append(hit)
    if dropped:
        logger.warning("integration output: dropped %d unmatched fact rows", dropped)
    return IntegrationDecision(thought, tuple(dedupe(core)), question, dropped_rows=dropped)


def _strip_colon(section: str) -> str:
    if section.startswith(":"):
        section = section[1:]
    return section.strip()


def run_integration(question: str, initial_candidates: CandidateTripleSet, history: HistoryContext,
                    backend: Backend, char_budget: int | None = None) -> IntegrationDecision:
    """Prompt, complete and parse; one retry, then a terminating fallback."""
    prompt = build_integration_prompt(question, initial_candidates, history, char_budget)
    lookup = candidate_lookup(presented_candidates(initial_candidates, history))
    raw = ""
    for attempt in range(2):
        raw = backend.complete(CompletionRequest(Role.INTEGRATE, prompt)).text
        try:
            return replace(parse_integration_output(raw, lookup), retries=attempt)
        except IntegrationParseError as exc:
            logger.warning("integration parse failed (attempt %d): %s", attempt + 1, exc)
    return IntegrationDecision(raw, (), None, retries=1, fallback=True)
