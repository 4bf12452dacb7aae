"""Cascaded answering over triple, sentence and passage evidence.

The reader is asked at the most compact granularity first and escalated one
level whenever it refuses. If all three refuse, a forced passage-level pass
without the refusal option produces the final answer, labelled DEFAULT.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Sequence

from . import prompts
from .backend import Backend, CompletionRequest, Role
from .exceptions import BackendError, CiragError
from .ici import CumulativePools
from .text import normalize_text

NO_EVIDENCE = "(no evidence)"
DEFAULT_REFUSAL_TOKENS = ("unanswerable",)

_ANSWER = re.compile(r"answer\s*:", re.IGNORECASE)
_THOUGHT = re.compile(r"^\s*thought\s*:", re.IGNORECASE)


class Granularity(enum.IntEnum):
    TRIPLE = 0
    SENTENCE = 1
    PASSAGE = 2
    DEFAULT = 3


CASCADE = (Granularity.TRIPLE, Granularity.SENTENCE, Granularity.PASSAGE)

_TEMPLATE = {
    Granularity.TRIPLE: ("reader_triple", Role.READER_TRIPLE),
    Granularity.SENTENCE: ("reader_sentence", Role.READER_SENTENCE),
    Granularity.PASSAGE: ("reader_passage", Role.READER_PASSAGE),
    Granularity.DEFAULT: ("reader_default", Role.READER_DEFAULT),
}


@dataclass(frozen=True)
class GranularityAnswer:
    level: Granularity
    raw: str
    thought: str
    answer: str | None
    sufficient: bool


@dataclass
class CascadeResult:
    attempts: list[GranularityAnswer] = field(default_factory=list)
    selected: Granularity | None = None
    final_answer: str = ""


class CascadeError(CiragError):
    def __init__(self, message: str, partial: CascadeResult, cause: BaseException):
        self.partial = partial
        self.cause = cause
        super().__init__(message)


def render_context(pools: CumulativePools, level: Granularity, store) -> str:
    """Evidence text for one granularity, in pool insertion order."""
    if level == Granularity.TRIPLE:
        if not pools.triples:
            return NO_EVIDENCE
        return "triples: " + ", ".join(t.quoted() for t in pools.triples)
    if level == Granularity.SENTENCE:
        lines = []
        for doc_id, idx in pools.sentences:
            sents = store.sentences(doc_id)
            if 0 <= idx < len(sents):
                lines.append(sents[idx].text)
        return "\n".join(lines) if lines else NO_EVIDENCE
    blocks = [f"{store[d].title}\n{store[d].body}" for d in pools.documents if d in store]
    return "\n\n".join(blocks) if blocks else NO_EVIDENCE


def split_reader_output(raw: str) -> tuple[str, str]:
    """Return (thought, answer segment) from reader output.

    The answer is whatever follows the last ``Answer:``; without one, the
    last line is taken as the answer.
    """
    marks = list(_ANSWER.finditer(raw))
    if marks:
        last = marks[-1]
        thought, answer = raw[: last.start()], raw[last.end() :]
    else:
        stripped = raw.rstrip()
        cut = stripped.rfind("\n")
        thought, answer = stripped[: cut + 1], stripped[cut + 1 :]
    thought = _THOUGHT.sub("", thought, count=1).strip()
    return thought, answer.strip()


def is_refusal(raw: str, refusal_tokens: Sequence[str] = DEFAULT_REFUSAL_TOKENS) -> bool:
    _, answer = split_reader_output(raw)
    norm = normalize_text(answer)
    if not norm:
        return True
    return any(normalize_text(tok) in norm for tok in refusal_tokens)


def clean_answer(answer: str) -> str:
    """Final-answer form: trimmed, one trailing period removed."""
    answer = answer.strip()
    return answer[:-1].rstrip() if answer.endswith(".") else answer


def answer_at(question: str, pools: CumulativePools, level: Granularity, backend: Backend, store,
              refusal_tokens: Sequence[str] = DEFAULT_REFUSAL_TOKENS,
              forced: bool = False) -> GranularityAnswer:
    if level == Granularity.DEFAULT and not forced:
        raise ValueError("DEFAULT level is only reachable as a forced pass")
    context_level = Granularity.PASSAGE if level == Granularity.DEFAULT else level
    template, role = _TEMPLATE[level]
    prompt = prompts.render(template, context=render_context(pools, context_level, store), query=question)
    raw = backend.complete(CompletionRequest(role, prompt)).text
    thought, segment = split_reader_output(raw)
    refused = is_refusal(raw, refusal_tokens)
    return GranularityAnswer(level, raw, thought, None if refused else segment, not refused)


def cascade(question: str, pools: CumulativePools, backend: Backend, store,
            refusal_tokens: Sequence[str] = DEFAULT_REFUSAL_TOKENS,
            levels: Sequence[Granularity] = CASCADE) -> CascadeResult:
    """Answer at the most compact sufficient granularity.

    ``levels`` restricts the cascade (for single- or two-level ablations);
    the forced DEFAULT pass always runs if every listed level refuses.
    """
    result = CascadeResult()
    try:
        for level in levels:
            attempt = answer_at(question, pools, level, backend, store, refusal_tokens)
            result.attempts.append(attempt)
            if attempt.sufficient:
                result.selected = level
                result.final_answer = clean_answer(attempt.answer)
                return result
        forced = answer_at(question, pools, Granularity.DEFAULT, backend, store, refusal_tokens, forced=True)
    except BackendError as exc:
        raise CascadeError(f"reader call failed: {exc}", result, exc) from exc
    result.attempts.append(forced)
    result.selected = Granularity.DEFAULT
    result.final_answer = clean_answer(split_reader_output(forced.raw)[1])
    return result
