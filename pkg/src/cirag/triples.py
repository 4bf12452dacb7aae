"""Knowledge triples with source provenance, and per-round candidate sets."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable

from .text import normalize_text


def serialize(subject: str, relation: str, obj: str) -> str:
    return f"({subject}, {relation}, {obj})"


@dataclass(frozen=True)
class Triple:
    """A normalized (subject, relation, object) fact.

    ``doc_id`` and ``sentence_index`` record where the fact was extracted;
    ``sentence_index`` is None when no sentence of the source shares a token
    with the subject or object.
    """

    subject: str
    relation: str
    object: str
    doc_id: str
    sentence_index: int | None = None

    @classmethod
    def from_raw(cls, subject: str, relation: str, obj: str, doc_id: str,
                 sentence_index: int | None = None) -> "Triple":
        return cls(normalize_text(subject), normalize_text(relation), normalize_text(obj),
                   doc_id, sentence_index)

    @property
    def normalized(self) -> str:
        return serialize(self.subject, self.relation, self.object)

    @property
    def fields(self) -> tuple[str, str, str]:
        return (self.subject, self.relation, self.object)

    def quoted(self) -> str:
        """Reader-prompt rendering: ``('s', 'r', 'o')``."""
        return "(" + ", ".join(f"'{x}'" for x in self.fields) + ")"

    def as_json_row(self) -> str:
        return json.dumps(list(self.fields), ensure_ascii=False)

    def to_dict(self) -> dict:
        return {
            "subject": self.subject,
            "relation": self.relation,
            "object": self.object,
            "doc_id": self.doc_id,
            "sentence_index": self.sentence_index,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Triple":
        return cls(d["subject"], d["relation"], d["object"], d["doc_id"], d.get("sentence_index"))


def row_key(row: Iterable[str]) -> str:
    """Normalized serialization of a raw [s, r, o] row, for matching."""
    s, r, o = (normalize_text(str(x)) for x in row)
    return serialize(s, r, o)


def dedupe(triples: Iterable[Triple]) -> list[Triple]:
    """Keep the first triple per normalized serialization, preserving order."""
    seen: set[str] = set()
    out = []
    for t in triples:
        if t.normalized not in seen:
            seen.add(t.normalized)
            out.append(t)
    return out


@dataclass
class CandidateTripleSet:
    query: str
    iteration: int
    triples: list[Triple] = field(default_factory=list)

    def __post_init__(self):
        keys = [t.normalized for t in self.triples]
        if len(set(keys)) != len(keys):
            raise ValueError("candidate set contains duplicate triples")

    def __len__(self) -> int:
        return len(self.triples)

    def __iter__(self):
        return iter(self.triples)

    def render_lines(self) -> str:
        return "\n".join(t.as_json_row() for t in self.triples)

    def to_dict(self) -> dict:
        return {
            "query": self.query,
            "iteration": self.iteration,
            "triples": [t.to_dict() for t in self.triples],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CandidateTripleSet":
        return cls(d["query"], d["iteration"], [Triple.from_dict(t) for t in d["triples"]])
