"""LLM-prompted entity and triple extraction with provenance and caching."""

from __future__ import annotations

import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from . import prompts
from .backend import Backend, CompletionRequest, Role
from .corpus import Document, Sentence, segment_sentences
from .exceptions import CiragError, ExtractionError
from .text import normalize_text, tokenize
from .triples import Triple

logger = logging.getLogger(__name__)

__all__ = [
    "TripleCache",
    "ExtractionOutcome",
    "attach_provenance",
    "extract_entities",
    "extract_for_documents",
    "extract_triples",
    "normalize_text",
    "parse_json_object",
]


def parse_json_object(raw: str, key: str):
    """Return ``obj[key]`` from a JSON object embedded in ``raw``.

    Tries the whole text first, then once more after trimming to the
    outermost braces (models often wrap JSON in prose or code fences).
    """
    candidates = [raw.strip()]
    lo, hi = raw.find("{"), raw.rfind("}")
    if lo != -1 and hi > lo:
        candidates.append(raw[lo : hi + 1])
    for text in candidates:
        try:
            obj = json.loads(text)
        except (json.JSONDecodeError, RecursionError):
            continue
        if isinstance(obj, dict) and key in obj:
            return obj[key]
    raise ExtractionError(f"no JSON object with key {key!r} in response", raw)


def extract_entities(doc: Document, backend: Backend) -> list[str]:
    if not doc.body.strip():
        return []
    prompt = prompts.render("ner", document_text=doc.body)
    raw = backend.complete(CompletionRequest(Role.NER, prompt)).text
    value = parse_json_object(raw, "named entities")
    if not isinstance(value, list):
        raise ExtractionError("'named entities' is not a list", raw)
    return [str(e) for e in value if str(e).strip()]


def attach_provenance(fields: Sequence[str], doc: Document, sentences: Sequence[Sentence]) -> Triple:
    """Link a triple to the sentence sharing most tokens with its subject and object."""
    subject, relation, obj = (normalize_text(x) for x in fields)
    anchor = set(subject.split()) | set(obj.split())
    best, best_overlap = None, 0
    for sent in sentences:
        overlap = len(anchor.intersection(tokenize(sent.text)))
        if overlap > best_overlap:
            best, best_overlap = sent.index, overlap
    return Triple(subject, relation, obj, doc.id, best)


def extract_triples(doc: Document, entities: Sequence[str], backend: Backend,
                    sentences: Sequence[Sentence] | None = None) -> tuple[list[Triple], int]:
    """Prompt for triples; returns kept triples and the number of dropped rows."""
    if not doc.body.strip():
        return [], 0
    if sentences is None:
        sentences = segment_sentences(doc)
    prompt = prompts.render(
        "triple_extraction",
        document_title=doc.title,
        document_text=doc.body,
        entity_list=json.dumps({"named entities": list(entities)}, ensure_ascii=False),
    )
    raw = backend.complete(CompletionRequest(Role.TRIPLE_EXTRACT, prompt)).text
    rows = parse_json_object(raw, "triples")
    if not isinstance(rows, list):
        raise ExtractionError("'triples' is not a list", raw)
    kept, dropped = [], 0
    for row in rows:
        if not isinstance(row, list) or len(row) != 3 or not all(
            isinstance(x, (str, int, float)) and normalize_text(str(x)) for x in row
        ):
            dropped += 1
            continue
        kept.append(attach_provenance([str(x) for x in row], doc, sentences))
    if dropped:
        logger.warning("document %s: dropped %d malformed triple rows", doc.id, dropped)
    return kept, dropped


class TripleCache:
    """Per-document extraction results, optionally backed by a JSONL file.

    Entries are keyed by ``(doc_id, fingerprint, model)``; a lookup only hits
    when the prompt fingerprint and model id match this cache's. Entries are
    never overwritten.
    """

    def __init__(self, path: str | Path | None = None, fingerprint: str | None = None,
                 model: str = "unknown"):
        self.path = Path(path) if path is not None else None
        self.fingerprint = fingerprint or prompts.fingerprint("ner", "triple_extraction")
        self.model = model
        self._entries: dict[tuple[str, str, str], list[list]] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            self._load()

    def _load(self) -> None:
        with open(self.path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    key = (rec["doc_id"], rec["fingerprint"], rec["model"])
                    rows = rec["triples"]
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise CiragError(f"{self.path}:{lineno}: corrupt cache record") from exc
                self._entries.setdefault(key, rows)

    def _key(self, doc_id: str) -> tuple[str, str, str]:
        return (doc_id, self.fingerprint, self.model)

    def __contains__(self, doc_id: str) -> bool:
        return self._key(doc_id) in self._entries

    def __len__(self) -> int:
        return sum(1 for k in self._entries if k[1:] == (self.fingerprint, self.model))

    def get(self, doc_id: str) -> list[Triple] | None:
        rows = self._entries.get(self._key(doc_id))
        if rows is None:
            return None
        return [Triple(s, r, o, doc_id, idx) for s, r, o, idx in rows]

    def put(self, doc_id: str, triples: Sequence[Triple]) -> None:
        key = self._key(doc_id)
        rows = [[t.subject, t.relation, t.object, t.sentence_index] for t in triples]
        with self._lock:
            if key in self._entries:
                return
            self._entries[key] = rows
            if self.path is not None:
                rec = {"doc_id": doc_id, "fingerprint": self.fingerprint, "model": self.model,
                       "triples": rows}
                with open(self.path, "a", encoding="utf-8", newline="\n") as fh:
                    fh.write(json.dumps(rec, ensure_ascii=False) + "\n")

    def doc_ids(self) -> list[str]:
        return [k[0] for k in self._entries if k[1:] == (self.fingerprint, self.model)]


@dataclass
class ExtractionOutcome:
    triples: list[Triple] = field(default_factory=list)
    failures: dict[str, Exception] = field(default_factory=dict)
    hits: int = 0
    misses: int = 0
    dropped_rows: int = 0


def _extract_one(doc: Document, backend: Backend, sentences) -> tuple[list[Triple], int]:
    entities = extract_entities(doc, backend)
    return extract_triples(doc, entities, backend, sentences)


def extract_for_documents(docs: Sequence[Document], backend: Backend, cache: TripleCache | None = None,
                          store=None, max_workers: int = 1) -> ExtractionOutcome:
    """Extract triples for ``docs``, serving cached documents without LLM calls.

    A failing document is recorded in ``failures`` and the rest still run.
    Output order is document order, then response order within a document.
    """
    outcome = ExtractionOutcome()
    per_doc: dict[str, list[Triple]] = {}
    misses = []
    for doc in docs:
        cached = cache.get(doc.id) if cache is not None else None
        if cached is not None:
            per_doc[doc.id] = cached
            outcome.hits += 1
        else:
            misses.append(doc)
    outcome.misses = len(misses)

    def work(doc: Document):
        sentences = store.sentences(doc.id) if store is not None and doc.id in store else None
        return _extract_one(doc, backend, sentences)

    if max_workers > 1 and len(misses) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            futures = [(doc, pool.submit(work, doc)) for doc in misses]
            results = [(doc, _result(f)) for doc, f in futures]
    else:
        results = [(doc, _call(work, doc)) for doc in misses]

    for doc, res in results:
        if isinstance(res, Exception):
            outcome.failures[doc.id] = res
            continue
        triples, dropped = res
        outcome.dropped_rows += dropped
        per_doc[doc.id] = triples
        if cache is not None:
            cache.put(doc.id, triples)

    for doc in docs:
        outcome.triples.extend(per_doc.get(doc.id, []))
    return outcome


def _call(fn, arg):
    try:
        return fn(arg)
    except CiragError as exc:
        return exc


def _result(future):
    try:
        return future.result()
    except CiragError as exc:
        return exc
