"""Document ingestion, storage and rule-based sentence segmentation."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from .exceptions import CorpusError, DuplicateDocumentError
from .text import tokenize

ABBREVIATIONS = frozenset({"Mr.", "Mrs.", "Dr.", "St.", "Jr.", "U.S.", "e.g.", "i.e."})

# Sentence-final punctuation followed by whitespace or end-of-text, or a newline.
_BOUNDARY = re.compile(r"[.!?](?=\s|$)|\n")
_WORD_BEFORE = re.compile(r"(\S+)$")


@dataclass(frozen=True)
class Document:
    id: str
    title: str
    body: str

    def __post_init__(self):
        if not self.id:
            raise CorpusError("document id must be non-empty")
        if not self.body and not self.title:
            raise CorpusError(f"document {self.id!r} has neither title nor body")

    def to_record(self) -> dict:
        return {"id": self.id, "title": self.title, "text": self.body}


@dataclass(frozen=True)
class Sentence:
    doc_id: str
    index: int
    text: str
    span: tuple[int, int]


@dataclass(frozen=True)
class CorpusStats:
    document_count: int = 0
    sentence_count: int = 0
    token_count: int = 0


def segment_sentences(doc: Document) -> list[Sentence]:
    """Split ``doc.body`` into sentences.

    A boundary falls after ``.``, ``!`` or ``?`` when followed by whitespace or
    the end of the text, and at every newline. A period closing one of
    ``ABBREVIATIONS`` does not end a sentence. Each sentence's span indexes the
    trimmed text inside the original body, so ``body[begin:end] == text``.
    """
    body = doc.body
    cuts = []
    for m in _BOUNDARY.finditer(body):
        if m.group() == ".":
            word = _WORD_BEFORE.search(body, 0, m.end())
            if word and word.group(1).lstrip("([\"'") in ABBREVIATIONS:
                continue
        cuts.append(m.end())
    cuts.append(len(body))

    sentences: list[Sentence] = []
    start = 0
    for end in cuts:
        if end <= start:
            continue
        chunk = body[start:end]
        stripped = chunk.strip()
        if stripped:
            begin = start + (len(chunk) - len(chunk.lstrip()))
            sentences.append(
                Sentence(doc.id, len(sentences), stripped, (begin, begin + len(stripped)))
            )
        start = end
    return sentences


class DocumentStore:
    """Immutable-after-ingest mapping of document id to document.

    Sentences are segmented once at ingest time so provenance indices stay
    fixed for the life of the store.
    """

    def __init__(self, documents: Iterable[Document] = ()):
        self._docs: dict[str, Document] = {}
        self._sentences: dict[str, list[Sentence]] = {}
        for doc in documents:
            if doc.id in self._docs:
                raise DuplicateDocumentError(doc.id, -1, -1)
            self._docs[doc.id] = doc
            self._sentences[doc.id] = segment_sentences(doc)

    def __len__(self) -> int:
        return len(self._docs)

    def __iter__(self) -> Iterator[Document]:
        return iter(self._docs.values())

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._docs

    def __getitem__(self, doc_id: str) -> Document:
        return self._docs[doc_id]

    @property
    def ids(self) -> list[str]:
        return list(self._docs)

    def sentences(self, doc_id: str) -> list[Sentence]:
        return self._sentences[doc_id]

    def stats(self) -> CorpusStats:
        return CorpusStats(
            document_count=len(self._docs),
            sentence_count=sum(len(s) for s in self._sentences.values()),
            token_count=sum(len(tokenize(d.title)) + len(tokenize(d.body)) for d in self),
        )

    def write_jsonl(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for doc in self:
                fh.write(json.dumps(doc.to_record(), ensure_ascii=False, sort_keys=True) + "\n")


def read_corpus(source: str | Path) -> list[Document]:
    """Parse a corpus JSONL file, validating each record."""
    docs: list[Document] = []
    seen: dict[str, int] = {}
    with open(source, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(record, dict):
                raise CorpusError(f"line {lineno}: record is not an object")
            body = record.get("text", record.get("body"))
            doc_id = record.get("id")
            title = record.get("title")
            if not isinstance(doc_id, str) or not isinstance(title, str) or not isinstance(body, str):
                raise CorpusError(f"line {lineno}: record needs string fields id, title, text")
            if doc_id in seen:
                raise DuplicateDocumentError(doc_id, seen[doc_id], lineno)
            seen[doc_id] = lineno
            try:
                docs.append(Document(doc_id, title, body))
            except CorpusError as exc:
                raise CorpusError(f"line {lineno}: {exc}") from exc
    return docs


def ingest_corpus(source: str | Path) -> tuple[DocumentStore, CorpusStats]:
    store = DocumentStore(read_corpus(source))
    return store, store.stats()
