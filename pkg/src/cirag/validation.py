"""Input coercion for the estimator entry points."""

from __future__ import annotations

from collections.abc import Iterable, Mapping

from .corpus import Document, DocumentStore
from .exceptions import CorpusError


def check_documents(X) -> DocumentStore:
    """Accept a DocumentStore, Documents, or ``{"id","title","text"}`` mappings."""
    if isinstance(X, DocumentStore):
        store = X
    else:
        if isinstance(X, (str, bytes)) or not isinstance(X, Iterable):
            raise TypeError(f"expected an iterable of documents, got {type(X).__name__}")
        docs = []
        for i, item in enumerate(X):
            if isinstance(item, Document):
                docs.append(item)
            elif isinstance(item, Mapping):
                try:
                    body = item["text"] if "text" in item else item["body"]
                    docs.append(Document(str(item["id"]), str(item.get("title", "")), str(body)))
                except KeyError as exc:
                    raise CorpusError(f"document {i}: missing field {exc.args[0]!r}") from exc
            else:
                raise TypeError(f"document {i}: unsupported type {type(item).__name__}")
        store = DocumentStore(docs)
    if len(store) == 0:
        raise CorpusError("cannot fit on an empty corpus")
    return store


def check_questions(X) -> list[str]:
    if isinstance(X, str):
        return [X]
    if not isinstance(X, Iterable):
        raise TypeError(f"expected question text or an iterable of questions, got {type(X).__name__}")
    out = []
    for i, q in enumerate(X):
        if not isinstance(q, str):
            raise TypeError(f"question {i}: expected str, got {type(q).__name__}")
        out.append(q)
    return out
