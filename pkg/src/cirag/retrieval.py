"""Top-K document retrieval and top-N triple reranking.

The lexical scorer is Okapi BM25 over an inverted index with the
non-negative idf ``ln(1 + (N - df + 0.5) / (df + 0.5))``. The embedding scorer
ranks by cosine similarity of backend-provided unit vectors.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .corpus import Document
from .exceptions import EmptyQueryError, RetrievalError
from .text import tokenize
from .triples import CandidateTripleSet, Triple, dedupe

INDEX_FORMAT = "cirag-bm25-v1"
SCORERS = ("lexical_bm25", "embedding_cosine")


@dataclass(frozen=True)
class ScoredDocument:
    doc_id: str
    score: float
    rank: int


@dataclass(frozen=True)
class RetrieverConfig:
    k_docs: int = 10
    n_triples: int = 30
    scorer: str = "lexical_bm25"
    bm25_k1: float = 1.2
    bm25_b: float = 0.75

    def __post_init__(self):
        if self.k_docs < 1 or self.n_triples < 1:
            raise ValueError("k_docs and n_triples must be >= 1")
        if not 0.0 <= self.bm25_b <= 1.0:
            raise ValueError("bm25_b must lie in [0, 1]")
        if self.scorer not in SCORERS:
            raise ValueError(f"unknown scorer {self.scorer!r}; expected one of {SCORERS}")


class BM25Index:
    """Inverted index: term -> [(doc position, term frequency)]."""

    def __init__(self, doc_ids: Sequence[str], doc_tokens: Sequence[Sequence[str]]):
        if not doc_ids:
            raise RetrievalError("cannot index an empty corpus")
        self.doc_ids = list(doc_ids)
        self.doc_lengths = [len(toks) for toks in doc_tokens]
        self.avgdl = sum(self.doc_lengths) / len(self.doc_lengths)
        postings: dict[str, list[tuple[int, int]]] = {}
        for pos, toks in enumerate(doc_tokens):
            for term, tf in Counter(toks).items():
                postings.setdefault(term, []).append((pos, tf))
        self.postings = postings

    @classmethod
    def from_documents(cls, docs: Iterable[Document]) -> "BM25Index":
        docs = list(docs)
        return cls([d.id for d in docs], [tokenize(d.title) + tokenize(d.body) for d in docs])

    @classmethod
    def from_texts(cls, keys: Sequence[str], texts: Sequence[str]) -> "BM25Index":
        return cls(keys, [tokenize(t) for t in texts])

    def __len__(self) -> int:
        return len(self.doc_ids)

    def postings_for(self, term: str) -> list[tuple[int, int]]:
        return self.postings.get(term, [])

    def idf(self, term: str) -> float:
        df = len(self.postings.get(term, ()))
        n = len(self.doc_ids)
        return math.log(1.0 + (n - df + 0.5) / (df + 0.5))

    def scores(self, query_tokens: Sequence[str], k1: float = 1.2, b: float = 0.75) -> list[float]:
        out = [0.0] * len(self.doc_ids)
        for term in query_tokens:
            plist = self.postings.get(term)
            if not plist:
                continue
            idf = self.idf(term)
            for pos, tf in plist:
                norm = 1.0 - b + (b * self.doc_lengths[pos] / self.avgdl if self.avgdl > 0 else 0.0)
                out[pos] += idf * tf * (k1 + 1.0) / (tf + k1 * norm)
        return out

    def to_dict(self) -> dict:
        return {
            "format": INDEX_FORMAT,
            "doc_ids": self.doc_ids,
            "doc_lengths": self.doc_lengths,
            "postings": {t: [list(p) for p in ps] for t, ps in sorted(self.postings.items())},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BM25Index":
        if data.get("format") != INDEX_FORMAT:
            raise RetrievalError(f"unsupported index format {data.get('format')!r}")
        self = cls.__new__(cls)
        self.doc_ids = list(data["doc_ids"])
        self.doc_lengths = list(data["doc_lengths"])
        self.avgdl = sum(self.doc_lengths) / len(self.doc_lengths)
        self.postings = {t: [tuple(p) for p in ps] for t, ps in data["postings"].items()}
        return self

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "BM25Index":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def build_index(docs: Iterable[Document]) -> BM25Index:
    return BM25Index.from_documents(docs)


def _rank(keys: Sequence[str], scores: Sequence[float], k: int) -> list[ScoredDocument]:
    order = sorted(range(len(keys)), key=lambda i: (-scores[i], keys[i]))[:k]
    return [ScoredDocument(keys[i], float(scores[i]), r) for r, i in enumerate(order, start=1)]


def _cosine_scores(query_vec: np.ndarray, matrix: np.ndarray) -> list[float]:
    return [float(x) for x in matrix @ query_vec]


def retrieve_topk(index: BM25Index, query: str, cfg: RetrieverConfig = RetrieverConfig(),
                  backend=None, doc_vectors: np.ndarray | None = None) -> list[ScoredDocument]:
    """Return ``min(K, |corpus|)`` documents, best first, ties to smaller id."""
    q_tokens = tokenize(query)
    if not q_tokens:
        raise EmptyQueryError(query)
    if cfg.scorer == "embedding_cosine":
        if backend is None or doc_vectors is None:
            raise RetrievalError("embedding scorer needs a backend and document vectors")
        (q_vec,) = backend.embed([query])
        scores = _cosine_scores(q_vec, doc_vectors)
    else:
        scores = index.scores(q_tokens, cfg.bm25_k1, cfg.bm25_b)
    return _rank(index.doc_ids, scores, cfg.k_docs)


def _triple_tiebreak(t: Triple) -> tuple:
    idx = t.sentence_index
    return (t.doc_id, idx is None, idx if idx is not None else 0, t.normalized)


def rerank_triples(query: str, triples: Sequence[Triple], cfg: RetrieverConfig = RetrieverConfig(),
                   backend=None, iteration: int = 1) -> CandidateTripleSet:
    """Score deduplicated triples against ``query`` and keep the top N.

    Each triple is scored through its ``(s, r, o)`` serialization; under BM25
    the triple pool itself is the collection for idf and length statistics.
    """
    pool = dedupe(triples)
    if not pool:
        return CandidateTripleSet(query, iteration, [])
    texts = [t.normalized for t in pool]
    if cfg.scorer == "embedding_cosine":
        if backend is None:
            raise RetrievalError("embedding scorer needs a backend")
        vecs = backend.embed([query] + texts)
        scores = _cosine_scores(vecs[0], np.vstack(vecs[1:]))
    else:
        q_tokens = tokenize(query)
        if not q_tokens:
            raise EmptyQueryError(query)
        idx = BM25Index.from_texts([str(i) for i in range(len(pool))], texts)
        scores = idx.scores(q_tokens, cfg.bm25_k1, cfg.bm25_b)
    order = sorted(range(len(pool)), key=lambda i: (-scores[i], _triple_tiebreak(pool[i])))
    return CandidateTripleSet(query, iteration, [pool[i] for i in order[: cfg.n_triples]])


class Retriever(BaseEstimator):
    """Estimator wrapper: ``fit`` indexes documents, ``predict`` retrieves.

    Parameters mirror :class:`RetrieverConfig`; ``backend`` is only consulted
    by the ``embedding_cosine`` scorer.
    """

    def __init__(self, k_docs: int = 10, n_triples: int = 30, scorer: str = "lexical_bm25",
                 bm25_k1: float = 1.2, bm25_b: float = 0.75, backend=None):
        self.k_docs = k_docs
        self.n_triples = n_triples
        self.scorer = scorer
        self.bm25_k1 = bm25_k1
        self.bm25_b = bm25_b
        self.backend = backend

    @property
    def config(self) -> RetrieverConfig:
        return RetrieverConfig(self.k_docs, self.n_triples, self.scorer, self.bm25_k1, self.bm25_b)

    def fit(self, X, y=None, index: BM25Index | None = None):
        docs = list(X)
        cfg = self.config
        self.index_ = index if index is not None else build_index(docs)
        self.doc_vectors_ = None
        if cfg.scorer == "embedding_cosine":
            if self.backend is None:
                raise RetrievalError("embedding scorer needs a backend")
            self.doc_vectors_ = np.vstack(self.backend.embed([f"{d.title}\n{d.body}" for d in docs]))
        return self

    def retrieve(self, query: str) -> list[ScoredDocument]:
        check_is_fitted(self, "index_")
        return retrieve_topk(self.index_, query, self.config, self.backend, self.doc_vectors_)

    def rerank(self, query: str, triples: Sequence[Triple], iteration: int = 1) -> CandidateTripleSet:
        return rerank_triples(query, triples, self.config, self.backend, iteration)

    def predict(self, X) -> list[list[str]]:
        return [[d.doc_id for d in self.retrieve(q)] for q in X]
