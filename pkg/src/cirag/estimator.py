"""Estimator-style entry point tying retrieval, integration and cascaded answering."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .acmg import CASCADE, CascadeError, CascadeResult, Granularity, cascade
from .backend import Backend
from .exceptions import PipelineError
from .extraction import ExtractionOutcome, TripleCache, extract_for_documents
from .evaluation import exact_match
from .ici import ICIResult, PipelineConfig, Services, run_ici
from .retrieval import BM25Index, Retriever
from .validation import check_documents, check_questions


@dataclass
class AnswerTrace:
    question: str
    ici: ICIResult
    cascade: CascadeResult
    latency: dict[str, float] = field(default_factory=dict)

    @property
    def answer(self) -> str:
        return self.cascade.final_answer


class CIRAG(BaseEstimator):
    """Multi-hop question answering over a document collection.

    ``fit`` ingests documents and builds the retrieval index; ``predict``
    answers questions. All LLM work goes through ``backend``.

    Parameters
    ----------
    backend : Backend
        Completion (and, for ``scorer="embedding_cosine"``, embedding) provider.
    k_docs, n_triples : int
        Documents retrieved and candidate triples kept per round.
    max_iterations : int
        Upper bound on construction-integration rounds.
    reranker_enabled : bool
        When False every extracted triple becomes a candidate.
    cache_path : str or None
        JSONL triple cache; extraction results persist across runs.
    granularities : sequence of str or None
        Subset of ``("TRIPLE", "SENTENCE", "PASSAGE")`` for cascade ablations.
    """

    def __init__(self, backend: Backend | None = None, k_docs: int = 10, n_triples: int = 30,
                 max_iterations: int = 4, scorer: str = "lexical_bm25", bm25_k1: float = 1.2,
                 bm25_b: float = 0.75, reranker_enabled: bool = True,
                 character_budget_history: int = 200_000,
                 refusal_tokens: Sequence[str] = ("unanswerable",), cache_path: str | None = None,
                 extract_workers: int = 1, granularities: Sequence[str] | None = None):
        self.backend = backend
        self.k_docs = k_docs
        self.n_triples = n_triples
        self.max_iterations = max_iterations
        self.scorer = scorer
        self.bm25_k1 = bm25_k1
        self.bm25_b = bm25_b
        self.reranker_enabled = reranker_enabled
        self.character_budget_history = character_budget_history
        self.refusal_tokens = refusal_tokens
        self.cache_path = cache_path
        self.extract_workers = extract_workers
        self.granularities = granularities

    @property
    def pipeline_config(self) -> PipelineConfig:
        return PipelineConfig(
            max_iterations=self.max_iterations,
            retriever=self.retriever_.config if hasattr(self, "retriever_") else Retriever(
                self.k_docs, self.n_triples, self.scorer, self.bm25_k1, self.bm25_b).config,
            character_budget_history=self.character_budget_history,
            reranker_enabled=self.reranker_enabled,
        )

    def _levels(self) -> tuple[Granularity, ...]:
        if self.granularities is None:
            return CASCADE
        names = [str(g).upper() for g in self.granularities]
        if not names or not set(names) <= {"TRIPLE", "SENTENCE", "PASSAGE"}:
            raise ValueError("granularities must be a non-empty subset of TRIPLE/SENTENCE/PASSAGE")
        return tuple(sorted({Granularity[n] for n in names}))

    def fit(self, X, y=None, index: BM25Index | None = None, cache: TripleCache | None = None):
        if self.backend is None:
            raise ValueError("CIRAG needs a backend")
        self._levels()
        self.store_ = check_documents(X)
        self.retriever_ = Retriever(self.k_docs, self.n_triples, self.scorer, self.bm25_k1,
                                    self.bm25_b, backend=self.backend).fit(list(self.store_), index=index)
        self.cache_ = cache if cache is not None else TripleCache(self.cache_path, model=self.backend.model_id)
        self.config_ = self.pipeline_config
        return self

    @property
    def services(self) -> Services:
        check_is_fitted(self, "store_")
        return Services(self.store_, self.retriever_, self.backend, self.cache_, self.extract_workers)

    def precompute_triples(self) -> ExtractionOutcome:
        """Extract and cache triples for every document ahead of querying."""
        check_is_fitted(self, "store_")
        return extract_for_documents(list(self.store_), self.backend, self.cache_, self.store_,
                                     self.extract_workers)

    def answer(self, question: str, max_iterations: int | None = None) -> AnswerTrace:
        check_is_fitted(self, "store_")
        cfg = self.config_
        if max_iterations is not None:
            cfg = PipelineConfig(max_iterations, cfg.retriever, cfg.character_budget_history,
                                 cfg.reranker_enabled)
        start = time.perf_counter()
        ici = run_ici(question, cfg, self.services)
        t_gen = time.perf_counter()
        try:
            result = cascade(question, ici.pools, self.backend, self.store_, tuple(self.refusal_tokens),
                             self._levels())
        except CascadeError as exc:
            raise PipelineError(f"answer generation failed: {exc}", partial=ici, cause=exc) from exc
        end = time.perf_counter()
        latency = ici.phase_latency()
        latency["generate"] = end - t_gen
        latency["total"] = end - start
        return AnswerTrace(question, ici, result, latency)

    def predict(self, X) -> list[str]:
        return [self.answer(q).answer for q in check_questions(X)]

    def score(self, X, y) -> float:
        """Mean exact match; each ``y`` item is a gold string or list of them."""
        preds = self.predict(X)
        golds = [[g] if isinstance(g, str) else list(g) for g in y]
        if len(golds) != len(preds):
            raise ValueError("X and y differ in length")
        return sum(exact_match(p, g) for p, g in zip(preds, golds)) / len(preds) if preds else 0.0
