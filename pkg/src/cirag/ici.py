"""The iterative construction-integration loop.

Each round retrieves documents for the current query, extracts and reranks
their triples into a candidate set, lets the integrator keep a core subset and
propose the next query, then projects the core triples onto their source
sentences and documents and folds all three into cumulative pools.
"""

from __future__ import annotations

import enum
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .backend import Backend
from .corpus import DocumentStore
from .exceptions import BackendError, CiragError, PipelineError, RetrievalError
from .extraction import TripleCache, extract_for_documents
from .integration import (
    HistoryContext,
    IntegrationDecision,
    IterationRecord,
    append_history,
    run_integration,
)
from .retrieval import Retriever, RetrieverConfig
from .triples import CandidateTripleSet, Triple, dedupe


class StopReason(str, enum.Enum):
    NO_QUESTION = "no_question"
    MAX_ITERATIONS = "max_iterations"
    SAFE_TERMINATION = "safe_termination"


@dataclass(frozen=True)
class PipelineConfig:
    max_iterations: int = 4
    retriever: RetrieverConfig = field(default_factory=RetrieverConfig)
    character_budget_history: int = 200_000
    reranker_enabled: bool = True

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.character_budget_history < 1:
            raise ValueError("character_budget_history must be positive")


SentenceRef = tuple[str, int]


@dataclass(frozen=True)
class CumulativePools:
    triples: tuple[Triple, ...] = ()
    sentences: tuple[SentenceRef, ...] = ()
    documents: tuple[str, ...] = ()

    def sizes(self) -> dict[str, int]:
        return {"triples": len(self.triples), "sentences": len(self.sentences),
                "documents": len(self.documents)}

    def to_dict(self) -> dict:
        return {
            "triples": [t.to_dict() for t in self.triples],
            "sentences": [list(s) for s in self.sentences],
            "documents": list(self.documents),
        }


def project_core(core: Sequence[Triple]) -> tuple[list[SentenceRef], list[str]]:
    """Map core triples to their (deduplicated) source sentences and documents."""
    sents = list(dict.fromkeys((t.doc_id, t.sentence_index) for t in core if t.sentence_index is not None))
    docs = list(dict.fromkeys(t.doc_id for t in core))
    return sents, docs


def update_pools(pools: CumulativePools, core: Iterable[Triple], sents: Iterable[SentenceRef],
                 docs: Iterable[str]) -> CumulativePools:
    return CumulativePools(
        tuple(dedupe(list(pools.triples) + list(core))),
        tuple(dict.fromkeys(list(pools.sentences) + list(sents))),
        tuple(dict.fromkeys(list(pools.documents) + list(docs))),
    )


@dataclass
class Services:
    """Everything a question's run needs, shared read-only across questions."""

    store: DocumentStore
    retriever: Retriever
    backend: Backend
    cache: TripleCache | None = None
    extract_workers: int = 1


@dataclass
class ICIResult:
    question: str
    initial_candidates: CandidateTripleSet | None
    history: HistoryContext
    pools: CumulativePools
    iterations_used: int
    stop_reason: StopReason | None
    queries: list[str] = field(default_factory=list)
    rounds: list[dict] = field(default_factory=list)

    def phase_latency(self) -> dict[str, float]:
        total: dict[str, float] = {}
        for r in self.rounds:
            for phase, secs in r["timings"].items():
                total[phase] = total.get(phase, 0.0) + secs
        return total

    def write_log(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for r in self.rounds:
                fh.write(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n")


def _construct(query: str, iteration: int, cfg: PipelineConfig, services: Services,
               timings: dict[str, float]) -> tuple[CandidateTripleSet, list[str]]:
    t0 = time.perf_counter()
    hits = services.retriever.retrieve(query)
    t1 = time.perf_counter()
    docs = [services.store[h.doc_id] for h in hits]
    outcome = extract_for_documents(docs, services.backend, services.cache, services.store,
                                    services.extract_workers)
    t2 = time.perf_counter()
    if outcome.failures:
        first = next(iter(outcome.failures.values()))
        raise PipelineError(
            f"extraction failed for documents {sorted(outcome.failures)}", cause=first
        )
    if cfg.reranker_enabled:
        cands = services.retriever.rerank(query, outcome.triples, iteration)
    else:
        rank = {h.doc_id: h.rank for h in hits}
        ordered = sorted(
            outcome.triples,
            key=lambda t: (rank[t.doc_id], t.sentence_index is None, t.sentence_index or 0),
        )
        cands = CandidateTripleSet(query, iteration, dedupe(ordered))
    t3 = time.perf_counter()
    timings["retrieve"] = timings.get("retrieve", 0.0) + (t1 - t0)
    timings["extract"] = timings.get("extract", 0.0) + (t2 - t1)
    timings["rerank"] = timings.get("rerank", 0.0) + (t3 - t2)
    return cands, [h.doc_id for h in hits]


def run_ici(question: str, cfg: PipelineConfig, services: Services) -> ICIResult:
    """Run the loop for one question until no next query or ``max_iterations``.

    Retrieval, extraction and backend failures raise :class:`PipelineError`
    whose ``partial`` is the :class:`ICIResult` built so far.
    """
    result = ICIResult(question, None, HistoryContext(), CumulativePools(), 0, None, [question])
    query = question
    timings: dict[str, float] = {}
    try:
        cands, retrieved = _construct(query, 1, cfg, services, timings)
        result.initial_candidates = cands
        for t in range(1, cfg.max_iterations + 1):
            t0 = time.perf_counter()
            decision = run_integration(question, result.initial_candidates, result.history,
                                       services.backend, cfg.character_budget_history)
            timings["integrate"] = time.perf_counter() - t0
            sents, docs = project_core(decision.core_triples)
            result.pools = update_pools(result.pools, decision.core_triples, sents, docs)
            result.iterations_used = t

            if decision.fallback:
                result.stop_reason = StopReason.SAFE_TERMINATION
            elif decision.next_query is None:
                result.stop_reason = StopReason.NO_QUESTION
            elif t == cfg.max_iterations:
                result.stop_reason = StopReason.MAX_ITERATIONS
            round_log = _round_log(t, query, retrieved, cands, decision, result.pools, timings)
            result.rounds.append(round_log)

            if result.stop_reason is not None:
                result.history = append_history(result.history, IterationRecord.from_decision(t, decision))
                break
            query = decision.next_query
            result.queries.append(query)
            timings = {}
            cands, retrieved = _construct(query, t + 1, cfg, services, timings)
            result.history = append_history(result.history, IterationRecord.from_decision(t, decision, cands))
    except PipelineError as exc:
        exc.partial = result
        raise
    except (RetrievalError, BackendError, CiragError) as exc:
        raise PipelineError(f"question aborted: {exc}", partial=result, cause=exc) from exc
    return result


def _round_log(t: int, query: str, retrieved: list[str], cands: CandidateTripleSet,
               decision: IntegrationDecision, pools: CumulativePools, timings: dict[str, float]) -> dict:
    return {
        "iteration": t,
        "query": query,
        "retrieved": retrieved,
        "candidate_count": len(cands),
        "decision": decision.to_dict(),
        "retries": decision.retries,
        "fallback": decision.fallback,
        "pool_sizes": pools.sizes(),
        "timings": dict(timings),
    }
