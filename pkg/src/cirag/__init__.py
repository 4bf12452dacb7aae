"""Iterative construction-integration retrieval with cascaded multi-granularity answering."""

from .acmg import CascadeResult, Granularity, GranularityAnswer, cascade, is_refusal, render_context
from .backend import (
    Backend,
    CompletionRequest,
    CompletionResult,
    FunctionBackend,
    HTTPBackend,
    HTTPConfig,
    ReplayBackend,
    ReplayRule,
    Role,
)
from .corpus import CorpusStats, Document, DocumentStore, Sentence, ingest_corpus, segment_sentences
from .distill import Trajectory, export_training_examples, filter_trajectories, record_trajectory
from .estimator import CIRAG, AnswerTrace
from .evaluation import QAExample, exact_match, load_dataset, run_eval, token_f1
from .extraction import TripleCache, extract_for_documents
from .ici import CumulativePools, ICIResult, PipelineConfig, StopReason, run_ici
from .integration import IntegrationDecision, build_integration_prompt, parse_integration_output
from .retrieval import BM25Index, Retriever, RetrieverConfig, retrieve_topk, rerank_triples
from .text import normalize_text
from .triples import CandidateTripleSet, Triple

__version__ = "0.1.0"

__all__ = [
    "AnswerTrace", "BM25Index", "Backend", "CIRAG", "CandidateTripleSet", "CascadeResult",
    "CompletionRequest", "CompletionResult", "CorpusStats", "CumulativePools", "Document",
    "DocumentStore", "FunctionBackend", "Granularity", "GranularityAnswer", "HTTPBackend",
    "HTTPConfig", "ICIResult", "IntegrationDecision", "PipelineConfig", "QAExample", "ReplayBackend",
    "ReplayRule", "Retriever", "RetrieverConfig", "Role", "Sentence", "StopReason", "Trajectory",
    "Triple", "TripleCache", "build_integration_prompt", "cascade", "exact_match",
    "export_training_examples", "extract_for_documents", "filter_trajectories", "ingest_corpus",
    "is_refusal", "load_dataset", "normalize_text", "parse_integration_output", "record_trajectory",
    "render_context", "rerank_triples", "retrieve_topk", "run_eval", "run_ici", "segment_sentences",
    "token_f1",
]
