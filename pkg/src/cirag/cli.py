"""Command-line entry points: index, extract, answer, eval, export-trajectories, stats."""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .backend import Backend, HTTPBackend, HTTPConfig, ReplayBackend
from .corpus import DocumentStore, ingest_corpus, read_corpus
from .distill import (
    POLICIES,
    filter_trajectories,
    read_trajectories,
    record_trajectory,
    write_trajectories,
    write_training_examples,
)
from .estimator import CIRAG
from .evaluation import FORMATS, build_eval_corpus, load_dataset, run_eval
from .exceptions import CiragError
from .extraction import TripleCache, extract_for_documents
from .retrieval import BM25Index, build_index

logger = logging.getLogger("cirag")


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    text = p.read_text(encoding="utf-8")
    if p.suffix in (".yaml", ".yml"):
        import yaml

        cfg = yaml.safe_load(text) or {}
    else:
        cfg = json.loads(text)
    cfg["_base_dir"] = str(p.resolve().parent)
    return cfg


def _resolve(cfg: dict, value: str) -> str:
    p = Path(value)
    if not p.is_absolute() and "_base_dir" in cfg:
        p = Path(cfg["_base_dir"]) / p
    return str(p)


def make_backend(cfg: dict) -> Backend:
    bcfg = cfg.get("backend") or {}
    kind = bcfg.get("type", "replay")
    if kind == "replay":
        if "script" not in bcfg:
            raise CiragError("replay backend needs a 'script' path")
        return ReplayBackend.from_file(_resolve(cfg, bcfg["script"]))
    if kind == "oracle":
        from .synthetic import oracle_backend

        return oracle_backend()
    if kind == "http":
        keys = {"endpoint", "model", "timeout", "max_retries", "backoff",
                "max_in_flight", "embedding_model"}
        return HTTPBackend(HTTPConfig(**{k: v for k, v in bcfg.items() if k in keys}),
                           hash_embedding_fallback=bcfg.get("hash_embedding_fallback", False))
    raise CiragError(f"unknown backend type {kind!r}")


def make_model(cfg: dict, backend: Backend, args) -> CIRAG:
    pipe = cfg.get("pipeline", {})
    ret = cfg.get("retriever", {})
    params = dict(
        backend=backend,
        k_docs=ret.get("k_docs", 10),
        n_triples=ret.get("n_triples", 30),
        scorer=ret.get("scorer", "lexical_bm25"),
        bm25_k1=ret.get("bm25_k1", 1.2),
        bm25_b=ret.get("bm25_b", 0.75),
        max_iterations=pipe.get("max_iterations", 4),
        reranker_enabled=pipe.get("reranker_enabled", True),
        character_budget_history=pipe.get("character_budget_history", 200_000),
        refusal_tokens=tuple(cfg.get("refusal_tokens", ("unanswerable",))),
        granularities=pipe.get("granularities"),
        extract_workers=args.workers,
    )
    if getattr(args, "max_steps", None):
        params["max_iterations"] = args.max_steps
    if getattr(args, "no_reranker", False):
        params["reranker_enabled"] = False
    return CIRAG(**params)


def write_manifest(path: Path, command: str, args, cfg: dict, backend: Backend | None = None,
                   started: str | None = None, extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "engine_version": __version__,
        "argv": sys.argv[1:],
        "args": {k: v for k, v in vars(args).items() if k != "func"},
        "config": {k: v for k, v in cfg.items() if k != "_base_dir"},
        "backend": {"type": type(backend).__name__, "model": backend.model_id} if backend else None,
        "seed": getattr(args, "seed", None),
        "started": started,
        "finished": _now(),
    }
    if extra:
        manifest.update(extra)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str), encoding="utf-8")


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _load_store(args) -> tuple[DocumentStore, BM25Index | None]:
    if getattr(args, "index", None):
        d = Path(args.index)
        return DocumentStore(read_corpus(d / "documents.jsonl")), BM25Index.load(d / "index.json")
    if getattr(args, "corpus", None):
        store, _ = ingest_corpus(args.corpus)
        return store, None
    raise CiragError("pass --corpus or --index")


def cmd_index(args) -> int:
    started = _now()
    store, stats = ingest_corpus(args.corpus)
    index = build_index(store)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    store.write_jsonl(out / "documents.jsonl")
    index.save(out / "index.json")
    digest = hashlib.sha256((out / "index.json").read_bytes()).hexdigest()
    write_manifest(out / "manifest.json", "index", args, {}, started=started,
                   extra={"stats": vars(stats), "index_sha256": digest})
    print(json.dumps(vars(stats)))
    return 0


def cmd_extract(args) -> int:
    started = _now()
    cfg = load_config(args.config)
    store, _ = ingest_corpus(args.corpus)
    if len(store) == 0:
        raise CiragError("corpus is empty")
    backend = make_backend(cfg)
    cache = TripleCache(args.cache, model=backend.model_id)
    outcome = extract_for_documents(list(store), backend, cache, store, max_workers=args.workers)
    write_manifest(Path(str(args.cache) + ".manifest.json"), "extract", args, cfg, backend, started,
                   extra={"hits": outcome.hits, "misses": outcome.misses,
                          "failed": sorted(outcome.failures)})
    print(json.dumps({"documents": len(store), "cached": outcome.hits,
                      "extracted": outcome.misses - len(outcome.failures),
                      "llm_calls": backend.call_count()}))
    if outcome.failures:
        print("missing documents: " + " ".join(sorted(outcome.failures)), file=sys.stderr)
        return 0 if args.best_effort else 1
    return 0


def cmd_answer(args) -> int:
    cfg = load_config(args.config)
    backend = make_backend(cfg)
    store, index = _load_store(args)
    model = make_model(cfg, backend, args)
    cache = TripleCache(args.cache, model=backend.model_id) if args.cache else None
    model.fit(store, index=index, cache=cache)
    trace = model.answer(args.question)
    print(trace.answer)
    for rnd in trace.ici.rounds:
        d = rnd["decision"]
        print(f"[round {rnd['iteration']}] query={rnd['query']!r} candidates={rnd['candidate_count']} "
              f"core={len(d['core_triples'])} next={d['next_query']!r}", file=sys.stderr)
    print(f"[stop] {trace.ici.stop_reason.value} after {trace.ici.iterations_used} round(s); "
          f"granularity={trace.cascade.selected.name}", file=sys.stderr)
    if args.emit_trace:
        trace.ici.write_log(args.emit_trace)
    return 0


def cmd_eval(args) -> int:
    started = _now()
    cfg = load_config(args.config)
    examples = load_dataset(args.dataset, args.format, sample=args.sample, seed=args.seed)
    backend = make_backend(cfg)
    docs = build_eval_corpus(examples)
    model = make_model(cfg, backend, args)
    cache = TripleCache(args.cache, model=backend.model_id) if args.cache else None
    model.fit(docs, cache=cache)

    trajectories = []

    def keep(ex, row, trace):
        traj = record_trajectory(trace.ici, question_id=ex.id)
        traj.answer_correct = bool(row["em"])
        trajectories.append(traj)

    report = run_eval(examples, model, workers=args.workers, on_trace=keep)
    out = Path(args.report)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.write_json(out)
    if args.csv:
        report.write_csv(args.csv)
    traj_path = Path(args.trajectories) if args.trajectories else out.parent / "trajectories.jsonl"
    write_trajectories(trajectories, traj_path)
    write_manifest(Path(str(out) + ".manifest.json"), "eval", args, cfg, backend, started,
                   extra={"trajectories": str(traj_path)})
    agg = report.aggregates()
    print(json.dumps({k: agg[k] for k in ("count", "failed", "mean_em", "mean_f1",
                                          "granularity_distribution")}))
    return 0 if agg["failed"] == 0 or args.best_effort else 1


def cmd_export(args) -> int:
    started = _now()
    src = Path(args.run_dir)
    path = src / "trajectories.jsonl" if src.is_dir() else src
    trajs = filter_trajectories(read_trajectories(path), args.policy, args.cap)
    if args.format == "trajectories":
        n = write_trajectories(trajs, args.out)
    else:
        n = write_training_examples(trajs, args.out)
    write_manifest(Path(str(args.out) + ".manifest.json"), "export-trajectories", args, {},
                   started=started, extra={"trajectories": len(trajs), "lines": n})
    print(json.dumps({"trajectories": len(trajs), "lines": n}))
    return 0


def cmd_stats(args) -> int:
    p = Path(args.path)
    store, stats = ingest_corpus(p / "documents.jsonl" if p.is_dir() else p)
    print(json.dumps(vars(stats)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cirag", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--workers", type=int, default=1, help="bound on all parallelism")
    parser.add_argument("--log-level", default="WARNING")
    parser.add_argument("--best-effort", action="store_true",
                        help="exit 0 even when individual items fail")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", help="ingest a corpus and build the retrieval index")
    p.add_argument("corpus")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("extract", help="extract and cache triples for every document")
    p.add_argument("corpus")
    p.add_argument("--cache", required=True)
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("answer", help="answer one question")
    p.add_argument("question")
    p.add_argument("--config", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--corpus")
    src.add_argument("--index")
    p.add_argument("--cache")
    p.add_argument("--max-steps", type=int)
    p.add_argument("--no-reranker", action="store_true")
    p.add_argument("--emit-trace", metavar="PATH", help="write the per-round log (JSONL)")
    p.set_defaults(func=cmd_answer)

    p = sub.add_parser("eval", help="evaluate on a QA dataset")
    p.add_argument("dataset")
    p.add_argument("--format", choices=FORMATS, required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--csv")
    p.add_argument("--cache")
    p.add_argument("--trajectories")
    p.add_argument("--sample", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--no-reranker", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-trajectories", help="filter trajectories and export training data")
    p.add_argument("run_dir")
    p.add_argument("--policy", choices=POLICIES, default="keep-all")
    p.add_argument("--cap", type=int)
    p.add_argument("--format", choices=("trajectories", "examples"), default="trajectories",
                   help="filtered trajectories (default) or loss-masked training examples")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("stats", help="print corpus statistics")
    p.add_argument("path")
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CiragError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
