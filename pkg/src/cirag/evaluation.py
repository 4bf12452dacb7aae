"""QA datasets, evaluation-corpus construction, EM/F1 and run reports."""

from __future__ import annotations

import csv
import hashlib
import json
import random
import re
import string
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .corpus import Document
from .exceptions import CiragError, CorpusError, DatasetFormatError

FORMATS = ("hotpotqa", "twowiki", "musique", "nq", "webq")
MAX_DISTRACTORS_OPEN_DOMAIN = 10
GRANULARITY_LABELS = ("TRIPLE", "SENTENCE", "PASSAGE", "DEFAULT")

_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT = set(string.punctuation)


def normalize_answer(s: str) -> str:
    """SQuAD normalization: lowercase, strip punctuation and articles, squeeze spaces."""
    s = "".join(ch for ch in s.lower() if ch not in _PUNCT)
    s = _ARTICLES.sub(" ", s)
    return " ".join(s.split())


def exact_match(pred: str, gold: Sequence[str]) -> int:
    p = normalize_answer(pred)
    return int(any(p == normalize_answer(g) for g in gold))


def _f1(pred_tokens: list[str], gold_tokens: list[str]) -> float:
    if not pred_tokens or not gold_tokens:
        return float(pred_tokens == gold_tokens)
    common = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    if common == 0:
        return 0.0
    precision = common / len(pred_tokens)
    recall = common / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def token_f1(pred: str, gold: Sequence[str]) -> float:
    p = normalize_answer(pred).split()
    return max((_f1(p, normalize_answer(g).split()) for g in gold), default=0.0)


def paragraph_id(title: str, text: str) -> str:
    return hashlib.sha1(f"{title}\n{text}".encode("utf-8")).hexdigest()[:16]


@dataclass
class QAExample:
    id: str
    question: str
    gold_answers: list[str]
    supporting_doc_ids: list[str] = field(default_factory=list)
    distractor_doc_ids: list[str] = field(default_factory=list)
    paragraphs: dict[str, tuple[str, str]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.gold_answers:
            raise ValueError(f"example {self.id!r} has no gold answers")


def _read_records(path: Path) -> list:
    text = path.read_text(encoding="utf-8")
    stripped = text.lstrip()
    if stripped.startswith("["):
        return json.loads(text)
    if stripped.startswith("{") and "\n{" not in stripped.strip():
        obj = json.loads(text)
        if isinstance(obj, dict) and "data" in obj:
            return obj["data"]
        return [obj]
    return [json.loads(line) for line in text.splitlines() if line.strip()]


def _need(rec, key, where, kind=None):
    if not isinstance(rec, dict) or key not in rec:
        raise DatasetFormatError(f"missing field {key!r}", f"{where}.{key}")
    value = rec[key]
    if kind is not None and not isinstance(value, kind):
        raise DatasetFormatError(f"field {key!r} has type {type(value).__name__}", f"{where}.{key}")
    return value


def _wiki_style(rec, i: int) -> QAExample:
    where = f"$[{i}]"
    qid = str(rec.get("_id", rec.get("id", i)))
    context = _need(rec, "context", where, list)
    paragraphs: dict[str, tuple[str, str]] = {}
    by_title: dict[str, str] = {}
    for j, item in enumerate(context):
        if not (isinstance(item, list) and len(item) == 2 and isinstance(item[1], list)):
            raise DatasetFormatError("context entry is not [title, [sentences]]", f"{where}.context[{j}]")
        title = str(item[0])
        text = " ".join(str(s).strip() for s in item[1])
        pid = paragraph_id(title, text)
        paragraphs[pid] = (title, text)
        by_title.setdefault(title, pid)
    titles = list(dict.fromkeys(str(sf[0]) for sf in _need(rec, "supporting_facts", where, list)))
    supporting = [by_title.get(t, f"missing-title:{t}") for t in titles]
    distractors = [pid for pid in paragraphs if pid not in supporting]
    answer = _need(rec, "answer", where)
    return QAExample(qid, _need(rec, "question", where, str), [str(answer)], supporting, distractors, paragraphs)


def _musique(rec, i: int) -> QAExample:
    where = f"$[{i}]"
    paragraphs, supporting, distractors = {}, [], []
    for j, p in enumerate(_need(rec, "paragraphs", where, list)):
        title = _need(p, "title", f"{where}.paragraphs[{j}]", str)
        text = _need(p, "paragraph_text", f"{where}.paragraphs[{j}]", str)
        pid = paragraph_id(title, text)
        paragraphs[pid] = (title, text)
        (supporting if p.get("is_supporting") else distractors).append(pid)
    gold = [str(_need(rec, "answer", where))] + [str(a) for a in rec.get("answer_aliases", [])]
    return QAExample(str(rec.get("id", i)), _need(rec, "question", where, str), gold,
                     supporting, distractors, paragraphs)


def _dpr(fmt: str):
    def parse(rec, i: int) -> QAExample:
        where = f"$[{i}]"
        paragraphs, supporting, distractors = {}, [], []
        for key, bucket in (("positive_ctxs", supporting), ("hard_negative_ctxs", distractors),
                            ("negative_ctxs", distractors)):
            for j, ctx in enumerate(rec.get(key, [])):
                title = _need(ctx, "title", f"{where}.{key}[{j}]", str)
                text = _need(ctx, "text", f"{where}.{key}[{j}]", str)
                pid = paragraph_id(title, text)
                if pid in paragraphs:
                    continue
                paragraphs[pid] = (title, text)
                bucket.append(pid)
        distractors = distractors[:MAX_DISTRACTORS_OPEN_DOMAIN]
        paragraphs = {k: v for k, v in paragraphs.items() if k in supporting or k in distractors}
        answers = _need(rec, "answers", where, list)
        qid = str(rec.get("id", rec.get("dataset_id", f"{fmt}-{i}")))
        return QAExample(qid, _need(rec, "question", where, str), [str(a) for a in answers],
                         supporting, distractors, paragraphs)
    return parse


_PARSERS: dict[str, Callable] = {
    "hotpotqa": _wiki_style,
    "twowiki": _wiki_style,
    "musique": _musique,
    "nq": _dpr("nq"),
    "webq": _dpr("webq"),
}


def load_dataset(path: str | Path, format: str, sample: int | None = None, seed: int = 0) -> list[QAExample]:
    """Parse a dataset file; with ``sample``, draw that many examples by seeded shuffle."""
    if format not in _PARSERS:
        raise ValueError(f"unknown dataset format {format!r}; expected one of {FORMATS}")
    path = Path(path)
    try:
        records = _read_records(path)
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"invalid JSON: {exc.msg}", f"{path}:{exc.lineno}") from exc
    parse = _PARSERS[format]
    examples = []
    for i, rec in enumerate(records):
        try:
            examples.append(parse(rec, i))
        except DatasetFormatError as exc:
            raise DatasetFormatError(str(exc).rsplit(" (at ", 1)[0], f"{path}:{exc.path}") from exc
        except ValueError as exc:
            raise DatasetFormatError(str(exc), f"{path}:$[{i}]") from exc
    ids = [e.id for e in examples]
    if len(set(ids)) != len(ids):
        dup = next(x for x, c in Counter(ids).items() if c > 1)
        raise DatasetFormatError(f"duplicate example id {dup!r}", str(path))
    if sample is not None:
        order = list(range(len(examples)))
        random.Random(seed).shuffle(order)
        examples = [examples[i] for i in order[: max(sample, 0)]]
    return examples


def build_eval_corpus(examples: Sequence[QAExample], out: str | Path | None = None) -> list[Document]:
    """Union of every referenced paragraph, one document per distinct content."""
    docs: dict[str, Document] = {}
    for ex in examples:
        for pid in list(ex.supporting_doc_ids) + list(ex.distractor_doc_ids):
            if pid not in ex.paragraphs:
                raise CorpusError(f"example {ex.id!r} references unknown paragraph {pid!r}")
            if pid not in docs:
                title, text = ex.paragraphs[pid]
                docs[pid] = Document(pid, title, text)
    result = list(docs.values())
    if out is not None:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            for d in result:
                fh.write(json.dumps(d.to_record(), ensure_ascii=False, sort_keys=True) + "\n")
    return result


@dataclass
class EvalReport:
    rows: list[dict] = field(default_factory=list)

    @property
    def answered(self) -> list[dict]:
        return [r for r in self.rows if r.get("error") is None]

    def aggregates(self) -> dict:
        n = len(self.rows)
        answered = self.answered
        dist = {g: 0.0 for g in GRANULARITY_LABELS}
        for r in answered:
            dist[r["selected_granularity"]] += 1
        if answered:
            dist = {g: c / len(answered) for g, c in dist.items()}
        phases: dict[str, float] = {}
        for r in answered:
            for k, v in r["latency"].items():
                phases[k] = phases.get(k, 0.0) + v
        return {
            "count": n,
            "answered": len(answered),
            "failed": n - len(answered),
            "mean_em": sum(r["em"] for r in self.rows) / n if n else 0.0,
            "mean_f1": sum(r["f1"] for r in self.rows) / n if n else 0.0,
            "granularity_distribution": dist,
            "mean_iterations": sum(r["iterations_used"] for r in answered) / len(answered) if answered else 0.0,
            "mean_latency": {k: v / len(answered) for k, v in sorted(phases.items())} if answered else {},
        }

    def to_dict(self) -> dict:
        return {"examples": self.rows, "aggregates": self.aggregates()}

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, ensure_ascii=False, sort_keys=True),
                              encoding="utf-8")

    def write_csv(self, path: str | Path) -> None:
        agg = self.aggregates()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "value"])
            for k in ("count", "answered", "failed", "mean_em", "mean_f1", "mean_iterations"):
                w.writerow([k, agg[k]])
            for g, v in agg["granularity_distribution"].items():
                w.writerow([f"granularity_{g}", v])
            for k, v in agg["mean_latency"].items():
                w.writerow([f"latency_{k}", v])


def evaluate_example(ex: QAExample, model) -> tuple[dict, object]:
    """Answer one example; returns its report row and the run trace (or None)."""
    try:
        trace = model.answer(ex.question)
    except CiragError as exc:
        row = {"id": ex.id, "question": ex.question, "prediction": None, "em": 0, "f1": 0.0,
               "selected_granularity": None, "iterations_used": 0, "latency": {},
               "error": f"{type(exc).__name__}: {exc}"}
        return row, None
    pred = trace.answer
    row = {
        "id": ex.id,
        "question": ex.question,
        "prediction": pred,
        "gold": list(ex.gold_answers),
        "em": exact_match(pred, ex.gold_answers),
        "f1": token_f1(pred, ex.gold_answers),
        "selected_granularity": trace.cascade.selected.name,
        "iterations_used": trace.ici.iterations_used,
        "stop_reason": trace.ici.stop_reason.value,
        "latency": trace.latency,
        "error": None,
    }
    return row, trace


def run_eval(examples: Sequence[QAExample], model, workers: int = 1,
             on_trace: Callable[[QAExample, dict, object], None] | None = None) -> EvalReport:
    """Answer every example with ``model`` (anything with ``answer(question)``).

    Failures are recorded per row and the run continues. Rows keep input
    order regardless of ``workers``.
    """
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda ex: evaluate_example(ex, model), examples))
    else:
        results = [evaluate_example(ex, model) for ex in examples]
    report = EvalReport()
    for ex, (row, trace) in zip(examples, results):
        report.rows.append(row)
        if on_trace is not None and trace is not None:
            on_trace(ex, row, trace)
    return report
