"""Independent brute-force references used to check the library's scorers.

Nothing here imports from ``cirag``; each function recomputes its quantity
from first principles with the simplest code that could be right.
"""

from __future__ import annotations

import math
import re
import string


def words(text: str) -> list[str]:
    return re.findall(r"[a-z0-9]+", text.lower())


def bm25_scores(docs: list[list[str]], query: list[str], k1: float = 1.2, b: float = 0.75) -> list[float]:
    """Okapi BM25 by exhaustive scan; every query occurrence contributes."""
    n = len(docs)
    avgdl = sum(len(d) for d in docs) / n
    out = []
    for d in docs:
        total = 0.0
        for q in query:
            df = sum(1 for other in docs if q in other)
            if df == 0:
                continue
            idf = math.log(1 + (n - df + 0.5) / (df + 0.5))
            tf = d.count(q)
            if tf == 0:
                continue
            denom = tf + k1 * (1 - b + b * len(d) / avgdl)
            total += idf * tf * (k1 + 1) / denom
        out.append(total)
    return out


def bm25_ranking(ids: list[str], scores: list[float], k: int) -> list[tuple[str, float]]:
    pairs = list(zip(ids, scores))
    # selection sort: highest score first, smaller id on ties
    ranked = []
    while pairs and len(ranked) < k:
        best = pairs[0]
        for p in pairs[1:]:
            if p[1] > best[1] or (p[1] == best[1] and p[0] < best[0]):
                best = p
        ranked.append(best)
        pairs.remove(best)
    return ranked


def squad_tokens(text: str) -> list[str]:
    kept = "".join(" " if ch in string.whitespace else ch for ch in text.lower()
                   if ch not in string.punctuation)
    return [w for w in kept.split(" ") if w and w not in ("a", "an", "the")]


def em(pred: str, golds: list[str]) -> int:
    return 1 if any(squad_tokens(pred) == squad_tokens(g) for g in golds) else 0


def f1(pred: str, golds: list[str]) -> float:
    best = 0.0
    p = squad_tokens(pred)
    for g in golds:
        gt = squad_tokens(g)
        if not p and not gt:
            score = 1.0
        elif not p or not gt:
            score = 0.0
        else:
            remaining = list(gt)
            common = 0
            for tok in p:
                if tok in remaining:
                    remaining.remove(tok)
                    common += 1
            if common == 0:
                score = 0.0
            else:
                prec, rec = common / len(p), common / len(gt)
                score = 2 * prec * rec / (prec + rec)
        best = max(best, score)
    return best
