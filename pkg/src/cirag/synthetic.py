"""Synthetic two-hop bridge questions and a rule-based oracle backend.

Each question asks for the region containing a person's birthplace. The
person's document names the city; the city's document names the region, so
answering takes one hop per document. The oracle backend extracts triples
with fixed sentence patterns, integrates by keyword matching on the chain
person -> city -> region, and answers by looking the chain up in whatever
evidence the reader prompt carries.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, field

from .backend import FunctionBackend, Role
from .corpus import Document
from .evaluation import QAExample
from .integration import NO_QUESTION
from .text import normalize_text

_ONSETS = ["b", "br", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "th", "kr", "dr"]
_VOWELS = ["a", "e", "i", "o", "u", "ae", "ou"]
_CODAS = ["", "n", "r", "l", "s", "th", "m", "x"]
_JOBS = ["baker", "sailor", "painter", "chemist", "farmer", "teacher", "architect", "poet"]

BORN = "born in"
LOCATED = "located in"

_BORN_RE = re.compile(r"^(.+?) was born in (.+?)\.?$")
_LOCATED_RE = re.compile(r"^(.+?) is located in (.+?)\.?$")
_WORKED_RE = re.compile(r"^(.+?) worked as an? (.+?)\.?$")
_POP_RE = re.compile(r"^(.+?) has a population of (.+?)\.?$")
_QUESTION_RE = re.compile(r"birthplace of (.+?)\?", re.IGNORECASE)
_QUOTED_TRIPLE = re.compile(r"\('([^']*)', '([^']*)', '([^']*)'\)")


@dataclass
class BridgeSuite:
    documents: list[Document]
    examples: list[QAExample]
    birthplace: dict[str, str] = field(default_factory=dict)
    region: dict[str, str] = field(default_factory=dict)

    def gold(self, person: str) -> str:
        """Direct knowledge-base lookup of the two-hop answer."""
        return self.region[self.birthplace[person]]

    def to_records(self, n_distractors: int = 2) -> list[dict]:
        """The suite in hotpotqa file layout, each question with a few other documents as distractors."""
        by_id = {d.id: d for d in self.documents}
        ids = [d.id for d in self.documents]
        records = []
        for k, ex in enumerate(self.examples):
            others = [i for i in ids if i not in ex.supporting_doc_ids]
            picked = [others[(k * 7 + j) % len(others)] for j in range(n_distractors)]
            context = [[by_id[i].title, by_id[i].body.split("\n")] for i in ex.supporting_doc_ids + picked]
            records.append({
                "_id": ex.id,
                "question": ex.question,
                "answer": ex.gold_answers[0],
                "supporting_facts": [[by_id[i].title, 0] for i in ex.supporting_doc_ids],
                "context": context,
            })
        return records


def _word(rng: random.Random, used: set[str], syllables: int) -> str:
    while True:
        w = "".join(rng.choice(_ONSETS) + rng.choice(_VOWELS) + rng.choice(_CODAS) for _ in range(syllables))
        if len(w) >= 4 and w not in used:
            used.add(w)
            return w.capitalize()


def _article(noun: str) -> str:
    return ("an " if noun[0] in "aeiou" else "a ") + noun


def make_bridge_suite(n_questions: int = 50, n_regions: int = 8, seed: int = 0) -> BridgeSuite:
    """Build ``n_questions`` questions over ``2 * n_questions`` documents."""
    rng = random.Random(seed)
    used: set[str] = set()
    regions = [_word(rng, used, 3) for _ in range(n_regions)]
    suite = BridgeSuite([], [])
    person_docs, city_docs = [], []
    for i in range(n_questions):
        person = f"{_word(rng, used, 2)} {_word(rng, used, 3)}"
        city = _word(rng, used, 2)
        region = rng.choice(regions)
        suite.birthplace[person] = city
        suite.region[city] = region
        person_docs.append(Document(
            f"p{i:03d}", person,
            f"{person} was born in {city}.\n{person} worked as {_article(rng.choice(_JOBS))}.",
        ))
        city_docs.append(Document(
            f"c{i:03d}", city,
            f"{city} is located in {region}.\n{city} has a population of {rng.randint(1000, 99000)}.",
        ))
        suite.examples.append(QAExample(
            f"q{i:03d}", f"Which region contains the birthplace of {person}?", [region],
            [f"p{i:03d}", f"c{i:03d}"],
        ))
    suite.documents = person_docs + city_docs
    return suite


def _sentence_triples(text: str) -> list[list[str]]:
    rows = []
    for line in re.split(r"(?<=\.)\s+|\n", text):
        line = line.strip()
        for pattern, rel in ((_BORN_RE, BORN), (_LOCATED_RE, LOCATED), (_WORKED_RE, "worked as"),
                             (_POP_RE, "has population")):
            m = pattern.match(line)
            if m:
                rows.append([m.group(1), rel, m.group(2)])
                break
    return rows


def _between(text: str, start: str, end: str) -> str:
    i = text.rfind(start)
    if i == -1:
        return ""
    i += len(start)
    j = text.find(end, i)
    return text[i:] if j == -1 else text[i:j]


def _ner(prompt: str) -> str:
    passage = _between(prompt, "Passage: ", "\n\nOutputs:")
    ents = []
    for s, _, o in _sentence_triples(passage):
        ents.extend([s, o])
    return json.dumps({"named entities": list(dict.fromkeys(ents))})


def _triples(prompt: str) -> str:
    text = _between(prompt, "\nText: ", "\n\nEntity lists:")
    return json.dumps({"triples": _sentence_triples(text)})


def _presented_rows(prompt: str) -> list[tuple[str, str, str]]:
    rows = []
    for line in prompt.splitlines():
        if line.startswith("["):
            try:
                row = json.loads(line)
            except json.JSONDecodeError:
                continue
            if isinstance(row, list) and len(row) == 3:
                rows.append(tuple(row))
    return rows


def _kept_rows(prompt: str) -> set[tuple[str, str, str]]:
    kept = set()
    for line in prompt.splitlines():
        if line.startswith('{"fact"'):
            kept.update(tuple(r) for r in json.loads(line)["fact"])
    return kept


def _integrate(prompt: str) -> str:
    question = _between(prompt, "[[ ## Original Query ## ]]\n", "\n")
    m = _QUESTION_RE.search(question)
    person = normalize_text(m.group(1)) if m else ""
    rows = _presented_rows(prompt)
    kept = _kept_rows(prompt)
    born = next((r for r in rows if r[0] == person and r[1] == BORN), None)
    located = next((r for r in rows if born and r[0] == born[2] and r[1] == LOCATED), None)
    if born is None:
        thought, core, nxt = f"No fact says where {person} was born.", [], question
    elif located is None:
        thought = f"{person} was born in {born[2]}; the region of {born[2]} is still unknown."
        core, nxt = [born], f"Where is {born[2]} located?"
    else:
        thought = f"{person} was born in {born[2]}, which is located in {located[2]}."
        core, nxt = [born, located], NO_QUESTION
    new = [list(r) for r in core if r not in kept]
    return (
        f"[[ ## thought ## ]]\n{thought}\n\n"
        f"[[ ## fact_after_filter ## ]]\n{json.dumps({'fact': new})}\n\n"
        f"[[ ## question ## ]]\n{nxt}"
    )


def _reader(forced: bool):
    def handle(prompt: str) -> str:
        inputs = prompt[prompt.rfind("Inputs:"):]
        m = _QUESTION_RE.search(_between(inputs, "Query: ", "\n"))
        person = normalize_text(m.group(1)) if m else ""
        facts = [tuple(normalize_text(x) for x in t) for t in _QUOTED_TRIPLE.findall(inputs)]
        facts += [tuple(normalize_text(x) for x in r) for r in _sentence_triples(inputs.replace("Sentences: ", "\n").replace("Passages: ", "\n"))]
        city = next((o for s, r, o in facts if s == person and r == BORN), None)
        region = next((o for s, r, o in facts if city and s == city and r == LOCATED), None)
        if region is not None:
            return f"{person} was born in {city}, which is located in {region}.\nAnswer: {region}"
        if forced:
            return "The evidence does not settle it.\nAnswer: unknown"
        return "The evidence does not connect the person to a region.\nAnswer: Unanswerable"
    return handle


def oracle_backend() -> FunctionBackend:
    return FunctionBackend(
        {
            Role.NER: _ner,
            Role.TRIPLE_EXTRACT: _triples,
            Role.INTEGRATE: _integrate,
            Role.READER_TRIPLE: _reader(False),
            Role.READER_SENTENCE: _reader(False),
            Role.READER_PASSAGE: _reader(False),
            Role.READER_DEFAULT: _reader(True),
        },
        model_id="bridge-oracle",
    )
