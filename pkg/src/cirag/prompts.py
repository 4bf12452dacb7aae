"""Prompt template assets and placeholder substitution.

Templates contain literal JSON braces, so placeholders are replaced by plain
string substitution rather than ``str.format``.
"""

from __future__ import annotations

import hashlib
import re
from functools import lru_cache
from importlib import resources

REFUSAL_CLAUSE = "If the provided information cannot answer the question, output Unanswerable. "

TEMPLATE_VERSION = "v1"


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    if name == "reader_default":
        text = load_template("reader_passage")
        if REFUSAL_CLAUSE not in text:
            raise RuntimeError("passage reader template lost its refusal clause")
        return text.replace(REFUSAL_CLAUSE, "")
    return resources.files("cirag").joinpath("templates", f"{name}.txt").read_text(encoding="utf-8")


def render(name: str, **values: str) -> str:
    """Fill ``{placeholder}`` slots. Keys use underscores for spaces."""
    slots = {"{" + k.replace("_", " ") + "}": v for k, v in values.items()}
    if not slots:
        return load_template(name)
    # single pass, so substituted values are never rescanned
    pattern = re.compile("|".join(re.escape(s) for s in slots))
    return pattern.sub(lambda m: slots[m.group()], load_template(name))


def fingerprint(*names: str) -> str:
    h = hashlib.sha256()
    for name in names:
        h.update(name.encode())
        h.update(b"\0")
        h.update(load_template(name).encode("utf-8"))
    return h.hexdigest()[:16]


def instruction_id() -> str:
    return f"integration-{TEMPLATE_VERSION}-{fingerprint('integration')}"
