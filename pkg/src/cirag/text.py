"""Text normalization shared by retrieval, extraction and evaluation."""

from __future__ import annotations

import re

# Only ASCII letters and digits survive; "Bråk" -> "br k", "God's" -> "god s".
_NON_ALNUM = re.compile(r"[^a-z0-9]+")


def normalize_text(text: str) -> str:
    """Lowercase, map every non-alphanumeric run to one space, trim."""
    return _NON_ALNUM.sub(" ", text.lower()).strip()


def tokenize(text: str) -> list[str]:
    return normalize_text(text).split()
