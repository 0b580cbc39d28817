"""Shared tokenization used by dependency extraction and fragment assembly."""

from __future__ import annotations

import re

# Fixed 50-word English stopword list, shipped so results are reproducible.
STOPWORDS = frozenset({
    "a", "about", "after", "all", "an", "and", "any", "are", "as", "at",
    "be", "been", "but", "by", "can", "did", "do", "for", "from", "had",
    "has", "have", "he", "her", "his", "how", "if", "in", "into", "is",
    "it", "its", "not", "of", "on", "or", "our", "she", "that", "the",
    "their", "them", "they", "this", "to", "was", "we", "were", "which",
    "with",
})

_SPLIT = re.compile(r"[^a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on non-alphanumeric runs, drop stopwords and 1-char tokens."""
    return [
        tok
        for tok in _SPLIT.split(text.lower())
        if len(tok) >= 2 and tok not in STOPWORDS
    ]
