"""Token counting.

All cost arithmetic in the engine runs through one Tokenizer instance so
that estimates and realized costs are measured with the same yardstick.
The built-in approximation is ceil(utf8_bytes / 4): deterministic, cheap,
and additive over concatenation up to a single boundary token.
"""

from __future__ import annotations

import math
from typing import Callable, Protocol


class Tokenizer(Protocol):
    def count(self, text: str) -> int: ...


class ApproxTokenizer:
    """ceil(len(utf8) / 4) token approximation."""

    name = "approx4"

    def count(self, text: str) -> int:
        if not text:
            return 0
        return math.ceil(len(text.encode("utf-8")) / 4)


DEFAULT_TOKENIZER = ApproxTokenizer()


def count_tokens(text: str, tokenizer: Tokenizer | None = None) -> int:
    """Count tokens of ``text`` with the given (or default) tokenizer."""
    return (tokenizer or DEFAULT_TOKENIZER).count(text)


Summarizer = Callable[[str], str]


def default_summarizer(text: str, max_sentences: int = 5) -> str:
    """First sentence of each paragraph, up to ``max_sentences`` sentences."""
    from .index import split_sentences  # local import: avoids a cycle

    picked: list[str] = []
    for para in text.split("\n\n"):
        para = para.strip()
        if not para:
            continue
        sentences = split_sentences(para)
        if sentences:
            picked.append(sentences[0][2].strip())
        if len(picked) >= max_sentences:
            break
    return " ".join(picked[:max_sentences])
