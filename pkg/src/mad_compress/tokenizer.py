"""Approximate token counting shared by the debate engine, strategies and the mock backend."""
from __future__ import annotations

import re
from typing import Protocol

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


class Tokenizer(Protocol):
    def count(self, text: str) -> int: ...

    def truncate(self, text: str, max_tokens: int) -> str: ...


class ApproxTokenizer:
    """Whitespace + punctuation splitter: every word run and every symbol is one token."""

    def count(self, text: str) -> int:
        return sum(1 for _ in _TOKEN_RE.finditer(text))

    def tokens(self, text: str) -> list[str]:
        return _TOKEN_RE.findall(text)

    def truncate(self, text: str, max_tokens: int) -> str:
        if max_tokens <= 0:
            return ""
        for i, m in enumerate(_TOKEN_RE.finditer(text), start=1):
            if i == max_tokens:
                return text[: m.end()]
        return text


DEFAULT_TOKENIZER = ApproxTokenizer()
