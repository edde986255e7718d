"""Keyword gate deciding whether a document discusses AI at all.

Matching runs over the tokenizer's token stream, so single keywords match
whole tokens only ("ai" never fires inside "said") and multi-word entries
match contiguous token subsequences. One match anywhere suffices.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from rheframe.corpus import Document
from rheframe.errors import InputError
from rheframe.textprep import TokenizerConfig, tokenize_words


@dataclass(frozen=True)
class KeywordMatch:
    paragraph: int
    start_token: int
    end_token: int
    surface: str


class KeywordSet:
    """Lowercased keyword tokens and phrases, prefix-conflict free."""

    def __init__(self, entries: Sequence[str]):
        phrases = []
        for entry in entries:
            toks = tuple(entry.lower().split())
            if not toks:
                raise InputError("empty keyword entry")
            phrases.append(toks)
        if not phrases:
            raise InputError("keyword set must be non-empty")
        uniq = sorted(set(phrases), key=len)
        for i, a in enumerate(uniq):
            for b in uniq[i + 1 :]:
                if b[: len(a)] == a:
                    raise InputError(
                        f"keyword {' '.join(a)!r} is a prefix of {' '.join(b)!r}"
                    )
        self._phrases = tuple(sorted(set(phrases)))
        self._max_len = max(len(p) for p in self._phrases)
        self._first = {p[0] for p in self._phrases}

    @property
    def entries(self) -> tuple[tuple[str, ...], ...]:
        return self._phrases

    def __len__(self) -> int:
        return len(self._phrases)

    def __contains__(self, entry: str) -> bool:
        return tuple(entry.lower().split()) in self._phrases

    def match_tokens(self, tokens: Sequence[str]) -> list[tuple[int, int]]:
        """All (start, end) token spans where an entry matches."""
        hits = []
        for i, tok in enumerate(tokens):
            if tok not in self._first:
                continue
            for phrase in self._phrases:
                j = i + len(phrase)
                if j <= len(tokens) and tuple(tokens[i:j]) == phrase:
                    hits.append((i, j))
        return hits


def default_keywords() -> KeywordSet:
    """Editorial default keyword inventory; fully overridable via config."""
    return KeywordSet(
        [
            "ai",
            "artificial intelligence",
            "machine learning",
            "deep learning",
            "neural network",
            "neural networks",
        ]
    )


def contains_ai(
    doc: Document,
    keywords: KeywordSet,
    tokenizer: TokenizerConfig = TokenizerConfig(),
) -> tuple[bool, list[KeywordMatch]]:
    """True iff any keyword matches any paragraph's token stream."""
    matches: list[KeywordMatch] = []
    for par in doc.paragraphs:
        tokens = tokenize_words(par.text, tokenizer)
        for start, end in keywords.match_tokens(tokens):
            matches.append(
                KeywordMatch(
                    paragraph=par.index,
                    start_token=start,
                    end_token=end,
                    surface=" ".join(tokens[start:end]),
                )
            )
    return bool(matches), matches
