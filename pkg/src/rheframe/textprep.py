"""Tokenization, sentence splitting, and vocabulary construction.

Preprocessing is deliberately rule-based and deterministic: lowercased
alphanumeric tokens (intra-word hyphens kept), URLs/e-mails stripped as
noise, and tokens outside a configurable length band dropped.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable

from rheframe.errors import InputError

TOKENIZER_VERSION = "rf-tok-1"

_URL_RE = re.compile(r"(?:https?://|www\.)\S+", re.IGNORECASE)
_EMAIL_RE = re.compile(r"[^\s@]+@[^\s@]+\.[^\s@]+")
_WORD_RE = re.compile(r"[A-Za-z0-9]+(?:-[A-Za-z0-9]+)*")

# Common abbreviations that must not terminate a sentence.
_ABBREVIATIONS = frozenset(
    {
        "mr.", "mrs.", "ms.", "dr.", "prof.", "gen.", "col.", "sen.", "rep.",
        "st.", "jr.", "sr.", "no.", "vs.", "inc.", "corp.", "ltd.", "co.",
        "u.s.", "u.k.", "u.n.", "e.g.", "i.e.", "etc.", "a.m.", "p.m.",
        "jan.", "feb.", "mar.", "apr.", "jun.", "jul.", "aug.", "sep.",
        "sept.", "oct.", "nov.", "dec.",
    }
)

_SENTENCE_END_RE = re.compile(r"[.!?]+[\"')\]]*\s+(?=[\"'(\[]?[A-Z0-9])")


@dataclass(frozen=True)
class TokenizerConfig:
    """Noise and length rules applied by :func:`tokenize`."""

    min_len: int = 2
    max_len: int = 25
    strip_urls: bool = True
    strip_emails: bool = True

    def __post_init__(self):
        if self.min_len < 1 or self.max_len < self.min_len:
            raise InputError(
                f"invalid token length band [{self.min_len}, {self.max_len}]"
            )


@dataclass(frozen=True)
class Token:
    """A lowercased token plus its character span in the source text."""

    surface: str
    start: int
    end: int


def _noise_spans(text: str, config: TokenizerConfig) -> list[tuple[int, int]]:
    spans = []
    if config.strip_urls:
        spans.extend(m.span() for m in _URL_RE.finditer(text))
    if config.strip_emails:
        spans.extend(m.span() for m in _EMAIL_RE.finditer(text))
    return sorted(spans)


def tokenize(text: str, config: TokenizerConfig = TokenizerConfig()) -> list[Token]:
    """Split ``text`` into lowercased tokens, keeping character offsets.

    URLs and e-mail addresses are removed whole; remaining runs of
    alphanumerics (with intra-word hyphens) become tokens, filtered to the
    configured length band. Empty text yields an empty list.
    """
    if not text:
        return []
    noise = _noise_spans(text, config)
    tokens: list[Token] = []
    ni = 0
    for m in _WORD_RE.finditer(text):
        start, end = m.span()
        while ni < len(noise) and noise[ni][1] <= start:
            ni += 1
        if ni < len(noise) and noise[ni][0] < end and start < noise[ni][1]:
            continue  # token overlaps a noise region
        surface = m.group().lower()
        if config.min_len <= len(surface) <= config.max_len:
            tokens.append(Token(surface=surface, start=start, end=end))
    return tokens


def tokenize_words(text: str, config: TokenizerConfig = TokenizerConfig()) -> list[str]:
    """Like :func:`tokenize` but returns surfaces only."""
    return [t.surface for t in tokenize(text, config)]


def split_sentences(text: str) -> list[str]:
    """Rule-based sentence splitting on terminal punctuation.

    A split point is terminal punctuation followed by whitespace and an
    upper-case letter or digit, unless the preceding word is a known
    abbreviation.
    """
    if not text.strip():
        return []
    pieces: list[str] = []
    last = 0
    for m in _SENTENCE_END_RE.finditer(text):
        candidate = text[last : m.end()]
        trailing = candidate.rstrip().rsplit(None, 1)
        last_word = trailing[-1].lower().lstrip("\"'([") if trailing else ""
        if last_word in _ABBREVIATIONS:
            continue
        pieces.append(candidate.strip())
        last = m.end()
    rest = text[last:].strip()
    if rest:
        pieces.append(rest)
    return pieces


class Vocabulary:
    """Dense token ids sorted by descending frequency (lexicographic ties).

    Ids occupy 0..V-1; ``oov_id`` (== V) is reserved for unknown or
    below-``min_count`` tokens.
    """

    def __init__(self, token_freqs: dict[str, int], min_count: int = 1):
        if min_count < 1:
            raise InputError("min_count must be >= 1")
        kept = [(t, f) for t, f in token_freqs.items() if f >= min_count]
        kept.sort(key=lambda tf: (-tf[1], tf[0]))
        self._tokens = [t for t, _ in kept]
        self._freqs = [f for _, f in kept]
        self._ids = {t: i for i, t in enumerate(self._tokens)}
        self.min_count = min_count
        self.total_count = sum(token_freqs.values())

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    @property
    def oov_id(self) -> int:
        return len(self._tokens)

    def id_of(self, token: str) -> int:
        return self._ids.get(token, self.oov_id)

    def token_of(self, token_id: int) -> str:
        return self._tokens[token_id]

    def freq_of(self, token_id: int) -> int:
        return self._freqs[token_id]

    @property
    def frequencies(self) -> list[int]:
        return list(self._freqs)

    @property
    def tokens(self) -> list[str]:
        return list(self._tokens)

    def save(self, path) -> None:
        """Write as whitespace-delimited ``token frequency`` lines."""
        with open(path, "w", encoding="utf-8") as fh:
            for tok, freq in zip(self._tokens, self._freqs):
                fh.write(f"{tok} {freq}\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        freqs: dict[str, int] = {}
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                parts = line.split()
                if not parts:
                    continue
                if len(parts) != 2:
                    raise InputError(f"{path}:{lineno}: expected 'token frequency'")
                try:
                    freqs[parts[0]] = int(parts[1])
                except ValueError as exc:
                    raise InputError(f"{path}:{lineno}: bad frequency") from exc
        return cls(freqs, min_count=1)


def build_vocab(units: Iterable[list[str]], min_count: int = 1) -> Vocabulary:
    """Count tokens across ``units`` and build a :class:`Vocabulary`."""
    freqs: dict[str, int] = {}
    for unit in units:
        for tok in unit:
            freqs[tok] = freqs.get(tok, 0) + 1
    return Vocabulary(freqs, min_count=min_count)
