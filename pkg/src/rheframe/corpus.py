"""Annotated document model, JSONL ingestion, stats, and synthetic corpora.

Documents carry optional gold labels at three levels (AI mention, document
frame, paragraph frame) plus token-level frame spans. Spans are stored as
token indices under the package tokenizer, which makes the 0-1 span encoding
used by attention guidance well-defined.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from rheframe.errors import ConfigError, InputError
from rheframe.textprep import TOKENIZER_VERSION, TokenizerConfig, tokenize_words

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class SpanAnnotation:
    """Token range [start_token, end_token) realizing a frame occurrence."""

    start_token: int
    end_token: int
    surface: str = ""

    def __post_init__(self):
        if not (0 <= self.start_token < self.end_token):
            raise InputError(
                f"invalid span ({self.start_token}, {self.end_token}): "
                "need 0 <= start < end"
            )


@dataclass(frozen=True)
class Paragraph:
    index: int
    text: str
    gold_par_contains_frame: bool | None = None
    gold_frame_spans: tuple[SpanAnnotation, ...] = ()


@dataclass(frozen=True)
class Document:
    id: str
    source: str
    text: str
    paragraphs: tuple[Paragraph, ...]
    gold_doc_contains_ai: bool | None = None
    gold_doc_contains_frame: bool | None = None


@dataclass(frozen=True)
class LabelCounts:
    yes: int
    no: int

    @property
    def ratio(self) -> float | None:
        """Majority/minority imbalance ratio; None when a class is empty."""
        lo, hi = sorted((self.yes, self.no))
        if lo == 0:
            return None
        return hi / lo


@dataclass(frozen=True)
class CorpusStats:
    doc_contains_ai: LabelCounts
    doc_contains_frame: LabelCounts
    par_contains_frame: LabelCounts
    n_documents: int
    n_paragraphs: int

    def to_dict(self) -> dict:
        def block(c: LabelCounts) -> dict:
            return {"yes": c.yes, "no": c.no, "ratio": c.ratio}

        return {
            "n_documents": self.n_documents,
            "n_paragraphs": self.n_paragraphs,
            "doc_contains_ai": block(self.doc_contains_ai),
            "doc_contains_frame": block(self.doc_contains_frame),
            "par_contains_frame": block(self.par_contains_frame),
        }


def split_paragraphs(text: str) -> list[str]:
    """Split flat article text into paragraphs on blank lines."""
    return [p.strip() for p in text.split("\n\n") if p.strip()]


def validate_document(doc: Document, tokenizer: TokenizerConfig = TokenizerConfig()) -> None:
    """Check the label-hierarchy and span invariants; raise InputError on violation."""
    if not doc.id:
        raise InputError("document id must be non-empty")
    if doc.text and not doc.paragraphs:
        raise InputError(f"{doc.id}: non-empty text requires paragraphs")
    par_labels = [p.gold_par_contains_frame for p in doc.paragraphs]
    if doc.gold_doc_contains_frame is True:
        labeled = [l for l in par_labels if l is not None]
        # Only checkable when paragraph annotations are present at all.
        if labeled and len(labeled) == len(par_labels) and not any(labeled):
            raise InputError(
                f"{doc.id}: doc_contains_frame is true but no paragraph is positive"
            )
    for par in doc.paragraphs:
        has_spans = bool(par.gold_frame_spans)
        if par.gold_par_contains_frame is True and not has_spans:
            raise InputError(
                f"{doc.id} paragraph {par.index}: positive label requires frame spans"
            )
        if has_spans and par.gold_par_contains_frame is not True:
            raise InputError(
                f"{doc.id} paragraph {par.index}: frame spans require a positive label"
            )
        if has_spans:
            n_tokens = len(tokenize_words(par.text, tokenizer))
            spans = sorted(par.gold_frame_spans, key=lambda s: s.start_token)
            prev_end = 0
            for span in spans:
                if span.end_token > n_tokens:
                    raise InputError(
                        f"{doc.id} paragraph {par.index}: span "
                        f"({span.start_token}, {span.end_token}) exceeds "
                        f"{n_tokens} tokens"
                    )
                if span.start_token < prev_end:
                    raise InputError(
                        f"{doc.id} paragraph {par.index}: overlapping spans"
                    )
                prev_end = span.end_token


def _doc_from_record(rec: dict) -> Document:
    if not isinstance(rec, dict):
        raise InputError("record is not a JSON object")
    try:
        doc_id = rec["id"]
        source = rec.get("source", "")
        text = rec.get("text", "")
    except KeyError as exc:
        raise InputError(f"record missing field {exc}") from exc
    raw_pars = rec.get("paragraphs")
    if raw_pars is None:
        raw_pars = [{"text": t} for t in split_paragraphs(text)]
    paragraphs = []
    for i, praw in enumerate(raw_pars):
        spans = tuple(
            SpanAnnotation(
                start_token=s["start_token"],
                end_token=s["end_token"],
                surface=s.get("surface", ""),
            )
            for s in praw.get("frame_spans", [])
        )
        paragraphs.append(
            Paragraph(
                index=i,
                text=praw.get("text", ""),
                gold_par_contains_frame=praw.get("par_contains_frame"),
                gold_frame_spans=spans,
            )
        )
    return Document(
        id=str(doc_id),
        source=str(source),
        text=str(text),
        paragraphs=tuple(paragraphs),
        gold_doc_contains_ai=rec.get("doc_contains_ai"),
        gold_doc_contains_frame=rec.get("doc_contains_frame"),
    )


def _doc_to_record(doc: Document) -> dict:
    rec: dict = {"id": doc.id, "source": doc.source, "text": doc.text}
    pars = []
    for par in doc.paragraphs:
        praw: dict = {"text": par.text}
        if par.gold_par_contains_frame is not None:
            praw["par_contains_frame"] = par.gold_par_contains_frame
        if par.gold_frame_spans:
            praw["frame_spans"] = [
                {
                    "start_token": s.start_token,
                    "end_token": s.end_token,
                    "surface": s.surface,
                }
                for s in par.gold_frame_spans
            ]
        pars.append(praw)
    rec["paragraphs"] = pars
    if doc.gold_doc_contains_ai is not None:
        rec["doc_contains_ai"] = doc.gold_doc_contains_ai
    if doc.gold_doc_contains_frame is not None:
        rec["doc_contains_frame"] = doc.gold_doc_contains_frame
    return rec


def load_corpus(
    path,
    strict: bool = True,
    tokenizer: TokenizerConfig = TokenizerConfig(),
) -> list[Document]:
    """Read a JSONL corpus; first line must be the schema header record.

    In strict mode any malformed or invariant-violating record aborts the
    load; in lenient mode offending records are logged and skipped.
    Duplicate document ids abort in either mode.
    """
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read corpus {path}: {exc}") from exc
    docs: list[Document] = []
    seen: set[str] = set()
    skipped = 0
    with fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line)
            schema = header["schema_version"]
            header["tokenizer_version"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise InputError(
                f"{path}: missing or malformed header record "
                "(expected schema_version and tokenizer_version)"
            ) from exc
        if schema > SCHEMA_VERSION:
            raise InputError(
                f"{path}: schema_version {schema} is newer than supported "
                f"{SCHEMA_VERSION}"
            )
        for lineno, line in enumerate(fh, 2):
            if not line.strip():
                continue
            try:
                doc = _doc_from_record(json.loads(line))
                validate_document(doc, tokenizer)
            except (json.JSONDecodeError, InputError, KeyError, TypeError) as exc:
                if strict:
                    raise InputError(f"{path}:{lineno}: {exc}") from exc
                skipped += 1
                logger.warning("%s:%d: skipping record: %s", path, lineno, exc)
                continue
            if doc.id in seen:
                raise InputError(f"{path}:{lineno}: duplicate document id {doc.id!r}")
            seen.add(doc.id)
            docs.append(doc)
    if skipped:
        logger.warning("%s: skipped %d invalid records", path, skipped)
    return docs


def save_corpus(docs: Sequence[Document], path) -> None:
    """Write documents as JSONL with the mandatory schema header line."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(corpus_to_jsonl(docs))


def corpus_to_jsonl(docs: Sequence[Document]) -> str:
    header = {
        "schema_version": SCHEMA_VERSION,
        "tokenizer_version": TOKENIZER_VERSION,
    }
    lines = [json.dumps(header, sort_keys=True, separators=(",", ":"))]
    for doc in docs:
        lines.append(json.dumps(_doc_to_record(doc), sort_keys=True, separators=(",", ":")))
    return "\n".join(lines) + "\n"


def compute_stats(corpus: Iterable[Document]) -> CorpusStats:
    """Per-class totals and imbalance ratios; unlabeled records are excluded."""
    ai_yes = ai_no = df_yes = df_no = pf_yes = pf_no = 0
    n_docs = n_pars = 0
    for doc in corpus:
        n_docs += 1
        if doc.gold_doc_contains_ai is True:
            ai_yes += 1
        elif doc.gold_doc_contains_ai is False:
            ai_no += 1
        if doc.gold_doc_contains_frame is True:
            df_yes += 1
        elif doc.gold_doc_contains_frame is False:
            df_no += 1
        for par in doc.paragraphs:
            n_pars += 1
            if par.gold_par_contains_frame is True:
                pf_yes += 1
            elif par.gold_par_contains_frame is False:
                pf_no += 1
    return CorpusStats(
        doc_contains_ai=LabelCounts(ai_yes, ai_no),
        doc_contains_frame=LabelCounts(df_yes, df_no),
        par_contains_frame=LabelCounts(pf_yes, pf_no),
        n_documents=n_docs,
        n_paragraphs=n_pars,
    )


DEFAULT_FRAME_PHRASES = (
    "arms race",
    "ai arms race",
    "technological supremacy",
    "race for dominance",
    "battle for supremacy",
    "ai rivalry",
    "compete for dominance",
    "winner takes all",
    "outpacing its rivals",
    "cyberwarfare dominance",
    "global tech race",
    "beats every competitor",
)

_AI_KEYWORD_INSERTS = ("ai", "artificial intelligence", "machine learning")

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


def _pseudo_word(i: int) -> str:
    """Deterministic pronounceable pseudo-word for background vocabulary."""
    syllables = []
    n = i
    for _ in range(3):
        syllables.append(_CONSONANTS[n % len(_CONSONANTS)])
        n //= len(_CONSONANTS)
        syllables.append(_VOWELS[n % len(_VOWELS)])
        n //= len(_VOWELS)
    return "".join(syllables)


@dataclass(frozen=True)
class SynthConfig:
    """Parameters for the synthetic desk-scale corpus generator."""

    n_docs: int = 140
    vocab_size: int = 120
    paragraphs_per_doc: tuple[int, int] = (3, 6)
    tokens_per_paragraph: tuple[int, int] = (18, 40)
    frame_phrases: tuple[str, ...] = DEFAULT_FRAME_PHRASES
    imbalance_ratio: float = 13.0
    ai_keyword_rate: float = 0.3
    sources: tuple[str, ...] = ("wire-a", "wire-b", "journal-c", "feed-d")
    second_span_rate: float = 0.25


def synthesize_corpus(config: SynthConfig, seed: int) -> list[Document]:
    """Generate a labeled corpus with planted frame phrases.

    Deterministic in (config, seed). Positive paragraphs contain exactly the
    planted phrases, recorded as token-index gold spans; positive documents
    always contain an AI keyword so the full pipeline hierarchy is exercised.
    """
    if config.imbalance_ratio < 1:
        raise ConfigError("imbalance_ratio must be >= 1")
    n_pos_docs = int(round(config.n_docs / (config.imbalance_ratio + 1)))
    if n_pos_docs > 0 and not config.frame_phrases:
        raise ConfigError("frame phrase inventory is empty but positives are required")

    phrase_tokens = [tuple(p.split()) for p in config.frame_phrases]
    reserved = {t for p in phrase_tokens for t in p}
    reserved.update(t for kw in _AI_KEYWORD_INSERTS for t in kw.split())
    background = []
    i = 0
    while len(background) < config.vocab_size:
        w = _pseudo_word(i)
        i += 1
        if w not in reserved:
            background.append(w)

    rng = np.random.default_rng(seed)
    pmin, pmax = config.paragraphs_per_doc
    tmin, tmax = config.tokens_per_paragraph
    par_counts = rng.integers(pmin, pmax + 1, size=config.n_docs)
    total_pars = int(par_counts.sum())
    n_pos_pars = max(n_pos_docs, int(round(total_pars / (config.imbalance_ratio + 1))))

    pos_doc_idx = sorted(rng.choice(config.n_docs, size=n_pos_docs, replace=False).tolist())
    # Distribute positive paragraphs round-robin over positive documents,
    # capped by each document's paragraph count.
    pos_pars_per_doc = {d: 0 for d in pos_doc_idx}
    remaining = n_pos_pars
    while remaining > 0:
        progressed = False
        for d in pos_doc_idx:
            if remaining == 0:
                break
            if pos_pars_per_doc[d] < par_counts[d]:
                pos_pars_per_doc[d] += 1
                remaining -= 1
                progressed = True
        if not progressed:
            break  # every positive document is saturated

    docs: list[Document] = []
    for d in range(config.n_docs):
        is_pos_doc = d in pos_pars_per_doc
        n_pars = int(par_counts[d])
        pos_slots: set[int] = set()
        if is_pos_doc:
            pos_slots = set(
                rng.choice(n_pars, size=pos_pars_per_doc[d], replace=False).tolist()
            )
        insert_ai = is_pos_doc or (rng.random() < config.ai_keyword_rate)
        ai_par = int(rng.integers(0, n_pars)) if insert_ai else -1

        paragraphs = []
        for p in range(n_pars):
            n_tokens = int(rng.integers(tmin, tmax + 1))
            toks = [background[j] for j in rng.integers(0, len(background), n_tokens)]
            if p == ai_par:
                kw = _AI_KEYWORD_INSERTS[int(rng.integers(0, len(_AI_KEYWORD_INSERTS)))]
                at = int(rng.integers(0, len(toks) + 1))
                toks[at:at] = kw.split()
            spans = []
            if p in pos_slots:
                n_spans = 2 if rng.random() < config.second_span_rate else 1
                for _ in range(n_spans):
                    phrase = phrase_tokens[int(rng.integers(0, len(phrase_tokens)))]
                    at = int(rng.integers(0, len(toks) + 1))
                    while any(s.start_token < at < s.end_token for s in spans):
                        at = int(rng.integers(0, len(toks) + 1))
                    toks[at:at] = list(phrase)
                    # shift previously planted spans that sit at or after the insertion
                    spans = [
                        SpanAnnotation(
                            s.start_token + (len(phrase) if s.start_token >= at else 0),
                            s.end_token + (len(phrase) if s.start_token >= at else 0),
                            s.surface,
                        )
                        for s in spans
                    ]
                    spans.append(
                        SpanAnnotation(at, at + len(phrase), " ".join(phrase))
                    )
                spans.sort(key=lambda s: s.start_token)
            paragraphs.append(
                Paragraph(
                    index=p,
                    text=" ".join(toks),
                    gold_par_contains_frame=bool(spans),
                    gold_frame_spans=tuple(spans),
                )
            )
        text = "\n\n".join(par.text for par in paragraphs)
        docs.append(
            Document(
                id=f"synth-{d:04d}",
                source=config.sources[d % len(config.sources)],
                text=text,
                paragraphs=tuple(paragraphs),
                gold_doc_contains_ai=insert_ai,
                gold_doc_contains_frame=bool(pos_slots),
            )
        )
    return docs
