"""Hierarchical orchestration: gate, document classifier, paragraph
classifier, span extraction; plus bundle persistence and the HTML report.

Each stage short-circuits on a negative verdict, so downstream fields stay
absent whenever an upstream stage said no. Inference needs no whole-corpus
state: documents stream through one at a time.
"""

from __future__ import annotations

import html
import json
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from rheframe import __version__
from rheframe._serialize import dump_blob, parse_blob
from rheframe.attention import AttentionModel, attention_forward, extract_frame_spans
from rheframe.classify import ClassifierModel, predict_classifier
from rheframe.corpus import Document, SpanAnnotation
from rheframe.embed import EmbeddingModel, ExternalEmbeddingTable, infer_vector
from rheframe.errors import ConfigError, InputError, ModelError
from rheframe.gate import KeywordSet, contains_ai, default_keywords
from rheframe.textprep import TokenizerConfig, tokenize_words

BUNDLE_MAGIC = "RFD-BND"
BUNDLE_VERSION = (1, 0)


@dataclass(frozen=True)
class SpanDecoderConfig:
    threshold_factor: float = 2.0

    def __post_init__(self):
        if self.threshold_factor <= 1.0:
            raise ConfigError("threshold_factor must exceed the uniform mass (> 1)")


class EmbedderRef:
    """Feature source for classical stages: a trained paragraph-vector model
    (unseen units are embedded by frozen-parameter inference) or a
    precomputed table keyed by unit id."""

    def __init__(
        self,
        pv_model: EmbeddingModel | None = None,
        table: ExternalEmbeddingTable | None = None,
        infer_epochs: int = 50,
        infer_seed: int = 0,
    ):
        if (pv_model is None) == (table is None):
            raise ConfigError("exactly one of pv_model or table must be given")
        self.pv_model = pv_model
        self.table = table
        self.infer_epochs = infer_epochs
        self.infer_seed = infer_seed

    @property
    def kind(self) -> str:
        return "pv" if self.pv_model is not None else "table"

    @property
    def dim(self) -> int:
        return self.pv_model.dim if self.pv_model is not None else self.table.dim

    def vector_for(self, unit_id: str, tokens: Sequence[str]) -> np.ndarray:
        if self.pv_model is not None:
            vec, _ = infer_vector(
                tokens, self.pv_model, infer_epochs=self.infer_epochs, seed=self.infer_seed
            )
            return vec
        return self.table.require(unit_id)


@dataclass
class ParStage:
    """Paragraph-level stage: a classical embedder+classifier pair or an
    attention model (the only kind that yields weights and spans)."""

    kind: str  # "classical" | "attention"
    embedder: EmbedderRef | None = None
    classifier: ClassifierModel | None = None
    attention: AttentionModel | None = None

    def __post_init__(self):
        if self.kind == "classical":
            if self.embedder is None or self.classifier is None:
                raise ConfigError("classical stage needs embedder and classifier")
        elif self.kind == "attention":
            if self.attention is None:
                raise ConfigError("attention stage needs a model")
        else:
            raise ConfigError(f"unknown paragraph stage kind {self.kind!r}")


@dataclass
class PipelineBundle:
    keywords: KeywordSet
    doc_embedder: EmbedderRef
    doc_classifier: ClassifierModel
    par_stage: ParStage
    tokenizer: TokenizerConfig = TokenizerConfig()
    span_decoder: SpanDecoderConfig = SpanDecoderConfig()
    version: tuple[int, int] = BUNDLE_VERSION

    def __post_init__(self):
        if self.doc_embedder.dim != self.doc_classifier.feature_dim:
            raise ModelError(
                f"document embedder dim {self.doc_embedder.dim} != classifier "
                f"dim {self.doc_classifier.feature_dim}"
            )
        if self.par_stage.kind == "classical":
            if self.par_stage.embedder.dim != self.par_stage.classifier.feature_dim:
                raise ModelError(
                    f"paragraph embedder dim {self.par_stage.embedder.dim} != "
                    f"classifier dim {self.par_stage.classifier.feature_dim}"
                )


@dataclass
class ParagraphResult:
    index: int
    par_contains_frame: bool
    score: float
    attention_weights: list[float] | None = None
    spans: list[SpanAnnotation] = field(default_factory=list)


@dataclass
class PipelineResult:
    doc_id: str
    doc_contains_ai: bool
    doc_contains_frame: bool | None = None
    paragraphs: list[ParagraphResult] | None = None
    timing: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        rec: dict = {"id": self.doc_id, "doc_contains_ai": self.doc_contains_ai}
        if self.doc_contains_frame is not None:
            rec["doc_contains_frame"] = self.doc_contains_frame
        if self.paragraphs is not None:
            rec["paragraphs"] = [
                {
                    "index": p.index,
                    "par_contains_frame": p.par_contains_frame,
                    "score": p.score,
                    **(
                        {"attention_weights": p.attention_weights}
                        if p.attention_weights is not None
                        else {}
                    ),
                    "spans": [
                        {
                            "start_token": s.start_token,
                            "end_token": s.end_token,
                            "surface": s.surface,
                        }
                        for s in p.spans
                    ],
                }
                for p in self.paragraphs
            ]
        rec["timing"] = self.timing
        return rec

    @classmethod
    def from_dict(cls, rec: dict) -> "PipelineResult":
        paragraphs = None
        if "paragraphs" in rec:
            paragraphs = [
                ParagraphResult(
                    index=p["index"],
                    par_contains_frame=p["par_contains_frame"],
                    score=p["score"],
                    attention_weights=p.get("attention_weights"),
                    spans=[
                        SpanAnnotation(s["start_token"], s["end_token"], s.get("surface", ""))
                        for s in p.get("spans", [])
                    ],
                )
                for p in rec["paragraphs"]
            ]
        return cls(
            doc_id=rec["id"],
            doc_contains_ai=rec["doc_contains_ai"],
            doc_contains_frame=rec.get("doc_contains_frame"),
            paragraphs=paragraphs,
            timing=rec.get("timing", {}),
        )


def run_pipeline(doc: Document, bundle: PipelineBundle) -> PipelineResult:
    """Stage order: gate -> document classifier -> paragraph stage -> spans."""
    timing: dict[str, float] = {}
    t0 = time.perf_counter()
    gated, _ = contains_ai(doc, bundle.keywords, bundle.tokenizer)
    timing["gate"] = time.perf_counter() - t0
    if not gated:
        return PipelineResult(doc.id, doc_contains_ai=False, timing=timing)

    t0 = time.perf_counter()
    doc_tokens = tokenize_words(doc.text, bundle.tokenizer)
    features = bundle.doc_embedder.vector_for(doc.id, doc_tokens)
    pred, _ = predict_classifier(bundle.doc_classifier, features[None, :])
    timing["doc_classifier"] = time.perf_counter() - t0
    if not bool(pred[0]):
        return PipelineResult(
            doc.id, doc_contains_ai=True, doc_contains_frame=False, timing=timing
        )

    t0 = time.perf_counter()
    paragraphs: list[ParagraphResult] = []
    for par in doc.paragraphs:
        tokens = tokenize_words(par.text, bundle.tokenizer)
        if not tokens:
            paragraphs.append(ParagraphResult(par.index, False, 0.0))
            continue
        if bundle.par_stage.kind == "attention":
            probs, attn = attention_forward(tokens, bundle.par_stage.attention)
            positive = bool(probs[1] >= 0.5)
            spans = []
            if positive:
                spans = extract_frame_spans(
                    attn, bundle.span_decoder.threshold_factor, tokens=tokens
                )
            paragraphs.append(
                ParagraphResult(
                    index=par.index,
                    par_contains_frame=positive,
                    score=float(probs[1]),
                    attention_weights=[float(x) for x in attn],
                    spans=spans,
                )
            )
        else:
            unit_id = f"{doc.id}#p{par.index}"
            vec = bundle.par_stage.embedder.vector_for(unit_id, tokens)
            pred, score = predict_classifier(bundle.par_stage.classifier, vec[None, :])
            paragraphs.append(
                ParagraphResult(
                    index=par.index,
                    par_contains_frame=bool(pred[0]),
                    score=float(score[0]),
                )
            )
    timing["par_stage"] = time.perf_counter() - t0
    return PipelineResult(
        doc.id,
        doc_contains_ai=True,
        doc_contains_frame=True,
        paragraphs=paragraphs,
        timing=timing,
    )


# --- bundle persistence ---

def save_bundle(bundle: PipelineBundle, path) -> None:
    header = {
        "package_version": __version__,
        "keywords": [" ".join(entry) for entry in bundle.keywords.entries],
        "tokenizer": asdict(bundle.tokenizer),
        "span_decoder": asdict(bundle.span_decoder),
        "doc_embedder": {
            "kind": bundle.doc_embedder.kind,
            "infer_epochs": bundle.doc_embedder.infer_epochs,
            "infer_seed": bundle.doc_embedder.infer_seed,
        },
        "par_stage": {"kind": bundle.par_stage.kind},
    }
    if bundle.par_stage.kind == "classical":
        header["par_embedder"] = {
            "kind": bundle.par_stage.embedder.kind,
            "infer_epochs": bundle.par_stage.embedder.infer_epochs,
            "infer_seed": bundle.par_stage.embedder.infer_seed,
        }
    arrays = {
        "doc_embed_blob": _embedder_bytes(bundle.doc_embedder),
        "doc_clf_blob": _as_u8(bundle.doc_classifier.to_bytes()),
    }
    if bundle.par_stage.kind == "classical":
        arrays["par_embed_blob"] = _embedder_bytes(bundle.par_stage.embedder)
        arrays["par_clf_blob"] = _as_u8(bundle.par_stage.classifier.to_bytes())
    else:
        arrays["attn_blob"] = _as_u8(bundle.par_stage.attention.to_bytes())
    with open(path, "wb") as fh:
        fh.write(dump_blob(BUNDLE_MAGIC, BUNDLE_VERSION, header, arrays))


def _as_u8(data: bytes) -> np.ndarray:
    return np.frombuffer(data, dtype=np.uint8)


def _embedder_bytes(ref: EmbedderRef) -> np.ndarray:
    if ref.kind == "pv":
        return _as_u8(ref.pv_model.to_bytes())
    payload = {
        "dim": ref.table.dim,
        "vectors": {k: v.tolist() for k, v in sorted(ref.table.vectors.items())},
    }
    return _as_u8(json.dumps(payload, sort_keys=True).encode("utf-8"))


def _embedder_from(meta: dict, blob: np.ndarray) -> EmbedderRef:
    raw = blob.tobytes()
    if meta["kind"] == "pv":
        return EmbedderRef(
            pv_model=EmbeddingModel.from_bytes(raw),
            infer_epochs=meta["infer_epochs"],
            infer_seed=meta["infer_seed"],
        )
    payload = json.loads(raw.decode("utf-8"))
    table = ExternalEmbeddingTable(
        {k: np.asarray(v, dtype=np.float32) for k, v in payload["vectors"].items()},
        payload["dim"],
    )
    return EmbedderRef(
        table=table,
        infer_epochs=meta["infer_epochs"],
        infer_seed=meta["infer_seed"],
    )


def load_bundle(path) -> PipelineBundle:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise ModelError(f"cannot read bundle {path}: {exc}") from exc
    version, header, arrays = parse_blob(data, BUNDLE_MAGIC, BUNDLE_VERSION[0])
    keywords = KeywordSet(header["keywords"]) if header["keywords"] else default_keywords()
    doc_embedder = _embedder_from(header["doc_embedder"], arrays["doc_embed_blob"])
    doc_clf = ClassifierModel.from_bytes(arrays["doc_clf_blob"].tobytes())
    if header["par_stage"]["kind"] == "classical":
        par_stage = ParStage(
            kind="classical",
            embedder=_embedder_from(header["par_embedder"], arrays["par_embed_blob"]),
            classifier=ClassifierModel.from_bytes(arrays["par_clf_blob"].tobytes()),
        )
    else:
        par_stage = ParStage(
            kind="attention",
            attention=AttentionModel.from_bytes(arrays["attn_blob"].tobytes()),
        )
    return PipelineBundle(
        keywords=keywords,
        doc_embedder=doc_embedder,
        doc_classifier=doc_clf,
        par_stage=par_stage,
        tokenizer=TokenizerConfig(**header["tokenizer"]),
        span_decoder=SpanDecoderConfig(**header["span_decoder"]),
        version=version,
    )


# --- HTML report ---

_REPORT_CSS = """
body { font-family: Georgia, serif; margin: 2em auto; max-width: 60em; }
h1 { font-size: 1.4em; } h2 { font-size: 1.1em; margin-bottom: 0.2em; }
.meta { color: #555; font-size: 0.9em; margin-bottom: 0.6em; }
.par { margin: 0.7em 0; line-height: 1.9; }
.tok { padding: 0.05em 0.15em; border-radius: 3px; }
.extracted { outline: 2px solid #1a6baf; outline-offset: 1px; }
.gold { text-decoration: underline; text-decoration-thickness: 2px;
        text-decoration-color: #2e7d32; }
.legend span { margin-right: 1.2em; }
.notice { color: #777; font-style: italic; }
"""


def _render_paragraph(tokens, weights, extracted, gold) -> str:
    max_w = max(weights) if weights and max(weights) > 0 else 1.0
    in_extracted = set()
    for span in extracted:
        in_extracted.update(range(span.start_token, span.end_token))
    in_gold = set()
    for span in gold:
        in_gold.update(range(span.start_token, span.end_token))
    parts = []
    for i, tok in enumerate(tokens):
        w = weights[i] if i < len(weights) else 0.0
        intensity = w / max_w
        classes = ["tok"]
        if i in in_extracted:
            classes.append("extracted")
        if i in in_gold:
            classes.append("gold")
        style = f"background: rgba(239, 108, 0, {intensity:.3f});"
        parts.append(
            f'<span class="{" ".join(classes)}" style="{style}" '
            f'title="{w:.4f}">{html.escape(tok)}</span>'
        )
    return " ".join(parts)


def emit_report(
    results: Sequence[PipelineResult],
    docs: Sequence[Document],
    path,
    tokenizer: TokenizerConfig = TokenizerConfig(),
) -> None:
    """Write a self-contained HTML file visualizing attention and spans.

    Token background intensity is linear in attention weight (the maximum
    weight maps to full intensity); extracted spans are outlined and gold
    spans underlined.
    """
    by_id = {d.id: d for d in docs}
    sections = []
    n_flagged = 0
    for res in results:
        doc = by_id.get(res.doc_id)
        lines = [f"<h2>{html.escape(res.doc_id)}</h2>"]
        verdicts = [f"AI: {'yes' if res.doc_contains_ai else 'no'}"]
        if res.doc_contains_frame is not None:
            verdicts.append(f"frame: {'yes' if res.doc_contains_frame else 'no'}")
        lines.append(f'<div class="meta">{0 if doc is None else len(doc.paragraphs)} paragraphs; {" | ".join(verdicts)}</div>')
        if res.paragraphs:
            for pres in res.paragraphs:
                if not pres.par_contains_frame:
                    continue
                n_flagged += 1
                if doc is not None and pres.index < len(doc.paragraphs):
                    par = doc.paragraphs[pres.index]
                    tokens = tokenize_words(par.text, tokenizer)
                    gold = list(par.gold_frame_spans)
                else:
                    tokens, gold = [], []
                weights = pres.attention_weights or []
                lines.append(
                    f'<div class="par"><strong>paragraph {pres.index}</strong> '
                    f"(score {pres.score:.3f})<br>"
                    + _render_paragraph(tokens, weights, pres.spans, gold)
                    + "</div>"
                )
        sections.append("\n".join(lines))
    body = "\n".join(sections)
    if n_flagged == 0:
        body += '\n<p class="notice">No frame detections in this batch.</p>'
    doc_html = (
        "<!doctype html>\n<html><head><meta charset=\"utf-8\">"
        f"<title>Frame detection report</title><style>{_REPORT_CSS}</style></head>\n"
        "<body>\n<h1>Rhetorical frame detection report</h1>\n"
        '<div class="legend"><span class="tok" style="background: rgba(239,108,0,0.6)">'
        "attention</span><span class=\"tok extracted\">extracted span</span>"
        '<span class="tok gold">gold span</span></div>\n'
        f"{body}\n</body></html>\n"
    )
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(doc_html)
    except OSError as exc:
        raise InputError(f"cannot write report {path}: {exc}") from exc
