import json

import numpy as np
import pytest

from rheframe._serialize import dump_blob
from rheframe.attention import AttnConfig, span_binary, train_attention_model
from rheframe.classify import ClassifierSpec, compute_class_weights, train_classifier
from rheframe.corpus import SynthConfig, synthesize_corpus
from rheframe.embed import EmbedConfig, ExternalEmbeddingTable, infer_vector, train_paragraph_vectors
from rheframe.errors import ConfigError, ModelError
from rheframe.gate import default_keywords
from rheframe.pipeline import (
    BUNDLE_MAGIC,
    EmbedderRef,
    ParStage,
    PipelineBundle,
    PipelineResult,
    SpanDecoderConfig,
    emit_report,
    load_bundle,
    run_pipeline,
    save_bundle,
)
from rheframe.textprep import tokenize_words

INFER_EPOCHS = 30
INFER_SEED = 7


def _build_corpus_and_bundle():
    docs = synthesize_corpus(
        SynthConfig(n_docs=80, imbalance_ratio=7.0, ai_keyword_rate=0.35,
                    tokens_per_paragraph=(10, 22)),
        seed=21,
    )
    doc_units = [tokenize_words(d.text) for d in docs]
    doc_labels = np.asarray([bool(d.gold_doc_contains_frame) for d in docs])
    pv = train_paragraph_vectors(
        doc_units,
        EmbedConfig(variant="dbow-hs", dim=16, window=4, epochs=20, alpha=0.05,
                    min_count=1, seed=1),
    )
    # train on inferred vectors so the classifier sees the same feature
    # distribution the pipeline produces at detection time
    feats = np.stack([
        infer_vector(toks, pv, infer_epochs=INFER_EPOCHS, seed=INFER_SEED)[0]
        for toks in doc_units
    ]).astype(np.float64)
    doc_clf = train_classifier(
        feats, doc_labels,
        ClassifierSpec("logreg", {"penalty": "l2", "C": 10.0, "epochs": 120}),
        compute_class_weights(doc_labels),
    )

    par_units, par_labels, par_encodings = [], [], []
    for doc in docs:
        for par in doc.paragraphs:
            toks = tokenize_words(par.text)
            par_units.append(toks)
            par_labels.append(bool(par.gold_par_contains_frame))
            par_encodings.append(
                span_binary(len(toks), par.gold_frame_spans)
                if par.gold_frame_spans
                else None
            )
    vocab = sorted({t for unit in par_units for t in unit})
    rng = np.random.default_rng(5)
    table = ExternalEmbeddingTable(
        {t: rng.standard_normal(12).astype(np.float32) for t in vocab}, 12
    )
    attn, _ = train_attention_model(
        par_units,
        par_labels,
        par_encodings,
        AttnConfig(hidden_size=12, attention_size=8, guidance_weight=1.0,
                   epochs=12, batch_size=32, learning_rate=0.02, seed=3),
        table,
    )
    bundle = PipelineBundle(
        keywords=default_keywords(),
        doc_embedder=EmbedderRef(pv_model=pv, infer_epochs=INFER_EPOCHS,
                                 infer_seed=INFER_SEED),
        doc_classifier=doc_clf,
        par_stage=ParStage(kind="attention", attention=attn),
    )
    return docs, bundle


@pytest.fixture(scope="module")
def corpus_and_bundle():
    return _build_corpus_and_bundle()


def test_gate_negative_short_circuits(corpus_and_bundle):
    docs, bundle = corpus_and_bundle
    neg = next(d for d in docs if not d.gold_doc_contains_ai)
    result = run_pipeline(neg, bundle)
    assert result.doc_contains_ai is False
    assert result.doc_contains_frame is None
    assert result.paragraphs is None
    assert "gate" in result.timing
    assert "doc_classifier" not in result.timing


def test_doc_negative_short_circuits(corpus_and_bundle):
    docs, bundle = corpus_and_bundle
    for doc in docs:
        if doc.gold_doc_contains_ai and not doc.gold_doc_contains_frame:
            result = run_pipeline(doc, bundle)
            assert result.doc_contains_ai is True
            if result.doc_contains_frame is False:
                assert result.paragraphs is None
                return
    pytest.skip("doc classifier flagged every gated negative in this corpus")


def test_positive_doc_yields_flagged_paragraph_with_span(corpus_and_bundle):
    docs, bundle = corpus_and_bundle
    hits = 0
    for doc in docs:
        if not doc.gold_doc_contains_frame:
            continue
        result = run_pipeline(doc, bundle)
        if result.paragraphs is None:
            continue
        flagged = [p for p in result.paragraphs if p.par_contains_frame]
        if flagged and any(p.spans for p in flagged):
            assert flagged[0].attention_weights is not None
            hits += 1
    assert hits >= 1


def test_short_circuit_invariant_holds_corpus_wide(corpus_and_bundle):
    docs, bundle = corpus_and_bundle
    for doc in docs:
        result = run_pipeline(doc, bundle)
        if not result.doc_contains_ai:
            assert result.doc_contains_frame is None and result.paragraphs is None
        elif result.doc_contains_frame is False:
            assert result.paragraphs is None
        rec = result.to_dict()
        if not rec["doc_contains_ai"]:
            assert "doc_contains_frame" not in rec and "paragraphs" not in rec


def test_bundle_roundtrip_identical_predictions(tmp_path, corpus_and_bundle):
    docs, bundle = corpus_and_bundle
    path = tmp_path / "bundle.bin"
    save_bundle(bundle, path)
    loaded = load_bundle(path)
    for doc in docs[:12]:
        a = run_pipeline(doc, bundle).to_dict()
        b = run_pipeline(doc, loaded).to_dict()
        a.pop("timing")
        b.pop("timing")
        assert a == b


def test_bundle_truncation_detected(tmp_path, corpus_and_bundle):
    _, bundle = corpus_and_bundle
    path = tmp_path / "bundle.bin"
    save_bundle(bundle, path)
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(ModelError, match="checksum|truncated"):
        load_bundle(path)


def test_bundle_newer_major_version_refused(tmp_path):
    path = tmp_path / "bundle.bin"
    blob = dump_blob(BUNDLE_MAGIC, (99, 0), {"whatever": 1}, {})
    path.write_bytes(blob)
    with pytest.raises(ModelError, match="newer"):
        load_bundle(path)


def test_bundle_rejects_dim_mismatch(corpus_and_bundle):
    docs, bundle = corpus_and_bundle
    rng = np.random.default_rng(0)
    wrong = ExternalEmbeddingTable({"d": rng.standard_normal(99).astype(np.float32)}, 99)
    with pytest.raises(ModelError, match="dim"):
        PipelineBundle(
            keywords=bundle.keywords,
            doc_embedder=EmbedderRef(table=wrong),
            doc_classifier=bundle.doc_classifier,
            par_stage=bundle.par_stage,
        )


def test_span_decoder_config_validation():
    with pytest.raises(ConfigError):
        SpanDecoderConfig(threshold_factor=1.0)


def test_result_json_roundtrip(corpus_and_bundle):
    docs, bundle = corpus_and_bundle
    for doc in docs[:8]:
        result = run_pipeline(doc, bundle)
        rec = json.loads(json.dumps(result.to_dict()))
        back = PipelineResult.from_dict(rec)
        assert back.to_dict() == result.to_dict()


def test_embedder_ref_validation():
    with pytest.raises(ConfigError):
        EmbedderRef()


def test_report_renders_tokens_and_markers(tmp_path, corpus_and_bundle):
    docs, bundle = corpus_and_bundle
    results = [run_pipeline(d, bundle) for d in docs[:40]]
    path = tmp_path / "report.html"
    emit_report(results, docs[:40], path)
    content = path.read_text()
    assert content.startswith("<!doctype html>")
    assert "rgba(239, 108, 0, 1.000)" in content  # max weight at full intensity
    assert 'class="tok extracted"' in content or "extracted" in content


def test_report_handles_empty_results(tmp_path):
    path = tmp_path / "empty.html"
    emit_report([], [], path)
    content = path.read_text()
    assert "No frame detections" in content
    assert content.startswith("<!doctype html>")
