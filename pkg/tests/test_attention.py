import math

import numpy as np
import pytest

from rheframe.attention import (
    AttentionModel,
    AttnConfig,
    SpanDistribution,
    attention_forward,
    attention_gradient_check,
    extract_frame_spans,
    gold_span_mass,
    guided_loss,
    kl_divergence,
    normalize_span_encoding,
    span_binary,
    train_attention_model,
)
from rheframe.classify import ClassWeights
from rheframe.corpus import SpanAnnotation
from rheframe.embed import ExternalEmbeddingTable
from rheframe.errors import ConfigError, InputError


# --- span encodings and the KL objective ---

def test_normalize_published_example():
    dist = normalize_span_encoding([1, 0, 1, 0, 0])
    assert np.allclose(dist.probs, [0.5, 0, 0.5, 0, 0])
    assert not dist.is_empty


def test_normalize_single_token():
    dist = normalize_span_encoding([1, 0, 0, 0])
    assert np.allclose(dist.probs, [1, 0, 0, 0])


def test_normalize_all_zero_flagged_empty():
    dist = normalize_span_encoding([0, 0, 0])
    assert dist.is_empty
    assert not dist.probs.any()


def test_span_binary_from_annotations():
    enc = span_binary(6, [SpanAnnotation(1, 3), SpanAnnotation(4, 5)])
    assert enc.tolist() == [0, 1, 1, 0, 1, 0]


def test_kl_zero_on_identical():
    g = np.array([0.5, 0.0, 0.5, 0.0, 0.0])
    assert abs(kl_divergence(g, g, eps=0.0)) <= 1e-9


def test_kl_matches_direct_summation():
    # KL([1,0] || [0.5,0.5]) = 1 * log(1/0.5) = ln 2
    val = kl_divergence(np.array([1.0, 0.0]), np.array([0.5, 0.5]), eps=0.0)
    assert val == pytest.approx(math.log(2.0), abs=1e-6)


def test_kl_nonnegative_property():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(2, 10))
        g = rng.random(n)
        g /= g.sum()
        a = rng.random(n)
        a /= a.sum()
        assert kl_divergence(g, a, eps=0.0) >= -1e-12


def test_kl_length_mismatch():
    with pytest.raises(InputError):
        kl_divergence(np.ones(3) / 3, np.ones(4) / 4)


def test_guided_loss_zero_lambda_is_plain_cross_entropy():
    w = ClassWeights(0.6, 3.2)
    probs = np.array([0.25, 0.75])
    dist = normalize_span_encoding([1, 0, 0])
    a = np.array([0.2, 0.5, 0.3])
    base = guided_loss(probs, True, a, dist, w, guidance_weight=0.0)
    assert base == pytest.approx(-3.2 * math.log(0.75), abs=1e-12)


def test_guided_loss_adds_kl_term():
    w = ClassWeights(1.0, 1.0)
    probs = np.array([0.5, 0.5])
    a = np.array([0.5, 0.5])
    dist = normalize_span_encoding([1, 0])
    guided = guided_loss(probs, True, a, dist, w, guidance_weight=1.0, eps=0.0)
    plain = guided_loss(probs, True, a, dist, w, guidance_weight=0.0)
    assert guided - plain == pytest.approx(math.log(2.0), abs=1e-6)


def test_guided_loss_skips_empty_distribution():
    w = ClassWeights(1.0, 1.0)
    probs = np.array([0.9, 0.1])
    dist = normalize_span_encoding([0, 0])
    a = np.array([0.5, 0.5])
    with_g = guided_loss(probs, False, a, dist, w, guidance_weight=5.0)
    without = guided_loss(probs, False, a, dist, w, guidance_weight=0.0)
    assert with_g == pytest.approx(without)


def test_guided_loss_length_mismatch():
    w = ClassWeights(1.0, 1.0)
    dist = normalize_span_encoding([1, 0, 0])
    with pytest.raises(InputError):
        guided_loss(np.array([0.5, 0.5]), True, np.array([0.5, 0.5]), dist, w, 1.0)


# --- model fixtures ---

VOCAB = [f"w{i:02d}" for i in range(18)] + ["arms", "race"]


def _emb_table(dim=10, seed=5):
    rng = np.random.default_rng(seed)
    return ExternalEmbeddingTable(
        {t: rng.standard_normal(dim).astype(np.float32) for t in VOCAB}, dim
    )


def _tiny_model(lam=1.0, seed=0, dim=6, hidden=5, d_a=4, direction="gold_to_attention"):
    cfg = AttnConfig(
        hidden_size=hidden,
        attention_size=d_a,
        guidance_weight=lam,
        kl_direction=direction,
        epochs=1,
        batch_size=4,
        seed=seed,
    )
    table = _emb_table(dim=dim, seed=seed + 1)
    rng = np.random.default_rng(seed)
    from rheframe.attention import _init_params

    tokens = sorted(table.vectors)
    emb = np.zeros((len(tokens) + 1, dim))
    for i, t in enumerate(tokens):
        emb[i] = table.vectors[t]
    params = _init_params(dim, cfg, rng)
    return AttentionModel(cfg, tokens, emb, params, ClassWeights(0.7, 2.5))


def _toy_corpus(n=60, seed=2, pos_frac=0.25, length=(6, 14)):
    rng = np.random.default_rng(seed)
    background = VOCAB[:18]
    paragraphs, labels, encodings = [], [], []
    for i in range(n):
        n_tok = int(rng.integers(*length))
        toks = [background[j] for j in rng.integers(0, len(background), n_tok)]
        if rng.random() < pos_frac:
            at = int(rng.integers(0, len(toks) + 1))
            toks[at:at] = ["arms", "race"]
            enc = np.zeros(len(toks))
            enc[at : at + 2] = 1.0
            labels.append(True)
            encodings.append(enc)
        else:
            labels.append(False)
            encodings.append(None)
        paragraphs.append(toks)
    return paragraphs, labels, encodings


# --- forward-pass structural properties ---

def test_attention_weights_sum_to_one_and_padding_zero():
    model = _tiny_model()
    ids = [model.ids_for(["w00", "w01", "w02", "w03"]), model.ids_for(["w04", "w05"])]
    probs, a, cache = model._forward(ids)
    assert a.shape == (4, 2)
    assert a[:, 0].sum() == pytest.approx(1.0, abs=1e-6)
    assert a[:2, 1].sum() == pytest.approx(1.0, abs=1e-6)
    assert a[2, 1] == 0.0 and a[3, 1] == 0.0
    assert probs.sum(axis=1) == pytest.approx(np.ones(2), abs=1e-6)


def test_bilstm_output_shape():
    model = _tiny_model(hidden=5)
    ids = [model.ids_for(["w00", "w01", "w02"])]
    _, _, cache = model._forward(ids)
    assert cache["Hcat"].shape == (3, 1, 10)


def test_attention_forward_single_paragraph():
    model = _tiny_model()
    probs, attn = attention_forward(["w00", "w07", "arms", "race"], model)
    assert probs.shape == (2,)
    assert attn.shape == (4,)
    assert attn.sum() == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(InputError):
        attention_forward([], model)


def test_forward_deterministic_inference():
    model = _tiny_model()
    toks = ["w01", "w02", "arms"]
    p1, a1 = attention_forward(toks, model)
    p2, a2 = attention_forward(toks, model)
    assert (p1 == p2).all() and (a1 == a2).all()


# --- gradient checks ---

def _check_batch(model):
    paragraphs = [
        ["w00", "w01", "arms", "race", "w02"],
        ["w03", "w04"],
        ["arms", "race", "w05", "w06"],
        ["w07", "w08", "w09"],
    ]
    labels = [True, False, True, False]
    encodings = [
        np.array([0, 0, 1, 1, 0], dtype=float),
        None,
        np.array([1, 1, 0, 0], dtype=float),
        None,
    ]
    return paragraphs, labels, encodings


def test_gradient_check_unguided():
    model = _tiny_model(lam=0.0)
    err = attention_gradient_check(model, *_check_batch(model))
    assert err <= 1e-4, err


def test_gradient_check_guided():
    model = _tiny_model(lam=1.0)
    err = attention_gradient_check(model, *_check_batch(model))
    assert err <= 1e-4, err


def test_gradient_check_reversed_kl_direction():
    model = _tiny_model(lam=0.7, direction="attention_to_gold")
    err = attention_gradient_check(model, *_check_batch(model))
    assert err <= 1e-4, err


def test_zero_lambda_ignores_guidance():
    model = _tiny_model(lam=0.0)
    paragraphs, labels, encodings = _check_batch(model)
    y = np.asarray(labels)
    sw = model.class_weights.per_sample(y)
    ids = [model.ids_for(t) for t in paragraphs]
    L = max(len(i) for i in ids)
    g = np.zeros((L, len(ids)))
    g[2, 0] = 1.0
    has_g = np.array([True, False, False, False])
    _, _, cache = model._forward(ids)
    loss_with, grads_with = model._loss_and_grads(cache, y, g, has_g, sw)
    _, _, cache = model._forward(ids)
    loss_without, grads_without = model._loss_and_grads(
        cache, y, np.zeros_like(g), np.zeros(4, dtype=bool), sw
    )
    assert loss_with == pytest.approx(loss_without)
    for key in grads_with:
        assert np.allclose(grads_with[key], grads_without[key])


# --- training behaviour ---

def _train_config(lam, epochs=14, seed=3, **kw):
    base = dict(
        hidden_size=10,
        attention_size=6,
        guidance_weight=lam,
        epochs=epochs,
        batch_size=16,
        learning_rate=0.02,
        patience=3,
        seed=seed,
    )
    base.update(kw)
    return AttnConfig(**base)


def test_training_improves_and_logs():
    paragraphs, labels, encodings = _toy_corpus()
    model, log = train_attention_model(
        paragraphs, labels, encodings, _train_config(1.0), _emb_table()
    )
    assert len(log) >= 2
    assert {"epoch", "train_loss", "val_loss", "val_macro_f1"} <= set(log[0])
    assert log[-1]["train_loss"] < log[0]["train_loss"]


def test_restored_epoch_has_minimum_validation_loss():
    paragraphs, labels, encodings = _toy_corpus(seed=4)
    model, log = train_attention_model(
        paragraphs, labels, encodings, _train_config(0.0, epochs=10), _emb_table()
    )
    vals = [entry["val_loss"] for entry in log]
    assert vals[model.best_epoch] == pytest.approx(min(vals))


def test_training_deterministic():
    paragraphs, labels, encodings = _toy_corpus(seed=6)
    cfg = _train_config(1.0, epochs=4)
    m1, log1 = train_attention_model(paragraphs, labels, encodings, cfg, _emb_table())
    m2, log2 = train_attention_model(paragraphs, labels, encodings, cfg, _emb_table())
    assert m1.to_bytes() == m2.to_bytes()
    assert log1 == log2


def test_training_rejects_single_class():
    paragraphs, labels, encodings = _toy_corpus(seed=7, pos_frac=0.0)
    with pytest.raises(InputError):
        train_attention_model(
            paragraphs, labels, encodings, _train_config(1.0), _emb_table()
        )


def test_guidance_concentrates_attention_on_spans():
    paragraphs, labels, encodings = _toy_corpus(n=90, seed=8, pos_frac=0.3)
    table = _emb_table()
    guided, _ = train_attention_model(
        paragraphs, labels, encodings, _train_config(1.0, seed=9), table
    )
    unguided, _ = train_attention_model(
        paragraphs, labels, encodings, _train_config(0.0, seed=9), table
    )
    masses = {"guided": [], "unguided": []}
    for model, key in ((guided, "guided"), (unguided, "unguided")):
        for toks, label, enc in zip(paragraphs, labels, encodings):
            if not label:
                continue
            _, attn = attention_forward(toks, model)
            masses[key].append(gold_span_mass(attn, enc))
    assert np.median(masses["guided"]) > np.median(masses["unguided"])


def test_config_validation():
    with pytest.raises(ConfigError):
        AttnConfig(hops=2)
    with pytest.raises(ConfigError):
        AttnConfig(guidance_weight=-1.0)
    with pytest.raises(ConfigError):
        AttnConfig(patience=0)
    with pytest.raises(ConfigError):
        AttnConfig(kl_direction="sideways")


# --- span decoding ---

def test_extract_spans_threshold_rule():
    a = np.array([0.02] * 8 + [0.42, 0.42])
    spans = extract_frame_spans(a, threshold_factor=2.0)
    assert [(s.start_token, s.end_token) for s in spans] == [(8, 10)]


def test_extract_spans_uniform_yields_nothing():
    a = np.full(7, 1.0 / 7)
    assert extract_frame_spans(a, threshold_factor=2.0) == []
    assert extract_frame_spans(a, threshold_factor=1.5) == []


def test_extract_spans_non_adjacent():
    a = np.array([0.5, 0.0, 0.5, 0.0, 0.0])
    spans = extract_frame_spans(a, threshold_factor=2.0, tokens=list("abcde"))
    assert [(s.start_token, s.end_token) for s in spans] == [(0, 1), (2, 3)]
    assert spans[0].surface == "a"


def test_extract_spans_empty_attention_rejected():
    with pytest.raises(InputError):
        extract_frame_spans(np.zeros(0))


# --- persistence ---

def test_attention_model_roundtrip(tmp_path):
    paragraphs, labels, encodings = _toy_corpus(seed=12)
    model, _ = train_attention_model(
        paragraphs, labels, encodings, _train_config(1.0, epochs=3), _emb_table()
    )
    path = tmp_path / "attn.bin"
    model.save(path)
    loaded = AttentionModel.load(path)
    p1, a1 = model.predict(paragraphs[:5])
    p2, a2 = loaded.predict(paragraphs[:5])
    assert np.allclose(p1, p2, atol=1e-6)
    for x, y in zip(a1, a2):
        assert np.allclose(x, y, atol=1e-6)
