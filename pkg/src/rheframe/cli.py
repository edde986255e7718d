"""Command-line interface.

Subcommands: ingest, synth, train-embed, train-clf, train-attn, grid-search,
evaluate, detect, report, bundle. Global flags (--config/--seed/--model) come
before the subcommand. Exit codes: 0 success, 1 input error, 2 model or
configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from rheframe import __version__
from rheframe.attention import (
    AttentionModel,
    AttnConfig,
    save_training_log,
    span_binary,
    train_attention_model,
)
from rheframe.classify import (
    ClassifierModel,
    ClassifierSpec,
    compute_class_weights,
    grid_search,
    predict_classifier,
    train_classifier,
)
from rheframe.corpus import (
    Document,
    SynthConfig,
    compute_stats,
    load_corpus,
    save_corpus,
    synthesize_corpus,
)
from rheframe.embed import (
    EmbedConfig,
    EmbeddingModel,
    ExternalEmbeddingTable,
    infer_vector,
    load_unit_embeddings,
    load_word_embeddings,
    train_paragraph_vectors,
)
from rheframe.errors import ConfigError, InputError, ModelError
from rheframe.evaluation import evaluate_model
from rheframe.gate import KeywordSet, default_keywords
from rheframe.pipeline import (
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
from rheframe.textprep import TokenizerConfig, tokenize_words


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    return cfg


def _cfg_get(cfg: dict, dotted: str, default=None):
    node = cfg
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            return default
        node = node[part]
    return node


def _tokenizer_from(cfg: dict) -> TokenizerConfig:
    section = _cfg_get(cfg, "tokenizer", {}) or {}
    return TokenizerConfig(**section)


def _keywords_from(cfg: dict) -> KeywordSet:
    entries = _cfg_get(cfg, "gate.keywords")
    return KeywordSet(entries) if entries else default_keywords()


def _doc_units(docs, tokenizer):
    units, ids, labels = [], [], []
    for doc in docs:
        units.append(tokenize_words(doc.text, tokenizer))
        ids.append(doc.id)
        labels.append(doc.gold_doc_contains_frame)
    return units, ids, labels


def _par_units(docs, tokenizer):
    units, ids, labels, spans = [], [], [], []
    for doc in docs:
        for par in doc.paragraphs:
            units.append(tokenize_words(par.text, tokenizer))
            ids.append(f"{doc.id}#p{par.index}")
            labels.append(par.gold_par_contains_frame)
            spans.append(par.gold_frame_spans)
    return units, ids, labels, spans


def _labeled_units(args, cfg):
    """Tokenized units, ids, labels, and span lists for the chosen level."""
    tokenizer = _tokenizer_from(cfg)
    docs = load_corpus(args.input, strict=not getattr(args, "lenient", False),
                       tokenizer=tokenizer)
    if args.level == "document":
        units, ids, labels = _doc_units(docs, tokenizer)
        spans = [() for _ in units]
    else:
        units, ids, labels, spans = _par_units(docs, tokenizer)
    keep = [i for i, lab in enumerate(labels) if lab is not None]
    if not keep:
        raise InputError(f"no labeled units at level {args.level!r}")
    return (
        [units[i] for i in keep],
        [ids[i] for i in keep],
        np.asarray([labels[i] for i in keep], dtype=bool),
        [spans[i] for i in keep],
    )


def _features_from_source(args, units, ids, seed):
    if getattr(args, "embed_model", None):
        model = EmbeddingModel.load(args.embed_model)
        feats = np.zeros((len(units), model.dim), dtype=np.float64)
        for i, toks in enumerate(units):
            vec, _ = infer_vector(toks, model, infer_epochs=args.infer_epochs, seed=seed)
            feats[i] = vec
        return feats, {"source": "pv", "model": args.embed_model}
    if getattr(args, "unit_embeddings", None):
        table = load_unit_embeddings(args.unit_embeddings)
        feats = table.matrix_for(ids, oov_zero=False).astype(np.float64)
        return feats, {"source": "table", "file": args.unit_embeddings}
    raise ConfigError("need --embed-model or --unit-embeddings")


# --- subcommand implementations ---

def _cmd_ingest(args, cfg, seed):
    docs = load_corpus(args.input, strict=not args.lenient, tokenizer=_tokenizer_from(cfg))
    stats = compute_stats(docs)
    print(json.dumps(stats.to_dict(), indent=2, sort_keys=True))
    return 0


def _cmd_synth(args, cfg, seed):
    section = _cfg_get(cfg, "synth", {}) or {}
    kwargs = dict(
        n_docs=args.docs if args.docs is not None else section.get("n_docs", 140),
        imbalance_ratio=(
            args.ratio if args.ratio is not None else section.get("imbalance_ratio", 13.0)
        ),
    )
    if args.vocab_size is not None:
        kwargs["vocab_size"] = args.vocab_size
    if args.ai_rate is not None:
        kwargs["ai_keyword_rate"] = args.ai_rate
    if args.paragraphs is not None:
        kwargs["paragraphs_per_doc"] = tuple(args.paragraphs)
    if args.tokens is not None:
        kwargs["tokens_per_paragraph"] = tuple(args.tokens)
    docs = synthesize_corpus(SynthConfig(**kwargs), seed=seed)
    save_corpus(docs, args.out)
    stats = compute_stats(docs)
    print(json.dumps(stats.to_dict(), indent=2, sort_keys=True))
    return 0


def _cmd_train_embed(args, cfg, seed):
    tokenizer = _tokenizer_from(cfg)
    docs = load_corpus(args.input, tokenizer=tokenizer)
    if args.unit == "document":
        units = [tokenize_words(d.text, tokenizer) for d in docs]
    else:
        units = [
            tokenize_words(p.text, tokenizer) for d in docs for p in d.paragraphs
        ]
    section = _cfg_get(cfg, "embed", {}) or {}
    config = EmbedConfig(
        variant=args.variant,
        dim=args.dim if args.dim is not None else section.get("dim", 300),
        window=args.window if args.window is not None else section.get("window", 5),
        negative=args.negative if args.negative is not None else section.get("negative", 5),
        epochs=args.epochs if args.epochs is not None else section.get("epochs", 20),
        min_count=(
            args.min_count if args.min_count is not None else section.get("min_count", 5)
        ),
        seed=seed,
    )
    model = train_paragraph_vectors(units, config)
    model.save(args.out)
    print(
        json.dumps(
            {
                "units": len(units),
                "vocab": len(model.vocab),
                "dim": model.dim,
                "epoch_losses": model.epoch_losses,
                "out": str(args.out),
            }
        )
    )
    return 0


def _cmd_train_clf(args, cfg, seed):
    units, ids, labels, _ = _labeled_units(args, cfg)
    feats, source = _features_from_source(args, units, ids, seed)
    params = json.loads(args.params) if args.params else {}
    spec = ClassifierSpec(kind=args.kind, params=params, seed=seed)
    model = train_classifier(feats, labels, spec, compute_class_weights(labels))
    model.save(args.out)
    pred, _ = predict_classifier(model, feats)
    print(
        json.dumps(
            {
                "kind": args.kind,
                "n": len(labels),
                "train_accuracy": float(np.mean(pred == labels)),
                "features": source,
                "out": str(args.out),
            }
        )
    )
    return 0


def _attn_config(args, cfg, seed, guided: bool) -> AttnConfig:
    section = _cfg_get(cfg, "attention", {}) or {}

    def pick(flag, key, default):
        return flag if flag is not None else section.get(key, default)

    return AttnConfig(
        hidden_size=pick(args.hidden, "hidden_size", 128),
        attention_size=pick(args.attention_size, "attention_size", 64),
        guidance_weight=pick(args.guidance_weight, "guidance_weight", 1.0) if guided else 0.0,
        epochs=pick(args.epochs, "epochs", 30),
        batch_size=pick(args.batch_size, "batch_size", 32),
        learning_rate=pick(args.learning_rate, "learning_rate", 0.01),
        patience=pick(args.patience, "patience", 3),
        seed=seed,
    )


def _attention_training_data(args, cfg):
    tokenizer = _tokenizer_from(cfg)
    docs = load_corpus(args.input, tokenizer=tokenizer)
    units, _, labels, spans = _par_units(docs, tokenizer)
    keep = [i for i, lab in enumerate(labels) if lab is not None]
    kept_units = [units[i] for i in keep]
    kept_labels = np.asarray([labels[i] for i in keep], dtype=bool)
    kept_spans = [spans[i] for i in keep]
    encodings = [
        span_binary(len(u), s) if s else None for u, s in zip(kept_units, kept_spans)
    ]
    return kept_units, kept_labels, encodings


def _cmd_train_attn(args, cfg, seed):
    units, labels, encodings = _attention_training_data(args, cfg)
    table = load_word_embeddings(args.word_embeddings)
    config = _attn_config(args, cfg, seed, guided=not args.unguided)
    model, log = train_attention_model(units, labels, encodings, config, table)
    model.save(args.out)
    if args.log:
        save_training_log(log, args.log)
    print(
        json.dumps(
            {
                "paragraphs": len(units),
                "guided": not args.unguided,
                "epochs_run": len(log),
                "best_epoch": model.best_epoch,
                "out": str(args.out),
            }
        )
    )
    return 0


def _cmd_grid_search(args, cfg, seed):
    units, ids, labels, _ = _labeled_units(args, cfg)
    feats, source = _features_from_source(args, units, ids, seed)
    base_params = json.loads(args.params) if args.params else None
    result = grid_search(
        feats, labels, args.kind, folds=args.folds, seed=seed, base_params=base_params
    )
    if args.out:
        result.model.save(args.out)
    payload = result.to_dict()
    payload["features"] = source
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def _cmd_evaluate(args, cfg, seed):
    units, ids, labels, spans = _labeled_units(args, cfg)
    provenance: dict = {"level": args.level, "method": args.method}
    if args.method == "classical":
        if not args.kind:
            raise ConfigError("--kind is required for classical evaluation")
        feats, source = _features_from_source(args, units, ids, seed)
        provenance["features"] = source
        provenance["embed_mode"] = "corpus"
        params = json.loads(args.params) if args.params else {}
        spec = ClassifierSpec(kind=args.kind, params=params, seed=seed)

        def train_fn(train_idx):
            return train_classifier(
                feats[train_idx], labels[train_idx], spec,
                compute_class_weights(labels[train_idx]),
            )

        def predict_fn(model, test_idx):
            pred, _ = predict_classifier(model, feats[test_idx])
            return pred

    elif args.method == "attention":
        if not args.word_embeddings:
            raise ConfigError("--word-embeddings is required for attention evaluation")
        if args.level != "paragraph":
            raise ConfigError("attention evaluation runs at paragraph level")
        table = load_word_embeddings(args.word_embeddings)
        config = _attn_config(args, cfg, seed, guided=not args.unguided)
        provenance["guided"] = not args.unguided
        encodings = [
            span_binary(len(units[i]), spans[i]) if spans[i] else None
            for i in range(len(units))
        ]

        def train_fn(train_idx):
            model, _ = train_attention_model(
                [units[i] for i in train_idx],
                labels[train_idx],
                [encodings[i] for i in train_idx],
                config,
                table,
            )
            return model

        def predict_fn(model, test_idx):
            probs, _ = model.predict([units[i] for i in test_idx])
            return probs[:, 1] >= 0.5

    else:
        raise ConfigError(f"unknown evaluation method {args.method!r}")

    report = evaluate_model(
        train_fn, predict_fn, labels, k=args.k, repeats=args.repeats, seed=seed,
        provenance=provenance,
    )
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(report.to_json() + "\n")
    else:
        print(report.to_json())
    print(report.to_table(embedding=provenance.get("features", {}).get("source", args.method),
                          classifier=args.kind or args.method))
    return 0


def _cmd_detect(args, cfg, seed, model_path):
    if not model_path:
        raise ConfigError("detect requires --model <bundle path>")
    bundle = load_bundle(model_path)
    in_fh = sys.stdin if args.input == "-" else open(args.input, "r", encoding="utf-8")
    out_fh = sys.stdout if args.out == "-" else open(args.out, "w", encoding="utf-8")
    try:
        header = in_fh.readline()
        try:
            json.loads(header)["schema_version"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise InputError("input stream lacks the corpus header record") from exc
        from rheframe.corpus import _doc_from_record, validate_document

        for lineno, line in enumerate(in_fh, 2):
            if not line.strip():
                continue
            try:
                doc = _doc_from_record(json.loads(line))
                validate_document(doc, bundle.tokenizer)
            except (json.JSONDecodeError, InputError) as exc:
                raise InputError(f"line {lineno}: {exc}") from exc
            result = run_pipeline(doc, bundle)
            out_fh.write(json.dumps(result.to_dict(), sort_keys=True) + "\n")
    finally:
        if in_fh is not sys.stdin:
            in_fh.close()
        if out_fh is not sys.stdout:
            out_fh.close()
    return 0


def _cmd_report(args, cfg, seed):
    tokenizer = _tokenizer_from(cfg)
    docs = load_corpus(args.input, tokenizer=tokenizer)
    results = []
    with open(args.results, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                results.append(PipelineResult.from_dict(json.loads(line)))
    emit_report(results, docs, args.out, tokenizer=tokenizer)
    print(json.dumps({"documents": len(results), "out": str(args.out)}))
    return 0


def _load_embedder(model_path, table_path, infer_epochs, seed):
    if model_path:
        return EmbedderRef(
            pv_model=EmbeddingModel.load(model_path),
            infer_epochs=infer_epochs,
            infer_seed=seed,
        )
    if table_path:
        return EmbedderRef(table=load_unit_embeddings(table_path))
    raise ConfigError("need an embedding model or a unit-embedding table")


def _cmd_bundle(args, cfg, seed):
    keywords = (
        KeywordSet([k.strip() for k in args.keywords.split(",") if k.strip()])
        if args.keywords
        else _keywords_from(cfg)
    )
    doc_embedder = _load_embedder(args.doc_embed, args.doc_table, args.infer_epochs, seed)
    doc_clf = ClassifierModel.load(args.doc_clf)
    if args.par_attn:
        par_stage = ParStage(kind="attention", attention=AttentionModel.load(args.par_attn))
    else:
        if not args.par_clf:
            raise ConfigError("need --par-attn or (--par-clf with an embedding source)")
        par_stage = ParStage(
            kind="classical",
            embedder=_load_embedder(args.par_embed, args.par_table, args.infer_epochs, seed),
            classifier=ClassifierModel.load(args.par_clf),
        )
    bundle = PipelineBundle(
        keywords=keywords,
        doc_embedder=doc_embedder,
        doc_classifier=doc_clf,
        par_stage=par_stage,
        tokenizer=_tokenizer_from(cfg),
        span_decoder=SpanDecoderConfig(threshold_factor=args.threshold_factor),
    )
    save_bundle(bundle, args.out)
    print(json.dumps({"out": str(args.out), "par_stage": par_stage.kind}))
    return 0


# --- parser wiring ---

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rheframe",
        description="Detect and localize AI-competition rhetorical frames in news text.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="JSON config file; flags override its values")
    parser.add_argument("--seed", type=int, default=0, help="global random seed")
    parser.add_argument("--model", help="pipeline bundle path (used by detect)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a JSONL corpus and print stats")
    p.add_argument("--input", required=True)
    p.add_argument("--lenient", action="store_true", help="skip invalid records")
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("synth", help="generate a synthetic labeled corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--docs", type=int)
    p.add_argument("--ratio", type=float)
    p.add_argument("--vocab-size", type=int, dest="vocab_size")
    p.add_argument("--ai-rate", type=float, dest="ai_rate")
    p.add_argument("--paragraphs", type=int, nargs=2, metavar=("MIN", "MAX"))
    p.add_argument("--tokens", type=int, nargs=2, metavar=("MIN", "MAX"))
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train-embed", help="train paragraph-vector embeddings")
    p.add_argument("--input", required=True)
    p.add_argument("--unit", choices=["document", "paragraph"], default="paragraph")
    p.add_argument("--variant", choices=["dbow-hs", "dbow-neg", "dm-hs", "dm-neg"],
                   default="dbow-hs")
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int)
    p.add_argument("--window", type=int)
    p.add_argument("--negative", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--min-count", type=int, dest="min_count")
    p.set_defaults(func=_cmd_train_embed)

    def add_feature_source(p):
        p.add_argument("--embed-model", dest="embed_model")
        p.add_argument("--unit-embeddings", dest="unit_embeddings")
        p.add_argument("--infer-epochs", dest="infer_epochs", type=int, default=50)

    p = sub.add_parser("train-clf", help="train a downstream classifier")
    p.add_argument("--input", required=True)
    p.add_argument("--level", choices=["document", "paragraph"], required=True)
    p.add_argument("--kind", choices=["logreg", "svm", "rf", "mlp"], required=True)
    p.add_argument("--params", help="JSON hyperparameters")
    p.add_argument("--out", required=True)
    add_feature_source(p)
    p.set_defaults(func=_cmd_train_clf)

    p = sub.add_parser("train-attn", help="train the attention paragraph model")
    p.add_argument("--input", required=True)
    p.add_argument("--word-embeddings", dest="word_embeddings", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log", help="write the per-epoch training log here")
    p.add_argument("--unguided", action="store_true",
                   help="disable span guidance (plain self-attention)")
    p.add_argument("--guidance-weight", dest="guidance_weight", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--attention-size", dest="attention_size", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--patience", type=int)
    p.set_defaults(func=_cmd_train_attn)

    p = sub.add_parser("grid-search", help="exhaustive hyperparameter search")
    p.add_argument("--input", required=True)
    p.add_argument("--level", choices=["document", "paragraph"], required=True)
    p.add_argument("--kind", choices=["logreg", "svm", "rf", "mlp"], required=True)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--params", help="JSON base params merged into every config")
    p.add_argument("--out", help="save the refit best model here")
    add_feature_source(p)
    p.set_defaults(func=_cmd_grid_search)

    p = sub.add_parser("evaluate", help="repeated stratified k-fold evaluation")
    p.add_argument("--input", required=True)
    p.add_argument("--level", choices=["document", "paragraph"], required=True)
    p.add_argument("--method", choices=["classical", "attention"], required=True)
    p.add_argument("--kind", choices=["logreg", "svm", "rf", "mlp"])
    p.add_argument("--params", help="JSON hyperparameters for the classifier")
    p.add_argument("--word-embeddings", dest="word_embeddings")
    p.add_argument("--unguided", action="store_true")
    p.add_argument("--guidance-weight", dest="guidance_weight", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--attention-size", dest="attention_size", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--out", help="write the EvalReport JSON here")
    add_feature_source(p)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("detect", help="run the pipeline over JSONL documents")
    p.add_argument("--input", default="-", help="JSONL corpus or - for stdin")
    p.add_argument("--out", default="-", help="output JSONL or - for stdout")
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("report", help="render the HTML attention report")
    p.add_argument("--results", required=True, help="detect output JSONL")
    p.add_argument("--input", required=True, help="the corpus that was detected on")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("bundle", help="assemble trained parts into a pipeline bundle")
    p.add_argument("--out", required=True)
    p.add_argument("--keywords", help="comma-separated gate keywords")
    p.add_argument("--doc-embed", dest="doc_embed")
    p.add_argument("--doc-table", dest="doc_table")
    p.add_argument("--doc-clf", dest="doc_clf", required=True)
    p.add_argument("--par-embed", dest="par_embed")
    p.add_argument("--par-table", dest="par_table")
    p.add_argument("--par-clf", dest="par_clf")
    p.add_argument("--par-attn", dest="par_attn")
    p.add_argument("--threshold-factor", dest="threshold_factor", type=float, default=2.0)
    p.add_argument("--infer-epochs", dest="infer_epochs", type=int, default=50)
    p.set_defaults(func=_cmd_bundle)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args.config)
        if args.command == "detect":
            return _cmd_detect(args, cfg, args.seed, args.model)
        return args.func(args, cfg, args.seed)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, ModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
