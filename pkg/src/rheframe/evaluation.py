"""Per-class precision/recall/F1 metrics and repeated stratified k-fold CV.

The reported value for every metric is the mean across folds; per-fold
values are retained in the report for auditability.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from rheframe.errors import InputError, RheframeError


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int
    zero_division: bool = False


@dataclass(frozen=True)
class PRFReport:
    """Per-class and macro-averaged precision/recall/F1 for one prediction set."""

    yes: ClassMetrics
    no: ClassMetrics
    macro_precision: float
    macro_recall: float
    macro_f1: float

    def to_dict(self) -> dict:
        return {
            "yes": vars(self.yes).copy(),
            "no": vars(self.no).copy(),
            "macro": {
                "precision": self.macro_precision,
                "recall": self.macro_recall,
                "f1": self.macro_f1,
            },
        }


def confusion_counts(gold: Sequence[bool], pred: Sequence[bool], positive: bool = True) -> ConfusionCounts:
    g = np.asarray(gold, dtype=bool)
    p = np.asarray(pred, dtype=bool)
    if g.shape != p.shape:
        raise InputError(f"gold/pred length mismatch: {g.shape} vs {p.shape}")
    if not positive:
        g, p = ~g, ~p
    return ConfusionCounts(
        tp=int(np.sum(g & p)),
        fp=int(np.sum(~g & p)),
        fn=int(np.sum(g & ~p)),
        tn=int(np.sum(~g & ~p)),
    )


def _prf_one(c: ConfusionCounts) -> ClassMetrics:
    zero = False
    if c.tp + c.fp == 0:
        precision, zero = 0.0, True
    else:
        precision = c.tp / (c.tp + c.fp)
    if c.tp + c.fn == 0:
        recall, zero = 0.0, True
    else:
        recall = c.tp / (c.tp + c.fn)
    if precision + recall == 0.0:
        f1 = 0.0
        zero = zero or (c.tp + c.fp + c.fn > 0)
    else:
        f1 = 2.0 * precision * recall / (precision + recall)
    return ClassMetrics(precision, recall, f1, support=c.tp + c.fn, zero_division=zero)


def macro_average(values: Sequence[float]) -> float:
    """Unweighted mean over classes (how macro scores are aggregated)."""
    return float(np.mean(np.asarray(values, dtype=float)))


def prf(gold: Sequence[bool], pred: Sequence[bool]) -> PRFReport:
    """Precision/recall/F1 for both classes plus macro averages.

    Zero-denominator metrics are reported as 0 with the class's
    ``zero_division`` flag set.
    """
    if len(gold) == 0:
        raise InputError("prf requires at least one example")
    yes = _prf_one(confusion_counts(gold, pred, positive=True))
    no = _prf_one(confusion_counts(gold, pred, positive=False))
    return PRFReport(
        yes=yes,
        no=no,
        macro_precision=macro_average([yes.precision, no.precision]),
        macro_recall=macro_average([yes.recall, no.recall]),
        macro_f1=macro_average([yes.f1, no.f1]),
    )


def repeated_stratified_kfold(
    labels: Sequence[bool],
    k: int = 5,
    repeats: int = 3,
    seed: int = 0,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """(train, test) index pairs for ``repeats`` shuffled stratified partitions.

    Within each repeat the k test folds are disjoint, cover all indices, and
    hold per-class counts that differ by at most one sample across folds.
    """
    y = np.asarray(labels, dtype=bool)
    if k < 2:
        raise InputError("k must be >= 2")
    minority = int(min(np.sum(y), np.sum(~y)))
    if minority < k:
        raise InputError(f"minority class count {minority} is smaller than k={k}")
    rng = np.random.default_rng(seed)
    splits = []
    all_idx = np.arange(len(y))
    for _ in range(repeats):
        folds: list[list[int]] = [[] for _ in range(k)]
        for cls in (False, True):
            cls_idx = all_idx[y == cls]
            cls_idx = rng.permutation(cls_idx)
            for pos, idx in enumerate(cls_idx):
                folds[pos % k].append(int(idx))
        for f in range(k):
            test = np.array(sorted(folds[f]), dtype=np.int64)
            mask = np.ones(len(y), dtype=bool)
            mask[test] = False
            splits.append((all_idx[mask], test))
    return splits


@dataclass(frozen=True)
class FoldScore:
    repeat: int
    fold: int
    report: PRFReport


_METRIC_KEYS = (
    "yes_precision", "yes_recall", "yes_f1",
    "no_precision", "no_recall", "no_f1",
    "macro_precision", "macro_recall", "macro_f1",
)


def _flatten(report: PRFReport) -> dict[str, float]:
    return {
        "yes_precision": report.yes.precision,
        "yes_recall": report.yes.recall,
        "yes_f1": report.yes.f1,
        "no_precision": report.no.precision,
        "no_recall": report.no.recall,
        "no_f1": report.no.f1,
        "macro_precision": report.macro_precision,
        "macro_recall": report.macro_recall,
        "macro_f1": report.macro_f1,
    }


@dataclass
class EvalReport:
    """Fold-wise scores plus fold-averaged means and standard deviations."""

    folds: list[FoldScore]
    mean: dict[str, float]
    std: dict[str, float]
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "provenance": self.provenance,
            "mean": self.mean,
            "std": self.std,
            "folds": [
                {"repeat": f.repeat, "fold": f.fold, **_flatten(f.report)}
                for f in self.folds
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self, embedding: str = "-", classifier: str = "-") -> str:
        """Aligned plain-text table: Embedding/Classifier/Class/P/R/F1 rows."""
        rows = [("Embedding", "Classifier", "Class", "Precision", "Recall", "F1-score")]
        m = self.mean
        for cls, pre in (("No", "no"), ("Yes", "yes"), ("Macro-average", "macro")):
            rows.append(
                (
                    embedding,
                    classifier,
                    cls,
                    f"{m[pre + '_precision']:.2f}",
                    f"{m[pre + '_recall']:.2f}",
                    f"{m[pre + '_f1']:.2f}",
                )
            )
        widths = [max(len(r[c]) for r in rows) for c in range(len(rows[0]))]
        lines = [
            "  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
            for row in rows
        ]
        return "\n".join(lines)


def evaluate_model(
    train_fn: Callable[[np.ndarray], object],
    predict_fn: Callable[[object, np.ndarray], Sequence[bool]],
    labels: Sequence[bool],
    k: int = 5,
    repeats: int = 3,
    seed: int = 0,
    provenance: dict | None = None,
) -> EvalReport:
    """Cross-validated evaluation of an arbitrary train/predict pair.

    ``train_fn`` receives the training index array and returns a fitted
    model; ``predict_fn`` receives (model, test index array) and returns
    boolean predictions. Scores are averaged across all folds of all
    repeats. Training failures are re-raised annotated with the fold id.
    """
    y = np.asarray(labels, dtype=bool)
    splits = repeated_stratified_kfold(y, k=k, repeats=repeats, seed=seed)
    folds: list[FoldScore] = []
    for si, (train_idx, test_idx) in enumerate(splits):
        repeat, fold = divmod(si, k)
        try:
            model = train_fn(train_idx)
            pred = np.asarray(predict_fn(model, test_idx), dtype=bool)
        except RheframeError as exc:
            raise type(exc)(f"repeat {repeat} fold {fold}: {exc}") from exc
        folds.append(FoldScore(repeat, fold, prf(y[test_idx], pred)))
    flat = [_flatten(f.report) for f in folds]
    mean = {key: float(np.mean([f[key] for f in flat])) for key in _METRIC_KEYS}
    std = {key: float(np.std([f[key] for f in flat])) for key in _METRIC_KEYS}
    report = EvalReport(folds=folds, mean=mean, std=std, provenance=provenance or {})
    report.provenance.setdefault("k", k)
    report.provenance.setdefault("repeats", repeats)
    report.provenance.setdefault("seed", seed)
    return report
