import numpy as np
import pytest

from rheframe.errors import InputError
from rheframe.evaluation import (
    confusion_counts,
    evaluate_model,
    macro_average,
    prf,
    repeated_stratified_kfold,
)


def test_prf_basic_counts():
    # tp=1, fp=0, fn=1 for the positive class
    gold = [True, True, False]
    pred = [True, False, False]
    rep = prf(gold, pred)
    assert rep.yes.precision == pytest.approx(1.0)
    assert rep.yes.recall == pytest.approx(0.5)
    assert rep.yes.f1 == pytest.approx(2 / 3)


def test_macro_of_published_per_class_f1():
    # per-class F1 0.98 (No) and 0.81 (Yes) average to 0.895, rounding to 0.90
    macro = macro_average([0.98, 0.81])
    assert round(macro, 3) == 0.895
    assert round(macro, 2) == 0.90


def test_prf_perfect_predictions():
    gold = [True, False, True, False]
    rep = prf(gold, gold)
    for cls in (rep.yes, rep.no):
        assert cls.precision == 1.0 and cls.recall == 1.0 and cls.f1 == 1.0
    assert rep.macro_f1 == 1.0


def test_prf_length_mismatch():
    with pytest.raises(InputError):
        prf([True, False], [True])


def test_prf_zero_division_flagged():
    rep = prf([True, True], [True, True])  # no negative predictions or golds
    assert rep.no.zero_division
    assert rep.no.precision == 0.0


def test_confusion_counts_sum():
    rng = np.random.default_rng(0)
    gold = rng.random(50) < 0.3
    pred = rng.random(50) < 0.5
    c = confusion_counts(gold, pred)
    assert c.total == 50


def test_f1_harmonic_identity_property():
    rng = np.random.default_rng(1)
    for _ in range(50):
        gold = rng.random(40) < 0.4
        pred = rng.random(40) < 0.5
        if gold.all() or not gold.any():
            continue
        rep = prf(gold, pred)
        for cls in (rep.yes, rep.no):
            p, r = cls.precision, cls.recall
            if p + r > 0:
                assert cls.f1 == pytest.approx(2 * p * r / (p + r), abs=1e-12)
                assert cls.f1 <= (p + r) / 2 + 1e-12


def test_macro_invariant_to_class_swap():
    rng = np.random.default_rng(2)
    gold = rng.random(60) < 0.3
    pred = rng.random(60) < 0.4
    a = prf(gold, pred)
    b = prf(~gold, ~pred)
    assert a.macro_f1 == pytest.approx(b.macro_f1)
    assert a.macro_precision == pytest.approx(b.macro_precision)


def test_kfold_forced_stratification():
    labels = [False] * 8 + [True] * 2
    splits = repeated_stratified_kfold(labels, k=2, repeats=1, seed=0)
    assert len(splits) == 2
    y = np.array(labels)
    for _, test in splits:
        assert int(np.sum(y[test])) == 1
        assert int(np.sum(~y[test])) == 4


def test_kfold_pair_count():
    labels = [False] * 20 + [True] * 10
    splits = repeated_stratified_kfold(labels, k=5, repeats=3, seed=1)
    assert len(splits) == 15


def test_kfold_partition_property():
    labels = [False] * 23 + [True] * 9
    k = 4
    splits = repeated_stratified_kfold(labels, k=k, repeats=2, seed=3)
    n = len(labels)
    for r in range(2):
        tests = [set(test.tolist()) for _, test in splits[r * k : (r + 1) * k]]
        union = set().union(*tests)
        assert union == set(range(n))
        assert sum(len(t) for t in tests) == n
        for _, test in splits[r * k : (r + 1) * k]:
            train = set(range(n)) - set(test.tolist())
            got_train = set(splits[r * k + 0][0].tolist())  # sanity: disjointness
        for i in range(k):
            for j in range(i + 1, k):
                assert not (tests[i] & tests[j])


def test_kfold_minority_too_small():
    with pytest.raises(InputError):
        repeated_stratified_kfold([True] + [False] * 9, k=2, repeats=1, seed=0)


def test_kfold_balance_property_random_vectors():
    rng = np.random.default_rng(4)
    for _ in range(60):
        n = int(rng.integers(20, 80))
        frac = rng.uniform(0.15, 0.5)
        labels = rng.random(n) < frac
        k = int(rng.integers(2, 5))
        if min(labels.sum(), (~labels).sum()) < k:
            continue
        global_frac = labels.mean()
        for _, test in repeated_stratified_kfold(labels, k=k, repeats=1, seed=5):
            fold_frac = labels[test].mean()
            assert abs(fold_frac - global_frac) <= 1.0 / len(test) + 1e-12


def test_evaluate_constant_yes_on_imbalanced_data():
    # 13:1 imbalance; a constant-Yes predictor has precision 1/14, recall 1
    labels = np.array([False] * 130 + [True] * 10)
    rep = evaluate_model(
        train_fn=lambda idx: None,
        predict_fn=lambda model, idx: np.ones(len(idx), dtype=bool),
        labels=labels,
        k=5,
        repeats=2,
        seed=0,
    )
    assert rep.mean["yes_precision"] == pytest.approx(1 / 14, abs=1e-9)
    assert rep.mean["yes_recall"] == pytest.approx(1.0)


def test_evaluate_oracle_predictor():
    labels = np.array([False] * 40 + [True] * 10)
    rep = evaluate_model(
        train_fn=lambda idx: None,
        predict_fn=lambda model, idx: labels[idx],
        labels=labels,
        k=5,
        repeats=1,
        seed=0,
    )
    for key, val in rep.mean.items():
        assert val == pytest.approx(1.0), key


def test_evaluate_deterministic():
    rng = np.random.default_rng(6)
    labels = rng.random(60) < 0.3
    if min(labels.sum(), (~labels).sum()) < 5:
        labels[:5] = True

    def mk():
        return evaluate_model(
            train_fn=lambda idx: None,
            predict_fn=lambda model, idx: np.asarray(
                np.random.default_rng(int(idx.sum())).random(len(idx)) < 0.5
            ),
            labels=labels,
            k=5,
            repeats=2,
            seed=9,
        )

    assert mk().to_json() == mk().to_json()


def test_report_table_layout():
    labels = np.array([False] * 40 + [True] * 10)
    rep = evaluate_model(
        train_fn=lambda idx: None,
        predict_fn=lambda model, idx: labels[idx],
        labels=labels,
        k=5,
        repeats=1,
        seed=0,
    )
    table = rep.to_table(embedding="PV-DBOW-NEG", classifier="SVM")
    lines = table.splitlines()
    assert "Embedding" in lines[0] and "F1-score" in lines[0]
    assert len(lines) == 4
    assert "Macro-average" in lines[3]
