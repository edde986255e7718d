import numpy as np
import pytest

from rheframe._svm import kkt_violation, kernel_matrix, scale_gamma
from rheframe.classify import (
    ClassifierModel,
    ClassifierSpec,
    ClassWeights,
    compute_class_weights,
    enumerate_grid,
    grid_search,
    logreg_loss_grad,
    mlp_loss_grad,
    predict_classifier,
    train_classifier,
)
from rheframe.errors import ConfigError, InputError, ModelError


# --- class weights ---

def test_balanced_weights_on_published_totals():
    labels = np.array([True] * 942 + [False] * 13130)
    w = compute_class_weights(labels)
    n = 942 + 13130
    assert w.negative == pytest.approx(n / (2 * 13130), abs=1e-12)
    assert w.positive == pytest.approx(n / (2 * 942), abs=1e-12)
    assert w.negative == pytest.approx(0.5359, abs=1e-4)
    assert w.positive == pytest.approx(7.469, abs=1e-3)
    assert w.ratio == pytest.approx(13130 / 942, abs=1e-9)


def test_balanced_weights_symmetric():
    w = compute_class_weights([True] * 5 + [False] * 5)
    assert w.positive == 1.0 and w.negative == 1.0


def test_balanced_weights_ratio_identity():
    w = compute_class_weights([True] + [False] * 13)
    assert w.ratio == pytest.approx(13.0, abs=1e-12)


def test_balanced_weights_equal_total_mass_per_class():
    labels = np.array([True] * 7 + [False] * 24)
    w = compute_class_weights(labels)
    per = w.per_sample(labels)
    n = len(labels)
    assert per[labels].sum() == pytest.approx(n / 2, rel=1e-12)
    assert per[~labels].sum() == pytest.approx(n / 2, rel=1e-12)


def test_single_class_weights_rejected():
    with pytest.raises(InputError):
        compute_class_weights([True, True])


# --- shared fixtures ---

def _separable(n=60, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, 2))
    y = X[:, 0] + 0.5 * X[:, 1] > 0.0
    X[y] += [1.5, 0.75]
    X[~y] -= [1.5, 0.75]
    return X, y


def _fd_params(loss_fn, flat_params, analytic, h=1e-6, tol=1e-4):
    worst = 0.0
    for i in range(len(flat_params)):
        orig = flat_params[i]
        flat_params[i] = orig + h
        up = loss_fn()
        flat_params[i] = orig - h
        down = loss_fn()
        flat_params[i] = orig
        fd = (up - down) / (2 * h)
        denom = max(abs(fd), abs(analytic[i]), 1e-8)
        worst = max(worst, abs(fd - analytic[i]) / denom)
    assert worst <= tol, f"max relative gradient error {worst:.3g}"


# --- logistic regression ---

def test_logreg_gradient_check():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((12, 5))
    y = rng.random(12) < 0.4
    sw = np.where(y, 2.0, 0.7)
    w = rng.standard_normal(5)
    b = 0.3
    l2 = 0.05

    _, gw, gb = logreg_loss_grad(w, b, X, y, sw, l2)
    _fd_params(lambda: logreg_loss_grad(w, b, X, y, sw, l2)[0], w, gw)
    barr = np.array([b])
    _, _, gb2 = logreg_loss_grad(w, barr[0], X, y, sw, l2)
    h = 1e-6
    fd_b = (
        logreg_loss_grad(w, b + h, X, y, sw, l2)[0]
        - logreg_loss_grad(w, b - h, X, y, sw, l2)[0]
    ) / (2 * h)
    assert abs(fd_b - gb) / max(abs(fd_b), 1e-8) <= 1e-4


def test_logreg_separable_accuracy():
    X, y = _separable()
    spec = ClassifierSpec("logreg", {"penalty": "l2", "C": 1.0})
    model = train_classifier(X, y, spec)
    pred, scores = predict_classifier(model, X)
    assert (pred == y).all()
    assert np.all((scores >= 0) & (scores <= 1))


def test_logreg_norm_shrinks_with_stronger_penalty():
    X, y = _separable(n=80, seed=1)
    norms = []
    for C in [1000.0, 100.0, 10.0, 1.0, 0.1]:
        spec = ClassifierSpec(
            "logreg",
            {"penalty": "l2", "C": C, "epochs": 300, "batch_size": 4096,
             "learning_rate_init": 0.5},
        )
        model = train_classifier(X, y, spec)
        norms.append(float(np.linalg.norm(model.arrays["w"])))
    assert all(a >= b - 1e-9 for a, b in zip(norms, norms[1:])), norms


def test_logreg_l1_sparsifies():
    rng = np.random.default_rng(7)
    X = np.hstack([_separable(n=100, seed=2)[0], rng.standard_normal((100, 8))])
    y = _separable(n=100, seed=2)[1]
    spec = ClassifierSpec("logreg", {"penalty": "l1", "C": 0.1})
    model = train_classifier(X, y, spec)
    assert np.sum(model.arrays["w"] == 0.0) >= 1


def test_logreg_zero_weight_probability_half():
    X, y = _separable(n=10)
    spec = ClassifierSpec("logreg", {"penalty": "l2", "C": 1.0, "epochs": 1})
    model = train_classifier(X, y, spec)
    model.arrays["w"][:] = 0.0
    model.arrays["b"][:] = 0.0
    _, scores = predict_classifier(model, X)
    assert np.all(scores == 0.5)


# --- multi-layer perceptron ---

@pytest.mark.parametrize("activation", ["logistic", "identity", "tanh", "relu"])
def test_mlp_gradient_check(activation):
    rng = np.random.default_rng(11)
    X = rng.standard_normal((10, 4))
    # keep relu pre-activations away from the kink
    y = rng.random(10) < 0.5
    sw = np.where(y, 1.4, 0.8)
    params = {
        "W1": rng.standard_normal((4, 6)) * 0.5,
        "b1": rng.standard_normal(6) * 0.1,
        "W2": rng.standard_normal((6, 2)) * 0.5,
        "b2": rng.standard_normal(2) * 0.1,
    }
    alpha = 0.01
    _, grads = mlp_loss_grad(params, X, y, sw, alpha, activation)
    for key in params:
        flat = params[key].reshape(-1)
        aflat = grads[key].reshape(-1)
        _fd_params(
            lambda: mlp_loss_grad(params, X, y, sw, alpha, activation)[0],
            flat,
            aflat,
        )


def test_mlp_hidden_shape_and_accuracy():
    X, y = _separable(n=80, seed=4)
    spec = ClassifierSpec(
        "mlp",
        {"hidden_layer_sizes": [100], "activation": "relu",
         "learning_rate": "constant", "alpha": 0.0001, "epochs": 80},
    )
    model = train_classifier(X, y, spec)
    assert model.arrays["W1"].shape == (2, 100)
    pred, _ = predict_classifier(model, X)
    assert np.mean(pred == y) >= 0.95


@pytest.mark.parametrize("mode", ["constant", "invscaling", "adaptive"])
def test_mlp_learning_rate_modes_train(mode):
    X, y = _separable(n=40, seed=5)
    spec = ClassifierSpec(
        "mlp",
        {"hidden_layer_sizes": [16], "activation": "tanh",
         "learning_rate": mode, "alpha": 0.001, "epochs": 40},
    )
    model = train_classifier(X, y, spec)
    pred, _ = predict_classifier(model, X)
    assert np.mean(pred == y) >= 0.9


# --- svm ---

def test_svm_linear_separable_accuracy():
    X, y = _separable()
    spec = ClassifierSpec("svm", {"kernel": "linear", "C": 1.0})
    model = train_classifier(X, y, spec)
    pred, margin = predict_classifier(model, X)
    assert (pred == y).all()
    assert np.sign(margin[y]).min() > 0


def _xor_data(n=40, seed=6):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, size=(n, 2))
    y = (X[:, 0] * X[:, 1]) > 0
    X += rng.normal(0, 0.02, X.shape)
    return X, y


def test_svm_rbf_fits_nonlinear_data():
    X, y = _xor_data()
    spec = ClassifierSpec("svm", {"kernel": "rbf", "C": 10.0})
    model = train_classifier(X, y, spec)
    pred, _ = predict_classifier(model, X)
    assert np.mean(pred == y) >= 0.95


def test_svm_poly_trains():
    # odd-degree homogeneous kernels are sign-antisymmetric, so use a
    # boundary an odd cubic can carry
    X, y = _separable(n=40, seed=8)
    spec = ClassifierSpec("svm", {"kernel": "poly", "C": 10.0, "degree": 3})
    model = train_classifier(X, y, spec)
    pred, _ = predict_classifier(model, X)
    assert np.mean(pred == y) >= 0.9


def test_smo_kkt_violations_below_tolerance():
    X, y = _xor_data(n=30, seed=9)
    y_signed = np.where(y, 1.0, -1.0)
    w = compute_class_weights(y)
    gamma = scale_gamma(X)
    K = kernel_matrix(X, X, "rbf", gamma, 0)
    from rheframe._svm import fit_smo

    box = 10.0 * w.per_sample(y)
    alpha, b = fit_smo(K, y_signed, box, seed=0)
    assert kkt_violation(K, y_signed, alpha, b, box) <= 1e-3 + 1e-9


# --- random forest ---

def test_rf_single_leaf_constant_prediction():
    # no feature varies, so the lone tree cannot split
    X = np.ones((10, 3))
    y = np.array([True] * 3 + [False] * 7)
    spec = ClassifierSpec("rf", {"n_estimators": 1, "max_features": "sqrt"})
    model = train_classifier(X, y, spec)
    pred, frac = predict_classifier(model, np.vstack([X, np.zeros((2, 3))]))
    assert len(set(pred.tolist())) == 1
    assert len(set(frac.tolist())) == 1


def test_rf_learns_noiseless_boolean_function():
    rng = np.random.default_rng(10)
    X = rng.integers(0, 2, size=(120, 2)).astype(float)
    y = (X[:, 0].astype(bool)) ^ (X[:, 1].astype(bool))
    spec = ClassifierSpec("rf", {"n_estimators": 60, "max_features": "sqrt"})
    model = train_classifier(X, y, spec)
    pred, _ = predict_classifier(model, X)
    assert (pred == y).all()


def test_rf_deterministic():
    X, y = _separable(n=50, seed=12)
    spec = ClassifierSpec("rf", {"n_estimators": 10, "max_features": "log2"}, seed=3)
    a = train_classifier(X, y, spec).to_bytes()
    b = train_classifier(X, y, spec).to_bytes()
    assert a == b


# --- shared API behaviour ---

def test_train_rejects_bad_inputs():
    X, y = _separable(n=10)
    with pytest.raises(InputError):
        train_classifier(X, [True] * 10, ClassifierSpec("logreg"))
    bad = X.copy()
    bad[0, 0] = np.nan
    with pytest.raises(InputError):
        train_classifier(bad, y, ClassifierSpec("logreg"))
    with pytest.raises(ConfigError):
        ClassifierSpec("logreg", {"bogus": 1})
    with pytest.raises(ConfigError):
        ClassifierSpec("nope")


def test_predict_dim_mismatch():
    X, y = _separable(n=20)
    model = train_classifier(X, y, ClassifierSpec("logreg", {"epochs": 2}))
    with pytest.raises(ModelError):
        predict_classifier(model, np.zeros((3, 5)))


@pytest.mark.parametrize("kind,params", [
    ("logreg", {"penalty": "l2", "C": 1.0, "epochs": 10}),
    ("svm", {"kernel": "linear", "C": 1.0, "epochs": 20}),
    ("svm", {"kernel": "rbf", "C": 1.0}),
    ("rf", {"n_estimators": 5, "max_features": "sqrt"}),
    ("mlp", {"hidden_layer_sizes": [8], "activation": "relu",
             "learning_rate": "constant", "alpha": 0.001, "epochs": 10}),
])
def test_model_persistence_roundtrip(tmp_path, kind, params):
    X, y = _separable(n=30, seed=13)
    model = train_classifier(X, y, ClassifierSpec(kind, params, seed=1))
    path = tmp_path / "model.bin"
    model.save(path)
    loaded = ClassifierModel.load(path)
    p1, s1 = predict_classifier(model, X)
    p2, s2 = predict_classifier(loaded, X)
    assert (p1 == p2).all()
    assert np.allclose(s1, s2)


def test_model_corruption_detected(tmp_path):
    X, y = _separable(n=20)
    model = train_classifier(X, y, ClassifierSpec("logreg", {"epochs": 2}))
    path = tmp_path / "model.bin"
    model.save(path)
    raw = bytearray(path.read_bytes())
    raw[30] ^= 0x55
    path.write_bytes(bytes(raw))
    with pytest.raises(ModelError):
        ClassifierModel.load(path)


# --- grids ---

def test_grid_enumeration_counts():
    assert len(enumerate_grid("logreg")) == 15
    # degree {3,5,7,8} applies to poly only: rbf 5 + poly 20 + linear 5
    assert len(enumerate_grid("svm")) == 30
    assert len(enumerate_grid("mlp")) == 48
    assert len(enumerate_grid("rf")) == 12


def test_grid_enumeration_svm_degree_policy():
    configs = enumerate_grid("svm")
    for cfg in configs:
        if cfg["kernel"] == "poly":
            assert cfg["degree"] in (3, 5, 7, 8)
        else:
            assert "degree" not in cfg


def test_grid_search_single_config():
    X, y = _separable(n=40, seed=14)
    result = grid_search(
        X, y, "logreg", grid={"penalty": ["l2"], "C": [1.0]}, folds=3,
        base_params={"epochs": 20},
    )
    assert len(result.entries) == 1
    assert result.best_spec.params["C"] == 1.0
    assert result.model.kind == "logreg"


def test_grid_search_evaluates_all_lr_configs():
    X, y = _separable(n=60, seed=15)
    result = grid_search(X, y, "logreg", folds=3, base_params={"epochs": 5})
    assert len(result.entries) == 15
    assert result.best_index == int(
        np.argmax([e.mean_score for e in result.entries])
    )


def test_grid_search_prefers_generalizing_config():
    # informative feature plus noise dims and flipped labels: C=1000 overfits
    rng = np.random.default_rng(16)
    n = 60
    X = np.hstack([
        rng.standard_normal((n, 1)),
        rng.standard_normal((n, 12)) * 2.0,
    ])
    y = X[:, 0] > 0
    flip = rng.random(n) < 0.25
    y = y ^ flip
    result = grid_search(
        X, y, "logreg",
        grid={"penalty": ["l2"], "C": [1.0, 1000.0]},
        folds=4, seed=2,
        base_params={"epochs": 200, "batch_size": 4096, "learning_rate_init": 0.5},
    )
    assert result.best_spec.params["C"] == 1.0


def test_grid_search_deterministic():
    X, y = _separable(n=40, seed=17)
    kwargs = dict(
        grid={"penalty": ["l2"], "C": [0.1, 10.0]}, folds=3, seed=5,
        base_params={"epochs": 10},
    )
    r1 = grid_search(X, y, "logreg", **kwargs)
    r2 = grid_search(X, y, "logreg", **kwargs)
    assert r1.to_dict() == r2.to_dict()
    assert r1.model.to_bytes() == r2.model.to_bytes()


def test_grid_search_minority_guard():
    X, y = _separable(n=12, seed=18)
    y[:] = False
    y[:3] = True
    with pytest.raises(InputError):
        grid_search(X, y, "logreg", grid={"penalty": ["l2"], "C": [1.0]}, folds=5)
