"""Downstream classifiers over embedding features, with balanced class
weighting and exhaustive grid search.

Four classifier kinds are implemented from scratch: logistic regression
(proximal SGD with l1/l2/elastic-net penalties), SVM (primal subgradient for
the linear kernel, SMO dual for rbf/poly), random forest (bagged CART,
gini), and a one-hidden-layer perceptron (weighted cross-entropy SGD).
Every classifier scales per-example loss by its class weight.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from rheframe import _forest, _svm
from rheframe._serialize import dump_blob, parse_blob, read_blob, write_blob
from rheframe.errors import ConfigError, InputError, ModelError
from rheframe.evaluation import prf, repeated_stratified_kfold

CLF_MAGIC = "RFD-CLF"
CLF_VERSION = (1, 0)

KINDS = ("logreg", "svm", "rf", "mlp")

ELASTICNET_MIX = 0.5  # fraction of l1 in the elastic-net penalty
MLP_MOMENTUM = 0.9
MLP_LR_HALVING_PATIENCE = 2  # epochs of stalled loss before halving (adaptive)


@dataclass(frozen=True)
class ClassWeights:
    """Per-class loss multipliers; balanced rule w_c = n / (2 * n_c)."""

    negative: float
    positive: float

    def __post_init__(self):
        if self.negative <= 0 or self.positive <= 0:
            raise ConfigError("class weights must be positive")

    def per_sample(self, labels: np.ndarray) -> np.ndarray:
        return np.where(labels, self.positive, self.negative)

    @property
    def ratio(self) -> float:
        return self.positive / self.negative


def compute_class_weights(labels: Sequence[bool]) -> ClassWeights:
    y = np.asarray(labels, dtype=bool)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise InputError("balanced class weights require both classes present")
    n = len(y)
    return ClassWeights(negative=n / (2.0 * n_neg), positive=n / (2.0 * n_pos))


# hyperparameter domains; `degree` applies to the poly kernel only
DEFAULT_GRIDS: dict[str, dict[str, list]] = {
    "logreg": {
        "penalty": ["l1", "l2", "elasticnet"],
        "C": [0.1, 1.0, 10.0, 100.0, 1000.0],
    },
    "svm": {
        "kernel": ["rbf", "poly", "linear"],
        "C": [0.1, 1.0, 10.0, 100.0, 1000.0],
        "degree": [3, 5, 7, 8],
    },
    "mlp": {
        "hidden_layer_sizes": [[100]],
        "learning_rate": ["constant", "invscaling", "adaptive"],
        "activation": ["logistic", "identity", "tanh", "relu"],
        "alpha": [0.1, 0.01, 0.001, 0.0001],
    },
    "rf": {
        "n_estimators": [10, 50, 100, 200, 500, 1000],
        "max_features": ["log2", "sqrt"],
    },
}

_TRAINING_CONTROLS = {
    "logreg": {"epochs": 150, "batch_size": 64, "learning_rate_init": 0.5},
    "svm": {"epochs": 200, "batch_size": 64, "tol": _svm.SMO_TOL,
            "max_passes": _svm.SMO_MAX_PASSES, "max_iter": _svm.SMO_MAX_ITER},
    "mlp": {"epochs": 200, "batch_size": 32, "learning_rate_init": 0.1},
    "rf": {},
}


@dataclass(frozen=True)
class ClassifierSpec:
    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown classifier kind {self.kind!r}")
        allowed = set(DEFAULT_GRIDS[self.kind]) | set(_TRAINING_CONTROLS[self.kind])
        unknown = set(self.params) - allowed
        if unknown:
            raise ConfigError(
                f"unknown hyperparameter(s) for {self.kind}: {sorted(unknown)}"
            )

    def get(self, name: str, default=None):
        if name in self.params:
            return self.params[name]
        grid = DEFAULT_GRIDS[self.kind]
        if default is not None:
            return default
        if name in grid:
            return grid[name][0]
        return _TRAINING_CONTROLS[self.kind][name]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": self.params, "seed": self.seed}


@dataclass
class ClassifierModel:
    """Fitted parameters plus the spec that produced them."""

    kind: str
    spec: ClassifierSpec
    feature_dim: int
    class_weights: ClassWeights
    arrays: dict[str, np.ndarray]
    meta: dict

    def save(self, path) -> None:
        write_blob(path, CLF_MAGIC, CLF_VERSION, self._header(), self.arrays)

    def to_bytes(self) -> bytes:
        return dump_blob(CLF_MAGIC, CLF_VERSION, self._header(), self.arrays)

    def _header(self) -> dict:
        return {
            "kind": self.kind,
            "spec": self.spec.to_dict(),
            "feature_dim": self.feature_dim,
            "class_weights": [self.class_weights.negative, self.class_weights.positive],
            "meta": self.meta,
        }

    @classmethod
    def _from_parts(cls, header, arrays) -> "ClassifierModel":
        spec = ClassifierSpec(
            kind=header["spec"]["kind"],
            params=header["spec"]["params"],
            seed=header["spec"]["seed"],
        )
        return cls(
            kind=header["kind"],
            spec=spec,
            feature_dim=header["feature_dim"],
            class_weights=ClassWeights(*header["class_weights"]),
            arrays=arrays,
            meta=header["meta"],
        )

    @classmethod
    def load(cls, path) -> "ClassifierModel":
        _, header, arrays = read_blob(path, CLF_MAGIC, CLF_VERSION[0])
        return cls._from_parts(header, arrays)

    @classmethod
    def from_bytes(cls, data: bytes) -> "ClassifierModel":
        _, header, arrays = parse_blob(data, CLF_MAGIC, CLF_VERSION[0])
        return cls._from_parts(header, arrays)


# --- logistic regression ---

def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(z, -30.0, 30.0)))


def logreg_loss_grad(
    w: np.ndarray,
    b: float,
    X: np.ndarray,
    y: np.ndarray,
    sample_weights: np.ndarray,
    l2_scale: float,
):
    """Smooth part of the objective: mean weighted log-loss + l2 term."""
    z = X @ w + b
    p = _sigmoid(z)
    t = y.astype(np.float64)
    eps = 1e-12
    losses = -(t * np.log(p + eps) + (1 - t) * np.log(1 - p + eps))
    n = len(y)
    loss = float(np.sum(sample_weights * losses) / n) + 0.5 * l2_scale * float(w @ w)
    resid = sample_weights * (p - t) / n
    grad_w = X.T @ resid + l2_scale * w
    grad_b = float(resid.sum())
    return loss, grad_w, grad_b


def _soft_threshold(w: np.ndarray, thresh: float) -> np.ndarray:
    return np.sign(w) * np.maximum(np.abs(w) - thresh, 0.0)


def _fit_logreg(X, y, spec: ClassifierSpec, weights: ClassWeights) -> ClassifierModel:
    penalty = spec.get("penalty")
    if penalty not in ("l1", "l2", "elasticnet"):
        raise ConfigError(f"unknown penalty {penalty!r}")
    C = float(spec.get("C"))
    n, d = X.shape
    l1_frac = {"l1": 1.0, "l2": 0.0, "elasticnet": ELASTICNET_MIX}[penalty]
    l1_scale = l1_frac / (C * n)
    l2_scale = (1.0 - l1_frac) / (C * n)
    epochs = int(spec.get("epochs"))
    batch_size = int(spec.get("batch_size"))
    lr0 = float(spec.get("learning_rate_init"))
    sw = weights.per_sample(y)
    w = np.zeros(d, dtype=np.float64)
    b = 0.0
    rng = np.random.default_rng(spec.seed)
    for epoch in range(epochs):
        lr = lr0 / (1.0 + 0.05 * epoch)
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            batch = order[start : start + batch_size]
            _, gw, gb = logreg_loss_grad(
                w, b, X[batch], y[batch], sw[batch], l2_scale
            )
            w -= lr * gw
            b -= lr * gb
            if l1_scale > 0:
                w = _soft_threshold(w, lr * l1_scale)
    return ClassifierModel(
        kind="logreg",
        spec=spec,
        feature_dim=d,
        class_weights=weights,
        arrays={"w": w, "b": np.array([b])},
        meta={},
    )


# --- multi-layer perceptron ---

_ACTIVATIONS = ("logistic", "identity", "tanh", "relu")


def _act(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "logistic":
        return _sigmoid(z)
    if kind == "identity":
        return z
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    raise ConfigError(f"unknown activation {kind!r}")


def _act_grad(z: np.ndarray, a: np.ndarray, kind: str) -> np.ndarray:
    if kind == "logistic":
        return a * (1.0 - a)
    if kind == "identity":
        return np.ones_like(a)
    if kind == "tanh":
        return 1.0 - a * a
    return (z > 0).astype(np.float64)


def mlp_loss_grad(
    params: dict[str, np.ndarray],
    X: np.ndarray,
    y: np.ndarray,
    sample_weights: np.ndarray,
    alpha: float,
    activation: str,
):
    """Weighted 2-class cross-entropy plus L2 penalty, with gradients."""
    W1, b1, W2, b2 = params["W1"], params["b1"], params["W2"], params["b2"]
    n = X.shape[0]
    z1 = X @ W1 + b1
    a1 = _act(z1, activation)
    logits = a1 @ W2 + b2
    logits = logits - logits.max(axis=1, keepdims=True)
    expl = np.exp(logits)
    probs = expl / expl.sum(axis=1, keepdims=True)
    t = y.astype(np.int64)
    ce = -np.log(probs[np.arange(n), t] + 1e-12)
    penalty = 0.5 * alpha * (float((W1 * W1).sum()) + float((W2 * W2).sum())) / n
    loss = float(np.sum(sample_weights * ce) / n) + penalty
    dlogits = probs.copy()
    dlogits[np.arange(n), t] -= 1.0
    dlogits *= (sample_weights / n)[:, None]
    gW2 = a1.T @ dlogits + (alpha / n) * W2
    gb2 = dlogits.sum(axis=0)
    da1 = dlogits @ W2.T
    dz1 = da1 * _act_grad(z1, a1, activation)
    gW1 = X.T @ dz1 + (alpha / n) * W1
    gb1 = dz1.sum(axis=0)
    return loss, {"W1": gW1, "b1": gb1, "W2": gW2, "b2": gb2}


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def _fit_mlp(X, y, spec: ClassifierSpec, weights: ClassWeights) -> ClassifierModel:
    hidden = spec.get("hidden_layer_sizes")
    hidden = tuple(hidden) if isinstance(hidden, (list, tuple)) else (hidden,)
    if len(hidden) != 1:
        raise ConfigError("exactly one hidden layer is supported")
    h = int(hidden[0])
    activation = spec.get("activation")
    if activation not in _ACTIVATIONS:
        raise ConfigError(f"unknown activation {activation!r}")
    lr_mode = spec.get("learning_rate")
    if lr_mode not in ("constant", "invscaling", "adaptive"):
        raise ConfigError(f"unknown learning_rate mode {lr_mode!r}")
    alpha = float(spec.get("alpha"))
    epochs = int(spec.get("epochs"))
    batch_size = int(spec.get("batch_size"))
    lr0 = float(spec.get("learning_rate_init"))
    n, d = X.shape
    rng = np.random.default_rng(spec.seed)
    params = {
        "W1": _glorot(rng, d, h),
        "b1": np.zeros(h),
        "W2": _glorot(rng, h, 2),
        "b2": np.zeros(2),
    }
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    sw = weights.per_sample(y)
    lr = lr0
    best_loss = np.inf
    stall = 0
    t = 0
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            t += 1
            batch = order[start : start + batch_size]
            _, grads = mlp_loss_grad(params, X[batch], y[batch], sw[batch], alpha, activation)
            if lr_mode == "invscaling":
                step = lr0 / np.sqrt(t)
            else:
                step = lr
            for key in params:
                velocity[key] = MLP_MOMENTUM * velocity[key] - step * grads[key]
                params[key] += velocity[key]
        # monitored loss on the full training set drives the adaptive schedule
        epoch_loss, _ = mlp_loss_grad(params, X, y, sw, alpha, activation)
        if epoch_loss < best_loss - 1e-4:
            best_loss = epoch_loss
            stall = 0
        else:
            stall += 1
            if lr_mode == "adaptive" and stall >= MLP_LR_HALVING_PATIENCE:
                lr *= 0.5
                stall = 0
    return ClassifierModel(
        kind="mlp",
        spec=spec,
        feature_dim=d,
        class_weights=weights,
        arrays=dict(params),
        meta={"activation": activation},
    )


# --- svm ---

def _fit_svm(X, y, spec: ClassifierSpec, weights: ClassWeights) -> ClassifierModel:
    kernel = spec.get("kernel")
    if kernel not in ("rbf", "poly", "linear"):
        raise ConfigError(f"unknown kernel {kernel!r}")
    C = float(spec.get("C"))
    y_signed = np.where(y, 1.0, -1.0)
    sw = weights.per_sample(y)
    if kernel == "linear":
        w, b = _svm.fit_linear_primal(
            X,
            y_signed,
            sw,
            C,
            epochs=int(spec.get("epochs")),
            batch_size=int(spec.get("batch_size")),
            seed=spec.seed,
        )
        return ClassifierModel(
            kind="svm",
            spec=spec,
            feature_dim=X.shape[1],
            class_weights=weights,
            arrays={"w": w, "b": np.array([b])},
            meta={"kernel": "linear"},
        )
    gamma = _svm.scale_gamma(X)
    degree = int(spec.get("degree", 3)) if kernel == "poly" else 0
    K = _svm.kernel_matrix(X, X, kernel, gamma, degree)
    box = C * sw
    alpha, b = _svm.fit_smo(
        K,
        y_signed,
        box,
        tol=float(spec.get("tol")),
        max_passes=int(spec.get("max_passes")),
        max_iter=int(spec.get("max_iter")),
        seed=spec.seed,
    )
    support = alpha > 1e-12
    return ClassifierModel(
        kind="svm",
        spec=spec,
        feature_dim=X.shape[1],
        class_weights=weights,
        arrays={
            "support_vectors": X[support].astype(np.float64),
            "dual_coef": (alpha[support] * y_signed[support]),
            "b": np.array([b]),
        },
        meta={"kernel": kernel, "gamma": gamma, "degree": degree},
    )


# --- random forest ---

def _fit_rf(X, y, spec: ClassifierSpec, weights: ClassWeights) -> ClassifierModel:
    n_estimators = int(spec.get("n_estimators"))
    max_features = spec.get("max_features")
    if max_features not in ("log2", "sqrt"):
        raise ConfigError(f"unknown max_features {max_features!r}")
    trees = _forest.fit_forest(
        X, y, weights.per_sample(y), n_estimators, max_features, spec.seed
    )
    arrays: dict[str, np.ndarray] = {}
    offsets = [0]
    for key in ("feature", "threshold", "left", "right", "value"):
        arrays[key] = np.concatenate([t[key] for t in trees])
    for t in trees:
        offsets.append(offsets[-1] + len(t["feature"]))
    arrays["offsets"] = np.asarray(offsets, dtype=np.int64)
    return ClassifierModel(
        kind="rf",
        spec=spec,
        feature_dim=X.shape[1],
        class_weights=weights,
        arrays=arrays,
        meta={"n_trees": len(trees)},
    )


def _rf_trees(model: ClassifierModel) -> list[dict[str, np.ndarray]]:
    offs = model.arrays["offsets"]
    trees = []
    for i in range(len(offs) - 1):
        lo, hi = offs[i], offs[i + 1]
        trees.append({k: model.arrays[k][lo:hi] for k in ("feature", "threshold", "left", "right", "value")})
    return trees


# --- public training / prediction API ---

def train_classifier(
    features: np.ndarray,
    labels: Sequence[bool],
    spec: ClassifierSpec,
    weights: ClassWeights | None = None,
) -> ClassifierModel:
    """Fit the classifier described by ``spec`` on a feature matrix."""
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    if X.ndim != 2 or X.shape[0] != len(y):
        raise InputError(f"bad feature matrix shape {X.shape} for {len(y)} labels")
    if X.shape[0] < 2:
        raise InputError("need at least 2 training examples")
    if not np.isfinite(X).all():
        raise InputError("features contain non-finite values")
    if y.all() or not y.any():
        raise InputError("training requires both classes present")
    if weights is None:
        weights = compute_class_weights(y)
    fit = {"logreg": _fit_logreg, "svm": _fit_svm, "rf": _fit_rf, "mlp": _fit_mlp}[spec.kind]
    return fit(X, y, spec, weights)


def predict_classifier(
    model: ClassifierModel,
    features: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic labels and scores (probabilities, or margins for SVM)."""
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != model.feature_dim:
        raise ModelError(
            f"feature dim {X.shape[1]} does not match model dim {model.feature_dim}"
        )
    if model.kind == "logreg":
        scores = _sigmoid(X @ model.arrays["w"] + model.arrays["b"][0])
        return scores >= 0.5, scores
    if model.kind == "mlp":
        a1 = _act(X @ model.arrays["W1"] + model.arrays["b1"], model.meta["activation"])
        logits = a1 @ model.arrays["W2"] + model.arrays["b2"]
        logits = logits - logits.max(axis=1, keepdims=True)
        expl = np.exp(logits)
        probs = expl / expl.sum(axis=1, keepdims=True)
        return probs[:, 1] >= 0.5, probs[:, 1]
    if model.kind == "svm":
        if model.meta["kernel"] == "linear":
            margin = X @ model.arrays["w"] + model.arrays["b"][0]
        else:
            K = _svm.kernel_matrix(
                X,
                model.arrays["support_vectors"],
                model.meta["kernel"],
                model.meta["gamma"],
                model.meta["degree"],
            )
            margin = K @ model.arrays["dual_coef"] + model.arrays["b"][0]
        return margin >= 0.0, margin
    if model.kind == "rf":
        fraction = _forest.forest_vote_fraction(_rf_trees(model), X)
        return fraction >= 0.5, fraction
    raise ModelError(f"unknown model kind {model.kind!r}")


# --- grid search ---

def enumerate_grid(kind: str, grid: dict[str, list] | None = None) -> list[dict]:
    """Expand a hyperparameter grid into the ordered list of configurations.

    ``degree`` combinations are emitted for the poly kernel only; other
    kernels ignore it, so enumerating them would duplicate settings.
    """
    if kind not in KINDS:
        raise ConfigError(f"unknown classifier kind {kind!r}")
    grid = dict(DEFAULT_GRIDS[kind] if grid is None else grid)
    degree_values = grid.pop("degree", None) if kind == "svm" else None
    keys = list(grid)
    configs = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        params = dict(zip(keys, combo))
        if kind == "svm" and degree_values is not None and params.get("kernel") == "poly":
            for deg in degree_values:
                with_deg = dict(params)
                with_deg["degree"] = deg
                configs.append(with_deg)
        else:
            configs.append(params)
    return configs


@dataclass(frozen=True)
class GridEntry:
    params: dict
    mean_score: float
    std_score: float
    fold_scores: tuple[float, ...]


@dataclass
class GridResult:
    entries: list[GridEntry]
    best_index: int
    best_spec: ClassifierSpec
    model: ClassifierModel

    @property
    def best_score(self) -> float:
        return self.entries[self.best_index].mean_score

    def to_dict(self) -> dict:
        return {
            "best_index": self.best_index,
            "best_params": self.entries[self.best_index].params,
            "best_score": self.best_score,
            "entries": [
                {
                    "params": e.params,
                    "mean_score": e.mean_score,
                    "std_score": e.std_score,
                }
                for e in self.entries
            ],
        }


def grid_search(
    features: np.ndarray,
    labels: Sequence[bool],
    kind: str,
    grid: dict[str, list] | None = None,
    folds: int = 10,
    seed: int = 0,
    base_params: dict | None = None,
) -> GridResult:
    """Exhaustive stratified-CV search scored by macro-F1.

    All configurations share the same fold partition; ties keep the
    first-listed configuration; the returned model is refit on the full
    training set with the winning parameters.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    if folds < 2:
        raise InputError("folds must be >= 2")
    splits = repeated_stratified_kfold(y, k=folds, repeats=1, seed=seed)
    configs = enumerate_grid(kind, grid)
    entries: list[GridEntry] = []
    best_index = -1
    best_score = -np.inf
    for ci, params in enumerate(configs):
        merged = dict(base_params or {})
        merged.update(params)
        spec = ClassifierSpec(kind=kind, params=merged, seed=seed)
        scores = []
        for train_idx, test_idx in splits:
            weights = compute_class_weights(y[train_idx])
            model = train_classifier(X[train_idx], y[train_idx], spec, weights)
            pred, _ = predict_classifier(model, X[test_idx])
            scores.append(prf(y[test_idx], pred).macro_f1)
        mean = float(np.mean(scores))
        entries.append(
            GridEntry(
                params=params,
                mean_score=mean,
                std_score=float(np.std(scores)),
                fold_scores=tuple(scores),
            )
        )
        if mean > best_score:
            best_score = mean
            best_index = ci
    best_params = dict(base_params or {})
    best_params.update(configs[best_index])
    best_spec = ClassifierSpec(kind=kind, params=best_params, seed=seed)
    model = train_classifier(X, y, best_spec, compute_class_weights(y))
    return GridResult(entries=entries, best_index=best_index, best_spec=best_spec, model=model)
