"""CART decision trees and bagged random forests (gini impurity).

Trees grow depth-unbounded with min_samples_leaf=1; per-node feature
subsampling uses sqrt or log2 of the feature count. Class imbalance is
handled by weighting sample mass inside the impurity computation.
"""

from __future__ import annotations

import numpy as np

_LEAF = -1


class _TreeBuilder:
    def __init__(self, max_features: int, rng: np.random.Generator):
        self.max_features = max_features
        self.rng = rng
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []  # weighted positive fraction

    def _new_node(self) -> int:
        self.feature.append(_LEAF)
        self.threshold.append(0.0)
        self.left.append(_LEAF)
        self.right.append(_LEAF)
        self.value.append(0.0)
        return len(self.feature) - 1

    def build(self, X: np.ndarray, y: np.ndarray, w: np.ndarray) -> None:
        root = self._new_node()
        stack = [(root, np.arange(X.shape[0]))]
        while stack:
            node, idx = stack.pop()
            yi, wi = y[idx], w[idx]
            mass_pos = float(wi[yi].sum())
            mass = float(wi.sum())
            self.value[node] = mass_pos / mass if mass > 0 else 0.0
            if len(idx) < 2 or mass_pos == 0.0 or mass_pos == mass:
                continue  # pure or unsplittable leaf
            split = self._best_split(X, idx, yi, wi)
            if split is None:
                continue
            feat, thr = split
            go_left = X[idx, feat] <= thr
            left_node = self._new_node()
            right_node = self._new_node()
            self.feature[node] = feat
            self.threshold[node] = thr
            self.left[node] = left_node
            self.right[node] = right_node
            stack.append((left_node, idx[go_left]))
            stack.append((right_node, idx[~go_left]))

    def _best_split(self, X, idx, yi, wi):
        n_features = X.shape[1]
        m = min(self.max_features, n_features)
        feats = self.rng.choice(n_features, size=m, replace=False)
        w_pos = wi * yi
        total_pos = w_pos.sum()
        total = wi.sum()
        parent_gini = 1.0 - (total_pos / total) ** 2 - ((total - total_pos) / total) ** 2
        best = None
        best_score = parent_gini - 1e-12  # require strict improvement
        for feat in feats:
            col = X[idx, feat]
            order = np.argsort(col, kind="stable")
            vals = col[order]
            cum_w = np.cumsum(wi[order])
            cum_pos = np.cumsum(w_pos[order])
            # candidate cut after position k (0-based) where value changes
            change = np.nonzero(vals[1:] > vals[:-1])[0]
            if len(change) == 0:
                continue
            wl = cum_w[change]
            pl = cum_pos[change]
            wr = total - wl
            pr = total_pos - pl
            gini_l = 1.0 - (pl / wl) ** 2 - ((wl - pl) / wl) ** 2
            gini_r = 1.0 - (pr / wr) ** 2 - ((wr - pr) / wr) ** 2
            score = (wl * gini_l + wr * gini_r) / total
            k = int(np.argmin(score))
            if score[k] < best_score:
                best_score = float(score[k])
                thr = 0.5 * (vals[change[k]] + vals[change[k] + 1])
                best = (int(feat), float(thr))
        return best

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "feature": np.asarray(self.feature, dtype=np.int32),
            "threshold": np.asarray(self.threshold, dtype=np.float64),
            "left": np.asarray(self.left, dtype=np.int32),
            "right": np.asarray(self.right, dtype=np.int32),
            "value": np.asarray(self.value, dtype=np.float64),
        }


def _tree_predict_value(tree: dict[str, np.ndarray], X: np.ndarray) -> np.ndarray:
    out = np.empty(X.shape[0], dtype=np.float64)
    feature = tree["feature"]
    threshold = tree["threshold"]
    left = tree["left"]
    right = tree["right"]
    value = tree["value"]
    for i in range(X.shape[0]):
        node = 0
        while feature[node] != _LEAF:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


def _n_subfeatures(mode: str, n_features: int) -> int:
    if mode == "sqrt":
        return max(1, int(np.sqrt(n_features)))
    if mode == "log2":
        return max(1, int(np.log2(n_features))) if n_features > 1 else 1
    raise ValueError(f"unknown max_features mode {mode!r}")


def fit_forest(
    X: np.ndarray,
    y: np.ndarray,
    sample_weights: np.ndarray,
    n_estimators: int,
    max_features: str,
    seed: int,
) -> list[dict[str, np.ndarray]]:
    """Grow ``n_estimators`` bootstrap CART trees; deterministic in seed."""
    rng = np.random.default_rng(seed)
    n = X.shape[0]
    m = _n_subfeatures(max_features, X.shape[1])
    trees = []
    for _ in range(n_estimators):
        boot = rng.integers(0, n, size=n)
        builder = _TreeBuilder(m, rng)
        builder.build(X[boot], y[boot], sample_weights[boot])
        trees.append(builder.arrays())
    return trees


def forest_vote_fraction(trees: list[dict[str, np.ndarray]], X: np.ndarray) -> np.ndarray:
    """Fraction of trees voting positive for each row."""
    votes = np.zeros(X.shape[0], dtype=np.float64)
    for tree in trees:
        votes += _tree_predict_value(tree, X) >= 0.5
    return votes / len(trees)
