"""Support vector machines: primal subgradient for the linear kernel and a
sequential-minimal-optimization dual solver for rbf/poly kernels.

Class imbalance enters through per-sample box constraints C_i = C * w_class
(dual) or weighted hinge terms (primal).
"""

from __future__ import annotations

import numpy as np

SMO_TOL = 1e-3
SMO_MAX_PASSES = 20
SMO_MAX_ITER = 20_000


def scale_gamma(X: np.ndarray) -> float:
    """The 1/(d * var) heuristic for kernel width."""
    var = float(X.var())
    if var <= 0:
        var = 1.0
    return 1.0 / (X.shape[1] * var)


def kernel_matrix(A: np.ndarray, B: np.ndarray, kind: str, gamma: float, degree: int) -> np.ndarray:
    if kind == "linear":
        return A @ B.T
    if kind == "rbf":
        sq = (
            np.sum(A * A, axis=1)[:, None]
            + np.sum(B * B, axis=1)[None, :]
            - 2.0 * (A @ B.T)
        )
        return np.exp(-gamma * np.maximum(sq, 0.0))
    if kind == "poly":
        return (gamma * (A @ B.T)) ** degree
    raise ValueError(f"unknown kernel {kind!r}")


def fit_linear_primal(
    X: np.ndarray,
    y_signed: np.ndarray,
    sample_weights: np.ndarray,
    C: float,
    epochs: int = 200,
    batch_size: int = 64,
    seed: int = 0,
) -> tuple[np.ndarray, float]:
    """Weighted hinge loss with L2 regularization via Pegasos-style steps.

    Objective: lam/2 ||w||^2 + (1/n) sum_i cw_i max(0, 1 - y_i (w.x_i + b))
    with lam = 1/(C n). The bias is unregularized.
    """
    n, d = X.shape
    lam = 1.0 / (C * n)
    w = np.zeros(d, dtype=np.float64)
    b = 0.0
    rng = np.random.default_rng(seed)
    t = 0
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            t += 1
            batch = order[start : start + batch_size]
            eta = 1.0 / (lam * (t + 1))
            margins = y_signed[batch] * (X[batch] @ w + b)
            active = margins < 1.0
            w *= 1.0 - eta * lam
            if np.any(active):
                coef = sample_weights[batch][active] * y_signed[batch][active]
                w += (eta / n) * (coef @ X[batch][active])
                b += (eta / n) * coef.sum()
    return w, float(b)


def fit_smo(
    K: np.ndarray,
    y_signed: np.ndarray,
    box: np.ndarray,
    tol: float = SMO_TOL,
    max_passes: int = SMO_MAX_PASSES,
    max_iter: int = SMO_MAX_ITER,
    seed: int = 0,
) -> tuple[np.ndarray, float]:
    """Solve the dual SVM with per-sample box constraints by pairwise updates.

    Returns (alpha, b). Terminates when a full pass makes no update (KKT
    conditions hold within ``tol``) ``max_passes`` times or on the
    iteration cap.
    """
    n = K.shape[0]
    alpha = np.zeros(n, dtype=np.float64)
    # cached decision values f(x_i); updated incrementally on every pair step
    fcache = np.zeros(n, dtype=np.float64)
    state = {"b": 0.0, "iters": 0}
    rng = np.random.default_rng(seed)

    def try_pair(i: int, j: int) -> bool:
        if i == j:
            return False
        e_i = fcache[i] - y_signed[i]
        e_j = fcache[j] - y_signed[j]
        a_i_old, a_j_old = alpha[i], alpha[j]
        if y_signed[i] != y_signed[j]:
            lo = max(0.0, a_j_old - a_i_old)
            hi = min(box[j], box[i] + a_j_old - a_i_old)
        else:
            lo = max(0.0, a_i_old + a_j_old - box[i])
            hi = min(box[j], a_i_old + a_j_old)
        if lo >= hi:
            return False
        eta = 2.0 * K[i, j] - K[i, i] - K[j, j]
        if eta >= 0:
            return False
        a_j = a_j_old - y_signed[j] * (e_i - e_j) / eta
        a_j = min(max(a_j, lo), hi)
        if abs(a_j - a_j_old) < 1e-7:
            return False
        a_i = a_i_old + y_signed[i] * y_signed[j] * (a_j_old - a_j)
        alpha[i], alpha[j] = a_i, a_j
        d_i = y_signed[i] * (a_i - a_i_old)
        d_j = y_signed[j] * (a_j - a_j_old)
        b = state["b"]
        b1 = b - e_i - d_i * K[i, i] - d_j * K[i, j]
        b2 = b - e_j - d_i * K[i, j] - d_j * K[j, j]
        if 0 < a_i < box[i]:
            new_b = b1
        elif 0 < a_j < box[j]:
            new_b = b2
        else:
            new_b = 0.5 * (b1 + b2)
        fcache[:] += d_i * K[i] + d_j * K[j] + (new_b - b)
        state["b"] = new_b
        return True

    def examine(i: int) -> bool:
        e_i = fcache[i] - y_signed[i]
        r_i = e_i * y_signed[i]
        if not ((r_i < -tol and alpha[i] < box[i]) or (r_i > tol and alpha[i] > 0)):
            return False
        # heuristic partner first, then sweep non-bound, then sweep everything
        non_bound = np.nonzero((alpha > 0) & (alpha < box))[0]
        if len(non_bound) > 1:
            j = int(non_bound[np.argmax(np.abs(fcache[non_bound] - y_signed[non_bound] - e_i))])
            if try_pair(i, j):
                return True
        for pool in (non_bound, np.arange(n)):
            if len(pool) == 0:
                continue
            start = int(rng.integers(0, len(pool)))
            for off in range(len(pool)):
                if try_pair(i, int(pool[(start + off) % len(pool)])):
                    return True
        return False

    passes = 0
    while passes < max_passes and state["iters"] < max_iter:
        changed = 0
        for i in range(n):
            state["iters"] += 1
            if examine(i):
                changed += 1
        passes = passes + 1 if changed == 0 else 0
    return alpha, _optimal_bias(K, y_signed, alpha, box)


def _optimal_bias(K: np.ndarray, y_signed: np.ndarray, alpha: np.ndarray, box: np.ndarray) -> float:
    """Bias satisfying the KKT box given final alphas.

    With non-bound support vectors, b averages their exact values; otherwise
    it is the midpoint of the feasible interval (pair updates alone leave b
    ill-determined when every alpha sits at a bound).
    """
    g = (alpha * y_signed) @ K
    lower, upper = -np.inf, np.inf
    for i in range(len(alpha)):
        bound_val = y_signed[i] - g[i]
        at_zero = alpha[i] <= 1e-9
        at_box = alpha[i] >= box[i] - 1e-9
        # alpha=0 requires y f >= 1; alpha=C requires y f <= 1;
        # interior alphas constrain b from both sides
        if (at_zero and y_signed[i] > 0) or (at_box and y_signed[i] < 0) or (
            not at_zero and not at_box
        ):
            lower = max(lower, bound_val)
        if (at_zero and y_signed[i] < 0) or (at_box and y_signed[i] > 0) or (
            not at_zero and not at_box
        ):
            upper = min(upper, bound_val)
    if not np.isfinite(lower) and not np.isfinite(upper):
        return 0.0
    if not np.isfinite(lower):
        return float(upper)
    if not np.isfinite(upper):
        return float(lower)
    return float(0.5 * (lower + upper))


def kkt_violation(K: np.ndarray, y_signed: np.ndarray, alpha: np.ndarray, b: float, box: np.ndarray) -> float:
    """Maximum KKT violation under the solver's stopping rule (0 if satisfied)."""
    f = (alpha * y_signed) @ K + b
    r = y_signed * (f - y_signed)
    worst = 0.0
    for i in range(len(alpha)):
        if alpha[i] < box[i] - 1e-9:
            worst = max(worst, -r[i])
        if alpha[i] > 1e-9:
            worst = max(worst, r[i])
    return float(max(0.0, worst))
