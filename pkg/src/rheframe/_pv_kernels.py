"""Hot SGD kernels for paragraph-vector training.

One kernel handles all four variants (bag-of-words vs context-window input,
hierarchical-softmax vs negative-sampling output) via runtime flags, and
doubles as the frozen-parameter inference loop. Written in numba-compatible
numpy: compiled with @njit by default, interpreted as-is under the
pure-numpy fallback (see rheframe._backend).

Sampling uses an explicit MINSTD linear congruential generator so both
backends draw identical sequences without 64-bit overflow concerns.
"""

from __future__ import annotations

import numpy as np

from rheframe._backend import maybe_njit

_LCG_A = 16807
_LCG_M = 2147483647
_MAX_REDRAWS = 32


def lcg_seed(seed: int) -> int:
    """Map an arbitrary integer seed onto a valid LCG state (never 0)."""
    return (int(seed) * 2654435761 + 1) % (_LCG_M - 1) + 1


@maybe_njit
def _lcg_uniform(state):
    state = (_LCG_A * state) % _LCG_M
    return (state - 1.0) / (_LCG_M - 1.0), state


@maybe_njit
def _sigmoid(x):
    if x > 30.0:
        x = 30.0
    elif x < -30.0:
        x = -30.0
    return 1.0 / (1.0 + np.exp(-x))


@maybe_njit
def _nll(x, label):
    """-log sigma(x) if label==1 else -log sigma(-x), computed stably."""
    s = x if label == 1.0 else -x
    if s > 0.0:
        return np.log1p(np.exp(-s))
    return -s + np.log1p(np.exp(s))


@maybe_njit
def pv_epoch(
    D,
    W,
    OUT,
    data,
    offsets,
    unit_rows,
    codes_flat,
    code_offsets,
    points_flat,
    cum_table,
    window,
    negative,
    use_hs,
    use_dm,
    update_words,
    update_out,
    alpha_start,
    alpha_end,
    done_before,
    total_positions,
    lcg_state,
):
    """One pass over all units; returns (loss_sum, n_positions, done, lcg_state).

    ``D`` holds unit vectors, ``W`` word input vectors (context-window mode
    only), ``OUT`` the output parameters (tree-node vectors or per-token
    output rows). The learning rate decays linearly from ``alpha_start``
    toward ``alpha_end`` across ``total_positions`` scheduled updates.
    """
    loss_sum = 0.0
    n_positions = 0
    done = done_before
    state = lcg_state
    n_units = unit_rows.shape[0]
    vocab_size = cum_table.shape[0]
    u_vec = np.zeros_like(D[0])
    work = np.zeros_like(D[0])
    neg_rows = np.empty(negative + 1, dtype=np.int64)
    neg_gs = np.empty(negative + 1, dtype=np.float64)

    for ui in range(n_units):
        d_row = unit_rows[ui]
        start = offsets[ui]
        n_toks = offsets[ui + 1] - start
        for t in range(n_toks):
            if total_positions > 0:
                frac = done / total_positions
            else:
                frac = 1.0
            alpha = alpha_start + (alpha_end - alpha_start) * frac
            if alpha < alpha_end:
                alpha = alpha_end
            done += 1
            target = data[start + t]

            lo = t - window
            if lo < 0:
                lo = 0
            hi = t + window + 1
            if hi > n_toks:
                hi = n_toks
            u_vec[:] = 0.0
            m = 1
            if use_dm:
                for c in range(lo, hi):
                    if c == t:
                        continue
                    u_vec += W[data[start + c]]
                    m += 1
            u_vec += D[d_row]
            if m > 1:
                u_vec /= m

            work[:] = 0.0
            if use_hs:
                cs = code_offsets[target]
                ce = code_offsets[target + 1]
                for j in range(cs, ce):
                    row = points_flat[j]
                    x = np.dot(u_vec, OUT[row])
                    label = 1.0 - codes_flat[j]
                    f = _sigmoid(x)
                    g = (label - f) * alpha
                    loss_sum += _nll(x, label)
                    work += g * OUT[row]
                    if update_out:
                        OUT[row] += g * u_vec
            else:
                # gather all rows first so repeated draws of one row update
                # from a consistent pre-step state
                n_rows = 0
                for j in range(negative + 1):
                    if j == 0:
                        row = target
                        label = 1.0
                    else:
                        label = 0.0
                        row = -1
                        for _ in range(_MAX_REDRAWS):
                            r, state = _lcg_uniform(state)
                            idx = np.searchsorted(cum_table, r)
                            if idx >= vocab_size:
                                idx = vocab_size - 1
                            if idx != target:
                                row = idx
                                break
                        if row < 0:
                            continue  # degenerate table, skip this negative
                    x = np.dot(u_vec, OUT[row])
                    f = _sigmoid(x)
                    loss_sum += _nll(x, label)
                    work += ((label - f) * alpha) * OUT[row]
                    neg_rows[n_rows] = row
                    neg_gs[n_rows] = (label - f) * alpha
                    n_rows += 1
                if update_out:
                    for j in range(n_rows):
                        OUT[neg_rows[j]] += neg_gs[j] * u_vec

            if m > 1:
                work /= m
            D[d_row] += work
            if use_dm and update_words:
                for c in range(lo, hi):
                    if c == t:
                        continue
                    W[data[start + c]] += work
            n_positions += 1

    return loss_sum, n_positions, done, state


@maybe_njit
def draw_negatives(cum_table, k, exclude, lcg_state, out):
    """Draw ``k`` noise-table samples into ``out``, redrawing on ``exclude``.

    Returns the advanced LCG state. If redraws keep hitting ``exclude`` the
    slot is left as -1 (degenerate single-token tables).
    """
    state = lcg_state
    vocab_size = cum_table.shape[0]
    for j in range(k):
        out[j] = -1
        for _ in range(_MAX_REDRAWS):
            r, state = _lcg_uniform(state)
            idx = np.searchsorted(cum_table, r)
            if idx >= vocab_size:
                idx = vocab_size - 1
            if idx != exclude:
                out[j] = idx
                break
    return state
