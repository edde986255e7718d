"""Sequence-level LSTM forward/backward kernels.

The time recurrence dominates attention-model training, so both passes are
written as numba-compatible batched numpy and compiled with @njit unless the
pure-numpy fallback is selected. Gate layout along the last axis is
[input, forget, cell, output].
"""

from __future__ import annotations

import numpy as np

from rheframe._backend import maybe_njit


@maybe_njit
def _sig(z):
    return 1.0 / (1.0 + np.exp(-np.minimum(np.maximum(z, -30.0), 30.0)))


@maybe_njit
def lstm_forward(X, Wx, Wh, b):
    """Run an LSTM over X (L, B, E); returns (H_out, C, G).

    H_out/C are per-step hidden and cell states (L, B, H); G caches the
    activated gates (L, B, 4H) for the backward pass.
    """
    L, B, _ = X.shape
    H = Wh.shape[0]
    H_out = np.zeros((L, B, H))
    C = np.zeros((L, B, H))
    G = np.zeros((L, B, 4 * H))
    h_prev = np.zeros((B, H))
    c_prev = np.zeros((B, H))
    for t in range(L):
        z = np.dot(X[t], Wx) + np.dot(h_prev, Wh) + b
        i = _sig(z[:, 0:H])
        f = _sig(z[:, H : 2 * H])
        g = np.tanh(z[:, 2 * H : 3 * H])
        o = _sig(z[:, 3 * H : 4 * H])
        c = f * c_prev + i * g
        h = o * np.tanh(c)
        G[t, :, 0:H] = i
        G[t, :, H : 2 * H] = f
        G[t, :, 2 * H : 3 * H] = g
        G[t, :, 3 * H : 4 * H] = o
        C[t] = c
        H_out[t] = h
        h_prev = H_out[t]
        c_prev = C[t]
    return H_out, C, G


@maybe_njit
def lstm_backward(XT, HT, C, G, dH, WhT):
    """Backpropagate dH (L, B, H) through the recurrence.

    XT and HT are time-major transposed caches (L, E, B) and (L, H, B) so
    every matrix product runs on contiguous blocks. Returns (dWx, dWh, db).
    Gradients w.r.t. the inputs are not needed (embeddings stay frozen).
    """
    L = C.shape[0]
    B = C.shape[1]
    H = C.shape[2]
    E = XT.shape[1]
    dWx = np.zeros((E, 4 * H))
    dWh = np.zeros((H, 4 * H))
    db = np.zeros(4 * H)
    dh_carry = np.zeros((B, H))
    dc_carry = np.zeros((B, H))
    dz = np.zeros((B, 4 * H))
    for t in range(L - 1, -1, -1):
        dh = dH[t] + dh_carry
        i = G[t, :, 0:H]
        f = G[t, :, H : 2 * H]
        g = G[t, :, 2 * H : 3 * H]
        o = G[t, :, 3 * H : 4 * H]
        tanh_c = np.tanh(C[t])
        do = dh * tanh_c
        dc = dh * o * (1.0 - tanh_c * tanh_c) + dc_carry
        di = dc * g
        dg = dc * i
        if t > 0:
            df = dc * C[t - 1]
        else:
            df = np.zeros((B, H))
        dc_carry = dc * f
        dz[:, 0:H] = di * i * (1.0 - i)
        dz[:, H : 2 * H] = df * f * (1.0 - f)
        dz[:, 2 * H : 3 * H] = dg * (1.0 - g * g)
        dz[:, 3 * H : 4 * H] = do * o * (1.0 - o)
        dWx += np.dot(XT[t], dz)
        if t > 0:
            dWh += np.dot(HT[t - 1], dz)
        db += np.sum(dz, axis=0)
        dh_carry = np.dot(dz, WhT)
    return dWx, dWh, db
