"""Pure NumPy implementations of the hot loops.

These mirror the compiled kernels in ``_ckernels.pyx`` one to one and are
used whenever the extension is not built (or ``GAZEMASK_BACKEND=python``).
"""
from __future__ import annotations

import numpy as np


def _sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def lstm_forward(gates, w_h):
    """Run one LSTM direction over a time-major sequence.

    ``gates`` holds the input projections plus bias, shape (L, B, 4h), and is
    overwritten in place with the activated gates (i, f, g, o).
    Returns hidden and cell states, each (L, B, h).
    """
    n_steps, batch, four_h = gates.shape
    hid = four_h // 4
    hs = np.empty((n_steps, batch, hid), dtype=gates.dtype)
    cs = np.empty_like(hs)
    h = np.zeros((batch, hid), dtype=gates.dtype)
    c = np.zeros_like(h)
    for t in range(n_steps):
        a = gates[t]
        a += h @ w_h.T
        a[:, : 2 * hid] = _sigmoid(a[:, : 2 * hid])
        a[:, 2 * hid : 3 * hid] = np.tanh(a[:, 2 * hid : 3 * hid])
        a[:, 3 * hid :] = _sigmoid(a[:, 3 * hid :])
        i, f, g, o = a[:, :hid], a[:, hid : 2 * hid], a[:, 2 * hid : 3 * hid], a[:, 3 * hid :]
        c = f * c + i * g
        h = o * np.tanh(c)
        hs[t] = h
        cs[t] = c
    return hs, cs


def lstm_backward(d_hs, gates, cs, w_h):
    """Backpropagate through one LSTM direction.

    ``d_hs`` is the gradient arriving at every hidden output (L, B, h);
    ``gates`` are the activated gates from :func:`lstm_forward`.
    Returns gradients w.r.t. the gate pre-activations, shape (L, B, 4h).
    """
    n_steps, batch, hid = d_hs.shape
    d_pre = np.empty_like(gates)
    dh_next = np.zeros((batch, hid), dtype=gates.dtype)
    dc_next = np.zeros_like(dh_next)
    zeros = np.zeros_like(dh_next)
    for t in range(n_steps - 1, -1, -1):
        a = gates[t]
        i, f, g, o = a[:, :hid], a[:, hid : 2 * hid], a[:, 2 * hid : 3 * hid], a[:, 3 * hid :]
        c_prev = cs[t - 1] if t > 0 else zeros
        tc = np.tanh(cs[t])
        dh = d_hs[t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dp = d_pre[t]
        dp[:, :hid] = dc * g * i * (1.0 - i)
        dp[:, hid : 2 * hid] = dc * c_prev * f * (1.0 - f)
        dp[:, 2 * hid : 3 * hid] = dc * i * (1.0 - g * g)
        dp[:, 3 * hid :] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = dp @ w_h
    return d_pre


def temporal_gaps(mask, dt):
    """Elapsed-missing time per feature: reset to 0 when observed, else grow by ``dt``.

    The run is counted in integer steps and scaled once, so the result is
    exactly ``dt * run_length`` with no accumulated rounding.
    """
    mask = np.asarray(mask)
    gaps = np.zeros(mask.shape, dtype=np.float64)
    run = np.zeros(mask.shape[1], dtype=np.int64)
    for t in range(mask.shape[0]):
        run = np.where(mask[t] != 0, 0, run + 1)
        gaps[t] = run * dt
    return gaps


def best_gini_split(x_sorted, y_sorted, n_classes, min_leaf):
    """Scan a presorted feature column for the lowest weighted Gini split.

    Returns ``(score, pos)`` where the left child is ``[:pos]`` and ``score``
    is the size-weighted child impurity; ``pos == -1`` when no valid split.
    """
    n = x_sorted.shape[0]
    if n < 2 * min_leaf:
        return np.inf, -1
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), y_sorted] = 1.0
    left = np.cumsum(onehot, axis=0)[:-1]
    total = left[-1] + onehot[-1]
    right = total - left
    n_left = np.arange(1, n, dtype=np.float64)
    n_right = n - n_left
    gini_l = 1.0 - np.sum(left * left, axis=1) / (n_left * n_left)
    gini_r = 1.0 - np.sum(right * right, axis=1) / (n_right * n_right)
    score = (n_left * gini_l + n_right * gini_r) / n
    valid = (x_sorted[1:] > x_sorted[:-1]) & (n_left >= min_leaf) & (n_right >= min_leaf)
    if not valid.any():
        return np.inf, -1
    score = np.where(valid, score, np.inf)
    k = int(np.argmin(score))
    return float(score[k]), k + 1
