"""Hot numeric kernels.

Every kernel has two implementations with identical signatures: an explicit
loop version written for numba's nopython mode (``*_loops``) and a numpy
version (``*_numpy``).  The public name is bound to one of them at import time
by :func:`safeabr._accel.pick`.
"""

import math

import numpy as np

from ._accel import NUMBA_AVAILABLE, njit, pick


# --------------------------------------------------------------------------
# piecewise-constant transfer over a wrapping throughput trace
# --------------------------------------------------------------------------

def _transfer_time_loops(times, rates, period, start, megabits):
    # rates must already be floored to a positive minimum
    n = times.shape[0]
    t = start
    i = np.searchsorted(times, t, side="right") - 1
    if i < 0:
        i = 0
    elapsed = 0.0
    remaining = megabits
    while True:
        seg_end = times[i + 1] if i + 1 < n else period
        span = seg_end - t
        cap = rates[i] * span
        if cap >= remaining:
            return elapsed + remaining / rates[i]
        remaining -= cap
        elapsed += span
        i += 1
        t = seg_end
        if i == n:
            i = 0
            t = 0.0


# Scalar and strictly sequential, so the fallback is the same loop in Python.
_transfer_time_numpy = _transfer_time_loops

transfer_time = pick(_transfer_time_loops, _transfer_time_numpy)


# --------------------------------------------------------------------------
# RBF one-class decision function
# --------------------------------------------------------------------------

def _rbf_decision_loops(X, sv, coef, gamma, rho):
    m, d = X.shape
    n = sv.shape[0]
    out = np.empty(m)
    for a in range(m):
        acc = 0.0
        for b in range(n):
            dist = 0.0
            for c in range(d):
                diff = X[a, c] - sv[b, c]
                dist += diff * diff
            acc += coef[b] * math.exp(-gamma * dist)
        out[a] = acc - rho
    return out


def _rbf_decision_numpy(X, sv, coef, gamma, rho):
    d2 = ((X[:, None, :] - sv[None, :, :]) ** 2).sum(axis=2)
    return np.exp(-gamma * d2) @ coef - rho


rbf_decision = pick(_rbf_decision_loops, _rbf_decision_numpy)


def _rbf_gram_loops(X, gamma):
    n, d = X.shape
    K = np.empty((n, n))
    for a in range(n):
        K[a, a] = 1.0
        for b in range(a + 1, n):
            dist = 0.0
            for c in range(d):
                diff = X[a, c] - X[b, c]
                dist += diff * diff
            v = math.exp(-gamma * dist)
            K[a, b] = v
            K[b, a] = v
    return K


def _rbf_gram_numpy(X, gamma):
    sq = (X * X).sum(axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (X @ X.T), 0.0)
    K = np.exp(-gamma * d2)
    np.fill_diagonal(K, 1.0)
    return K


# BLAS beats the compiled double loop here (see benchmarks/bench_kernels.py)
rbf_gram = _rbf_gram_numpy


# --------------------------------------------------------------------------
# SMO for the one-class dual:  min 1/2 a'Ka  s.t. 0 <= a <= C, sum(a) = 1
# --------------------------------------------------------------------------

def _smo_one_class_loops(K, alpha, C, tol, max_iter):
    """Solve in place. Returns (iterations, final KKT gap, gradient)."""
    n = K.shape[0]
    g = np.zeros(n)
    for a in range(n):
        if alpha[a] != 0.0:
            for t in range(n):
                g[t] += K[t, a] * alpha[a]
    gap = np.inf
    it = 0
    while it < max_iter:
        i = -1
        j = -1
        gi = np.inf
        gj = -np.inf
        for t in range(n):
            if alpha[t] < C and g[t] < gi:
                gi = g[t]
                i = t
            if alpha[t] > 0.0 and g[t] > gj:
                gj = g[t]
                j = t
        if i < 0 or j < 0:
            gap = 0.0
            break
        gap = gj - gi
        if gap < tol:
            break
        quad = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if quad < 1e-12:
            quad = 1e-12
        delta = gap / quad
        room_i = C - alpha[i]
        room_j = alpha[j]
        if delta > room_i:
            delta = room_i
        if delta > room_j:
            delta = room_j
        alpha[i] = C if delta == room_i else alpha[i] + delta
        alpha[j] = 0.0 if delta == room_j else alpha[j] - delta
        for t in range(n):
            g[t] += delta * (K[t, i] - K[t, j])
        it += 1
    return it, gap, g


def _smo_one_class_numpy(K, alpha, C, tol, max_iter):
    g = K @ alpha
    gap = np.inf
    it = 0
    while it < max_iter:
        up = alpha < C
        low = alpha > 0.0
        if not up.any() or not low.any():
            gap = 0.0
            break
        i = int(np.argmin(np.where(up, g, np.inf)))
        j = int(np.argmax(np.where(low, g, -np.inf)))
        gap = g[j] - g[i]
        if gap < tol:
            break
        quad = max(K[i, i] + K[j, j] - 2.0 * K[i, j], 1e-12)
        delta = gap / quad
        room_i = C - alpha[i]
        room_j = alpha[j]
        if delta > room_i:
            delta = room_i
        if delta > room_j:
            delta = room_j
        alpha[i] = C if delta == room_i else alpha[i] + delta
        alpha[j] = 0.0 if delta == room_j else alpha[j] - delta
        g += delta * (K[:, i] - K[:, j])
        it += 1
    return it, gap, g


smo_one_class = pick(_smo_one_class_loops, _smo_one_class_numpy)


# --------------------------------------------------------------------------
# sliding-window mean / population std
# --------------------------------------------------------------------------

def _window_mean_std_loops(x, window):
    n = x.shape[0] - window + 1
    out = np.empty((n, 2))
    for s in range(n):
        mu = 0.0
        for t in range(window):
            mu += x[s + t]
        mu /= window
        var = 0.0
        for t in range(window):
            diff = x[s + t] - mu
            var += diff * diff
        out[s, 0] = mu
        out[s, 1] = math.sqrt(var / window)
    return out


def _window_mean_std_numpy(x, window):
    w = np.lib.stride_tricks.sliding_window_view(x, window)
    mu = w.mean(axis=1)
    sd = np.sqrt(((w - mu[:, None]) ** 2).mean(axis=1))
    return np.column_stack((mu, sd))


window_mean_std = pick(_window_mean_std_loops, _window_mean_std_numpy)


# --------------------------------------------------------------------------
# two-hidden-layer tanh MLP, single input vector
# --------------------------------------------------------------------------

def _dense_loops(W, x, b, squash):
    n_out, n_in = W.shape
    out = np.empty(n_out)
    for r in range(n_out):
        acc = b[r]
        for c in range(n_in):
            acc += W[r, c] * x[c]
        out[r] = math.tanh(acc) if squash else acc
    return out


# the loop MLP calls this helper, so it is compiled whenever numba exists
_dense = njit(_dense_loops) if NUMBA_AVAILABLE else _dense_loops


def _mlp_forward_loops(x, W1, b1, W2, b2, W3, b3):
    h1 = _dense(W1, x, b1, True)
    h2 = _dense(W2, h1, b2, True)
    return _dense(W3, h2, b3, False)


def _mlp_forward_numpy(x, W1, b1, W2, b2, W3, b3):
    h1 = np.tanh(W1 @ x + b1)
    h2 = np.tanh(W2 @ h1 + b2)
    return W3 @ h2 + b3


mlp_forward = pick(_mlp_forward_loops, _mlp_forward_numpy)


LOOP_KERNELS = {
    "transfer_time": _transfer_time_loops,
    "rbf_decision": _rbf_decision_loops,
    "rbf_gram": _rbf_gram_loops,
    "smo_one_class": _smo_one_class_loops,
    "window_mean_std": _window_mean_std_loops,
    "mlp_forward": _mlp_forward_loops,
}

NUMPY_KERNELS = {
    "transfer_time": _transfer_time_numpy,
    "rbf_decision": _rbf_decision_numpy,
    "rbf_gram": _rbf_gram_numpy,
    "smo_one_class": _smo_one_class_numpy,
    "window_mean_std": _window_mean_std_numpy,
    "mlp_forward": _mlp_forward_numpy,
}
