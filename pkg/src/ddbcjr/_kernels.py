"""Compiled inner loops for the forward-backward recursions and Viterbi decoding."""

import numba
import numpy as np


@numba.njit(cache=True)
def forward(A, pi, B):
    """Normalized forward pass.

    Returns ``alpha`` (rows sum to 1) and the per-step scale factors ``c``.
    A zero scale factor marks the first step where every path vanished; the
    remaining rows are left at zero.
    """
    T, Q = B.shape
    alpha = np.zeros((T, Q))
    c = np.zeros(T)
    s = 0.0
    for j in range(Q):
        alpha[0, j] = pi[j] * B[0, j]
        s += alpha[0, j]
    c[0] = s
    if s <= 0.0 or not np.isfinite(s):
        return alpha, c
    for j in range(Q):
        alpha[0, j] /= s
    for t in range(1, T):
        s = 0.0
        for j in range(Q):
            b = B[t, j]
            if b == 0.0:
                continue
            acc = 0.0
            for i in range(Q):
                a = A[i, j]
                if a != 0.0:
                    acc += alpha[t - 1, i] * a
            acc *= b
            alpha[t, j] = acc
            s += acc
        c[t] = s
        if s <= 0.0 or not np.isfinite(s):
            return alpha, c
        for j in range(Q):
            alpha[t, j] /= s
    return alpha, c


@numba.njit(cache=True)
def backward(A, B):
    """Backward pass normalized by its own per-step sums ``d``.

    ``beta[T-1] = 1``; ``beta[t]`` is rescaled to sum to 1 for ``t < T-1``
    and ``d[t]`` holds the divisor (``d[T-1] = 1``).
    """
    T, Q = B.shape
    beta = np.zeros((T, Q))
    d = np.ones(T)
    for j in range(Q):
        beta[T - 1, j] = 1.0
    tmp = np.zeros(Q)
    for t in range(T - 2, -1, -1):
        for j in range(Q):
            tmp[j] = B[t + 1, j] * beta[t + 1, j]
        s = 0.0
        for i in range(Q):
            acc = 0.0
            for j in range(Q):
                a = A[i, j]
                if a != 0.0:
                    acc += a * tmp[j]
            beta[t, i] = acc
            s += acc
        d[t] = s
        if s > 0.0:
            for i in range(Q):
                beta[t, i] /= s
    return beta, d


@numba.njit(cache=True)
def pair_posteriors(A, B, alpha, beta):
    """``xi[t, i, j] = p(s_{t-1}=i, s_t=j | y)`` for ``t >= 1`` (``xi[0]`` is zero)."""
    T, Q = B.shape
    xi = np.zeros((T, Q, Q))
    for t in range(1, T):
        s = 0.0
        for i in range(Q):
            ai = alpha[t - 1, i]
            if ai == 0.0:
                continue
            for j in range(Q):
                v = ai * A[i, j] * B[t, j] * beta[t, j]
                xi[t, i, j] = v
                s += v
        if s > 0.0:
            for i in range(Q):
                for j in range(Q):
                    xi[t, i, j] /= s
    return xi


@numba.njit(cache=True)
def expected_transitions(A, B, alpha, beta):
    """``sum_t xi[t]`` without materializing the T x Q x Q array."""
    T, Q = B.shape
    total = np.zeros((Q, Q))
    step = np.zeros((Q, Q))
    for t in range(1, T):
        s = 0.0
        for i in range(Q):
            ai = alpha[t - 1, i]
            for j in range(Q):
                v = ai * A[i, j] * B[t, j] * beta[t, j]
                step[i, j] = v
                s += v
        if s > 0.0:
            for i in range(Q):
                for j in range(Q):
                    total[i, j] += step[i, j] / s
    return total


@numba.njit(cache=True)
def viterbi_decode(metrics, next_state, outputs, n_steps):
    """Maximum-metric path through a terminated feed-forward code trellis.

    ``metrics[k, o]`` is the branch reward at step ``k`` for output label
    ``o``; ``next_state[s, b]`` and ``outputs[s, b]`` describe the code.
    The path starts and ends in state 0. Returns the input bit sequence.
    """
    S = next_state.shape[0]
    neg = -np.inf
    pm = np.full(S, neg)
    pm[0] = 0.0
    new = np.empty(S)
    prev_state = np.zeros((n_steps, S), dtype=np.int32)
    prev_bit = np.zeros((n_steps, S), dtype=np.uint8)
    for k in range(n_steps):
        for s in range(S):
            new[s] = neg
        for s in range(S):
            m = pm[s]
            if m == neg:
                continue
            for b in range(2):
                ns = next_state[s, b]
                v = m + metrics[k, outputs[s, b]]
                if v > new[ns]:
                    new[ns] = v
                    prev_state[k, ns] = s
                    prev_bit[k, ns] = b
        for s in range(S):
            pm[s] = new[s]
    bits = np.zeros(n_steps, dtype=np.uint8)
    s = 0
    for k in range(n_steps - 1, -1, -1):
        bits[k] = prev_bit[k, s]
        s = prev_state[k, s]
    return bits


@numba.njit(cache=True)
def em_statistics(A, pi, means, variances, y, var_floor):
    """Fused E-step for Gaussian-emission HMMs.

    Returns ``(loglik, gamma, xi_sum, dead_step)``; ``dead_step`` is -1 unless
    every forward path vanished at that step.
    """
    T = y.shape[0]
    Q = A.shape[0]
    AT = np.ascontiguousarray(A.T)
    inv_var = np.empty(Q)
    log_norm = np.empty(Q)
    for j in range(Q):
        v = max(variances[j], var_floor)
        inv_var[j] = 1.0 / v
        log_norm[j] = -0.5 * (np.log(2.0 * np.pi) + np.log(v))
    B = np.empty((T, Q))
    loglik = 0.0
    for t in range(T):
        m = -np.inf
        for j in range(Q):
            r = y[t] - means[j]
            v = log_norm[j] - 0.5 * r * r * inv_var[j]
            B[t, j] = v
            if v > m:
                m = v
        loglik += m
        for j in range(Q):
            B[t, j] = np.exp(B[t, j] - m)

    alpha = np.empty((T, Q))
    s = 0.0
    for j in range(Q):
        alpha[0, j] = pi[j] * B[0, j]
        s += alpha[0, j]
    if not s > 0.0:
        return loglik, alpha, np.zeros((Q, Q)), 0
    loglik += np.log(s)
    for j in range(Q):
        alpha[0, j] /= s
    for t in range(1, T):
        s = 0.0
        for j in range(Q):
            acc = 0.0
            for i in range(Q):
                acc += alpha[t - 1, i] * AT[j, i]
            acc *= B[t, j]
            alpha[t, j] = acc
            s += acc
        if not s > 0.0:
            return loglik, alpha, np.zeros((Q, Q)), t
        loglik += np.log(s)
        inv = 1.0 / s
        for j in range(Q):
            alpha[t, j] *= inv

    gamma = np.empty((T, Q))
    xi_sum = np.zeros((Q, Q))
    beta = np.ones(Q)
    tmp = np.empty(Q)
    nb = np.empty(Q)
    step = np.empty((Q, Q))
    for t in range(T - 1, -1, -1):
        g = 0.0
        for j in range(Q):
            gamma[t, j] = alpha[t, j] * beta[j]
            g += gamma[t, j]
        for j in range(Q):
            gamma[t, j] /= g
        if t == 0:
            break
        for j in range(Q):
            tmp[j] = B[t, j] * beta[j]
        s = 0.0
        for i in range(Q):
            ai = alpha[t - 1, i]
            acc = 0.0
            for j in range(Q):
                v = A[i, j] * tmp[j]
                acc += v
                step[i, j] = ai * v
                s += ai * v
            nb[i] = acc
        if s > 0.0:
            inv = 1.0 / s
            for i in range(Q):
                for j in range(Q):
                    xi_sum[i, j] += step[i, j] * inv
        bs = 0.0
        for i in range(Q):
            bs += nb[i]
        if not bs > 0.0:
            return loglik, gamma, xi_sum, t
        for i in range(Q):
            beta[i] = nb[i] / bs
    return loglik, gamma, xi_sum, -1


@numba.njit(cache=True)
def weighted_moments(gamma, y, old_means, old_vars, min_occ):
    """Responsibility-weighted means and variances; starved states keep old values."""
    T, Q = gamma.shape
    occ = np.zeros(Q)
    s1 = np.zeros(Q)
    for t in range(T):
        for j in range(Q):
            occ[j] += gamma[t, j]
            s1[j] += gamma[t, j] * y[t]
    means = old_means.copy()
    for j in range(Q):
        if occ[j] >= min_occ:
            means[j] = s1[j] / occ[j]
    s2 = np.zeros(Q)
    for t in range(T):
        for j in range(Q):
            r = y[t] - means[j]
            s2[j] += gamma[t, j] * r * r
    var = old_vars.copy()
    for j in range(Q):
        if occ[j] >= min_occ:
            var[j] = s2[j] / occ[j]
    return means, var, occ
