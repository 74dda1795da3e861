"""Pure-Python/numpy reference versions of the hot loops.

Every function here has a twin in ``_kernels.pyx`` with the same signature and
the same floating-point evaluation order, so the two backends agree bitwise.
"""
import numpy as np


def max_drawdown(values):
    """Most negative ``V_t / max_{s<=t} V_s - 1``; 0.0 for monotone curves."""
    values = np.asarray(values, dtype=np.float64)
    peak = values[0]
    worst = 0.0
    for v in values:
        if v > peak:
            peak = v
        dd = v / peak - 1.0
        if dd < worst:
            worst = dd
    return worst


def ewma(x, alpha):
    """Column-wise exponential moving average seeded with the first row."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    out[0] = x[0]
    for t in range(1, x.shape[0]):
        out[t] = alpha * x[t] + (1.0 - alpha) * out[t - 1]
    return out


def wilder_smooth(x, n, start):
    """Wilder's running average over columns of ``x``.

    The first defined value sits at row ``start + n - 1`` and is the plain mean
    of rows ``start .. start + n - 1``; after that
    ``s_t = (s_{t-1} * (n - 1) + x_t) / n``. Undefined rows are NaN.
    """
    x = np.asarray(x, dtype=np.float64)
    rows, cols = x.shape
    out = np.full((rows, cols), np.nan)
    first = start + n - 1
    if first >= rows:
        return out
    for j in range(cols):
        acc = 0.0
        for t in range(start, first + 1):
            acc += x[t, j]
        s = acc / n
        out[first, j] = s
        for t in range(first + 1, rows):
            s = (s * (n - 1) + x[t, j]) / n
            out[t, j] = s
    return out


def gae(rewards, values, dones, last_value, gamma, lam):
    """Generalized advantage estimates and returns-to-go.

    ``dones[t]`` marks that the episode ended after step ``t``; the value after
    the final step is ``last_value`` (ignored when that step is terminal).
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    n = rewards.shape[0]
    adv = np.zeros(n)
    next_adv = 0.0
    next_value = last_value
    for t in range(n - 1, -1, -1):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * live - values[t]
        next_adv = delta + gamma * lam * live * next_adv
        adv[t] = next_adv
        next_value = values[t]
    return adv, adv + values


def simplex_projection(v):
    """Euclidean projection of ``v`` onto the probability simplex."""
    v = np.asarray(v, dtype=np.float64)
    n = v.shape[0]
    u = np.sort(v)[::-1]
    acc = 0.0
    tau = 0.0
    for k in range(n):
        acc += u[k]
        cand = (acc - 1.0) / (k + 1)
        if u[k] - cand > 0.0:
            tau = cand
    return np.maximum(v - tau, 0.0)
