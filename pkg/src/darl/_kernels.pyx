# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot loops in ``_pykernels``."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def max_drawdown(values):
    cdef const double[::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef Py_ssize_t i, n = v.shape[0]
    cdef double peak = v[0]
    cdef double worst = 0.0
    cdef double dd
    for i in range(n):
        if v[i] > peak:
            peak = v[i]
        dd = v[i] / peak - 1.0
        if dd < worst:
            worst = dd
    return worst


def ewma(x, double alpha):
    arr = np.ascontiguousarray(x, dtype=np.float64)
    squeeze = arr.ndim == 1
    if squeeze:
        arr = arr[:, None]
    cdef const double[:, ::1] a = arr
    out_arr = np.empty((arr.shape[0], arr.shape[1]))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t t, j, rows = a.shape[0], cols = a.shape[1]
    for j in range(cols):
        out[0, j] = a[0, j]
    for t in range(1, rows):
        for j in range(cols):
            out[t, j] = alpha * a[t, j] + (1.0 - alpha) * out[t - 1, j]
    return out_arr[:, 0] if squeeze else out_arr


def wilder_smooth(x, Py_ssize_t n, Py_ssize_t start):
    cdef const double[:, ::1] a = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t rows = a.shape[0], cols = a.shape[1]
    out_arr = np.full((rows, cols), np.nan)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t first = start + n - 1
    cdef Py_ssize_t t, j
    cdef double acc, s
    if first >= rows:
        return out_arr
    for j in range(cols):
        acc = 0.0
        for t in range(start, first + 1):
            acc += a[t, j]
        s = acc / n
        out[first, j] = s
        for t in range(first + 1, rows):
            s = (s * (n - 1) + a[t, j]) / n
            out[t, j] = s
    return out_arr


def gae(rewards, values, dones, double last_value, double gamma, double lam):
    cdef const double[::1] r = np.ascontiguousarray(rewards, dtype=np.float64)
    cdef const double[::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef const double[::1] d = np.ascontiguousarray(dones, dtype=np.float64)
    cdef Py_ssize_t t, n = r.shape[0]
    adv_arr = np.zeros(n)
    cdef double[::1] adv = adv_arr
    cdef double next_adv = 0.0
    cdef double next_value = last_value
    cdef double live, delta
    for t in range(n - 1, -1, -1):
        live = 1.0 - d[t]
        delta = r[t] + gamma * next_value * live - v[t]
        next_adv = delta + gamma * lam * live * next_adv
        adv[t] = next_adv
        next_value = v[t]
    return adv_arr, adv_arr + np.asarray(v)


def simplex_projection(v):
    arr = np.asarray(v, dtype=np.float64)
    cdef const double[::1] u = np.ascontiguousarray(np.sort(arr)[::-1])
    cdef Py_ssize_t k, n = u.shape[0]
    cdef double acc = 0.0
    cdef double tau = 0.0
    cdef double cand
    for k in range(n):
        acc += u[k]
        cand = (acc - 1.0) / (k + 1)
        if u[k] - cand > 0.0:
            tau = cand
    return np.maximum(arr - tau, 0.0)
