# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled row kernels. Same contracts as ``_kernels_py``; one pass per row
instead of several numpy temporaries."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt, pow

from ..errors import DegenerateProbability, ZeroVector

cnp.import_array()

DEF PROB_FLOOR = 1e-300


def softmax_rows(z):
    cdef double[:, ::1] zv = np.ascontiguousarray(z, dtype=np.float64)
    cdef Py_ssize_t n = zv.shape[0], k = zv.shape[1], i, j
    out = np.empty((n, k), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double m, s
    for i in range(n):
        m = zv[i, 0]
        for j in range(1, k):
            if zv[i, j] > m:
                m = zv[i, j]
        s = 0.0
        for j in range(k):
            o[i, j] = exp(zv[i, j] - m)
            s += o[i, j]
        for j in range(k):
            o[i, j] = o[i, j] / s
    return out


def softmax_rows_backward(p, g):
    cdef double[:, ::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    cdef double[:, ::1] gv = np.ascontiguousarray(g, dtype=np.float64)
    cdef Py_ssize_t n = pv.shape[0], k = pv.shape[1], i, j
    out = np.empty((n, k), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double d
    for i in range(n):
        d = 0.0
        for j in range(k):
            d += gv[i, j] * pv[i, j]
        for j in range(k):
            o[i, j] = pv[i, j] * (gv[i, j] - d)
    return out


def l2_normalize_rows(x, double eps):
    cdef double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], k = xv.shape[1], i, j
    out = np.empty((n, k), dtype=np.float64)
    norms = np.empty(n, dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double[::1] nv = norms
    cdef double s
    for i in range(n):
        s = 0.0
        for j in range(k):
            s += xv[i, j] * xv[i, j]
        s = sqrt(s)
        if s <= eps:
            raise ZeroVector(f"row norm {s:.3g} <= {eps:g}")
        nv[i] = s
        for j in range(k):
            o[i, j] = xv[i, j] / s
    return out, norms


def l2_normalize_rows_backward(y, norms, g):
    cdef double[:, ::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef double[::1] nv = np.ascontiguousarray(norms, dtype=np.float64)
    cdef double[:, ::1] gv = np.ascontiguousarray(g, dtype=np.float64)
    cdef Py_ssize_t n = yv.shape[0], k = yv.shape[1], i, j
    out = np.empty((n, k), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double d
    for i in range(n):
        d = 0.0
        for j in range(k):
            d += gv[i, j] * yv[i, j]
        for j in range(k):
            o[i, j] = (gv[i, j] - yv[i, j] * d) / nv[i]
    return out


def tanh_backward(t, g):
    cdef double[:, ::1] tv = np.ascontiguousarray(t, dtype=np.float64)
    cdef double[:, ::1] gv = np.ascontiguousarray(g, dtype=np.float64)
    cdef Py_ssize_t n = tv.shape[0], k = tv.shape[1], i, j
    out = np.empty((n, k), dtype=np.float64)
    cdef double[:, ::1] o = out
    for i in range(n):
        for j in range(k):
            o[i, j] = gv[i, j] * (1.0 - tv[i, j] * tv[i, j])
    return out


def loss_rows(p, labels, int kind, double q, double alpha, double beta, double clip):
    cdef double[:, ::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    cdef cnp.intp_t[::1] lv = np.ascontiguousarray(labels, dtype=np.intp)
    cdef Py_ssize_t n = pv.shape[0], k = pv.shape[1], i, j, c
    if kind < 0 or kind > 3:
        raise ValueError(f"unknown loss kind code {kind}")
    loss = np.empty(n, dtype=np.float64)
    grad = np.zeros((n, k), dtype=np.float64)
    cdef double[::1] lo = loss
    cdef double[:, ::1] gr = grad
    cdef double pc, a, s
    for i in range(n):
        c = lv[i]
        pc = pv[i, c]
        if kind == 0:
            if pc <= PROB_FLOOR:
                raise DegenerateProbability("observed-class probability underflowed")
            lo[i] = -log(pc)
            gr[i, c] = -1.0 / pc
        elif kind == 1:
            if q < 1.0 and pc <= 0.0:
                raise DegenerateProbability("observed-class probability is zero")
            lo[i] = (1.0 - pow(pc, q)) / q
            gr[i, c] = -pow(pc, q - 1.0)
        elif kind == 2:
            if pc <= PROB_FLOOR:
                raise DegenerateProbability("observed-class probability underflowed")
            lo[i] = alpha * -log(pc) + beta * (-clip) * (1.0 - pc)
            gr[i, c] = -alpha / pc + beta * clip
        else:
            s = 0.0
            for j in range(k):
                if pv[i, j] <= PROB_FLOOR:
                    raise DegenerateProbability("posterior entry underflowed")
                s += -log(pv[i, j])
            a = -log(pc)
            lo[i] = alpha * (a / s) + beta * (-clip) * (1.0 - pc)
            for j in range(k):
                gr[i, j] = alpha * (a / (s * s)) / pv[i, j]
            gr[i, c] += -alpha / (pc * s) + beta * clip
    return loss, grad
