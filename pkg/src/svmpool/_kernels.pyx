# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the inner loops in ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, INFINITY

cnp.import_array()


def sqhinge_line_search(margins, rates, double quad, double lin, double loss_weight):
    cdef const double[::1] m = np.ascontiguousarray(margins, dtype=np.float64)
    cdef const double[::1] g = np.ascontiguousarray(rates, dtype=np.float64)
    cdef Py_ssize_t n = m.shape[0], k, i, nev = 0
    cdef double alpha = 2.0 * quad, beta = lin, slack, a, b, root, end
    cdef cnp.uint8_t[::1] active = np.zeros(n, dtype=np.uint8)
    cdef double[::1] tb = np.empty(n, dtype=np.float64)
    cdef Py_ssize_t[::1] ev = np.empty(n, dtype=np.intp)

    for k in range(n):
        slack = 1.0 - m[k]
        if slack > 0 or (slack == 0 and g[k] > 0):
            active[k] = 1
            alpha += 2.0 * loss_weight * g[k] * g[k]
            beta -= 2.0 * loss_weight * g[k] * slack
    if beta >= 0:
        return 0.0

    for k in range(n):
        if g[k] == 0:
            continue
        slack = 1.0 - m[k]
        if (active[k] and g[k] > 0) or (not active[k] and g[k] < 0):
            tb[k] = slack / g[k]
            if tb[k] > 0:
                ev[nev] = k
                nev += 1

    order = np.argsort(np.asarray(tb)[np.asarray(ev)[:nev]], kind="stable")
    cdef Py_ssize_t[::1] ordv = np.ascontiguousarray(order, dtype=np.intp)

    a = alpha
    b = beta
    for i in range(nev + 1):
        end = tb[ev[ordv[i]]] if i < nev else INFINITY
        if a > 0:
            root = -b / a
            if root <= end:
                return root
        elif b >= 0:
            return 0.0
        if i == nev:
            break
        k = ev[ordv[i]]
        slack = 1.0 - m[k]
        if active[k]:
            a -= 2.0 * loss_weight * g[k] * g[k]
            b += 2.0 * loss_weight * g[k] * slack
        else:
            a += 2.0 * loss_weight * g[k] * g[k]
            b -= 2.0 * loss_weight * g[k] * slack
    return 0.0


def gd_sqhinge(X, y, double reg_weight, double loss_weight, bint fit_bias,
               double step_scale, long iterations, double grad_tol):
    cdef const double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[::1] lab = np.ascontiguousarray(y, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], p = x.shape[1], i, j
    cdef double[::1] w = np.zeros(p, dtype=np.float64)
    cdef double[::1] gw = np.empty(p, dtype=np.float64)
    cdef double[::1] coef = np.empty(n, dtype=np.float64)
    cdef double b = 0.0, gb, s, r, step, norm2
    cdef double tau = iterations / 100.0
    cdef long it = 0
    if tau < 1.0:
        tau = 1.0
    for it in range(1, iterations + 1):
        for i in range(n):
            s = b
            for j in range(p):
                s += x[i, j] * w[j]
            r = 1.0 - lab[i] * s
            coef[i] = -2.0 * loss_weight * lab[i] * r if r > 0 else 0.0
        gb = 0.0
        for j in range(p):
            gw[j] = 2.0 * reg_weight * w[j]
        for i in range(n):
            if coef[i] != 0.0:
                gb += coef[i]
                for j in range(p):
                    gw[j] += coef[i] * x[i, j]
        if not fit_bias:
            gb = 0.0
        norm2 = gb * gb
        for j in range(p):
            norm2 += gw[j] * gw[j]
        if sqrt(norm2) <= grad_tol:
            break
        step = step_scale * (1.0 + 0.9 * tau / (tau + it - 1))
        for j in range(p):
            w[j] -= step * gw[j]
        b -= step * gb
    return np.asarray(w), b, it
