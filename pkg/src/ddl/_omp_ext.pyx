# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Batch-OMP kernel.

Mirrors ``ddl._omp_py`` exactly in algorithm; see that module for the
contract of ``omp_gram`` and ``omp_batch``.  The sample loop in
``omp_batch`` runs without the GIL so callers can split a batch across
threads.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, sqrt

cnp.import_array()

cdef double SINGULAR = 1e-12


cdef Py_ssize_t _core(const double[:, ::1] gram, const double[:, ::1] lowrank,
                      double scale, const double[::1] inv_norms,
                      const double[::1] corr, double bnorm2, Py_ssize_t T,
                      double tol2, double[::1] alpha, unsigned char[::1] selected,
                      double[:, ::1] chol, double[:, ::1] gsel, double[::1] w,
                      double[::1] c, double[::1] x, Py_ssize_t[::1] support) noexcept nogil:
    cdef Py_ssize_t K = corr.shape[0]
    cdef Py_ssize_t C = lowrank.shape[1]
    cdef Py_ssize_t i, j, m, n = 0, k
    cdef double best, a, v, s, err2 = bnorm2, ik

    for i in range(K):
        alpha[i] = corr[i]
        selected[i] = 0

    while n < T:
        if err2 <= tol2:
            break
        best = 0.0
        k = -1
        for i in range(K):
            if not selected[i]:
                a = fabs(alpha[i])
                if a > best:
                    best = a
                    k = i
        if k < 0:
            break

        # Gram column of the chosen atom, stored as row n of gsel
        ik = inv_norms[k]
        for i in range(K):
            s = 0.0
            for m in range(C):
                s = s + lowrank[i, m] * lowrank[k, m]
            gsel[n, i] = inv_norms[i] * ik * (scale * gram[k, i] + s)

        v = gsel[n, k]
        for j in range(n):
            s = gsel[n, support[j]]
            for m in range(j):
                s = s - chol[j, m] * w[m]
            w[j] = s / chol[j, j]
            v = v - w[j] * w[j]
        if v <= SINGULAR:
            v = v + SINGULAR
            if v <= SINGULAR:
                break
        for j in range(n):
            chol[n, j] = w[j]
        chol[n, n] = sqrt(v)
        support[n] = k
        selected[k] = 1
        n += 1

        # solve chol chol^T x = c on the support
        for j in range(n):
            c[j] = corr[support[j]]
            s = c[j]
            for m in range(j):
                s = s - chol[j, m] * w[m]
            w[j] = s / chol[j, j]
        for j in range(n - 1, -1, -1):
            s = w[j]
            for m in range(j + 1, n):
                s = s - chol[m, j] * x[m]
            x[j] = s / chol[j, j]

        for i in range(K):
            s = corr[i]
            for j in range(n):
                s = s - gsel[j, i] * x[j]
            alpha[i] = s
        s = 0.0
        for j in range(n):
            s = s + x[j] * c[j]
        err2 = bnorm2 - s
        if err2 < 0.0:
            err2 = 0.0
    return n


def omp_gram(gram, lowrank, double scale, inv_norms, corr, double bnorm2,
             Py_ssize_t T, double tol2):
    cdef const double[:, ::1] g = np.ascontiguousarray(gram, dtype=np.float64)
    cdef const double[:, ::1] lr = np.ascontiguousarray(lowrank, dtype=np.float64)
    cdef const double[::1] inv = np.ascontiguousarray(inv_norms, dtype=np.float64)
    cdef const double[::1] cr = np.ascontiguousarray(corr, dtype=np.float64)
    cdef Py_ssize_t K = cr.shape[0]
    cdef Py_ssize_t TT = max(T, 1)
    cdef double[::1] alpha = np.empty(K)
    cdef unsigned char[::1] selected = np.empty(K, dtype=np.uint8)
    cdef double[:, ::1] chol = np.zeros((TT, TT))
    cdef double[:, ::1] gsel = np.zeros((TT, K))
    cdef double[::1] w = np.empty(TT)
    cdef double[::1] c = np.empty(TT)
    x_a = np.empty(TT)
    support_a = np.empty(TT, dtype=np.intp)
    cdef double[::1] x = x_a
    cdef Py_ssize_t[::1] support = support_a
    cdef Py_ssize_t n
    with nogil:
        n = _core(g, lr, scale, inv, cr, bnorm2, T, tol2, alpha, selected,
                  chol, gsel, w, c, x, support)
    return support_a[:n].copy(), x_a[:n].copy()


def omp_batch(D, gram, Y, Py_ssize_t T, tol):
    cdef const double[:, ::1] Dm = np.ascontiguousarray(D, dtype=np.float64)
    cdef const double[:, ::1] g = np.ascontiguousarray(gram, dtype=np.float64)
    cdef const double[:, ::1] Ym = np.ascontiguousarray(Y, dtype=np.float64)
    cdef const double[::1] tl = np.ascontiguousarray(tol, dtype=np.float64)
    cdef Py_ssize_t d = Dm.shape[0], K = Dm.shape[1], N = Ym.shape[1]
    cdef Py_ssize_t TT = max(T, 1)
    cdef const double[:, ::1] lr = np.zeros((K, 0))
    cdef const double[::1] ones = np.ones(K)
    cdef double[::1] corr = np.empty(K)
    cdef double[::1] alpha = np.empty(K)
    cdef unsigned char[::1] selected = np.empty(K, dtype=np.uint8)
    cdef double[:, ::1] chol = np.zeros((TT, TT))
    cdef double[:, ::1] gsel = np.zeros((TT, K))
    cdef double[::1] w = np.empty(TT)
    cdef double[::1] c = np.empty(TT)
    cdef double[::1] x = np.empty(TT)
    cdef Py_ssize_t[::1] support = np.empty(TT, dtype=np.intp)
    indptr_a = np.zeros(N + 1, dtype=np.intp)
    indices_a = np.empty(N * TT, dtype=np.intp)
    values_a = np.empty(N * TT)
    cdef Py_ssize_t[::1] indptr = indptr_a
    cdef Py_ssize_t[::1] indices = indices_a
    cdef double[::1] values = values_a
    cdef Py_ssize_t i, j, m, r, n, pos = 0, ti
    cdef double s, bn, tv

    with nogil:
        for i in range(N):
            bn = 0.0
            for r in range(d):
                bn = bn + Ym[r, i] * Ym[r, i]
            for j in range(K):
                s = 0.0
                for r in range(d):
                    s = s + Dm[r, j] * Ym[r, i]
                corr[j] = s
            n = _core(g, lr, 1.0, ones, corr, bn, T, tl[i] * tl[i], alpha,
                      selected, chol, gsel, w, c, x, support)
            # insertion sort of the support by atom index
            for j in range(1, n):
                ti = support[j]
                tv = x[j]
                m = j - 1
                while m >= 0 and support[m] > ti:
                    support[m + 1] = support[m]
                    x[m + 1] = x[m]
                    m -= 1
                support[m + 1] = ti
                x[m + 1] = tv
            for j in range(n):
                if x[j] != 0.0:
                    indices[pos] = support[j]
                    values[pos] = x[j]
                    pos += 1
            indptr[i + 1] = pos
    return indptr_a, indices_a[:pos].copy(), values_a[:pos].copy()
