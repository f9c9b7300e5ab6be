# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled assembly kernels: basis evaluation and weighted local reductions."""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "cython"


def eval_basis(pts, powers, coeff, bint want_grad=True):
    """See unfitfem._kernels.fallback.eval_basis; identical contract."""
    cdef double[:, ::1] x = np.ascontiguousarray(pts, dtype=np.float64)
    cdef long[:, ::1] pw = np.ascontiguousarray(powers, dtype=np.int64)
    cdef double[:, ::1] C = np.ascontiguousarray(coeff, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    cdef Py_ssize_t nm = pw.shape[0], nb = C.shape[1]
    vals_np = np.zeros((n, nb))
    cdef double[:, ::1] vals = vals_np
    grads_np = np.zeros((n, nb, d)) if want_grad else None
    cdef double[:, :, ::1] grads
    if want_grad:
        grads = grads_np
    cdef Py_ssize_t i, m, k, j, b
    cdef double mono, dm, p
    cdef double[16] xp  # d <= 3 in this package
    for i in range(n):
        for m in range(nm):
            mono = 1.0
            for k in range(d):
                xp[k] = x[i, k] ** pw[m, k]
                mono *= xp[k]
            for b in range(nb):
                vals[i, b] += mono * C[m, b]
            if want_grad:
                for k in range(d):
                    p = <double> pw[m, k]
                    if p == 0.0:
                        continue
                    dm = p * x[i, k] ** (pw[m, k] - 1)
                    for j in range(d):
                        if j != k:
                            dm *= xp[j]
                    for b in range(nb):
                        grads[i, b, k] += dm * C[m, b]
    return vals_np, grads_np


def weighted_gram(B, w):
    """M[e,i,j] = sum_q w[e,q] * B[e,q,i,:].B[e,q,j,:]."""
    cdef double[:, :, :, ::1] Bv = np.ascontiguousarray(B, dtype=np.float64)
    cdef double[:, ::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t E = Bv.shape[0], Q = Bv.shape[1], n = Bv.shape[2], k = Bv.shape[3]
    out_np = np.zeros((E, n, n))
    cdef double[:, :, ::1] out = out_np
    cdef Py_ssize_t e, q, i, j, c
    cdef double acc, wq
    for e in range(E):
        for q in range(Q):
            wq = wv[e, q]
            if wq == 0.0:
                continue
            for i in range(n):
                for j in range(i, n):
                    acc = 0.0
                    for c in range(k):
                        acc += Bv[e, q, i, c] * Bv[e, q, j, c]
                    out[e, i, j] += wq * acc
    for e in range(E):
        for i in range(n):
            for j in range(i):
                out[e, i, j] = out[e, j, i]
    return out_np


def weighted_gram_pair(A, B, w):
    """M[e,i,j] = sum_q w[e,q] * A[e,q,i,:].B[e,q,j,:]."""
    cdef double[:, :, :, ::1] Av = np.ascontiguousarray(A, dtype=np.float64)
    cdef double[:, :, :, ::1] Bv = np.ascontiguousarray(B, dtype=np.float64)
    cdef double[:, ::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t E = Av.shape[0], Q = Av.shape[1], na = Av.shape[2], k = Av.shape[3]
    cdef Py_ssize_t nb = Bv.shape[2]
    out_np = np.zeros((E, na, nb))
    cdef double[:, :, ::1] out = out_np
    cdef Py_ssize_t e, q, i, j, c
    cdef double acc, wq
    for e in range(E):
        for q in range(Q):
            wq = wv[e, q]
            if wq == 0.0:
                continue
            for i in range(na):
                for j in range(nb):
                    acc = 0.0
                    for c in range(k):
                        acc += Av[e, q, i, c] * Bv[e, q, j, c]
                    out[e, i, j] += wq * acc
    return out_np


def weighted_vec(B, f, w):
    """v[e,i] = sum_q w[e,q] * f[e,q,:].B[e,q,i,:]."""
    cdef double[:, :, :, ::1] Bv = np.ascontiguousarray(B, dtype=np.float64)
    cdef double[:, :, ::1] fv = np.ascontiguousarray(f, dtype=np.float64)
    cdef double[:, ::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t E = Bv.shape[0], Q = Bv.shape[1], n = Bv.shape[2], k = Bv.shape[3]
    out_np = np.zeros((E, n))
    cdef double[:, ::1] out = out_np
    cdef Py_ssize_t e, q, i, c
    cdef double acc, wq
    for e in range(E):
        for q in range(Q):
            wq = wv[e, q]
            for i in range(n):
                acc = 0.0
                for c in range(k):
                    acc += fv[e, q, c] * Bv[e, q, i, c]
                out[e, i] += wq * acc
    return out_np
