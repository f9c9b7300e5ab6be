"""Pure-NumPy implementations of the hot assembly kernels.

Semantics match ``_core`` (the Cython extension) exactly; this module is the
import-time fallback when the extension is unavailable.
"""

from __future__ import annotations

import numpy as np

BACKEND = "numpy"


def eval_basis(pts, powers, coeff, want_grad=True):
    """Evaluate a polynomial basis given by monomial coefficients.

    pts: (N, d) evaluation points (reference coordinates, may lie outside
    the reference simplex). powers: (nm, d) integer monomial exponents.
    coeff: (nm, nb) column k holds the monomial coefficients of basis
    function k. Returns (vals (N, nb), grads (N, nb, d) or None).
    """
    pts = np.ascontiguousarray(pts, dtype=np.float64)
    n, d = pts.shape
    nm = powers.shape[0]
    # mono[n, m] = prod_k pts[n, k] ** powers[m, k]
    mono = np.ones((n, nm))
    for k in range(d):
        mono *= pts[:, k, None] ** powers[None, :, k]
    vals = mono @ coeff
    if not want_grad:
        return vals, None
    grads = np.empty((n, coeff.shape[1], d))
    for k in range(d):
        dm = np.ones((n, nm))
        for j in range(d):
            p = powers[:, j].astype(np.float64)
            if j == k:
                dm *= np.where(p > 0, p, 0.0) * pts[:, j, None] ** np.maximum(powers[None, :, j] - 1, 0)
                dm[:, powers[:, j] == 0] = 0.0
            else:
                dm *= pts[:, j, None] ** powers[None, :, j]
        grads[:, :, k] = dm @ coeff
    return vals, grads


def weighted_gram(B, w):
    """M[e,i,j] = sum_q w[e,q] * B[e,q,i,:] . B[e,q,j,:] for B of shape (E,Q,n,k)."""
    Bw = B * w[:, :, None, None]
    E, Q, n, k = B.shape
    a = np.ascontiguousarray(B.transpose(0, 2, 1, 3)).reshape(E, n, Q * k)
    b = np.ascontiguousarray(Bw.transpose(0, 2, 1, 3)).reshape(E, n, Q * k)
    return a @ b.transpose(0, 2, 1)


def weighted_gram_pair(A, B, w):
    """M[e,i,j] = sum_q w[e,q] * A[e,q,i,:] . B[e,q,j,:]; A (E,Q,na,k), B (E,Q,nb,k)."""
    Bw = B * w[:, :, None, None]
    E, Q, na, k = A.shape
    nb = B.shape[2]
    a = np.ascontiguousarray(A.transpose(0, 2, 1, 3)).reshape(E, na, Q * k)
    b = np.ascontiguousarray(Bw.transpose(0, 2, 1, 3)).reshape(E, nb, Q * k)
    return a @ b.transpose(0, 2, 1)


def weighted_vec(B, f, w):
    """v[e,i] = sum_q w[e,q] * f[e,q,:] . B[e,q,i,:]; B (E,Q,n,k), f (E,Q,k)."""
    return np.einsum("eqik,eqk,eq->ei", B, f, w, optimize=True)
