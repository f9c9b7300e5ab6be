"""Quadrature rules on reference simplices.

Rules are conical (tensor Gauss-Jacobi) products, exact for polynomials of
the requested total degree on the unit segment [0,1], the unit triangle
{x,y >= 0, x+y <= 1} and the unit tetrahedron {x,y,z >= 0, x+y+z <= 1}.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre


def _gauss_01(npts: int, alpha: int = 0):
    """Gauss points/weights on [0,1] for the weight (1-x)^alpha."""
    if alpha == 0:
        x, w = roots_legendre(npts)
        return (x + 1.0) / 2.0, w / 2.0
    x, w = roots_jacobi(npts, alpha, 0.0)
    return (x + 1.0) / 2.0, w * 0.5 ** (alpha + 1)


@lru_cache(maxsize=None)
def segment_rule(order: int):
    """Points/weights on [0,1], exact for degree <= order."""
    n = max(order // 2 + 1, 1)
    x, w = _gauss_01(n)
    return x.reshape(-1, 1), w


@lru_cache(maxsize=None)
def triangle_rule(order: int):
    """Conical rule on the unit triangle, exact for total degree <= order."""
    n = max((order + 2) // 2, 1)
    u, wu = _gauss_01(n, alpha=1)
    v, wv = _gauss_01(n, alpha=0)
    U, V = np.meshgrid(u, v, indexing="ij")
    WU, WV = np.meshgrid(wu, wv, indexing="ij")
    x = U.ravel()
    y = (V * (1.0 - U)).ravel()
    w = (WU * WV).ravel()
    return np.column_stack([x, y]), w


@lru_cache(maxsize=None)
def tetrahedron_rule(order: int):
    """Conical rule on the unit tetrahedron, exact for total degree <= order."""
    n = max((order + 2) // 2, 1)
    u, wu = _gauss_01(n, alpha=2)
    v, wv = _gauss_01(n, alpha=1)
    t, wt = _gauss_01(n, alpha=0)
    U, V, T = np.meshgrid(u, v, t, indexing="ij")
    WU, WV, WT = np.meshgrid(wu, wv, wt, indexing="ij")
    x = U.ravel()
    y = (V * (1.0 - U)).ravel()
    z = (T * (1.0 - U) * (1.0 - V)).ravel()
    w = (WU * WV * WT).ravel()
    return np.column_stack([x, y, z]), w


def simplex_rule(dim: int, order: int):
    """Reference rule for a dim-simplex (dim in 1..3), exact to total degree order."""
    if order < 1:
        order = 1
    if dim == 1:
        return segment_rule(order)
    if dim == 2:
        return triangle_rule(order)
    if dim == 3:
        return tetrahedron_rule(order)
    raise ValueError(f"unsupported simplex dimension {dim}")


def map_to_simplex(vertices: np.ndarray, ref_pts: np.ndarray, ref_w: np.ndarray):
    """Map a reference rule to the physical simplex given by `vertices`.

    vertices: (k+1, d) with k the simplex dimension (k <= d allowed: facets).
    Returns physical points (Q, d) and weights scaled by the simplex measure.
    """
    v0 = vertices[0]
    edges = vertices[1:] - v0  # (k, d)
    pts = v0 + ref_pts @ edges
    k, d = edges.shape
    if k == d:
        vol = abs(np.linalg.det(edges)) / _factorial(k)
    else:
        gram = edges @ edges.T
        vol = np.sqrt(max(np.linalg.det(gram), 0.0)) / _factorial(k)
    ref_total = 1.0 / _factorial(k)
    return pts, ref_w * (vol / ref_total)


def _factorial(k: int) -> int:
    out = 1
    for i in range(2, k + 1):
        out *= i
    return out
