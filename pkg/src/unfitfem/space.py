"""Continuous Lagrange spaces (degree 1..3) on active element subsets.

Basis evaluation goes through the affine reference map without clamping, so
an element's polynomial can be evaluated anywhere in space (canonical
extension beyond the element).
"""

from __future__ import annotations

from functools import lru_cache
from itertools import product

import numpy as np

from . import _kernels, geometry

COINCIDENCE_TOL = 1e-12


class SpaceError(ValueError):
    pass


@lru_cache(maxsize=None)
def monomial_powers(dim: int, degree: int) -> np.ndarray:
    """All exponent tuples with total degree <= degree, fixed order."""
    powers = [p for p in product(range(degree + 1), repeat=dim) if sum(p) <= degree]
    powers.sort()
    return np.array(powers, dtype=np.int64)


@lru_cache(maxsize=None)
def reference_nodes(dim: int, degree: int):
    """Lagrange lattice nodes on the reference simplex.

    Returns (nodes (nb, dim), multi-indices (nb, dim+1) with the barycentric
    lattice index of each node; index j counts steps toward vertex j).
    """
    idx = []
    for k in product(range(degree + 1), repeat=dim):
        if sum(k) <= degree:
            k0 = degree - sum(k)
            idx.append((k0,) + k)
    idx.sort()
    multi = np.array(idx, dtype=np.int64)
    nodes = multi[:, 1:] / float(degree)
    return nodes, multi


@lru_cache(maxsize=None)
def basis_coefficients(dim: int, degree: int) -> np.ndarray:
    """Monomial coefficients C (nm, nb): column k holds basis function k."""
    nodes, _ = reference_nodes(dim, degree)
    powers = monomial_powers(dim, degree)
    V = np.ones((len(nodes), len(powers)))
    for k in range(dim):
        V *= nodes[:, k, None] ** powers[None, :, k]
    return np.linalg.inv(V)


def eval_reference_basis(dim, degree, ref_pts, want_grad=True):
    """Basis values/gradients at reference points (outside the simplex allowed)."""
    return _kernels.eval_basis(
        np.atleast_2d(ref_pts), monomial_powers(dim, degree), basis_coefficients(dim, degree), want_grad
    )


class FeSpace:
    """Degree-m Lagrange space on an active subset of mesh elements.

    DOF numbering is deterministic: active elements in ascending id order,
    local lattice nodes in a fixed order, first occurrence wins. Dirichlet
    constraints (outer boundary) are tracked as a mask; values are imposed
    by symmetric elimination at the system level, not by removal.
    """

    def __init__(self, mesh, active, degree, dirichlet=False):
        if not 1 <= degree <= 3:
            raise SpaceError("polynomial degree must be 1, 2 or 3")
        active = np.unique(np.asarray(active, dtype=np.int64))
        if len(active) == 0:
            raise SpaceError("active element set is empty")
        self.mesh = mesh
        self.degree = int(degree)
        self.active = active
        self.dirichlet = bool(dirichlet)
        self._ref_nodes, self._multi = reference_nodes(mesh.dim, degree)
        self.nloc = len(self._ref_nodes)
        self._number_dofs()
        self._mark_dirichlet()

    def _number_dofs(self):
        mesh, deg = self.mesh, self.degree
        key_to_id: dict = {}
        elem_dofs = np.empty((len(self.active), self.nloc), dtype=np.int64)
        points = []
        self.active_row = -np.ones(len(mesh.elements), dtype=np.int64)
        for row, K in enumerate(self.active):
            self.active_row[K] = row
            gv = mesh.elements[K]
            coords = mesh.vertices[gv]
            for j, multi in enumerate(self._multi):
                support = np.flatnonzero(multi)
                if len(support) == 1:
                    key = ("v", int(gv[support[0]]))
                elif len(support) == 2:
                    a, b = support
                    ga, gb = int(gv[a]), int(gv[b])
                    steps = int(multi[b]) if ga < gb else int(multi[a])
                    key = ("e", min(ga, gb), max(ga, gb), steps)
                else:
                    gs = [int(gv[s]) for s in support]
                    order = np.argsort(gs)
                    key = (
                        "f",
                        tuple(sorted(gs)),
                        tuple(int(multi[support[o]]) for o in order),
                    )
                dof = key_to_id.get(key)
                if dof is None:
                    dof = len(key_to_id)
                    key_to_id[key] = dof
                    lam = multi / float(deg)
                    points.append(lam @ coords)
                elem_dofs[row, j] = dof
        self.ndof = len(key_to_id)
        self.elem_dofs = elem_dofs
        self.dof_points = np.array(points)

    def _mark_dirichlet(self):
        self.dirichlet_mask = np.zeros(self.ndof, dtype=bool)
        if not self.dirichlet:
            return
        lo, hi = self.mesh.box
        P = self.dof_points
        on = np.zeros(self.ndof, dtype=bool)
        for k in range(self.mesh.dim):
            tol = COINCIDENCE_TOL * max(abs(lo[k]), abs(hi[k]), 1.0)
            on |= np.abs(P[:, k] - lo[k]) < tol
            on |= np.abs(P[:, k] - hi[k]) < tol
        self.dirichlet_mask = on

    # -- evaluation ----------------------------------------------------------

    def reference_coords(self, K, pts):
        coords = self.mesh.element_coords(K)
        T = (coords[1:] - coords[0]).T
        return np.linalg.solve(T, (np.atleast_2d(pts) - coords[0]).T).T

    def eval_basis(self, K, pts, want_grad=True):
        """Values (Q, nloc) and physical gradients (Q, nloc, d) of element K's
        shape functions at arbitrary physical points (extension permitted)."""
        if self.active_row[K] < 0:
            raise SpaceError(f"element {K} is not active in this space")
        coords = self.mesh.element_coords(K)
        T = (coords[1:] - coords[0]).T
        ref = np.linalg.solve(T, (np.atleast_2d(pts) - coords[0]).T).T
        vals, grads = eval_reference_basis(self.mesh.dim, self.degree, ref, want_grad)
        if want_grad:
            Tinv = np.linalg.inv(T)
            grads = grads @ Tinv  # d phi = Tinv^T @ dref, row-vector convention
        return vals, grads

    def interpolate(self, f) -> np.ndarray:
        """Nodal interpolant coefficients of a callable f((N, d)) -> (N,)."""
        return np.asarray(f(self.dof_points), dtype=np.float64).ravel()


def build_space(mesh, active, degree, dirichlet=False) -> FeSpace:
    return FeSpace(mesh, active, degree, dirichlet)


class FieldPair:
    """Two-component discrete field (inner space, outer space)."""

    def __init__(self, space0: FeSpace, space1: FeSpace, c0=None, c1=None):
        self.space0 = space0
        self.space1 = space1
        self.c0 = np.zeros(space0.ndof) if c0 is None else np.asarray(c0, dtype=np.float64)
        self.c1 = np.zeros(space1.ndof) if c1 is None else np.asarray(c1, dtype=np.float64)
        if len(self.c0) != space0.ndof or len(self.c1) != space1.ndof:
            raise SpaceError("coefficient vector lengths do not match the spaces")

    def component(self, side):
        return (self.space0, self.c0) if side == 0 else (self.space1, self.c1)

    def eval_element(self, side, K, pts, want_grad=True):
        space, c = self.component(side)
        vals, grads = space.eval_basis(K, pts, want_grad)
        dofs = space.elem_dofs[space.active_row[K]]
        u = vals @ c[dofs]
        gu = np.einsum("qnd,n->qd", grads, c[dofs]) if want_grad else None
        return u, gu


def evaluate_field(pair: FieldPair, geom, x, want_grad=False):
    """Field value (and gradient) at a point: picks the component by side,
    locates the containing element, evaluates. The point must not lie on
    the interface (quadrature points never do, by the perturbation rule)."""
    mesh = pair.space0.mesh
    side = geometry.side_of(geom, x)
    if side == geometry.ON_INTERFACE:
        sides = geometry.definite_sides(geom, np.atleast_2d(x), mesh.h)
        side = int(sides[0])
    K = mesh.locate_point(x)
    if K < 0:
        raise SpaceError(f"point {x} is outside the mesh")
    space, _ = pair.component(side)
    if space.active_row[K] < 0:
        raise SpaceError(
            f"element {K} containing {x} is not active on side {side}: classification/point mismatch"
        )
    u, gu = pair.eval_element(side, K, np.atleast_2d(x), want_grad)
    if want_grad:
        return float(u[0]), gu[0]
    return float(u[0])
