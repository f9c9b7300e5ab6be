"""Structured simplicial meshes of axis-aligned boxes in 2D/3D.

The generator splits every grid square into 2 triangles (fixed diagonal from
the lower-left to the upper-right corner) and every grid cube into 6
tetrahedra sharing the main diagonal (Kuhn split). Meshes are immutable
after construction; all queries are read-only.
"""

from __future__ import annotations

from itertools import permutations

import numpy as np

COINCIDENCE_TOL = 1e-12  # relative to the local element size


class MeshError(ValueError):
    pass


class Mesh:
    """Simplicial mesh with adjacency, per-element geometry and point location.

    Attributes
    ----------
    dim : 2 or 3
    vertices : (V, dim) float array
    elements : (E, dim+1) int array, positively oriented
    h_elem, rho_elem : per-element diameter and inradius
    barycenters : (E, dim)
    h, rho : max diameter / min inradius; quasi_uniformity = h / rho
    boundary_vertex : (V,) bool, vertices on the box boundary
    element_touches_boundary : (E,) bool
    facet_neighbors : (E, dim+1) neighbor element across local facet f
        (the facet opposite local vertex f), -1 on the boundary
    """

    def __init__(self, dim, vertices, elements, box, cells_per_axis):
        self.dim = int(dim)
        self.vertices = np.asarray(vertices, dtype=np.float64)
        self.elements = np.asarray(elements, dtype=np.int64)
        self.box = np.asarray(box, dtype=np.float64)  # (2, dim): lo, hi
        self.n = int(cells_per_axis)
        self._orient()
        self._geometry()
        self._adjacency()

    # -- construction helpers ------------------------------------------------

    def _orient(self):
        coords = self.vertices[self.elements]
        edges = coords[:, 1:, :] - coords[:, :1, :]
        det = np.linalg.det(edges)
        flip = det < 0
        if np.any(flip):
            self.elements[flip, -2], self.elements[flip, -1] = (
                self.elements[flip, -1].copy(),
                self.elements[flip, -2].copy(),
            )
            coords = self.vertices[self.elements]
            edges = coords[:, 1:, :] - coords[:, :1, :]
            det = np.linalg.det(edges)
        if np.any(det <= 0):
            raise MeshError("degenerate element with non-positive volume")
        self.volumes = det / _factorial(self.dim)

    def _geometry(self):
        coords = self.vertices[self.elements]
        nv = self.dim + 1
        diam = np.zeros(len(self.elements))
        for a in range(nv):
            for b in range(a + 1, nv):
                diam = np.maximum(diam, np.linalg.norm(coords[:, a] - coords[:, b], axis=1))
        self.h_elem = diam
        self.barycenters = coords.mean(axis=1)
        # inradius = dim * volume / (sum of facet measures)
        surf = np.zeros(len(self.elements))
        for f in range(nv):
            fv = coords[:, [i for i in range(nv) if i != f], :]
            surf += _facet_measure(fv)
        self.rho_elem = self.dim * self.volumes / surf
        self.h = float(self.h_elem.max())
        self.rho = float(self.rho_elem.min())
        self.quasi_uniformity = self.h / self.rho
        lo, hi = self.box
        onb = np.zeros(len(self.vertices), dtype=bool)
        for k in range(self.dim):
            tol = COINCIDENCE_TOL * max(abs(lo[k]), abs(hi[k]), 1.0)
            onb |= np.abs(self.vertices[:, k] - lo[k]) < tol
            onb |= np.abs(self.vertices[:, k] - hi[k]) < tol
        self.boundary_vertex = onb
        self.element_touches_boundary = onb[self.elements].any(axis=1)

    def _adjacency(self):
        E, nv = self.elements.shape
        # vertex -> elements (CSR), element ids ascending within each vertex
        flat = self.elements.ravel()
        elem_of = np.repeat(np.arange(E, dtype=np.int64), nv)
        order = np.argsort(flat, kind="stable")
        counts = np.bincount(flat, minlength=len(self.vertices))
        offs = np.zeros(len(self.vertices) + 1, dtype=np.int64)
        np.cumsum(counts, out=offs[1:])
        self._v2e_offsets, self._v2e_data = offs, elem_of[order]
        # facet neighbors: facet f is opposite local vertex f
        nbr = -np.ones((E, nv), dtype=np.int64)
        keys = np.empty((E * nv, self.dim), dtype=np.int64)
        for f in range(nv):
            idx = [i for i in range(nv) if i != f]
            keys[f::nv] = np.sort(self.elements[:, idx], axis=1)
        rows = np.arange(E * nv)  # row = e*nv + f
        order = np.lexsort(keys.T[::-1])
        sk = keys[order]
        same = np.all(sk[1:] == sk[:-1], axis=1)
        pair_lo = order[:-1][same]
        pair_hi = order[1:][same]
        nbr[pair_lo // nv, pair_lo % nv] = pair_hi // nv
        nbr[pair_hi // nv, pair_hi % nv] = pair_lo // nv
        unmatched = np.ones(E * nv, dtype=bool)
        unmatched[pair_lo] = False
        unmatched[pair_hi] = False
        self.facet_neighbors = nbr
        self.boundary_facets = keys[rows[unmatched]]

    # -- queries ---------------------------------------------------------------

    def vertex_elements(self, v: int) -> np.ndarray:
        return self._v2e_data[self._v2e_offsets[v] : self._v2e_offsets[v + 1]]

    def closure_neighbors(self, K: int) -> np.ndarray:
        """Elements whose closure touches closure(K), including K itself."""
        out = [self.vertex_elements(v) for v in self.elements[K]]
        return np.unique(np.concatenate(out))

    def element_coords(self, K: int) -> np.ndarray:
        return self.vertices[self.elements[K]]

    def locate_point(self, x, tol=1e-10):
        """Element containing x via structured cell arithmetic; -1 if not found."""
        lo, hi = self.box
        dx = (hi - lo) / self.n
        idx = np.clip(((np.asarray(x) - lo) / dx).astype(int), 0, self.n - 1)
        cands = self._cell_elements(idx)
        best, best_score = -1, -np.inf
        for e in cands:
            lam = self.barycentric(e, x)
            score = lam.min()
            if score > best_score:
                best, best_score = e, score
        if best_score < -tol:
            return -1
        return best

    def _cell_elements(self, idx):
        n = self.n
        if self.dim == 2:
            base = (idx[0] * n + idx[1]) * 2
            return range(base, base + 2)
        base = ((idx[0] * n + idx[1]) * n + idx[2]) * 6
        return range(base, base + 6)

    def barycentric(self, K: int, x) -> np.ndarray:
        coords = self.element_coords(K)
        T = (coords[1:] - coords[0]).T
        lam = np.linalg.solve(T, np.asarray(x, dtype=np.float64) - coords[0])
        return np.concatenate([[1.0 - lam.sum()], lam])

    def dump(self, path):
        """Plain-text dump: header, then one vertex / one element per line."""
        with open(path, "w") as fh:
            fh.write(f"{self.dim} {len(self.vertices)} {len(self.elements)}\n")
            for v in self.vertices:
                fh.write(" ".join(f"{c:.17g}" for c in v) + "\n")
            for e in self.elements:
                fh.write(" ".join(str(i) for i in e) + "\n")


class NeighborhoodPatch:
    """Degree-L closure-contact patch around a center element."""

    def __init__(self, center, degree, members, radius_factor):
        self.center = int(center)
        self.degree = int(degree)
        self.members = np.asarray(members, dtype=np.int64)
        self.radius_factor = float(radius_factor)  # patch is inside B(x_K, factor*h_K)

    def __contains__(self, e):
        return e in set(self.members.tolist())

    def __len__(self):
        return len(self.members)


def build_structured_mesh(box, n: int, dim: int) -> Mesh:
    """Mesh an axis-aligned box with n cells per axis.

    2D: 2 triangles per square (diagonal lower-left to upper-right);
    3D: 6 tetrahedra per cube (Kuhn split around the main diagonal).
    """
    if n < 1:
        raise MeshError("n must be >= 1")
    box = np.asarray(box, dtype=np.float64).reshape(2, dim)
    if np.any(box[1] <= box[0]):
        raise MeshError("box must have positive extent along every axis")
    axes = [np.linspace(box[0, k], box[1, k], n + 1) for k in range(dim)]
    if dim == 2:
        X, Y = np.meshgrid(axes[0], axes[1], indexing="ij")
        verts = np.column_stack([X.ravel(), Y.ravel()])
        ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        i, j = ii.ravel(), jj.ravel()  # cell index = i*n + j
        v00 = i * (n + 1) + j
        v10 = (i + 1) * (n + 1) + j
        v01 = i * (n + 1) + (j + 1)
        v11 = (i + 1) * (n + 1) + (j + 1)
        elems = np.empty((2 * n * n, 3), dtype=np.int64)
        elems[0::2] = np.column_stack([v00, v10, v11])
        elems[1::2] = np.column_stack([v00, v11, v01])
        return Mesh(2, verts, elems, box, n)
    if dim == 3:
        X, Y, Z = np.meshgrid(axes[0], axes[1], axes[2], indexing="ij")
        verts = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])
        ii, jj, kk = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
        cells = np.column_stack([ii.ravel(), jj.ravel(), kk.ravel()])  # cell = (i*n+j)*n+k
        unit = np.eye(3, dtype=np.int64)
        elems = np.empty((6 * n * n * n, 4), dtype=np.int64)
        for t, p in enumerate(sorted(permutations(range(3)))):
            cur = cells
            ids = [(cur[:, 0] * (n + 1) + cur[:, 1]) * (n + 1) + cur[:, 2]]
            for ax in p:
                cur = cur + unit[ax]
                ids.append((cur[:, 0] * (n + 1) + cur[:, 1]) * (n + 1) + cur[:, 2])
            elems[t::6] = np.column_stack(ids)
        return Mesh(3, verts, elems, box, n)
    raise MeshError(f"unsupported dimension {dim}")


def neighborhood(mesh: Mesh, K: int, L: int) -> NeighborhoodPatch:
    """Degree-L patch: L-fold composition of the closure-contact neighborhood."""
    if L < 1:
        raise MeshError("patch degree must be >= 1")
    members = np.array([K], dtype=np.int64)
    for _ in range(L):
        parts = [mesh.closure_neighbors(e) for e in members]
        members = np.unique(np.concatenate(parts))
    xK = mesh.barycenters[K]
    hK = mesh.h_elem[K]
    dmax = max(np.linalg.norm(mesh.vertices[mesh.elements[e]] - xK, axis=1).max() for e in members)
    return NeighborhoodPatch(K, L, members, dmax / hK)


def barycenter_distance_check(simplex_vertices, points) -> bool:
    """Distance bounds for interior points of a simplex.

    For each interior point P with vertices A_j, longest edge L and
    barycenter Q the checks are sum_j |P A_j| < d*L and |P Q| < d*L/(d+1).
    """
    V = np.asarray(simplex_vertices, dtype=np.float64)
    P = np.atleast_2d(np.asarray(points, dtype=np.float64))
    d = V.shape[1]
    if V.shape[0] != d + 1:
        raise MeshError("expected a d-simplex ((d+1) x d vertex array)")
    edges = V[1:] - V[0]
    if abs(np.linalg.det(edges)) <= 0.0:
        raise MeshError("degenerate simplex")
    L = max(
        np.linalg.norm(V[a] - V[b])
        for a in range(d + 1)
        for b in range(a + 1, d + 1)
    )
    Q = V.mean(axis=0)
    dist_sum = sum(np.linalg.norm(P - V[j], axis=1) for j in range(d + 1))
    ok_sum = bool(np.all(dist_sum < d * L))
    ok_bc = bool(np.all(np.linalg.norm(P - Q, axis=1) < d * L / (d + 1)))
    return ok_sum and ok_bc


def _facet_measure(fv):
    """Measure of (d-1)-facets given as (E, d, dim) vertex arrays."""
    d = fv.shape[2]
    if d == 2:
        return np.linalg.norm(fv[:, 1] - fv[:, 0], axis=1)
    a = fv[:, 1] - fv[:, 0]
    b = fv[:, 2] - fv[:, 0]
    return 0.5 * np.linalg.norm(np.cross(a, b), axis=1)


def _factorial(k):
    out = 1
    for i in range(2, k + 1):
        out *= i
    return out


