"""Cut-element classification, sub-cell decomposition and jump patches.

Per cut element the decomposition carries straight or quadratic (projected
mid-node) sub-simplices for both region volumes and a facet list
approximating the interface piece inside the element. Interface pieces that
lie exactly on mesh facets (polygonal interfaces aligned with the grid) are
owned by the region-0 neighbor as degenerate cuts. Quadrature rules are
materialized from the stored geometry at any requested order.
"""

from __future__ import annotations

import numpy as np

from . import geometry as geo
from .quadrature import map_to_simplex, simplex_rule
from .space import eval_reference_basis, reference_nodes

TAG0, TAG1, TAG_CUT = 0, 1, 2

MEASURE_ORDER = 6  # fixed order for stored measures


class CutError(RuntimeError):
    pass


class _FoldedCell(Exception):
    """Curved sub-cell map is close to folding; retry with a finer chain."""


def _validate_curved(nodes, curved, threshold=0.1):
    """Signed-Jacobian validity check for a quadratic sub-cell."""
    d = nodes.shape[1]
    ref_pts, _ = simplex_rule(d, 4)
    _, grads = eval_reference_basis(d, 2, ref_pts)
    J = np.einsum("qnk,ni->qik", grads, curved)
    det = np.linalg.det(J)
    affine = np.linalg.det((nodes[1:] - nodes[0]).T)
    if np.min(det * np.sign(affine)) < threshold * abs(affine):
        raise _FoldedCell


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------


class CutClassification:
    """Element tags plus the geometric crossing data reused downstream."""

    def __init__(self, mesh, geom, tags, vertex_values, snapped, edge_crossings, poly_pieces, fitted, degrees):
        self.mesh = mesh
        self.geom = geom
        self.tags = tags
        self.vertex_values = vertex_values
        self.snapped = snapped
        self.edge_crossings = edge_crossings  # (vmin, vmax) -> list of t in (0,1)
        self.poly_pieces = poly_pieces  # K -> list of piece dicts (polygon geometry)
        self.fitted = fitted  # K -> list of (poly_edge_id, p0, p1)
        self.degrees = degrees  # cut K -> smallest patch degree satisfying the resolution assumption
        self.interior0 = np.flatnonzero(tags == TAG0)
        self.interior1 = np.flatnonzero(tags == TAG1)
        self.cut_elements = np.flatnonzero(tags == TAG_CUT)
        self.active0 = np.union1d(self.interior0, self.cut_elements)
        self.active1 = np.union1d(self.interior1, self.cut_elements)

    @property
    def counts(self):
        return len(self.interior0), len(self.interior1), len(self.cut_elements)


def classify(mesh, geom, L_max=3, band_factor=1.5):
    """Tag every element interior-0 / interior-1 / cut and run the mesh
    resolution checks (cut layer away from the outer boundary; every cut
    element sees interior elements of both regions within L_max hops)."""
    vv = np.asarray(geom.value(mesh.vertices), dtype=np.float64).ravel()
    snap_tol = 1e-12 * mesh.h
    snapped = np.abs(vv) <= snap_tol
    vv = vv.copy()
    vv[snapped] = 0.0

    ev = vv[mesh.elements]
    has_neg = (ev < 0).any(axis=1)
    has_pos = (ev > 0).any(axis=1)
    straddle = has_neg & has_pos

    # band of elements possibly touched by the interface
    near = np.abs(ev).min(axis=1) <= band_factor * mesh.h_elem
    band = np.flatnonzero(near | straddle)

    edge_crossings: dict = {}
    poly_pieces: dict = {}
    fitted: dict = {}
    is_cut = straddle.copy()

    if geom.kind == "polygon":
        for K in band:
            pieces = _polygon_element_pieces(mesh, geom, K)
            interior = [p for p in pieces if p["kind"] == "interior"]
            collinear = [p for p in pieces if p["kind"] == "collinear"]
            if interior:
                poly_pieces[K] = interior
                is_cut[K] = True
            for p in collinear:
                owner = _collinear_owner(mesh, geom, K, p)
                if owner == K:
                    fitted.setdefault(K, []).append(p)
                    is_cut[K] = True
    else:
        for K in band:
            bad = _scan_levelset_edges(mesh, geom, K, edge_crossings, vv)
            if bad:
                raise CutError(f"element {K}: interface crosses an edge twice, refine the mesh")
        for K in band:
            if straddle[K]:
                continue
            n_roots = sum(
                len(edge_crossings.get((min(a, b), max(a, b)), ())) for a, b in _element_edges(mesh, K)
            )
            if n_roots == 0:
                continue  # at most tangent at a vertex
            n_snapped = int(np.count_nonzero(vv[mesh.elements[K]] == 0.0))
            if n_roots + n_snapped < 2:
                raise CutError(f"element {K}: tangential interface contact, refine the mesh")
            is_cut[K] = True

    tags = np.empty(len(mesh.elements), dtype=np.int8)
    tags[:] = TAG1
    cut_ids = np.flatnonzero(is_cut)
    not_cut = ~is_cut
    bary_side = geo.definite_sides(geom, mesh.barycenters[not_cut], mesh.h)
    tags[not_cut] = np.where(bary_side == geo.REGION0, TAG0, TAG1)
    tags[cut_ids] = TAG_CUT

    if np.any(mesh.element_touches_boundary[cut_ids]):
        raise CutError("interface touches boundary-adjacent layer: refine mesh")

    interior0 = set(np.flatnonzero(tags == TAG0).tolist())
    interior1 = set(np.flatnonzero(tags == TAG1).tolist())
    degrees = {}
    for K in cut_ids:
        deg = None
        members = {int(K)}
        for L in range(1, L_max + 1):
            grown = set()
            for e in members:
                grown.update(mesh.closure_neighbors(e).tolist())
            members = grown
            if (members & interior0) and (members & interior1):
                deg = L
                break
        if deg is None:
            raise CutError("mesh too coarse for interface resolution")
        degrees[int(K)] = deg

    return CutClassification(mesh, geom, tags, vv, snapped, edge_crossings, poly_pieces, fitted, degrees)


def _element_edges(mesh, K):
    gv = mesh.elements[K]
    nv = len(gv)
    return [(int(gv[a]), int(gv[b])) for a in range(nv) for b in range(a + 1, nv)]


def _scan_levelset_edges(mesh, geom, K, cache, vertex_values):
    """Fill the canonical edge-crossing cache; True signals a double cut.

    Roots converging onto an endpoint whose vertex sits on the interface
    belong to the vertex (snapped), not to the edge interior.
    """
    double = False
    for a, b in _element_edges(mesh, K):
        key = (min(a, b), max(a, b))
        if key in cache:
            if len(cache[key]) > 1:
                double = True
            continue
        pa, pb = mesh.vertices[key[0]], mesh.vertices[key[1]]
        ts, _grazing = geo.edge_intersections(geom, pa, pb)
        ts = _polish_roots(geom, pa, pb, ts)
        if vertex_values[key[0]] == 0.0:
            ts = [t for t in ts if t > 1e-9]
        if vertex_values[key[1]] == 0.0:
            ts = [t for t in ts if t < 1.0 - 1e-9]
        cache[key] = ts
        if len(ts) > 1:
            double = True
    return double


def _polish_roots(geom, a, b, ts):
    """Two Newton steps on each bisection root for near-machine accuracy."""
    out = []
    d = b - a
    for t in ts:
        for _ in range(2):
            x = a + t * d
            v = float(geom.value(x))
            g = float(np.dot(np.asarray(geom.grad(x)), d))
            if g != 0.0:
                t = min(max(t - v / g, 0.0), 1.0)
        out.append(t)
    return out


def _polygon_element_pieces(mesh, geom, K, tol_rel=1e-12):
    """Clip every polygon edge against element K.

    Returns pieces {kind: interior|collinear, edge: j, p0, p1, s0, s1} in
    polygon-loop order; collinear pieces lie on an element facet.
    """
    coords = mesh.element_coords(K)
    hK = mesh.h_elem[K]
    tol = tol_rel * hK
    pieces = []
    for j, (a, b) in enumerate(geom.edges):
        hit = _clip_segment_to_triangle(a, b, coords, tol)
        if hit is None:
            continue
        s0, s1 = hit
        if (s1 - s0) * geom.edge_len[j] <= 1e-10 * hK:
            continue
        p0 = a + s0 * (b - a)
        p1 = a + s1 * (b - a)
        mid = 0.5 * (p0 + p1)
        kind = "collinear" if _on_triangle_boundary(mid, coords, tol) else "interior"
        pieces.append({"kind": kind, "edge": j, "p0": p0, "p1": p1, "s0": s0, "s1": s1})
    return pieces


def _clip_segment_to_triangle(a, b, coords, tol):
    """Liang-Barsky clip of segment a->b against a CCW triangle; params or None."""
    v = np.vstack([coords, coords[0]])
    lo, hi = 0.0, 1.0
    d = b - a
    for i in range(3):
        p, q = v[i], v[i + 1]
        e = q - p
        # inside = left of directed edge for CCW triangles
        normal_cross = lambda u: e[0] * u[1] - e[1] * u[0]
        denom = normal_cross(d)
        num = normal_cross(a - p)
        if abs(denom) < 1e-15:
            if num < -tol:
                return None
            continue
        t = -num / denom
        if denom > 0:
            lo = max(lo, t)
        else:
            hi = min(hi, t)
        if lo > hi:
            return None
    return lo, hi


def _on_triangle_boundary(p, coords, tol):
    v = np.vstack([coords, coords[0]])
    for i in range(3):
        e = v[i + 1] - v[i]
        ln = np.linalg.norm(e)
        dist = abs(e[0] * (p[1] - v[i][1]) - e[1] * (p[0] - v[i][0])) / ln
        t = np.dot(p - v[i], e) / ln**2
        if dist <= tol and -tol <= t <= 1 + tol:
            return True
    return False


def _collinear_owner(mesh, geom, K, piece):
    """Owner of a facet-aligned interface piece: the region-0 neighbor."""
    mid = 0.5 * (piece["p0"] + piece["p1"])
    n = geom.edge_normals[piece["edge"]]
    eps = 1e-6 * mesh.h_elem[K]
    p_in = mid - eps * n  # region-0 side of the interface
    bc = mesh.barycentric(K, p_in)
    if bc.min() >= -1e-12:
        return K
    # the point falls in the facet neighbor
    coords = mesh.element_coords(K)
    tolb = 1e-12 * mesh.h_elem[K]
    for f in range(mesh.dim + 1):
        facet = [coords[i] for i in range(mesh.dim + 1) if i != f]
        if all(_point_on_segment(q, facet[0], facet[1], tolb) for q in (piece["p0"], piece["p1"])):
            nbr = mesh.facet_neighbors[K, f]
            return int(nbr) if nbr >= 0 else K
    return K


def _point_on_segment(p, a, b, tol):
    e = b - a
    ln = np.linalg.norm(e)
    dist = abs(e[0] * (p[1] - a[1]) - e[1] * (p[0] - a[0])) / ln
    t = np.dot(p - a, e) / ln**2
    return dist <= tol and -1e-10 <= t <= 1 + 1e-10


# ---------------------------------------------------------------------------
# decomposition containers
# ---------------------------------------------------------------------------


class ElementCut:
    """Decomposition of one cut element."""

    __slots__ = ("element", "cells0", "cells1", "facets", "gamma_measure", "h")

    def __init__(self, element, h):
        self.element = int(element)
        self.cells0 = []  # (nodes (d+1, d), curved_nodes or None)
        self.cells1 = []
        self.facets = []  # dict: nodes, curved, normal (const or None), owner
        self.gamma_measure = 0.0
        self.h = float(h)


class CutDecomposition:
    """All cut-element decompositions plus streaming views for assembly."""

    def __init__(self, mesh, geom, nsub):
        self.mesh = mesh
        self.geom = geom
        self.nsub = int(nsub)
        self.entries: dict[int, ElementCut] = {}

    def volume_cells(self, side):
        """Flat list of (element, nodes, curved_nodes) for one region."""
        out = []
        for K in sorted(self.entries):
            ec = self.entries[K]
            for nodes, curved in (ec.cells0 if side == 0 else ec.cells1):
                out.append((K, nodes, curved))
        return out

    def facet_list(self):
        out = []
        for K in sorted(self.entries):
            out.extend(self.entries[K].facets)
        return out

    def gamma_measure_total(self):
        return sum(e.gamma_measure for e in self.entries.values())

    def side_volume_total(self, side):
        total = 0.0
        for K in sorted(self.entries):
            ec = self.entries[K]
            for nodes, curved in (ec.cells0 if side == 0 else ec.cells1):
                _, w = volume_rule(nodes, curved, 4)
                total += w.sum()
        return total

    def dump_facets(self, path):
        """ASCII facet soup: one facet per line (flattened straight corners)."""
        with open(path, "w") as fh:
            for f in self.facet_list():
                fh.write(" ".join(f"{c:.17g}" for c in np.asarray(f["nodes"]).ravel()) + "\n")


# ---------------------------------------------------------------------------
# quadrature materialization
# ---------------------------------------------------------------------------


def volume_rule(nodes, curved, order):
    """Physical points/weights for a straight or quadratic sub-simplex."""
    nodes = np.asarray(nodes, dtype=np.float64)
    d = nodes.shape[1]
    ref_pts, ref_w = simplex_rule(d, max(order, 2))
    if curved is None:
        return map_to_simplex(nodes, ref_pts, ref_w)
    vals, grads = eval_reference_basis(d, 2, ref_pts)
    pts = vals @ curved
    J = np.einsum("qnk,ni->qik", grads, curved)
    det = np.abs(np.linalg.det(J))
    return pts, ref_w * det


def facet_rule(facet, order, geom):
    """Points, weights and unit normals (region0 -> region1) on one facet."""
    nodes = np.asarray(facet["nodes"], dtype=np.float64)
    d = nodes.shape[1]
    ref_pts, ref_w = simplex_rule(d - 1, max(order, 2))
    curved = facet.get("curved")
    if curved is None:
        pts, w = map_to_simplex(nodes, ref_pts, ref_w)
    else:
        vals, grads = eval_reference_basis(d - 1, 2, ref_pts)
        pts = vals @ curved
        tang = np.einsum("qnk,ni->qki", grads, curved)  # (Q, d-1, d)
        if d == 2:
            w = ref_w * np.linalg.norm(tang[:, 0, :], axis=1)
        else:
            cr = np.cross(tang[:, 0, :], tang[:, 1, :])
            w = ref_w * np.linalg.norm(cr, axis=1)
    n_const = facet.get("normal")
    if n_const is not None:
        normals = np.broadcast_to(np.asarray(n_const, dtype=np.float64), pts.shape).copy()
    else:
        g = np.atleast_2d(geom.grad(pts))
        normals = g / np.linalg.norm(g, axis=1, keepdims=True)
    return pts, w, normals


def facet_measure(facet, geom, order=MEASURE_ORDER):
    _, w, _ = facet_rule(facet, order, geom)
    return float(w.sum())


def _factorial(k):
    out = 1
    for i in range(2, k + 1):
        out *= i
    return out


# ---------------------------------------------------------------------------
# 2D decomposition
# ---------------------------------------------------------------------------


def _walk_split(coords, chain, s_start, s_end):
    """Split a triangle along a chain with boundary coordinates s in [0,3).

    Returns (polyA, polyB): A = chain + boundary walk end->start, B mirrored.
    Boundary coordinate: edge index (V_i -> V_{i+1}) plus local parameter.
    """
    def vertices_between(sa, sb):
        span = (sb - sa) % 3.0
        out = []
        for k in range(1, 4):
            s = np.floor(sa) + k
            if s - sa >= span - 1e-12:
                break
            out.append(coords[int(round(s % 3.0)) % 3])
        return out

    polyA = list(chain) + vertices_between(s_end, s_start)
    polyB = list(reversed(chain)) + vertices_between(s_start, s_end)
    return _dedup_loop(polyA), _dedup_loop(polyB)


def _dedup_loop(pts, tol=1e-13):
    out = []
    for p in pts:
        if not out or np.linalg.norm(p - out[-1]) > tol:
            out.append(np.asarray(p, dtype=np.float64))
    while len(out) > 1 and np.linalg.norm(out[0] - out[-1]) <= tol:
        out.pop()
    return out


def _ear_clip(pts, tol_rel=1e-12):
    """Triangulate a simple polygon; returns index triples into pts."""
    n = len(pts)
    if n < 3:
        return []
    pts = [np.asarray(p, dtype=np.float64) for p in pts]
    scale = max(np.linalg.norm(pts[i] - pts[0]) for i in range(1, n)) or 1.0
    area2 = sum(pts[i][0] * pts[(i + 1) % n][1] - pts[(i + 1) % n][0] * pts[i][1] for i in range(n))
    idx = list(range(n)) if area2 >= 0 else list(range(n - 1, -1, -1))
    tris = []
    guard = 0
    while len(idx) > 3 and guard < 10 * n:
        guard += 1
        m = len(idx)
        clipped = False
        # drop collinear spikes first
        for k in range(m):
            a, b, c = pts[idx[k - 1]], pts[idx[k]], pts[idx[(k + 1) % m]]
            if abs(_cross2(b - a, c - b)) <= tol_rel * scale * scale:
                idx.pop(k)
                clipped = True
                break
        if clipped:
            continue
        for k in range(m):
            ia, ib, ic = idx[k - 1], idx[k], idx[(k + 1) % m]
            a, b, c = pts[ia], pts[ib], pts[ic]
            if _cross2(b - a, c - b) <= 0:
                continue
            if any(
                _point_in_tri(pts[j], a, b, c, 1e-12 * scale)
                for j in idx
                if j not in (ia, ib, ic)
            ):
                continue
            tris.append((ia, ib, ic))
            idx.pop(k)
            clipped = True
            break
        if not clipped:
            raise CutError("ear clipping failed on a cut-cell polygon")
    if len(idx) == 3:
        tris.append(tuple(idx))
    return tris


def _cross2(u, v):
    return u[0] * v[1] - u[1] * v[0]


def _point_in_tri(p, a, b, c, tol):
    d1 = _cross2(b - a, p - a)
    d2 = _cross2(c - b, p - b)
    d3 = _cross2(a - c, p - c)
    return d1 > tol and d2 > tol and d3 > tol


def _boundary_coord(coords, p, tol):
    """(s, snapped point) boundary coordinate of p on the triangle boundary."""
    best = None
    for i in range(3):
        a, b = coords[i], coords[(i + 1) % 3]
        e = b - a
        ln2 = np.dot(e, e)
        t = np.dot(p - a, e) / ln2
        t = min(max(t, 0.0), 1.0)
        q = a + t * e
        dist = np.linalg.norm(p - q)
        if best is None or dist < best[0]:
            best = (dist, i + t, q)
    if best[0] > tol:
        raise CutError("chain endpoint not on the element boundary")
    s = best[1] % 3.0
    return s, best[2]


def _subdivide_project(geom, p, q, nsub, curved):
    """Chain nodes from p to q; interior nodes projected for level sets."""
    if not curved or nsub <= 1:
        return [p, q]
    ts = np.linspace(0.0, 1.0, nsub + 1)
    pts = [p]
    for t in ts[1:-1]:
        x = p + t * (q - p)
        pts.append(geo.project_to_interface(geom, x))
    pts.append(q)
    return pts


def _curved_midpoint(geom, a, b, curved):
    if not curved:
        return 0.5 * (a + b)
    return geo.project_to_interface(geom, 0.5 * (a + b))


def _p2_nodes(dim, corners, edge_overrides):
    """P2 geometry nodes in reference lattice order with mid-edge overrides."""
    _, multi = reference_nodes(dim, 2)
    corners = np.asarray(corners, dtype=np.float64)
    out = np.empty((len(multi), corners.shape[1]))
    for row, mi in enumerate(multi):
        support = np.flatnonzero(mi)
        if len(support) == 1:
            out[row] = corners[support[0]]
        else:
            a, b = int(support[0]), int(support[1])
            out[row] = edge_overrides.get((a, b), 0.5 * (corners[a] + corners[b]))
    return out


def _decompose_2d(mesh, geom, cls, K, nsub):
    coords = mesh.element_coords(K)
    hK = mesh.h_elem[K]
    tol = 1e-10 * hK
    ec = ElementCut(K, hK)
    curved_geom = geom.kind == "levelset"

    chain = _element_chain_2d(mesh, geom, cls, K, nsub)
    if chain is not None:
        pts, s_start, s_end = chain
        polyA, polyB = _walk_split(coords, pts, s_start, s_end)
        chain_keys = _segment_keys(pts)
        sideA = _polygon_region(geom, polyA, polyB, coords, cls, K, hK)
        for poly, side in ((polyA, sideA), (polyB, 1 - sideA)):
            cells = ec.cells0 if side == 0 else ec.cells1
            if len(poly) < 3:
                continue
            for (ia, ib, ic) in _ear_clip(poly):
                tri = np.array([poly[ia], poly[ib], poly[ic]])
                if abs(_cross2(tri[1] - tri[0], tri[2] - tri[0])) < 1e-14 * hK * hK:
                    continue
                overrides = {}
                if curved_geom:
                    locs = [ia, ib, ic]
                    for u in range(3):
                        for v in range(u + 1, 3):
                            key = _pair_key(poly[locs[u]], poly[locs[v]])
                            if key in chain_keys:
                                overrides[(u, v)] = _curved_midpoint(geom, tri[u], tri[v], True)
                curved_nodes = None
                if overrides:
                    curved_nodes = _p2_nodes(2, tri, overrides)
                    _validate_curved(tri, curved_nodes)
                cells.append((tri, curved_nodes))
        for a, b in zip(pts[:-1], pts[1:]):
            if np.linalg.norm(b - a) <= tol:
                continue
            facet = {"nodes": np.array([a, b]), "owner": K, "normal": None, "curved": None}
            if curved_geom:
                mid = _curved_midpoint(geom, a, b, True)
                facet["curved"] = _p2_nodes(1, np.array([a, b]), {(0, 1): mid})
            ec.facets.append(facet)
    else:
        # fitted-only owner: full element on region 0, nothing on region 1
        ec.cells0.append((coords.copy(), None))

    for piece in cls.fitted.get(K, []):
        ec.facets.append(
            {
                "nodes": np.array([piece["p0"], piece["p1"]]),
                "owner": K,
                "normal": np.asarray(geom.edge_normals[piece["edge"]], dtype=np.float64),
                "curved": None,
            }
        )
    if not ec.facets:
        raise CutError(f"cut element {K} produced no interface facets")
    ec.gamma_measure = sum(facet_measure(f, geom) for f in ec.facets)
    _check_conservation(mesh, K, ec)
    return ec


def _pair_key(p, q):
    return tuple(sorted((tuple(np.round(p, 13)), tuple(np.round(q, 13)))))


def _segment_keys(pts):
    return {_pair_key(a, b) for a, b in zip(pts[:-1], pts[1:])}


def _element_chain_2d(mesh, geom, cls, K, nsub):
    """Ordered chain across element K plus boundary coords, or None."""
    coords = mesh.element_coords(K)
    hK = mesh.h_elem[K]
    tol = 1e-10 * hK
    if geom.kind == "polygon":
        pieces = cls.poly_pieces.get(K)
        if not pieces:
            return None
        # rotate so the chain starts at a piece not fed by its predecessor
        starts = [
            r
            for r in range(len(pieces))
            if np.linalg.norm(pieces[r]["p0"] - pieces[r - 1]["p1"]) > tol
        ]
        if len(pieces) > 1:
            if not starts:
                raise CutError(f"element {K}: interface loop inside one element, refine the mesh")
            if len(starts) > 1:
                raise CutError(f"element {K}: disconnected interface pieces, refine the mesh")
            pieces = pieces[starts[0] :] + pieces[: starts[0]]
        pts = [pieces[0]["p0"]]
        for p in pieces:
            if np.linalg.norm(p["p0"] - pts[-1]) > tol:
                raise CutError(f"element {K}: disconnected interface pieces, refine the mesh")
            pts.append(p["p1"])
        s_start, q0 = _boundary_coord(coords, pts[0], tol)
        s_end, q1 = _boundary_coord(coords, pts[-1], tol)
        pts[0], pts[-1] = q0, q1
        return pts, s_start, s_end
    # level set: two boundary crossings define the chain
    gv = mesh.elements[K]
    roots = []
    for a in range(3):
        for b in range(a + 1, 3):
            va, vb = int(gv[a]), int(gv[b])
            key = (min(va, vb), max(va, vb))
            for t in cls.edge_crossings.get(key, ()):  # t from min to max vertex id
                pa, pb = mesh.vertices[key[0]], mesh.vertices[key[1]]
                roots.append(pa + t * (pb - pa))
    roots = _dedup_points(roots, 1e-12 * hK)
    if len(roots) == 2:
        crossings = roots  # an on-interface vertex, if any, is a tangential touch
    elif len(roots) == 1:
        on_vertex = [mesh.vertices[gv[a]].astype(np.float64) for a in range(3) if cls.vertex_values[gv[a]] == 0.0]
        if len(on_vertex) != 1:
            raise CutError(f"element {K}: unpaired interface crossing, refine the mesh")
        crossings = roots + on_vertex
    else:
        raise CutError(f"element {K}: expected 2 interface crossings, found {len(roots)}")
    s0, q0 = _boundary_coord(coords, crossings[0], tol)
    s1, q1 = _boundary_coord(coords, crossings[1], tol)
    pts = _subdivide_project(geom, q0, q1, nsub, True)
    return pts, s0, s1


def _dedup_points(pts, tol):
    out = []
    for p in pts:
        if all(np.linalg.norm(p - q) > tol for q in out):
            out.append(p)
    return out


def _polygon_region(geom, polyA, polyB, coords, cls, K, hK):
    """Region index (0/1) of polyA, via vertex signs or an offset probe."""
    gv = cls.mesh.elements[K]
    sv = cls.vertex_values[gv]

    def signed_side(poly):
        neg = pos = False
        for p in poly:
            for local in range(3):
                if np.linalg.norm(p - coords[local]) <= 1e-12 * hK:
                    if sv[local] < 0:
                        neg = True
                    elif sv[local] > 0:
                        pos = True
        if neg and pos:
            raise CutError(f"element {K}: inconsistent cut polygon")
        if neg:
            return 0
        if pos:
            return 1
        return None

    sideA = signed_side(polyA)
    if sideA is not None:
        return sideA
    sideB = signed_side(polyB)
    if sideB is not None:
        return 1 - sideB
    # probe: a point just inside polyA, classified geometrically
    tris = _ear_clip(polyA)
    rep = np.mean([polyA[i] for i in tris[0]], axis=0)
    side = geo.definite_sides(geom, rep[None, :], hK)[0]
    return int(side)


def _check_conservation(mesh, K, ec, rel_tol=1e-9):
    vol = 0.0
    for nodes, curved in ec.cells0 + ec.cells1:
        _, w = volume_rule(nodes, curved, 4)
        vol += w.sum()
    if abs(vol - mesh.volumes[K]) > rel_tol * mesh.volumes[K]:
        raise CutError(
            f"element {K}: sub-cell volumes sum to {vol}, element measure {mesh.volumes[K]}"
        )


# ---------------------------------------------------------------------------
# 3D decomposition (marching tetrahedra)
# ---------------------------------------------------------------------------


def _decompose_3d(mesh, geom, cls, K, nsub):
    coords = mesh.element_coords(K)
    gv = mesh.elements[K]
    hK = mesh.h_elem[K]
    ec = ElementCut(K, hK)
    curved_geom = geom.kind == "levelset"
    sv = cls.vertex_values[gv]
    neg = [i for i in range(4) if sv[i] < 0]
    oth = [i for i in range(4) if sv[i] >= 0]  # snapped vertices count as region 1

    def crossing(i, j):
        if sv[i] == 0.0:
            return coords[i].copy()
        if sv[j] == 0.0:
            return coords[j].copy()
        va, vb = int(gv[i]), int(gv[j])
        key = (min(va, vb), max(va, vb))
        ts = cls.edge_crossings.get(key, ())
        if len(ts) != 1:
            raise CutError(f"element {K}: expected one crossing on edge {key}, found {len(ts)}")
        pa, pb = mesh.vertices[key[0]], mesh.vertices[key[1]]
        return pa + ts[0] * (pb - pa)

    if len(neg) == 0 or len(neg) == 4:
        raise CutError(f"element {K} tagged cut but does not straddle the interface")

    if len(neg) == 1 or len(neg) == 3:
        lone_side = 0 if len(neg) == 1 else 1
        lone = neg[0] if len(neg) == 1 else oth[0]
        b, c, d = [i for i in range(4) if i != lone]
        p = {i: crossing(lone, i) for i in (b, c, d)}
        iface_tris = [(p[b], p[c], p[d])]
        lone_cells = [np.array([coords[lone], p[b], p[c], p[d]])]
        frustum = [  # cone from b over the frustum boundary faces avoiding b
            np.array([coords[b], p[b], p[c], p[d]]),
            np.array([coords[b], coords[c], coords[d], p[d]]),
            np.array([coords[b], coords[c], p[d], p[c]]),
        ]
        cells_by_side = {lone_side: lone_cells, 1 - lone_side: frustum}
    else:
        A, B = neg
        C, D = oth
        pAC, pAD = crossing(A, C), crossing(A, D)
        pBC, pBD = crossing(B, C), crossing(B, D)
        tri1, tri2 = _triangulate_quad(pAC, pAD, pBD, pBC)
        iface_tris = [tri1, tri2]
        # cone each wedge from one of its element vertices
        side0 = [np.array([coords[A], coords[B], pBC, pBD])] + [
            np.array([coords[A], *t]) for t in iface_tris
        ]
        side1 = [np.array([coords[C], coords[D], pAD, pBD])] + [
            np.array([coords[C], *t]) for t in iface_tris
        ]
        cells_by_side = {0: side0, 1: side1}

    for side in (0, 1):
        store = ec.cells0 if side == 0 else ec.cells1
        for tet in cells_by_side[side]:
            vol = abs(np.linalg.det(tet[1:] - tet[0])) / 6.0
            if vol < 1e-14 * mesh.volumes[K]:
                continue
            curved_nodes = None
            if curved_geom:
                overrides = {}
                on_gamma = [abs(float(geom.value(q))) < 1e-9 * hK for q in tet]
                for u in range(4):
                    for v in range(u + 1, 4):
                        if on_gamma[u] and on_gamma[v]:
                            overrides[(u, v)] = _curved_midpoint(geom, tet[u], tet[v], True)
                if overrides:
                    curved_nodes = _p2_nodes(3, tet, overrides)
                    _validate_curved(tet, curved_nodes)
            store.append((tet, curved_nodes))

    n_hint = np.asarray(geom.grad(coords.mean(axis=0)), dtype=np.float64)
    for tri in iface_tris:
        tri = np.asarray(tri, dtype=np.float64)
        if 0.5 * np.linalg.norm(np.cross(tri[1] - tri[0], tri[2] - tri[0])) < 1e-14 * hK * hK:
            continue
        for sub in _subdivide_triangle(tri, max(1, nsub)):
            if curved_geom:
                sub = np.array([geo.project_to_interface(geom, q) for q in sub])
            if 0.5 * np.linalg.norm(np.cross(sub[1] - sub[0], sub[2] - sub[0])) < 1e-16 * hK * hK:
                continue
            facet = {"nodes": sub, "owner": K, "normal": None, "curved": None}
            if curved_geom:
                overrides = {
                    (u, v): _curved_midpoint(geom, sub[u], sub[v], True)
                    for u in range(3)
                    for v in range(u + 1, 3)
                }
                facet["curved"] = _p2_nodes(2, sub, overrides)
            else:
                nrm = np.cross(sub[1] - sub[0], sub[2] - sub[0])
                nrm /= np.linalg.norm(nrm)
                if np.dot(nrm, n_hint) < 0:
                    nrm = -nrm
                facet["normal"] = nrm
            ec.facets.append(facet)
    if not ec.facets:
        raise CutError(f"cut element {K} produced no interface facets")
    ec.gamma_measure = sum(facet_measure(f, geom) for f in ec.facets)
    _check_conservation(mesh, K, ec)
    return ec


def _triangulate_quad(p0, p1, p2, p3):
    """Split the quad p0-p1-p2-p3 along its shorter diagonal (deterministic)."""
    d02 = np.linalg.norm(p2 - p0)
    d13 = np.linalg.norm(p3 - p1)
    if d02 <= d13 + 1e-14 * (d02 + d13):
        return (p0, p1, p2), (p0, p2, p3)
    return (p1, p2, p3), (p1, p3, p0)


def _subdivide_triangle(tri, n):
    """Uniform n^2 subdivision of a triangle (corner arrays)."""
    if n <= 1:
        return [np.asarray(tri, dtype=np.float64)]
    a, b, c = [np.asarray(q, dtype=np.float64) for q in tri]
    pts = {}
    for i in range(n + 1):
        for j in range(n + 1 - i):
            pts[(i, j)] = a + (b - a) * (i / n) + (c - a) * (j / n)
    out = []
    for i in range(n):
        for j in range(n - i):
            out.append(np.array([pts[(i, j)], pts[(i + 1, j)], pts[(i, j + 1)]]))
            if i + j < n - 1:
                out.append(np.array([pts[(i + 1, j)], pts[(i + 1, j + 1)], pts[(i, j + 1)]]))
    return out


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


def _decompose_element(mesh, geom, cls, K, nsub):
    """Decompose one element, refining the chain if a curved cell folds."""
    for attempt in range(4):
        try:
            if mesh.dim == 2:
                return _decompose_2d(mesh, geom, cls, K, nsub)
            return _decompose_3d(mesh, geom, cls, K, nsub)
        except _FoldedCell:
            nsub *= 2
    raise CutError(f"element {K}: curved sub-cells keep folding, refine the mesh")


def _build_once(mesh, geom, cls, nsub):
    decomp = CutDecomposition(mesh, geom, nsub)
    for K in cls.cut_elements:
        decomp.entries[int(K)] = _decompose_element(mesh, geom, cls, int(K), nsub)
    return decomp


def build_decomposition(mesh, geom, cls, nsub, self_check=True):
    """Decompose every cut element; doubles nsub if the interface-measure
    self-check between nsub and 2*nsub exceeds 1e-6 relative."""
    decomp = _build_once(mesh, geom, cls, nsub)
    if not self_check or geom.kind != "levelset":
        return decomp
    for _ in range(2):
        fine = _build_once(mesh, geom, cls, 2 * nsub)
        g0, g1 = decomp.gamma_measure_total(), fine.gamma_measure_total()
        if abs(g1 - g0) <= 1e-6 * abs(g1):
            return decomp
        decomp, nsub = fine, 2 * nsub
    return decomp


class InteriorNeighborMap:
    """Per cut element, one fully-interior element of each region."""

    def __init__(self, neighbor0, neighbor1):
        self.neighbor0 = neighbor0  # dict K -> element id in region-0 interior
        self.neighbor1 = neighbor1

    def get(self, K, side):
        return self.neighbor0[K] if side == 0 else self.neighbor1[K]


def select_interior_neighbors(mesh, cls, L_max=3):
    """Pick an interior element per side for every cut element: prefer a
    facet-sharing one, else any patch member at the smallest sufficient
    degree; ties broken by lowest element id."""
    interior = {0: set(cls.interior0.tolist()), 1: set(cls.interior1.tolist())}
    n0, n1 = {}, {}
    for K in cls.cut_elements:
        K = int(K)
        for side, store in ((0, n0), (1, n1)):
            face_nbrs = [int(e) for e in mesh.facet_neighbors[K] if e >= 0 and int(e) in interior[side]]
            if face_nbrs:
                store[K] = min(face_nbrs)
                continue
            members = {K}
            found = None
            for _ in range(1, L_max + 1):
                grown = set()
                for e in members:
                    grown.update(mesh.closure_neighbors(e).tolist())
                members = grown
                cand = members & interior[side]
                if cand:
                    found = min(cand)
                    break
            if found is None:
                raise CutError("mesh too coarse for interface resolution")
            store[K] = found
    return InteriorNeighborMap(n0, n1)


class JumpPatch:
    """Agglomerated interface patch around a cut element."""

    __slots__ = ("owner", "members", "h", "measure")

    def __init__(self, owner, members, h, measure):
        self.owner = int(owner)
        self.members = list(members)
        self.h = float(h)
        self.measure = float(measure)


def build_jump_patches(mesh, cls, decomp, kappa=0.5):
    """Grow S(K) = {K} through adjacent cut elements, largest interface
    measure first (ties by lowest id), until the patch interface measure
    reaches kappa * h_K^(d-1)."""
    cut_set = set(int(K) for K in cls.cut_elements)
    measures = {K: decomp.entries[K].gamma_measure for K in cut_set}
    patches = []
    for K in sorted(cut_set):
        hK = mesh.h_elem[K]
        target = kappa * hK ** (mesh.dim - 1)
        members = [K]
        total = measures[K]
        used = {K}
        while total < target:
            cand = _adjacent_cut(mesh, members, cut_set, used, facet_only=True)
            if not cand:
                cand = _adjacent_cut(mesh, members, cut_set, used, facet_only=False)
            if not cand:
                raise CutError("interface component too small relative to kappa")
            nxt = max(cand, key=lambda e: (measures[e], -e))
            members.append(nxt)
            used.add(nxt)
            total += measures[nxt]
        patches.append(JumpPatch(K, members, hK, total))
    return patches


def _adjacent_cut(mesh, members, cut_set, used, facet_only):
    out = set()
    for e in members:
        if facet_only:
            nbrs = [int(x) for x in mesh.facet_neighbors[e] if x >= 0]
        else:
            nbrs = [int(x) for x in mesh.closure_neighbors(e)]
        for x in nbrs:
            if x in cut_set and x not in used:
                out.add(x)
    return out
