"""Interface geometries: analytic level sets and polygonal/polyhedral chains.

Conventions: the signed value is negative on the inner region (region 0),
positive on region 1; the interface normal points from region 0 to region 1.
All objects are immutable and safe for concurrent queries.
"""

from __future__ import annotations

import numpy as np

REGION0 = 0
REGION1 = 1
ON_INTERFACE = -1

ON_TOL = 1e-12  # absolute tolerance band around the interface (domain is O(1))


class GeometryError(ValueError):
    pass


class LevelSetInterface:
    """Interface given by a smooth signed function and its gradient.

    value/grad accept (..., dim) arrays; named instances: circle, sphere, star.
    """

    kind = "levelset"

    def __init__(self, dim, value, grad, name="levelset"):
        self.dim = int(dim)
        self._value = value
        self._grad = grad
        self.name = name

    def value(self, pts):
        return self._value(np.asarray(pts, dtype=np.float64))

    def grad(self, pts):
        return self._grad(np.asarray(pts, dtype=np.float64))

    def normal(self, pts):
        g = np.atleast_2d(self.grad(pts))
        return g / np.linalg.norm(g, axis=-1, keepdims=True)


def circle_interface(center=(0.0, 0.0), radius=0.6) -> LevelSetInterface:
    c = np.asarray(center, dtype=np.float64)

    def value(p):
        return np.linalg.norm(p - c, axis=-1) - radius

    def grad(p):
        d = p - c
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    return LevelSetInterface(2, value, grad, name="circle")


def sphere_interface(center=(0.0, 0.0, 0.0), radius=0.6) -> LevelSetInterface:
    c = np.asarray(center, dtype=np.float64)

    def value(p):
        return np.linalg.norm(p - c, axis=-1) - radius

    def grad(p):
        d = p - c
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    return LevelSetInterface(3, value, grad, name="sphere")


def star_interface() -> LevelSetInterface:
    """Five-lobed star r(theta) = 1/2 + sin(5 theta)/7 as a signed radial function."""

    def value(p):
        x, y = p[..., 0], p[..., 1]
        r = np.hypot(x, y)
        th = np.arctan2(y, x)
        return r - (0.5 + np.sin(5.0 * th) / 7.0)

    def grad(p):
        x, y = p[..., 0], p[..., 1]
        r2 = x * x + y * y
        r = np.sqrt(r2)
        th = np.arctan2(y, x)
        rp = 5.0 * np.cos(5.0 * th) / 7.0  # d r(theta) / d theta
        gx = x / r + rp * y / r2
        gy = y / r - rp * x / r2
        return np.stack([gx, gy], axis=-1)

    return LevelSetInterface(2, value, grad, name="star")


class PolygonalInterface:
    """Closed simple polygon in 2D; interior is region 0."""

    kind = "polygon"
    dim = 2

    def __init__(self, vertices):
        V = np.asarray(vertices, dtype=np.float64)
        if V.ndim != 2 or V.shape[1] != 2 or len(V) < 3:
            raise GeometryError("polygon needs an (n>=3, 2) vertex loop")
        area2 = np.sum(V[:, 0] * np.roll(V[:, 1], -1) - np.roll(V[:, 0], -1) * V[:, 1])
        if area2 < 0:  # normalize to counter-clockwise
            V = V[::-1].copy()
        self.vertices = V
        self.edges = np.stack([V, np.roll(V, -1, axis=0)], axis=1)  # (n, 2, 2)
        t = self.edges[:, 1] - self.edges[:, 0]
        self.edge_len = np.linalg.norm(t, axis=1)
        if np.any(self.edge_len <= 0):
            raise GeometryError("degenerate polygon edge")
        tt = t / self.edge_len[:, None]
        # outward normal (region 0 -> region 1) for a CCW loop
        self.edge_normals = np.column_stack([tt[:, 1], -tt[:, 0]])
        self._check_simple()
        self.name = "polygon"

    def _check_simple(self):
        n = len(self.vertices)
        for i in range(n):
            a0, a1 = self.edges[i]
            for j in range(i + 1, n):
                if j == i or (j + 1) % n == i or (i + 1) % n == j:
                    continue
                b0, b1 = self.edges[j]
                if _segments_cross(a0, a1, b0, b1):
                    raise GeometryError("polygon loop is self-intersecting")

    def contains(self, pts):
        """Even-odd ray cast (positive x direction), vectorized."""
        P = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        x, y = P[:, 0], P[:, 1]
        inside = np.zeros(len(P), dtype=bool)
        V = self.vertices
        n = len(V)
        for i in range(n):
            x0, y0 = V[i]
            x1, y1 = V[(i + 1) % n]
            cond = (y0 > y) != (y1 > y)
            with np.errstate(divide="ignore", invalid="ignore"):
                xi = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
            inside ^= cond & (x < xi)
        return inside

    def distance(self, pts):
        """Unsigned distance to the chain, vectorized."""
        P = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        best = np.full(len(P), np.inf)
        for (a, b), ln in zip(self.edges, self.edge_len):
            t = ((P - a) @ (b - a)) / ln**2
            t = np.clip(t, 0.0, 1.0)
            proj = a + t[:, None] * (b - a)
            best = np.minimum(best, np.linalg.norm(P - proj, axis=1))
        return best

    def value(self, pts):
        """Signed distance: negative inside (region 0)."""
        P = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        d = self.distance(P)
        sgn = np.where(self.contains(P), -1.0, 1.0)
        out = sgn * d
        if np.asarray(pts).ndim == 1:
            return out[0]
        return out

    def nearest_point(self, p):
        """Closest point on the chain plus the owning edge index."""
        p = np.asarray(p, dtype=np.float64)
        best, bp, be = np.inf, None, -1
        for i, ((a, b), ln) in enumerate(zip(self.edges, self.edge_len)):
            t = np.clip(np.dot(p - a, b - a) / ln**2, 0.0, 1.0)
            proj = a + t * (b - a)
            d = np.linalg.norm(p - proj)
            if d < best:
                best, bp, be = d, proj, i
        return bp, be

    def grad(self, pts):
        """Direction of increasing signed distance (toward region 1)."""
        P = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        out = np.zeros_like(P)
        inside = self.contains(P)
        for k, p in enumerate(P):
            q, e = self.nearest_point(p)
            d = p - q
            nd = np.linalg.norm(d)
            if nd > 1e-14:
                out[k] = d / nd * (-1.0 if inside[k] else 1.0)
            else:
                out[k] = self.edge_normals[e]
        if np.asarray(pts).ndim == 1:
            return out[0]
        return out


class TriangulatedSurface:
    """Closed triangulated surface in 3D; enclosed volume is region 0."""

    kind = "surface"
    dim = 3

    def __init__(self, vertices, triangles):
        self.vertices = np.asarray(vertices, dtype=np.float64)
        self.triangles = np.asarray(triangles, dtype=np.int64)
        tri = self.vertices[self.triangles]
        n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        area2 = np.linalg.norm(n, axis=1)
        if np.any(area2 <= 0):
            raise GeometryError("degenerate surface triangle")
        # orient outward using the divergence theorem on x
        vol6 = np.sum(np.einsum("ij,ij->i", tri[:, 0], n))
        self._orient = 1.0 if vol6 > 0 else -1.0
        self.tri_normals = self._orient * n / area2[:, None]
        self.name = "surface"

    def contains(self, pts):
        P = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        inside = np.zeros(len(P), dtype=bool)
        direction = np.array([0.977025, 0.151965, 0.149385])  # unlikely to graze
        direction /= np.linalg.norm(direction)
        for k, p in enumerate(P):
            hits = _ray_triangle_hits(p, direction, self.vertices[self.triangles])
            inside[k] = (len(hits) % 2) == 1
        return inside

    def distance(self, pts):
        P = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        return np.array([np.linalg.norm(p - self.nearest_point(p)[0]) for p in P])

    def value(self, pts):
        P = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        d = self.distance(P)
        sgn = np.where(self.contains(P), -1.0, 1.0)
        out = sgn * d
        if np.asarray(pts).ndim == 1:
            return out[0]
        return out

    def nearest_point(self, p):
        p = np.asarray(p, dtype=np.float64)
        best, bp, bt = np.inf, None, -1
        for i, tri in enumerate(self.vertices[self.triangles]):
            q = _closest_point_triangle(p, tri)
            d = np.linalg.norm(p - q)
            if d < best:
                best, bp, bt = d, q, i
        return bp, bt

    def grad(self, pts):
        P = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        out = np.zeros_like(P)
        inside = self.contains(P)
        for k, p in enumerate(P):
            q, t = self.nearest_point(p)
            d = p - q
            nd = np.linalg.norm(d)
            if nd > 1e-14:
                out[k] = d / nd * (-1.0 if inside[k] else 1.0)
            else:
                out[k] = self.tri_normals[t]
        if np.asarray(pts).ndim == 1:
            return out[0]
        return out


def lshaped_polygon() -> PolygonalInterface:
    """Six-vertex L-shaped loop with a reentrant corner at the origin."""
    return PolygonalInterface(
        [(0.0, 0.0), (-0.35, 0.35), (0.0, 0.7), (0.7, 0.0), (0.0, -0.7), (-0.35, -0.35)]
    )


def load_polygon(path) -> PolygonalInterface:
    """Vertex-loop file: one 'x y' per line, loop closed implicitly."""
    pts = np.loadtxt(path, ndmin=2)
    return PolygonalInterface(pts[:, :2])


def side_of(geom, p, tol=ON_TOL):
    """Classify a point: REGION0, REGION1 or ON_INTERFACE (|value| <= tol)."""
    v = float(np.asarray(geom.value(np.atleast_2d(p))).ravel()[0])
    if abs(v) <= tol:
        return ON_INTERFACE
    return REGION0 if v < 0 else REGION1


def definite_sides(geom, pts, h, tol=ON_TOL):
    """Side per point; points in the tolerance band are nudged along +grad.

    Returns an int array of REGION0/REGION1 (never ON_INTERFACE): points
    within tol of the interface are perturbed by 1e-10*h toward region 1
    before classification, so quadrature points always get a definite side.
    """
    P = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    v = np.asarray(geom.value(P), dtype=np.float64).ravel()
    on = np.abs(v) <= tol
    if np.any(on):
        g = np.atleast_2d(geom.grad(P[on]))
        g = g / np.linalg.norm(g, axis=1, keepdims=True)
        v = v.copy()
        v[on] = np.asarray(geom.value(P[on] + 1e-10 * h * g)).ravel()
    return np.where(v < 0, REGION0, REGION1)


def edge_intersections(geom, a, b, samples=8, tol=ON_TOL):
    """Interface crossings of the segment a->b as parameters t in (0,1).

    Level sets: sign-change bracketing on `samples` subintervals followed by
    bisection to 1e-12*|b-a| in parameter. Polygons/surfaces: exact
    segment-segment / segment-triangle solves. Returns (sorted unique ts,
    grazing) where grazing flags a near-touch without a sign change.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if np.linalg.norm(b - a) == 0.0:
        raise GeometryError("degenerate segment")
    if geom.kind == "levelset":
        return _levelset_edge_intersections(geom, a, b, samples, tol)
    if geom.kind == "polygon":
        ts = []
        for (p0, p1) in geom.edges:
            t = _segment_segment_param(a, b, p0, p1)
            if t is not None:
                ts.append(t)
        return _dedup_params(ts), False
    if geom.kind == "surface":
        hits = _ray_triangle_hits(a, b - a, geom.vertices[geom.triangles], segment=True)
        return _dedup_params(hits), False
    raise GeometryError(f"unknown geometry kind {geom.kind!r}")


def _levelset_edge_intersections(geom, a, b, samples, tol):
    ts = np.linspace(0.0, 1.0, samples + 1)
    vals = np.asarray(geom.value(a + ts[:, None] * (b - a))).ravel()
    roots = []
    for i in range(samples):
        v0, v1 = vals[i], vals[i + 1]
        if abs(v0) <= tol:
            if 0.0 < ts[i] < 1.0:
                roots.append(ts[i])
            continue
        if v0 * v1 < 0.0:
            lo, hi, flo = ts[i], ts[i + 1], v0
            while hi - lo > 1e-12:
                mid = 0.5 * (lo + hi)
                fm = float(geom.value(a + mid * (b - a)))
                if fm == 0.0:
                    lo = hi = mid
                    break
                if flo * fm < 0.0:
                    hi = mid
                else:
                    lo, flo = mid, fm
            roots.append(0.5 * (lo + hi))
    roots = [t for t in roots if 0.0 < t < 1.0]
    grazing = False
    if not roots and np.min(np.abs(vals)) < tol and abs(vals[0]) > tol and abs(vals[-1]) > tol:
        grazing = True
    return _dedup_params(roots), grazing


def project_to_interface(geom, p, max_iter=50, tol=1e-13):
    """Closest/foot point on the interface for a point within ~h of it."""
    p = np.asarray(p, dtype=np.float64)
    if geom.kind == "levelset":
        x = p.copy()
        for _ in range(max_iter):
            v = float(geom.value(x))
            if abs(v) < tol:
                return x
            g = np.asarray(geom.grad(x), dtype=np.float64)
            x = x - v * g / np.dot(g, g)
        raise GeometryError("projection did not converge (point far from the interface?)")
    return geom.nearest_point(p)[0]


# -- low-level helpers --------------------------------------------------------


def _dedup_params(ts, tol=1e-10):
    out = []
    for t in sorted(ts):
        if not out or t - out[-1] > tol:
            out.append(float(t))
    return out


def _segment_segment_param(a, b, p0, p1, eps=1e-14):
    """Parameter t on a->b of the crossing with p0->p1, or None."""
    d1 = b - a
    d2 = p1 - p0
    det = d1[0] * d2[1] - d1[1] * d2[0]
    scale = max(np.linalg.norm(d1), np.linalg.norm(d2))
    if abs(det) < eps * scale * scale:
        return None  # parallel (collinear overlap handled by the caller)
    rhs = p0 - a
    t = (rhs[0] * d2[1] - rhs[1] * d2[0]) / det
    s = (rhs[0] * d1[1] - rhs[1] * d1[0]) / det
    if -1e-12 <= s <= 1.0 + 1e-12 and 1e-12 < t < 1.0 - 1e-12:
        return float(t)
    return None


def _segments_cross(a0, a1, b0, b1):
    d1, d2 = a1 - a0, b1 - b0
    det = d1[0] * d2[1] - d1[1] * d2[0]
    if abs(det) < 1e-14:
        return False
    rhs = b0 - a0
    t = (rhs[0] * d2[1] - rhs[1] * d2[0]) / det
    s = (rhs[0] * d1[1] - rhs[1] * d1[0]) / det
    return 1e-12 < t < 1 - 1e-12 and 1e-12 < s < 1 - 1e-12


def _ray_triangle_hits(origin, direction, tris, segment=False, eps=1e-13):
    """Parameters t of ray/segment hits against (T,3,3) triangles."""
    hits = []
    for tri in tris:
        e1 = tri[1] - tri[0]
        e2 = tri[2] - tri[0]
        pvec = np.cross(direction, e2)
        det = np.dot(e1, pvec)
        if abs(det) < eps:
            continue
        inv = 1.0 / det
        tvec = origin - tri[0]
        u = np.dot(tvec, pvec) * inv
        if u < -1e-12 or u > 1 + 1e-12:
            continue
        qvec = np.cross(tvec, e1)
        v = np.dot(direction, qvec) * inv
        if v < -1e-12 or u + v > 1 + 1e-12:
            continue
        t = np.dot(e2, qvec) * inv
        if segment:
            if 1e-12 < t < 1 - 1e-12:
                hits.append(float(t))
        elif t > 1e-12:
            hits.append(float(t))
    return _dedup_params(hits)


def _closest_point_triangle(p, tri):
    a, b, c = tri
    ab, ac, ap = b - a, c - a, p - a
    d1, d2 = np.dot(ab, ap), np.dot(ac, ap)
    if d1 <= 0 and d2 <= 0:
        return a
    bp = p - b
    d3, d4 = np.dot(ab, bp), np.dot(ac, bp)
    if d3 >= 0 and d4 <= d3:
        return b
    vc = d1 * d4 - d3 * d2
    if vc <= 0 and d1 >= 0 and d3 <= 0:
        return a + ab * (d1 / (d1 - d3))
    cp = p - c
    d5, d6 = np.dot(ab, cp), np.dot(ac, cp)
    if d6 >= 0 and d5 <= d6:
        return c
    vb = d5 * d2 - d1 * d6
    if vb <= 0 and d2 >= 0 and d6 <= 0:
        return a + ac * (d2 / (d2 - d6))
    va = d3 * d6 - d5 * d4
    if va <= 0 and (d4 - d3) >= 0 and (d5 - d6) >= 0:
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)))
    denom = 1.0 / (va + vb + vc)
    return a + ab * (vb * denom) + ac * (vc * denom)
