"""Exact convex polygon arithmetic in the plane.

Polygons carry a vertex list (counter-clockwise) and a normalized
halfspace description, each derived from the other on demand.  Points and
segments are valid polygons.
"""
from __future__ import annotations

import math

import numpy as np

TOL = 1e-9


class PolytopeError(ValueError):
    """Invalid argument to a polytope operation."""


class EmptySetError(PolytopeError):
    pass


class UnboundedError(PolytopeError):
    pass


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points, tol: float = TOL) -> np.ndarray:
    """Counter-clockwise hull of ``points`` (monotone chain).

    Vertices closer than ``tol`` are merged and vertices within ``tol`` of
    the line through their neighbours are dropped, so collinear input
    collapses to its two endpoints and coincident input to a single point.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        return np.empty((0, 2))
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]
    uniq = [pts[0]]
    for p in pts[1:]:
        if abs(p[0] - uniq[-1][0]) > tol or abs(p[1] - uniq[-1][1]) > tol:
            uniq.append(p)
    if len(uniq) == 1:
        return np.array(uniq)

    def half(seq):
        chain = []
        for p in seq:
            while len(chain) >= 2:
                o, a = chain[-2], chain[-1]
                span = math.hypot(p[0] - o[0], p[1] - o[1])
                # distance of `a` from the chord o-p, signed to the left
                if _cross(o, a, p) <= tol * span:
                    chain.pop()
                else:
                    break
            chain.append(p)
        return chain

    lower = half(uniq)
    upper = half(uniq[::-1])
    ring = lower[:-1] + upper[:-1]
    if len(ring) < 2:
        ring = [uniq[0], uniq[-1]]
    out = np.array(ring)
    if len(out) == 2 and np.max(np.abs(out[0] - out[1])) <= tol:
        out = out[:1]
    return out


def _normalize_rows(normals, offsets):
    normals = np.asarray(normals, dtype=float).reshape(-1, 2)
    offsets = np.asarray(offsets, dtype=float).reshape(-1)
    if len(normals) != len(offsets):
        raise PolytopeError("normals and offsets differ in length")
    norms = np.hypot(normals[:, 0], normals[:, 1])
    return normals, offsets, norms


def _is_bounded(normals) -> bool:
    if len(normals) < 3:
        return False
    ang = np.sort(np.arctan2(normals[:, 1], normals[:, 0]))
    gaps = np.diff(np.concatenate([ang, [ang[0] + 2 * math.pi]]))
    return bool(np.max(gaps) < math.pi - 1e-12)


class Polytope2:
    """Bounded convex polygon, possibly degenerate or empty.

    Instances are immutable; build them with the ``from_*`` constructors.
    """

    __slots__ = ("_vertices", "_hrep")

    def __init__(self, vertices=None, hrep=None):
        self._vertices = vertices
        self._hrep = hrep

    # constructors -----------------------------------------------------
    @classmethod
    def empty(cls) -> "Polytope2":
        return cls(vertices=np.empty((0, 2)))

    @classmethod
    def from_vertices(cls, points, tol: float = TOL) -> "Polytope2":
        return cls(vertices=convex_hull(points, tol))

    @classmethod
    def point(cls, p) -> "Polytope2":
        return cls(vertices=np.asarray(p, dtype=float).reshape(1, 2))

    @classmethod
    def from_halfspaces(cls, normals, offsets) -> "Polytope2":
        """Polygon ``{x : normals @ x <= offsets}``; rows are normalized."""
        normals, offsets, norms = _normalize_rows(normals, offsets)
        keep = norms > 0
        if np.any(offsets[~keep] < 0):
            return cls.empty()
        normals = normals[keep] / norms[keep, None]
        offsets = offsets[keep] / norms[keep]
        if not _is_bounded(normals):
            raise UnboundedError("halfspaces do not describe a bounded set")
        m = len(normals)
        cands = []
        for i in range(m):
            for j in range(i + 1, m):
                det = normals[i, 0] * normals[j, 1] - normals[i, 1] * normals[j, 0]
                if abs(det) < 1e-12:
                    continue
                x = (offsets[i] * normals[j, 1] - normals[i, 1] * offsets[j]) / det
                y = (normals[i, 0] * offsets[j] - offsets[i] * normals[j, 0]) / det
                cands.append((x, y))
        if not cands:
            return cls.empty()
        cands = np.array(cands)
        slack = TOL * np.maximum(1.0, np.abs(offsets))
        ok = np.all(cands @ normals.T - offsets <= slack, axis=1)
        if not np.any(ok):
            return cls.empty()
        return cls(vertices=convex_hull(cands[ok]))

    # representations --------------------------------------------------
    @property
    def vertices(self) -> np.ndarray:
        if self._vertices is None:
            p = Polytope2.from_halfspaces(*self._hrep)
            self._vertices = p._vertices
        return self._vertices

    @property
    def is_empty(self) -> bool:
        return len(self.vertices) == 0

    @property
    def hrep(self) -> tuple[np.ndarray, np.ndarray]:
        """Unit-normal rows ``(H, h)`` with ``H @ x <= h`` on the set."""
        if self._hrep is None:
            self._hrep = _hrep_from_vertices(self.vertices)
        return self._hrep

    # queries ----------------------------------------------------------
    def contains(self, x, tol: float = TOL) -> bool:
        if self.is_empty:
            return False
        H, h = self.hrep
        return bool(np.all(H @ np.asarray(x, dtype=float) - h <= tol))

    def is_subset(self, other: "Polytope2", tol: float = TOL) -> bool:
        if self.is_empty:
            return True
        if other.is_empty:
            return False
        H, h = other.hrep
        return bool(np.all(self.vertices @ H.T - h <= tol))

    def area(self) -> float:
        v = self.vertices
        if len(v) < 3:
            return 0.0
        x, y = v[:, 0], v[:, 1]
        return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))

    def linear_map(self, M) -> "Polytope2":
        M = np.asarray(M, dtype=float)
        if self.is_empty:
            return self
        return Polytope2.from_vertices(self.vertices @ M.T)

    def translate(self, t) -> "Polytope2":
        return Polytope2(vertices=self.vertices + np.asarray(t, dtype=float))

    def __repr__(self):
        return f"Polytope2({self.vertices.tolist()!r})"


def _hrep_from_vertices(v):
    k = len(v)
    if k == 0:
        raise EmptySetError("empty set has no halfspace representation")
    if k == 1:
        x, y = v[0]
        H = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        return H, np.array([x, -x, y, -y])
    if k == 2:
        a, b = v
        d = (b - a) / math.hypot(*(b - a))
        n = np.array([d[1], -d[0]])
        H = np.array([n, -n, d, -d])
        return H, np.array([n @ a, -(n @ a), d @ b, -(d @ a)])
    edges = np.roll(v, -1, axis=0) - v
    lens = np.hypot(edges[:, 0], edges[:, 1])
    H = np.column_stack([edges[:, 1], -edges[:, 0]]) / lens[:, None]
    return H, np.einsum("ij,ij->i", H, v)


def from_box(center, half_widths) -> Polytope2:
    """Axis-aligned rectangle; a zero half-width gives a segment or point."""
    c = np.asarray(center, dtype=float)
    hw = np.asarray(half_widths, dtype=float)
    if np.any(hw < 0):
        raise PolytopeError(f"negative half-width {hw.tolist()}")
    H = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    h = np.array([c[0] + hw[0], -(c[0] - hw[0]), c[1] + hw[1], -(c[1] - hw[1])])
    corners = c + hw * np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]])
    verts = convex_hull(corners)
    hrep = (H, h) if len(verts) == 4 else None
    return Polytope2(vertices=verts, hrep=hrep)


def minkowski_sum(p: Polytope2, q: Polytope2) -> Polytope2:
    if p.is_empty or q.is_empty:
        raise EmptySetError("Minkowski sum of an empty set")
    a, b = p.vertices, q.vertices
    sums = (a[:, None, :] + b[None, :, :]).reshape(-1, 2)
    return Polytope2.from_vertices(sums)


def intersect_halfspace(p: Polytope2, normal, offset: float) -> Polytope2:
    """Clip ``p`` to ``{x : normal @ x <= offset}``; may return an empty set."""
    n = np.asarray(normal, dtype=float)
    nn = math.hypot(n[0], n[1])
    if nn == 0.0:
        raise PolytopeError("zero halfspace normal")
    n = n / nn
    c = float(offset) / nn
    v = p.vertices
    if len(v) == 0:
        return p
    s = v @ n - c
    if np.all(s <= 0):
        return p
    if np.all(s > 0):
        return Polytope2.empty()
    out = []
    k = len(v)
    for i in range(k):
        j = (i + 1) % k
        si, sj = s[i], s[j]
        if si <= 0:
            out.append(v[i])
        if (si <= 0) != (sj <= 0):
            t = si / (si - sj)
            out.append(v[i] + t * (v[j] - v[i]))
    return Polytope2.from_vertices(np.array(out))


def project_axis(p: Polytope2, axis_index: int) -> tuple[float, float]:
    if axis_index not in (0, 1):
        raise PolytopeError(f"axis_index must be 0 or 1, got {axis_index}")
    if p.is_empty:
        raise EmptySetError("projection of an empty set")
    col = p.vertices[:, axis_index]
    return float(col.min()), float(col.max())


def _point_segment_distance(x, a, b):
    d = b - a
    dd = d @ d
    t = 0.0 if dd == 0.0 else min(1.0, max(0.0, ((x - a) @ d) / dd))
    r = x - (a + t * d)
    return math.hypot(r[0], r[1])


def distance_point(p, q: Polytope2) -> float:
    """Euclidean distance from point ``p`` to ``q`` (0 inside)."""
    if q.is_empty:
        raise EmptySetError("distance to an empty set")
    x = np.asarray(p, dtype=float)
    v = q.vertices
    if len(v) == 1:
        return float(math.hypot(*(x - v[0])))
    if len(v) >= 3:
        H, h = q.hrep
        if np.all(H @ x - h <= 0.0):
            return 0.0
    k = len(v)
    best = math.inf
    for i in range(k if k > 2 else 1):
        best = min(best, _point_segment_distance(x, v[i], v[(i + 1) % k]))
    return best


def distance_polytopes(p: Polytope2, q: Polytope2) -> float:
    """Minimum distance between two polygons via their Minkowski difference."""
    if p.is_empty or q.is_empty:
        raise EmptySetError("distance to an empty set")
    diff = (p.vertices[:, None, :] - q.vertices[None, :, :]).reshape(-1, 2)
    return distance_point(np.zeros(2), Polytope2.from_vertices(diff))


def hausdorff_distance(p: Polytope2, q: Polytope2) -> float:
    # the distance to a convex set is convex, so vertices attain the maximum
    d_pq = max(distance_point(v, q) for v in p.vertices)
    d_qp = max(distance_point(v, p) for v in q.vertices)
    return max(d_pq, d_qp)
