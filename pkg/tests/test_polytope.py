import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from merge_planner.polytope import (EmptySetError, Polytope2, PolytopeError, UnboundedError,
                                    distance_point, distance_polytopes, from_box,
                                    hausdorff_distance, intersect_halfspace, minkowski_sum,
                                    project_axis)


def box(x0, x1, y0, y1):
    return from_box(((x0 + x1) / 2, (y0 + y1) / 2), ((x1 - x0) / 2, (y1 - y0) / 2))


def same_set(p, q, tol=1e-9):
    return hausdorff_distance(p, q) < tol


def random_polygon(rng, k=None):
    k = k or rng.integers(3, 13)
    ang = np.sort(rng.uniform(0, 2 * np.pi, k))
    r = rng.uniform(0.5, 3.0, k)
    c = rng.uniform(-5, 5, 2)
    return Polytope2.from_vertices(c + np.column_stack([r * np.cos(ang), r * np.sin(ang)]))


def sample_inside(p, rng, n):
    v = p.vertices
    w = rng.dirichlet(np.ones(len(v)), size=n)
    return w @ v


# --- brute-force oracles ------------------------------------------------

def hull_oracle(points):
    """Gift wrapping, written independently of the library hull."""
    pts = np.unique(np.round(np.asarray(points, float), 12), axis=0)
    start = pts[np.lexsort((pts[:, 1], pts[:, 0]))[0]]
    hull = [start]
    cur = start
    while True:
        cand = pts[0] if not np.allclose(pts[0], cur) else pts[1]
        for q in pts:
            cr = (cand[0] - cur[0]) * (q[1] - cur[1]) - (cand[1] - cur[1]) * (q[0] - cur[0])
            if cr < -1e-12 or (abs(cr) <= 1e-12 and
                               np.hypot(*(q - cur)) > np.hypot(*(cand - cur))):
                cand = q
        if np.allclose(cand, start):
            break
        hull.append(cand)
        cur = cand
    return np.array(hull)


def boundary_distance_oracle(x, p, step=1e-4):
    v = p.vertices
    best = math.inf
    for a, b in zip(v, np.roll(v, -1, axis=0)):
        n = max(2, int(np.hypot(*(b - a)) / step) + 1)
        t = np.linspace(0, 1, n)[:, None]
        pts = a + t * (b - a)
        best = min(best, float(np.min(np.hypot(*(pts - x).T))))
    return best


def pair_distance_oracle(p, q):
    """Min over vertex/edge pairs of both polygons (disjoint sets)."""
    def edges(v):
        return list(zip(v, np.roll(v, -1, axis=0))) if len(v) > 1 else [(v[0], v[0])]

    def seg_pt(x, a, b):
        d = b - a
        t = 0.0 if d @ d == 0 else np.clip((x - a) @ d / (d @ d), 0, 1)
        return np.hypot(*(x - a - t * d))
    best = math.inf
    for x in p.vertices:
        for a, b in edges(q.vertices):
            best = min(best, seg_pt(x, a, b))
    for x in q.vertices:
        for a, b in edges(p.vertices):
            best = min(best, seg_pt(x, a, b))
    return best


# --- from_box -------------------------------------------------------------

def test_box_table_dimensions():
    p = from_box((0, 0), (2.15, 0.9))
    assert project_axis(p, 0) == pytest.approx((-2.15, 2.15))
    assert project_axis(p, 1) == pytest.approx((-0.9, 0.9))
    H, h = p.hrep
    assert len(H) == 4
    np.testing.assert_allclose(np.linalg.norm(H, axis=1), 1.0, atol=1e-12)


def test_box_degenerate_point():
    p = from_box((5, 6), (0, 0))
    np.testing.assert_allclose(p.vertices, [[5, 6]])


def test_box_vertices():
    p = from_box((1, 1), (1, 2))
    got = {tuple(np.round(v, 12)) for v in p.vertices}
    assert got == {(0, -1), (2, -1), (2, 3), (0, 3)}


def test_box_negative_half_width():
    with pytest.raises(PolytopeError):
        from_box((0, 0), (-1, 1))


# --- minkowski_sum ----------------------------------------------------------

def test_minkowski_boxes():
    s = minkowski_sum(box(-1, 1, -1, 1), box(-2, 2, -0.5, 0.5))
    assert same_set(s, box(-3, 3, -1.5, 1.5))


def test_minkowski_point_translates():
    p = random_polygon(np.random.default_rng(1))
    s = minkowski_sum(p, Polytope2.point((2.5, -1)))
    assert same_set(s, p.translate((2.5, -1)))


def test_minkowski_segment_box_hexagon():
    seg = Polytope2.from_vertices([(0, 0), (1, 1)])
    s = minkowski_sum(seg, box(-1, 1, -1, 1))
    expected = [(-1, -1), (1, -1), (2, 0), (2, 2), (0, 2), (-1, 1)]
    sums = [np.add(a, b) for a in [(0, 0), (1, 1)] for b in box(-1, 1, -1, 1).vertices]
    oracle = hull_oracle(sums)
    assert {tuple(np.round(v, 9)) for v in s.vertices} == {tuple(map(float, e)) for e in expected}
    assert same_set(s, Polytope2(vertices=oracle))


def test_minkowski_empty_raises():
    with pytest.raises(EmptySetError):
        minkowski_sum(Polytope2.empty(), box(0, 1, 0, 1))


def test_unbounded_halfspaces_rejected():
    with pytest.raises(UnboundedError):
        Polytope2.from_halfspaces([[1, 0], [0, 1]], [1, 1])


def test_minkowski_containment_random():
    rng = np.random.default_rng(2)
    for _ in range(20):
        p, q = random_polygon(rng), random_polygon(rng)
        s = minkowski_sum(p, q)
        xs = sample_inside(p, rng, 50)
        ys = sample_inside(q, rng, 50)
        H, h = s.hrep
        assert np.all((xs + ys) @ H.T - h <= 1e-9)


# --- intersect_halfspace --------------------------------------------------

def test_clip_axis():
    c = intersect_halfspace(box(0, 10, 49.5, 50.5), (0, 1), 50)
    assert same_set(c, box(0, 10, 49.5, 50))


def test_clip_inactive():
    b = box(0, 1, 0, 1)
    assert same_set(intersect_halfspace(b, (1, 0), 5), b)


def test_clip_triangle_area():
    tri = Polytope2.from_vertices([(0, 0), (2, 0), (0, 2)])
    c = intersect_halfspace(tri, np.array([1, 1]) / math.sqrt(2), 1 / math.sqrt(2))
    assert c.area() == pytest.approx(0.5, abs=1e-12)
    assert same_set(c, Polytope2.from_vertices([(0, 0), (1, 0), (0, 1)]))


def test_clip_empty_and_zero_normal():
    assert intersect_halfspace(box(0, 1, 0, 1), (1, 0), -1).is_empty
    with pytest.raises(PolytopeError):
        intersect_halfspace(box(0, 1, 0, 1), (0, 0), 1)


def test_clip_soundness_random():
    rng = np.random.default_rng(3)
    for _ in range(200):
        p = random_polygon(rng)
        n = rng.normal(size=2)
        n /= np.linalg.norm(n)
        c = float(n @ rng.uniform(-5, 5, 2))
        out = intersect_halfspace(p, n, c)
        if out.is_empty:
            assert np.all(p.vertices @ n > c - 1e-9)
            continue
        H, h = p.hrep
        assert np.all(out.vertices @ n - c <= 1e-9)
        assert np.all(out.vertices @ H.T - h <= 1e-9)


# --- project_axis ------------------------------------------------------------

def test_project_examples():
    assert project_axis(box(5.32, 9.68, 5.1, 6.9), 0) == pytest.approx((5.32, 9.68))
    assert project_axis(Polytope2.point((7.5, 30)), 1) == (30.0, 30.0)
    hexagon = minkowski_sum(Polytope2.from_vertices([(0, 0), (1, 1)]), box(-1, 1, -1, 1))
    assert project_axis(hexagon, 0) == pytest.approx((-1, 2))


def test_project_empty_raises():
    with pytest.raises(EmptySetError):
        project_axis(Polytope2.empty(), 0)


def test_project_covers_samples():
    rng = np.random.default_rng(4)
    p = random_polygon(rng)
    xs = sample_inside(p, rng, 1000)
    for k in (0, 1):
        lo, hi = project_axis(p, k)
        assert np.all(xs[:, k] >= lo - 1e-12) and np.all(xs[:, k] <= hi + 1e-12)


# --- distances ---------------------------------------------------------------

def test_distance_point_examples():
    b = box(-1, 1, -1, 1)
    assert distance_point((3, 0), b) == pytest.approx(2.0)
    assert distance_point((0, 0), b) == 0.0
    assert distance_point((3, 3), b) == pytest.approx(math.sqrt(8), abs=1e-7)


def test_distance_point_vs_boundary_grid():
    rng = np.random.default_rng(5)
    for _ in range(10):
        p = random_polygon(rng, k=6)
        x = rng.uniform(-9, 9, 2)
        d = distance_point(x, p)
        if d > 0:
            assert d == pytest.approx(boundary_distance_oracle(x, p), abs=1e-4)


def test_distance_polytopes_examples():
    assert distance_polytopes(box(0, 1, 0, 1), box(3, 4, 0, 1)) == pytest.approx(2.0)
    assert distance_polytopes(box(0, 2, 0, 2), box(1, 3, 1, 3)) == 0.0
    assert distance_polytopes(box(0, 1, 0, 1), box(2, 3, 2, 3)) == pytest.approx(math.sqrt(2), abs=1e-7)


def test_distance_polytopes_vs_pair_oracle():
    rng = np.random.default_rng(6)
    checked = 0
    for _ in range(300):
        p, q = random_polygon(rng), random_polygon(rng)
        d = distance_polytopes(p, q)
        if d > 0:
            assert abs(d - pair_distance_oracle(p, q)) <= 1e-9
            checked += 1
    assert checked > 50


# --- representation invariants ------------------------------------------------

def test_hrep_vrep_round_trip():
    rng = np.random.default_rng(7)
    for _ in range(200):
        p = random_polygon(rng)
        H, h = p.hrep
        np.testing.assert_allclose(np.linalg.norm(H, axis=1), 1.0, atol=1e-12)
        q = Polytope2.from_halfspaces(H, h)
        assert same_set(p, q)
        assert np.all(p.vertices @ H.T - h <= 1e-9)
        # every facet supported by some vertex
        assert np.all(np.min(np.abs(p.vertices @ H.T - h), axis=0) <= 1e-9)


def test_vertices_counter_clockwise():
    rng = np.random.default_rng(8)
    for _ in range(100):
        v = random_polygon(rng).vertices
        e = np.roll(v, -1, axis=0) - v
        cross = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
        assert np.all(cross >= -1e-12)


coord = st.floats(-50, 50, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(coord, coord), min_size=1, max_size=12))
def test_hull_matches_oracle(points):
    p = Polytope2.from_vertices(points)
    pts = np.array(points, float)
    # every input point lies in the hull and every hull vertex is an input point
    if len(p.vertices) >= 3:
        H, h = p.hrep
        assert np.all(pts @ H.T - h <= 1e-7)
    for v in p.vertices:
        assert np.min(np.hypot(*(pts - v).T)) < 1e-9
