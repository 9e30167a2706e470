"""Delaunay triangulation and rectangle-bounded Voronoi cells of nuclei points.

The triangulation builds a valid sweep triangulation over lexicographically
sorted points (orientation predicates only, so no large auxiliary
coordinates ever enter the float math) and then legalizes it with Lawson
flips until every interior edge satisfies the empty-circumcircle predicate.
Voronoi cells are computed independently by clipping half-planes against the
patch rectangle, which yields bounded convex cells without infinite-edge
bookkeeping.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .points import PointSet

MERGE_EPS = 1e-6        # points closer than this are merged before tessellating
PREDICATE_EPS = 1e-9    # tie band on the normalized circumcircle determinant
_FLIP_EPS = 1e-12       # stricter flip threshold so ties stay untouched


class DegenerateGeometryError(ValueError):
    """Tessellation undefined: fewer than 3 distinct points, or all collinear."""


# ---------------------------------------------------------------------------
# shared predicates

def _orient(a, b, c) -> float:
    """Twice the signed area of triangle (a, b, c); positive when CCW."""
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def incircle_excess(a, b, c, p) -> float:
    """Normalized in-circumcircle determinant for CCW triangle (a, b, c).

    Positive when p lies strictly inside the circumcircle; magnitudes at or
    below PREDICATE_EPS are treated as cocircular ties by the callers.
    """
    adx, ady = a[0] - p[0], a[1] - p[1]
    bdx, bdy = b[0] - p[0], b[1] - p[1]
    cdx, cdy = c[0] - p[0], c[1] - p[1]
    al = adx * adx + ady * ady
    bl = bdx * bdx + bdy * bdy
    cl = cdx * cdx + cdy * cdy
    det = (
        adx * (bdy * cl - cdy * bl)
        - ady * (bdx * cl - cdx * bl)
        + al * (bdx * cdy - cdx * bdy)
    )
    ext = max(abs(adx), abs(ady), abs(bdx), abs(bdy), abs(cdx), abs(cdy), 1e-300)
    return det / ext**4


def _tol(a, b, c) -> float:
    """Orientation rounding tolerance, scaled like the cross product terms."""
    return 1e-12 * (abs(b[0] - a[0]) + abs(b[1] - a[1])) * (
        abs(c[0] - a[0]) + abs(c[1] - a[1])
    )


def _merge_close(coords: np.ndarray, eps: float = MERGE_EPS) -> np.ndarray:
    """Indices of merge representatives (first occurrence wins)."""
    n = len(coords)
    if n < 2:
        return np.arange(n)
    diff = coords[:, None, :] - coords[None, :, :]
    close = (diff * diff).sum(-1) < eps * eps
    np.fill_diagonal(close, False)
    if not close.any():
        return np.arange(n)
    taken = np.zeros(n, dtype=bool)
    reps = []
    for i in range(n):
        if taken[i]:
            continue
        reps.append(i)
        taken |= close[i]
        taken[i] = True
    return np.asarray(reps, dtype=np.int64)


# ---------------------------------------------------------------------------
# Delaunay triangulation

@dataclass
class Triangulation:
    """Delaunay triangles as sorted index triples into the original points."""

    triangles: list
    points: PointSet

    def triangle_coords(self, t: tuple[int, int, int]) -> np.ndarray:
        return self.points.coords[list(t)]

    def edge_set(self) -> list[tuple[int, int]]:
        """Unique undirected edges (u < v), sorted."""
        edges = set()
        for i, j, k in self.triangles:
            edges.add((min(i, j), max(i, j)))
            edges.add((min(j, k), max(j, k)))
            edges.add((min(i, k), max(i, k)))
        return sorted(edges)

    def triangle_areas(self) -> np.ndarray:
        c = self.points.coords
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        a, b, d = c[t[:, 0]], c[t[:, 1]], c[t[:, 2]]
        return 0.5 * np.abs(
            (b[:, 0] - a[:, 0]) * (d[:, 1] - a[:, 1])
            - (b[:, 1] - a[:, 1]) * (d[:, 0] - a[:, 0])
        )

    def side_lengths(self) -> np.ndarray:
        """All three side lengths of every triangle (3 per triangle)."""
        c = self.points.coords
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        a, b, d = c[t[:, 0]], c[t[:, 1]], c[t[:, 2]]
        return np.concatenate([
            np.hypot(*(a - b).T),
            np.hypot(*(b - d).T),
            np.hypot(*(d - a).T),
        ])


def _scan_triangulation(pts: np.ndarray) -> list[tuple[int, int, int]]:
    """Valid (covering, non-overlapping) triangulation by lexicographic sweep.

    `pts` must be merged and lexicographically sorted, with at least one
    point off the initial line.  Every new point lies outside the hull of
    its predecessors, so insertion is a fan over the strictly visible hull
    edges; only orientation predicates are used.  The result is generally
    not Delaunay and is legalized afterwards.
    """
    n = len(pts)
    triangles: list[tuple[int, int, int]] = []

    # maximal collinear prefix, measured against the chain extremes
    k = 2
    while k < n and abs(_orient(pts[0], pts[k - 1], pts[k])) <= _tol(pts[0], pts[k - 1], pts[k]):
        k += 1
    if k >= n:
        raise DegenerateGeometryError("points are collinear")
    o = _orient(pts[0], pts[k - 1], pts[k])
    for i in range(k - 1):
        triangles.append((i, i + 1, k) if o > 0 else (i + 1, i, k))
    hull = (list(range(k)) if o > 0 else list(range(k - 1, -1, -1))) + [k]

    for pid in range(k + 1, n):
        p = pts[pid]
        h = len(hull)
        visible = set()
        for i in range(h):
            a, b = hull[i], hull[(i + 1) % h]
            if _orient(pts[a], pts[b], p) < -_tol(pts[a], pts[b], p):
                visible.add(i)
        if not visible or len(visible) == h:
            raise RuntimeError("sweep insertion found no valid visible hull chain")
        start = next(i for i in sorted(visible) if (i - 1) % h not in visible)
        run = [start]
        while (run[-1] + 1) % h in visible:
            run.append((run[-1] + 1) % h)
        if len(run) != len(visible):
            raise RuntimeError("visible hull edges are not contiguous")
        for i in run:
            a, b = hull[i], hull[(i + 1) % h]
            triangles.append((b, a, pid))
        new_hull = []
        i = (run[-1] + 1) % h
        while True:
            new_hull.append(hull[i])
            if i == run[0]:
                break
            i = (i + 1) % h
        new_hull.append(pid)
        hull = new_hull
    return triangles


def _legalize(pts: np.ndarray, triangles: list[tuple[int, int, int]]) -> list[tuple[int, int, int]]:
    """Lawson flips until every interior edge is locally Delaunay (within eps)."""
    tris: dict[int, tuple[int, int, int]] = {i: t for i, t in enumerate(triangles)}
    edge_map: dict[tuple[int, int], set[int]] = {}

    def key(u, v):
        return (u, v) if u < v else (v, u)

    def register(tid, tri):
        tris[tid] = tri
        for u, v in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            edge_map.setdefault(key(u, v), set()).add(tid)

    def unregister(tid):
        tri = tris.pop(tid)
        for u, v in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            edge_map[key(u, v)].discard(tid)

    next_id = len(triangles)
    for tid, tri in list(tris.items()):
        for u, v in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            edge_map.setdefault(key(u, v), set()).add(tid)

    queue = sorted(e for e, ts in edge_map.items() if len(ts) == 2)
    budget = 200 * max(len(triangles), 1) + 10000
    while queue:
        if budget <= 0:
            raise RuntimeError("edge legalization did not converge")
        budget -= 1
        a, b = queue.pop()
        owners = sorted(edge_map.get((a, b), ()))
        if len(owners) != 2:
            continue
        t1, t2 = owners
        tri1, tri2 = tris[t1], tris[t2]
        c = next(x for x in tri1 if x not in (a, b))
        d = next(x for x in tri2 if x not in (a, b))
        pa, pb, pc, pd = pts[a], pts[b], pts[c], pts[d]
        # orient (a, b, c) CCW for the predicate
        if _orient(pa, pb, pc) < 0:
            pa, pb = pb, pa
            a, b = b, a
        if incircle_excess(pa, pb, pc, pd) <= _FLIP_EPS:
            continue
        # flip only across a strictly convex quadrilateral
        m2 = max(
            ((pc - pd) ** 2).sum(),
            ((pa - pb) ** 2).sum(),
        )
        guard = 1e-12 * m2
        o_a = _orient(pc, pd, pa)
        o_b = _orient(pc, pd, pb)
        opposite = (o_a > guard and o_b < -guard) or (o_a < -guard and o_b > guard)
        if not (
            opposite
            and _orient(pa, pb, pc) > guard
            and _orient(pa, pb, pd) < -guard
        ):
            continue
        unregister(t1)
        unregister(t2)
        n1, n2 = next_id, next_id + 1
        next_id += 2
        register(n1, (a, d, c))
        register(n2, (d, b, c))
        for e in (key(a, c), key(a, d), key(b, c), key(b, d)):
            queue.append(e)
    return [tris[t] for t in sorted(tris)]


def delaunay_triangulation(points: PointSet) -> Triangulation:
    """Delaunay triangulation of the point set.

    Points within MERGE_EPS of an earlier point are merged away first.
    Raises DegenerateGeometryError when fewer than 3 distinct points remain
    or all points are collinear; callers substitute zeroed features.
    Cocircular ties are broken by lexicographic insertion order, which also
    makes the triangle set invariant under input permutation.
    """
    reps = _merge_close(points.coords)
    if len(reps) < 3:
        raise DegenerateGeometryError("need at least 3 distinct points")
    coords = points.coords[reps]
    order = np.lexsort((coords[:, 1], coords[:, 0]))
    sorted_pts = coords[order]

    base = sorted_pts[-1] - sorted_pts[0]
    span = max(np.abs(sorted_pts - sorted_pts[0]).max(), 1e-12)
    cross = np.abs(
        base[0] * (sorted_pts[:, 1] - sorted_pts[0, 1])
        - base[1] * (sorted_pts[:, 0] - sorted_pts[0, 0])
    )
    if cross.max() <= 1e-9 * span * span:
        raise DegenerateGeometryError("points are collinear")

    raw = _scan_triangulation(sorted_pts)
    raw = _legalize(sorted_pts, raw)

    back = reps[order]
    triangles = sorted(tuple(sorted((int(back[i]), int(back[j]), int(back[k])))) for i, j, k in raw)
    tri = Triangulation(triangles=triangles, points=points)
    if len(tri.triangles) and tri.triangle_areas().min() <= 0.0:
        raise RuntimeError("triangulation produced a degenerate triangle")
    return tri


# ---------------------------------------------------------------------------
# bounded Voronoi cells

@dataclass
class VoronoiCells:
    """Convex Voronoi cells clipped to the patch rectangle.

    One polygon per merge representative (points within MERGE_EPS share the
    cell of their representative).  Polygons are CCW (x, y) vertex arrays.
    """

    polygons: list
    generator_index: np.ndarray    # original point index per polygon
    cell_of: np.ndarray            # polygon index per original point
    points: PointSet

    def areas(self) -> np.ndarray:
        return np.array([_poly_area(p) for p in self.polygons])

    def perimeters(self) -> np.ndarray:
        return np.array([_poly_perimeter(p) for p in self.polygons])

    def total_area(self) -> float:
        return float(self.areas().sum())


def _poly_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def _poly_perimeter(poly: np.ndarray) -> float:
    if len(poly) < 2:
        return 0.0
    d = poly - np.roll(poly, -1, axis=0)
    return float(np.hypot(d[:, 0], d[:, 1]).sum())


def _clip_halfplane(poly: np.ndarray, normal: np.ndarray, offset: float) -> np.ndarray:
    """Sutherland-Hodgman clip of a convex polygon to {x : normal.x <= offset}."""
    s = poly @ normal - offset
    tol = 1e-9 * max(1.0, abs(offset))
    inside = s <= tol
    if inside.all():
        return poly
    if not inside.any():
        return poly[:0]
    out = []
    k = len(poly)
    for i in range(k):
        j = (i + 1) % k
        if inside[i]:
            out.append(poly[i])
        if inside[i] != inside[j]:
            t = s[i] / (s[i] - s[j])
            out.append(poly[i] + t * (poly[j] - poly[i]))
    res = np.array(out)
    # drop consecutive near-duplicate vertices created by corner crossings
    if len(res) > 1:
        keep = np.ones(len(res), dtype=bool)
        for i in range(len(res)):
            j = (i + 1) % len(res)
            if keep[i] and np.abs(res[j] - res[i]).max() < 1e-9:
                keep[j if j != 0 else i] = False
        res = res[keep]
    return res


def voronoi_cells(points: PointSet) -> VoronoiCells:
    """Voronoi cells of all points, clipped to the patch rectangle.

    Cell of p is every location in the rectangle at least as close to p as to
    any other point.  Implemented as half-plane clipping against bisectors in
    order of generator distance, with an early exit once no farther generator
    can cut the current polygon.
    """
    n = len(points)
    if n < 1:
        raise ValueError("voronoi_cells needs at least one point")
    coords = points.coords
    w, h = float(points.patch_width), float(points.patch_height)
    rect = np.array([[0.0, 0.0], [w, 0.0], [w, h], [0.0, h]])

    reps = _merge_close(coords)
    rc = coords[reps]
    m = len(rc)
    if m == n:
        cell_of = np.arange(n)
    else:
        d = coords[:, None, :] - rc[None, :, :]
        cell_of = np.argmin((d * d).sum(-1), axis=1)
    polygons = []
    for i in range(m):
        p = rc[i]
        poly = rect
        if m > 1:
            others = np.delete(np.arange(m), i)
            d2 = ((rc[others] - p) ** 2).sum(axis=1)
            for j in others[np.argsort(d2, kind="stable")]:
                q = rc[j]
                vmax = ((poly - p) ** 2).sum(axis=1).max() if len(poly) else 0.0
                if ((q - p) ** 2).sum() > 4.0 * vmax:
                    break
                normal = q - p
                offset = normal @ (p + q) / 2.0
                poly = _clip_halfplane(poly, normal, offset)
                if len(poly) < 3:
                    break
        polygons.append(poly)
    return VoronoiCells(
        polygons=polygons,
        generator_index=reps,
        cell_of=cell_of,
        points=points,
    )
