"""The 69-dimensional patch feature vector.

Layout (fixed concatenation order):
  0..17   cell-graph measures on the d_p radius graph
  18..29  Voronoi cell statistics (area, chord length, perimeter)
  30..37  Delaunay statistics (triangle side length, area)
  38..41  minimum-spanning-tree edge length statistics
  42..68  nuclei density / nearest-neighbor statistics

Every feature evaluates to 0 when its defining structure does not exist
(empty patch, too few points, collinear points); no entry is ever NaN/Inf.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import (
    UndirectedGraph,
    build_radius_graph,
    clustering_coefficients,
    connected_components,
    hop_distance_matrix,
    minimum_spanning_tree,
    symmetric_eigenvalues,
)
from .points import PointSet
from .tessellation import (
    DegenerateGeometryError,
    Triangulation,
    VoronoiCells,
    delaunay_triangulation,
    voronoi_cells,
)

DEFAULT_CELL_GRAPH_RADIUS = 64.0

KNN_KS = (3, 5, 7)
RADII = (10.0, 20.0, 30.0, 40.0, 50.0)

CELL_GRAPH_FEATURE_NAMES = [
    "cg_avg_degree",
    "cg_clustering_mean",
    "cg_giant_ratio",
    "cg_component_count",
    "cg_ecc_mean",
    "cg_diameter",
    "cg_radius",
    "cg_avg_path_length",
    "cg_central_count",
    "cg_central_pct",
    "cg_node_count",
    "cg_edge_count",
    "cg_adj_eig_max",
    "cg_adj_trace",
    "cg_adj_energy",
    "cg_eig_lower_slope",
    "cg_eig_upper_slope",
    "cg_lap_trace",
]

_STAT_SUFFIXES = ("mean", "sd", "minmax", "disorder")

VORONOI_FEATURE_NAMES = [
    f"vor_{what}_{s}" for what in ("area", "chord", "perim") for s in _STAT_SUFFIXES
]
DELAUNAY_FEATURE_NAMES = [
    f"del_{what}_{s}" for what in ("side", "area") for s in _STAT_SUFFIXES
]
MST_FEATURE_NAMES = [f"mst_edge_{s}" for s in _STAT_SUFFIXES]
DENSITY_FEATURE_NAMES = (
    ["nn_voronoi_area_total", "nn_nuclei_count", "nn_nuclei_density"]
    + [f"nn_k{k}_dist_{s}" for k in KNN_KS for s in ("mean", "sd", "disorder")]
    + [f"nn_r{int(r)}_count_{s}" for r in RADII for s in ("mean", "sd", "disorder")]
)

FEATURE_NAMES = (
    CELL_GRAPH_FEATURE_NAMES
    + VORONOI_FEATURE_NAMES
    + DELAUNAY_FEATURE_NAMES
    + MST_FEATURE_NAMES
    + DENSITY_FEATURE_NAMES
)
assert len(FEATURE_NAMES) == 69

# indices that do not depend on patch geometry, only on relative point positions
TRANSLATION_INVARIANT_INDICES = tuple(range(0, 18)) + tuple(range(38, 42))


@dataclass(frozen=True)
class StatSummary:
    """mean / population SD / min-max ratio / disorder of a nonnegative sample."""

    mean: float
    sd: float
    min_max_ratio: float
    disorder: float

    def as_array(self) -> np.ndarray:
        return np.array([self.mean, self.sd, self.min_max_ratio, self.disorder])


def stat_summary(samples) -> StatSummary:
    """Summary statistics used throughout the tessellation features.

    disorder = 1 - 1/(1 + sd/mean), the normalized dispersion common in
    quantitative histomorphometry; empty input gives all zeros, mean 0 gives
    disorder 0, max 0 gives ratio 0.
    """
    a = np.asarray(samples, dtype=np.float64).ravel()
    if a.size == 0:
        return StatSummary(0.0, 0.0, 0.0, 0.0)
    mean = float(a.mean())
    sd = float(a.std())
    mx = float(a.max())
    ratio = float(a.min()) / mx if mx > 0 else 0.0
    disorder = 1.0 - 1.0 / (1.0 + sd / mean) if mean > 0 else 0.0
    return StatSummary(mean, sd, ratio, disorder)


def _ls_slope(values: np.ndarray) -> float:
    """Least-squares slope of (index, value); fewer than 2 values gives 0."""
    k = len(values)
    if k < 2:
        return 0.0
    x = np.arange(k, dtype=np.float64)
    xc = x - x.mean()
    return float((xc @ (values - values.mean())) / (xc @ xc))


def cell_graph_features(g: UndirectedGraph) -> np.ndarray:
    """The 18 cell-graph measures, in CELL_GRAPH_FEATURE_NAMES order.

    Disconnected graphs: eccentricities are per-component, diameter is the
    global max, radius the min over non-isolated nodes (0 when every node is
    isolated), and average path length runs over connected pairs only.
    Central points are the nodes whose eccentricity equals the radius.
    """
    n = g.node_count
    out = np.zeros(18)
    if n == 0:
        return out
    deg = g.degrees().astype(np.float64)
    labels = connected_components(g)
    sizes = np.bincount(labels)

    d = hop_distance_matrix(g)
    finite = np.isfinite(d)
    ecc = np.where(finite, d, 0.0).max(axis=1)
    diameter = float(ecc.max())
    non_isolated = deg > 0
    radius = float(ecc[non_isolated].min()) if non_isolated.any() else 0.0
    off = finite & ~np.eye(n, dtype=bool)
    apl = float(d[off].mean()) if off.any() else 0.0
    central = ecc == radius

    a = g.adjacency_matrix()
    eig = symmetric_eigenvalues(a)
    k = int(np.ceil(n / 2))

    out[0] = deg.mean()
    out[1] = float(clustering_coefficients(g).mean())
    out[2] = sizes.max() / n
    out[3] = len(sizes)
    out[4] = ecc.mean()
    out[5] = diameter
    out[6] = radius
    out[7] = apl
    out[8] = central.sum()
    out[9] = 100.0 * central.sum() / n
    out[10] = n
    out[11] = g.edge_count
    out[12] = eig[-1]
    out[13] = float(np.trace(a))
    out[14] = float(np.abs(eig).sum())
    out[15] = _ls_slope(eig[:k])
    out[16] = _ls_slope(eig[-k:])
    out[17] = float(deg.sum())
    return out


def voronoi_features(cells: VoronoiCells | None) -> np.ndarray:
    """12 Voronoi statistics: stat_summary of cell areas, chord lengths, perimeters.

    Chord lengths are all pairwise vertex distances of each polygon, pooled
    over all cells before summarization.
    """
    if cells is None or len(cells.polygons) == 0:
        return np.zeros(12)
    areas = cells.areas()
    perims = cells.perimeters()
    chords = []
    for poly in cells.polygons:
        k = len(poly)
        if k < 2:
            continue
        iu, ju = np.triu_indices(k, k=1)
        d = poly[iu] - poly[ju]
        chords.append(np.hypot(d[:, 0], d[:, 1]))
    chord_arr = np.concatenate(chords) if chords else np.zeros(0)
    return np.concatenate([
        stat_summary(areas).as_array(),
        stat_summary(chord_arr).as_array(),
        stat_summary(perims).as_array(),
    ])


def delaunay_features(t: Triangulation | None) -> np.ndarray:
    """8 Delaunay statistics: stat_summary of side lengths and triangle areas.

    Sides are pooled per triangle (interior edges contribute once per
    adjacent triangle).
    """
    if t is None or len(t.triangles) == 0:
        return np.zeros(8)
    return np.concatenate([
        stat_summary(t.side_lengths()).as_array(),
        stat_summary(t.triangle_areas()).as_array(),
    ])


def mst_features(tree: UndirectedGraph) -> np.ndarray:
    """4 MST statistics: stat_summary of the tree edge lengths."""
    if tree.edge_count == 0:
        return np.zeros(4)
    return stat_summary([w for _, _, w in tree.edges]).as_array()


def density_features(points: PointSet, cells: VoronoiCells | None = None) -> np.ndarray:
    """27 nuclei density statistics.

    Order: total clipped Voronoi area; nuclei count; count per patch area;
    then (mean, SD, disorder) of the distance to the k-th nearest neighbor
    for k in (3, 5, 7); then (mean, SD, disorder) of the number of neighbors
    within radius r for r in (10, 20, 30, 40, 50) pixels.  The k-NN block is
    zero whenever n <= k.  `cells` may pass a precomputed Voronoi diagram.
    """
    n = len(points)
    out = np.zeros(27)
    if n == 0:
        return out
    if cells is None:
        cells = voronoi_cells(points)
    out[0] = cells.total_area()
    out[1] = n
    out[2] = n / points.area

    dm = points.distance_matrix()
    pos = 3
    if n >= 2:
        sorted_d = np.sort(dm, axis=1)  # column 0 is the self-distance 0
        for k in KNN_KS:
            if n > k:
                s = stat_summary(sorted_d[:, k])
                out[pos:pos + 3] = (s.mean, s.sd, s.disorder)
            pos += 3
        for r in RADII:
            counts = (dm <= r).sum(axis=1) - 1  # drop self
            s = stat_summary(counts.astype(np.float64))
            out[pos:pos + 3] = (s.mean, s.sd, s.disorder)
            pos += 3
    return out


def patch_feature_vector(points: PointSet, d_p: float = DEFAULT_CELL_GRAPH_RADIUS) -> np.ndarray:
    """The full 69-dimensional patch feature vector (see module docstring)."""
    n = len(points)
    cg = cell_graph_features(build_radius_graph(points, d_p))
    cells = voronoi_cells(points) if n >= 1 else None
    vor = voronoi_features(cells)
    try:
        tri = delaunay_triangulation(points) if n >= 3 else None
    except DegenerateGeometryError:
        tri = None
    dl = delaunay_features(tri)
    mst = mst_features(minimum_spanning_tree(points, triangulation=tri))
    dens = density_features(points, cells=cells)
    vec = np.concatenate([cg, vor, dl, mst, dens])
    if vec.shape != (69,) or not np.all(np.isfinite(vec)):
        raise AssertionError("feature vector must be 69 finite values")
    return vec
