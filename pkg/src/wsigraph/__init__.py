"""Cell-graph and tessellation features over nuclei point patterns, a slide-level
similarity graph, and a graph-convolutional classifier, end to end."""

from .detection import GLoGBank, GrayImage, build_glog_bank, detect_nuclei
from .features import (
    FEATURE_NAMES,
    StatSummary,
    cell_graph_features,
    delaunay_features,
    density_features,
    mst_features,
    patch_feature_vector,
    stat_summary,
    voronoi_features,
)
from .graph import (
    UndirectedGraph,
    bfs_distances,
    build_radius_graph,
    clustering_coefficients,
    connected_components,
    eccentricities,
    minimum_spanning_tree,
    symmetric_eigenvalues,
)
from .image_graph import ImageGraph, build_image_graph, cosine_similarity
from .points import PointSet
from .tessellation import (
    DegenerateGeometryError,
    Triangulation,
    VoronoiCells,
    delaunay_triangulation,
    voronoi_cells,
)

__version__ = "0.1.0"

__all__ = [
    "FEATURE_NAMES",
    "DegenerateGeometryError",
    "GLoGBank",
    "GrayImage",
    "ImageGraph",
    "PointSet",
    "StatSummary",
    "Triangulation",
    "UndirectedGraph",
    "VoronoiCells",
    "bfs_distances",
    "build_glog_bank",
    "build_image_graph",
    "build_radius_graph",
    "cell_graph_features",
    "clustering_coefficients",
    "connected_components",
    "cosine_similarity",
    "delaunay_features",
    "delaunay_triangulation",
    "density_features",
    "detect_nuclei",
    "eccentricities",
    "minimum_spanning_tree",
    "mst_features",
    "patch_feature_vector",
    "stat_summary",
    "symmetric_eigenvalues",
    "voronoi_cells",
    "voronoi_features",
]
