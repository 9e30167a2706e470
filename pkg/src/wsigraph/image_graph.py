"""Slide-level graph: patches as nodes, cosine-similarity-thresholded edges."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


@dataclass
class ImageGraph:
    """Weighted graph over the patches of one slide.

    node_features is a (num_patches, d) matrix; edges hold (i, j, weight)
    with i < j and weight the cosine similarity that exceeded the build
    threshold.  Isolated patches are kept as nodes without edges.
    """

    node_features: np.ndarray
    edges: list = field(default_factory=list)
    label: int = -1
    slide_id: str = ""

    def __post_init__(self):
        f = np.asarray(self.node_features, dtype=np.float64)
        if f.ndim != 2:
            raise ValueError("node_features must be a 2-D matrix")
        self.node_features = f
        seen = set()
        canon = []
        for i, j, w in self.edges:
            i, j = int(i), int(j)
            if i == j:
                raise ValueError(f"self-loop at node {i}")
            if not (0 <= i < len(f) and 0 <= j < len(f)):
                raise ValueError(f"edge ({i}, {j}) out of range")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise ValueError(f"duplicate edge {key}")
            seen.add(key)
            canon.append((key[0], key[1], float(w)))
        self.edges = sorted(canon)

    @property
    def num_nodes(self) -> int:
        return len(self.node_features)

    def adjacency_matrix(self) -> np.ndarray:
        """Dense symmetric weighted adjacency (zero diagonal)."""
        n = self.num_nodes
        a = np.zeros((n, n))
        for i, j, w in self.edges:
            a[i, j] = a[j, i] = w
        return a


def cosine_similarity(u, v) -> float:
    """u.v / (|u||v|); zero-norm vectors get similarity 0 so they stay isolated."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ValueError("vectors must have equal length")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(u @ v) / (nu * nv)


def build_image_graph(features, theta: float, slide_id: str = "",
                      label: int = -1) -> ImageGraph:
    """Connect patch pairs whose cosine similarity strictly exceeds theta.

    Similarity is computed on the raw (unstandardized) feature rows; edge
    weights store the similarity value.
    """
    if not (-1.0 <= theta < 1.0):
        raise ValueError("theta must lie in [-1, 1)")
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2:
        raise ValueError("features must be a 2-D matrix")
    norms = np.linalg.norm(f, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = f / safe[:, None]
    sim = unit @ unit.T
    iu, ju = np.triu_indices(len(f), k=1)
    w = sim[iu, ju]
    keep = w > theta
    edges = list(zip(iu[keep].tolist(), ju[keep].tolist(), w[keep].tolist()))
    return ImageGraph(node_features=f, edges=edges, label=label, slide_id=slide_id)


def save_image_graphs(graphs, path) -> None:
    """Write ImageGraphs as JSON-lines, one record per slide."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for g in graphs:
            rec = {
                "format_version": FORMAT_VERSION,
                "slide_id": g.slide_id,
                "label": int(g.label),
                "num_nodes": int(g.num_nodes),
                "feature_dim": int(g.node_features.shape[1]) if g.num_nodes else 0,
                "features": g.node_features.tolist(),
                "edges": [[i, j, w] for i, j, w in g.edges],
            }
            fh.write(json.dumps(rec) + "\n")


def load_image_graphs(path) -> list[ImageGraph]:
    """Read a JSON-lines ImageGraph file written by save_image_graphs."""
    out = []
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}:{lineno}: invalid JSON ({e})") from e
            version = rec.get("format_version")
            if version != FORMAT_VERSION:
                raise ValueError(f"{path}:{lineno}: unsupported format_version {version}")
            feats = np.asarray(rec["features"], dtype=np.float64)
            if feats.size == 0:
                feats = feats.reshape(0, rec.get("feature_dim", 0))
            out.append(ImageGraph(
                node_features=feats,
                edges=[(int(i), int(j), float(w)) for i, j, w in rec["edges"]],
                label=int(rec["label"]),
                slide_id=str(rec["slide_id"]),
            ))
    return out
