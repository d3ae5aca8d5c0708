"""The user-agnostic trajectory flow map and its descriptive statistics."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .dataset import PoiMeta, Trajectory


@dataclass(frozen=True)
class FlowMap:
    """Weighted directed POI graph built from train trajectories.

    ``adjacency[i, j]`` counts how often POI ``j`` directly follows POI ``i``
    within a train trajectory (self-loops included).  Node features are
    ``[log1p(freq), lat, lon, one-hot category]`` with lat/lon min-max scaled.
    """

    node_ids: tuple[str, ...]
    adjacency: np.ndarray
    node_features: np.ndarray
    laplacian: np.ndarray
    categories: tuple[str, ...]

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def n_features(self) -> int:
        return self.node_features.shape[1]

    def index_of(self, poi_id: str) -> int:
        return self._lookup[poi_id]

    @property
    def _lookup(self) -> dict[str, int]:
        cache = self.__dict__.get("_lookup_cache")
        if cache is None:
            cache = {p: i for i, p in enumerate(self.node_ids)}
            object.__setattr__(self, "_lookup_cache", cache)
        return cache


def normalized_laplacian(adjacency) -> np.ndarray:
    """Row-normalised propagation matrix ``(D + I)^-1 (A + I)``, D the out-degree.

    Accepts an adjacency array or a :class:`FlowMap`.
    """
    if isinstance(adjacency, FlowMap):
        adjacency = adjacency.adjacency
    a = np.asarray(adjacency, dtype=np.float64)
    n = a.shape[0]
    a_hat = a + np.eye(n)
    return a_hat / (a.sum(axis=1) + 1.0)[:, None]


def _minmax(x: np.ndarray) -> np.ndarray:
    span = x.max() - x.min() if x.size else 0.0
    return (x - x.min()) / span if span > 0 else np.zeros_like(x)


def node_features(node_ids: Sequence[str], poi_meta: Mapping[str, PoiMeta],
                  categories: Sequence[str]) -> np.ndarray:
    cat_pos = {c: i for i, c in enumerate(categories)}
    n = len(node_ids)
    x = np.zeros((n, 3 + len(categories)))
    meta = [poi_meta[p] for p in node_ids]
    x[:, 0] = np.log1p([m.freq for m in meta])
    x[:, 1] = _minmax(np.array([m.lat for m in meta], dtype=np.float64))
    x[:, 2] = _minmax(np.array([m.lon for m in meta], dtype=np.float64))
    for i, m in enumerate(meta):
        x[i, 3 + cat_pos[m.category_id]] = 1.0
    return x


def build(train: Sequence[Trajectory], poi_meta: Mapping[str, PoiMeta],
          node_ids: Sequence[str] | None = None,
          categories: Sequence[str] | None = None) -> FlowMap:
    """Build the flow map over the POIs visited in ``train``.

    Passing ``node_ids``/``categories`` (normally the dataset's index order)
    fixes the row order; otherwise ids are sorted.
    """
    if not train:
        raise ValueError("cannot build a flow map from an empty train split")
    seen = sorted({q.poi_id for t in train for q in t.checkins})
    if node_ids is None:
        node_ids = seen
    elif set(node_ids) != set(seen):
        raise ValueError("node_ids must list exactly the POIs present in train")
    if categories is None:
        categories = sorted({poi_meta[p].category_id for p in node_ids})
    pos = {p: i for i, p in enumerate(node_ids)}
    n = len(node_ids)
    adj = np.zeros((n, n))
    for t in train:
        idx = [pos[q.poi_id] for q in t.checkins]
        np.add.at(adj, (idx[:-1], idx[1:]), 1.0)
    return FlowMap(tuple(node_ids), adj, node_features(node_ids, poi_meta, categories),
                   normalized_laplacian(adj), tuple(categories))


def build_from_dataset(d) -> FlowMap:
    """Flow map whose node order matches ``d.poi_index``."""
    node_ids = sorted(d.poi_index, key=d.poi_index.get)
    cats = sorted(d.category_index, key=d.category_index.get)
    return build(d.train, d.poi_meta, node_ids, cats)


def clustering_coefficients(adjacency: np.ndarray) -> np.ndarray:
    """Local clustering of the undirected, unweighted, loop-free simplification."""
    a = sp.csr_matrix(np.asarray(adjacency) != 0, dtype=np.float64)
    b = ((a + a.T) > 0).astype(np.float64).tolil()
    b.setdiag(0)
    b = b.tocsr()
    b.eliminate_zeros()
    deg = np.asarray(b.sum(axis=1)).ravel()
    triangles = np.asarray((b @ b).multiply(b).sum(axis=1)).ravel() / 2.0
    pairs = deg * (deg - 1) / 2.0
    return np.divide(triangles, pairs, out=np.zeros_like(triangles), where=pairs > 0)


def stats(m: FlowMap) -> dict[str, float]:
    adj = m.adjacency
    n = m.n_nodes
    n_edges = int(np.count_nonzero(adj))
    return {
        "n_nodes": n,
        "n_edges": n_edges,
        "mean_in_degree": float(np.count_nonzero(adj, axis=0).mean()) if n else 0.0,
        "mean_out_degree": float(np.count_nonzero(adj, axis=1).mean()) if n else 0.0,
        "mean_edge_weight": float(adj.sum() / n_edges) if n_edges else 0.0,
        "avg_clustering_coefficient": float(clustering_coefficients(adj).mean()) if n else 0.0,
    }


def format_stats(s: Mapping[str, float]) -> str:
    lines = []
    for key, value in s.items():
        lines.append(f"{key}={value}" if isinstance(value, int) else f"{key}={value:.6f}")
    return "\n".join(lines) + "\n"


def write_edge_list(m: FlowMap, path) -> None:
    src, dst = np.nonzero(m.adjacency)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["src", "dst", "weight"])
        for i, j in zip(src, dst):
            w.writerow([m.node_ids[i], m.node_ids[j], int(m.adjacency[i, j])])


def category_hour_histogram(train: Sequence[Trajectory], category: str,
                            categories: Sequence[str] | None = None) -> np.ndarray:
    """Average check-ins per local hour for one category.

    Counts are divided by the number of calendar days spanned by the whole
    train split.  ``categories`` lists the valid ids (default: those seen in
    ``train``); a valid category without check-ins yields zeros.
    """
    qs = [q for t in train for q in t.checkins]
    known = set(categories) if categories is not None else {q.category_id for q in qs}
    if category not in known:
        raise KeyError(f"unknown category {category!r}")
    hist = np.zeros(24)
    if not qs:
        return hist
    for q in qs:
        if q.category_id == category:
            hist[q.local_hour] += 1
    days = max(q.local_day for q in qs) - min(q.local_day for q in qs) + 1
    return hist / days
