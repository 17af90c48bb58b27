"""Link-prediction evaluation with mean average precision.

Each query node ranks every other node of its candidate pool by distance
(ties broken by ascending node id); the relevant items are the query's graph
neighbors inside the pool. Pools follow edge visibility: train queries see
train nodes, val queries see train and val nodes, test queries see all nodes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import SPLITS, adjacency
from .losses import embedding_distance
from .manifolds import Manifold

__all__ = [
    "POOLS",
    "MapResult",
    "average_precision",
    "pairwise_distances",
    "mean_average_precision",
]

POOLS = {"train": ("train",), "val": ("train", "val"), "test": ("train", "val", "test")}


@dataclass(frozen=True)
class MapResult:
    split: str
    map: float
    n_queries: int
    skipped: int

    def __float__(self):
        return self.map


def average_precision(ranked_ids, relevant_set):
    """Standard AP: mean over relevant items of precision at their rank."""
    relevant = set(relevant_set)
    if not relevant:
        raise ValueError("average precision needs at least one relevant item")
    hits = 0
    total = 0.0
    for rank, node in enumerate(ranked_ids, 1):
        if node in relevant:
            hits += 1
            total += hits / rank
    if hits < len(relevant):
        raise ValueError("relevant items missing from the ranking")
    return total / len(relevant)


def _ap_from_ranks(ranks):
    ranks = np.sort(np.asarray(ranks, dtype=float))
    return float(np.mean(np.arange(1, len(ranks) + 1) / ranks))


def pairwise_distances(x, y, distance):
    """Distances between rows of ``x`` and all rows of ``y``: ``(len(x), len(y))``.

    ``distance`` is a :class:`Manifold` (geodesic distance) or one of
    ``"cosine"``/``"euclidean"``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if isinstance(distance, Manifold):
        return np.asarray(distance.dist(x[:, None, :], y[None, :, :]))
    return np.asarray(embedding_distance(x[:, None, :], y[None, :, :], distance))


def mean_average_precision(embeddings, dataset, split="test", distance="cosine", chunk=256):
    """mAP of ``embeddings`` (one row per node) for queries in ``split``.

    Queries without any graph neighbor in their pool are skipped and counted.
    """
    if split not in SPLITS:
        raise ValueError(f"split must be one of {SPLITS}, got {split!r}")
    emb = np.asarray(embeddings, dtype=float)
    queries = dataset.ids(split)
    pool = dataset.ids(POOLS[split])
    in_pool = np.zeros(dataset.n_nodes, dtype=bool)
    in_pool[pool] = True
    adj = adjacency(dataset.n_nodes, dataset.edges)
    aps = []
    todo = [q for q in queries if any(in_pool[v] for v in adj[q])]
    skipped = len(queries) - len(todo)
    for start in range(0, len(todo), chunk):
        block = np.asarray(todo[start : start + chunk], dtype=np.int64)
        d = pairwise_distances(emb[block], emb[pool], distance)
        for row, q in enumerate(block):
            mask = pool != q
            ids = pool[mask]
            order = np.argsort(d[row][mask], kind="stable")  # pool ids ascending -> ties by id
            ranked = ids[order]
            rel = np.isin(ranked, list(adj[q]))
            aps.append(_ap_from_ranks(np.flatnonzero(rel) + 1))
    value = float(np.mean(aps)) if aps else float("nan")
    return MapResult(split, value, len(aps), skipped)
