"""Graph and embedding ingestion, node splits and graph utilities.

File formats
------------
edges
    UTF-8 text, one ``child<TAB>parent`` pair per line; blank lines and lines
    starting with ``#`` are ignored. Any run of whitespace is accepted as the
    separator.
embeddings
    GloVe text format: ``token v1 ... vd`` per line. A first line starting
    with ``# manifold`` (written by ``transform``) is skipped.
split
    ``node<TAB>train|val|test`` per line.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

__all__ = [
    "SPLITS",
    "UNREACHABLE",
    "DataError",
    "SplitTooSmall",
    "GraphDataset",
    "read_edge_pairs",
    "load_edges",
    "load_embeddings",
    "l2_normalize",
    "build_dataset",
    "make_splits",
    "split_edges",
    "graph_neighbors",
    "adjacency",
    "bfs_distance",
    "read_split",
    "write_split",
    "write_edges",
    "write_embeddings",
]

SPLITS = ("train", "val", "test")
UNREACHABLE = -1


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class SplitTooSmall(DataError):
    pass


@dataclass
class GraphDataset:
    """Nodes, undirected edges, a node split and source embeddings.

    ``edges`` holds canonical pairs ``(min id, max id)``, sorted and unique.
    ``split`` holds one of ``"train"``, ``"val"``, ``"test"`` per node (or is
    ``None`` before splitting); ``embeddings`` is ``(n_nodes, d)``.
    """

    names: list
    edges: np.ndarray
    embeddings: np.ndarray | None = None
    split: np.ndarray | None = None
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        self.names = list(self.names)
        self.index = {n: i for i, n in enumerate(self.names)}
        self.edges = _canonical(self.edges)
        if len(self.edges) and np.any(self.edges[:, 0] == self.edges[:, 1]):
            raise DataError("self-loops are not allowed")
        if self.embeddings is not None:
            self.embeddings = np.asarray(self.embeddings, dtype=float)
            if len(self.embeddings) != len(self.names):
                raise DataError("one embedding row per node is required")
        if self.split is not None:
            self.split = np.asarray(self.split, dtype=object)
            if len(self.split) != len(self.names) or not set(self.split) <= set(SPLITS):
                raise DataError("split labels must cover every node with train/val/test")

    @property
    def n_nodes(self):
        return len(self.names)

    def ids(self, which):
        """Node ids (ascending) in one split or a tuple of splits."""
        if self.split is None:
            raise DataError("dataset has no split")
        which = (which,) if isinstance(which, str) else tuple(which)
        return np.flatnonzero(np.isin(self.split, which))

    def with_split(self, split):
        return GraphDataset(self.names, self.edges, self.embeddings, split, dict(self.stats))


def _canonical(edges):
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    e = np.sort(e, axis=1)
    if len(e) == 0:
        return e
    return np.unique(e, axis=0)


# ---------------------------------------------------------------------------
# reading


def _data_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if line and not line.startswith("#"):
                yield lineno, line


def read_edge_pairs(path):
    """Directed ``(child, parent)`` name pairs in file order, validated."""
    pairs = []
    for lineno, line in _data_lines(path):
        parts = line.split()
        if len(parts) != 2:
            raise DataError(f"{path}:{lineno}: expected 'child<TAB>parent', got {line!r}")
        pairs.append((parts[0], parts[1]))
    return pairs


def load_edges(path):
    """Read an edge file.

    Returns
    -------
    names : list of str
        Vocabulary in order of first appearance.
    edges : ndarray (m, 2)
        Unique undirected edges as canonical id pairs.
    stats : dict
        ``self_loops`` and ``duplicates`` dropped.
    """
    names, index = [], {}
    raw, loops = [], 0
    for child, parent in read_edge_pairs(path):
        if child == parent:
            loops += 1
            continue
        for n in (child, parent):
            if n not in index:
                index[n] = len(names)
                names.append(n)
        raw.append((index[child], index[parent]))
    if loops:
        log.warning("%s: dropped %d self-loop line(s)", path, loops)
    edges = _canonical(raw)
    return names, edges, {"self_loops": loops, "duplicates": len(raw) - len(edges)}


def load_embeddings(path, expected_dim=None):
    """Read GloVe-style text into ``{token: vector}``.

    Every row must have the same dimension (``expected_dim`` when given);
    a mismatch raises :class:`DataError` naming the line.
    """
    table = {}
    dim = expected_dim
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if lineno == 1 and line.startswith("# manifold"):
                continue
            if not line.strip():
                continue
            parts = line.split(" ")
            token, vals = parts[0], [p for p in parts[1:] if p]
            if dim is None:
                dim = len(vals)
            if len(vals) != dim:
                raise DataError(f"{path}:{lineno}: expected {dim} values for {token!r}, got {len(vals)}")
            try:
                table[token] = np.array([float(v) for v in vals])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    return table


def build_dataset(edges_path, embeddings_path=None, expected_dim=None, embeddings=None):
    """Load edges and attach embeddings, dropping nodes without a vector.

    Edges touching a dropped node are dropped too; counts go to ``stats``.
    """
    names, edges, stats = load_edges(edges_path)
    if embeddings is None and embeddings_path is not None:
        embeddings = load_embeddings(embeddings_path, expected_dim)
    if embeddings is None:
        return GraphDataset(names, edges, stats=stats)
    keep = [i for i, n in enumerate(names) if n in embeddings]
    dropped = len(names) - len(keep)
    if dropped:
        log.info("dropped %d node(s) without embeddings", dropped)
    remap = -np.ones(len(names), dtype=np.int64)
    remap[keep] = np.arange(len(keep))
    e = remap[edges] if len(edges) else edges
    e = e[np.all(e >= 0, axis=1)] if len(e) else e
    new_names = [names[i] for i in keep]
    vecs = np.stack([embeddings[n] for n in new_names]) if new_names else np.zeros((0, expected_dim or 0))
    stats = dict(stats, dropped_nodes=dropped, dropped_edges=len(edges) - len(e))
    return GraphDataset(new_names, e, vecs, stats=stats)


# ---------------------------------------------------------------------------
# splits


def make_splits(dataset, ratios=(0.8, 0.1, 0.1), seed=0):
    """Shuffle nodes under ``seed`` and cut them into train/val/test.

    The val and test sizes are ``floor(ratio * n)``; train takes the rest.
    Returns the label array (one of ``"train"``, ``"val"``, ``"test"`` per
    node).
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must be three nonnegative numbers summing to 1, got {ratios}")
    n = dataset.n_nodes
    n_val = int(np.floor(ratios[1] * n + 1e-9))
    n_test = int(np.floor(ratios[2] * n + 1e-9))
    n_train = n - n_val - n_test
    counts = (n_train, n_val, n_test)
    for name, c, r in zip(SPLITS, counts, ratios):
        if r > 0 and c == 0:
            raise SplitTooSmall(f"{n} node(s) leave the {name} partition empty")
    order = np.random.default_rng(seed).permutation(n)
    labels = np.empty(n, dtype=object)
    labels[order[:n_train]] = "train"
    labels[order[n_train : n_train + n_val]] = "val"
    labels[order[n_train + n_val :]] = "test"
    return labels


def split_edges(dataset, split=None):
    """Partition edges by the visibility rule.

    train: both endpoints train; val: val-val or val-train; test: any edge
    with a test endpoint.
    """
    split = dataset.split if split is None else np.asarray(split, dtype=object)
    if split is None:
        raise DataError("dataset has no split")
    e = dataset.edges
    if len(e) == 0:
        return {s: e for s in SPLITS}
    a, b = split[e[:, 0]], split[e[:, 1]]
    test = (a == "test") | (b == "test")
    val = ~test & ((a == "val") | (b == "val"))
    train = ~test & ~val
    return {"train": e[train], "val": e[val], "test": e[test]}


# ---------------------------------------------------------------------------
# graph utilities


def adjacency(n_nodes, edges):
    """List of neighbor sets for an undirected edge array."""
    adj = [set() for _ in range(n_nodes)]
    for u, v in np.asarray(edges, dtype=np.int64).reshape(-1, 2):
        adj[u].add(int(v))
        adj[v].add(int(u))
    return adj


def graph_neighbors(dataset, u, edges=None):
    """Neighbors of node ``u`` over ``edges`` (default: all dataset edges)."""
    e = dataset.edges if edges is None else np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if len(e) == 0:
        return set()
    hit = e[(e[:, 0] == u) | (e[:, 1] == u)]
    return {int(x) for x in hit.ravel() if x != u}


def bfs_distance(dataset, u, v, edges=None):
    """Unweighted shortest-path length, or ``UNREACHABLE``."""
    if u == v:
        return 0
    adj = adjacency(dataset.n_nodes, dataset.edges if edges is None else edges)
    seen = {u}
    queue = deque([(u, 0)])
    while queue:
        node, d = queue.popleft()
        for nb in sorted(adj[node]):
            if nb == v:
                return d + 1
            if nb not in seen:
                seen.add(nb)
                queue.append((nb, d + 1))
    return UNREACHABLE


# ---------------------------------------------------------------------------
# writing


def l2_normalize(vectors):
    """Rows scaled to unit Euclidean norm (all-zero rows are left as they are)."""
    X = np.asarray(vectors, dtype=float)
    n = np.linalg.norm(X, axis=-1, keepdims=True)
    return X / np.where(n > 0, n, 1.0)


def write_split(path, names, labels):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for n, s in zip(names, labels):
            fh.write(f"{n}\t{s}\n")


def read_split(path, names):
    """Labels for ``names`` from a split file; every node must be listed."""
    table = {}
    for lineno, line in _data_lines(path):
        parts = line.split()
        if len(parts) != 2 or parts[1] not in SPLITS:
            raise DataError(f"{path}:{lineno}: expected 'node<TAB>train|val|test', got {line!r}")
        table[parts[0]] = parts[1]
    missing = [n for n in names if n not in table]
    if missing:
        raise DataError(f"{path}: {len(missing)} node(s) missing from the split, e.g. {missing[0]!r}")
    return np.array([table[n] for n in names], dtype=object)


def write_edges(path, names, pairs):
    """Write ``child<TAB>parent`` lines for id pairs."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for a, b in pairs:
            fh.write(f"{names[a]}\t{names[b]}\n")


def write_embeddings(path, names, vectors, header=None):
    """GloVe-style text; ``header`` (e.g. ``"S30xH30"``) adds a manifold line."""
    vectors = np.asarray(vectors, dtype=float)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if header is not None:
            fh.write(f"# manifold {header}\n")
        for n, v in zip(names, vectors):
            fh.write(n + " " + " ".join(repr(float(x)) for x in v) + "\n")
