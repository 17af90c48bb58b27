"""Small synthetic datasets used for demonstrations and directional tests.

``crossed``
    Seven labelled 2-D points (A, B, C and P, Q, R, S) plus a background
    grid; the graph covers only P, Q, R, S. Retrofitting should pull P and Q
    together without dragging R and S along.
``cycle``
    A 4-cycle over nearly collinear points P, Q, R, S plus unobserved
    points A, B, C, D and a background grid of "cells" used to measure how
    much a learned map distorts area.
``tree``
    Ten points R, A, B, C, A1, A2, B1, B2, C1, C2; the graph is a two-level
    tree over R, A, B, C, A1, B1, C2, while the children are placed on the
    opposite side of the root from their parents.

Every fixture is a :class:`~conformal_retrofit.data.GraphDataset` whose
``split`` marks graph nodes as ``train`` and the remaining labelled points as
``test``. Grid points are attached separately in ``extra`` (no edges).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .baselines import BaselineConfig, run_standard_retrofit
from .data import GraphDataset, adjacency
from .layers import init_network, network_forward
from .losses import LossConfig
from .manifolds import Euclidean, Sphere
from .optim import TrainConfig, fit

__all__ = ["Fixture", "crossed", "cycle", "tree", "FIXTURES", "area_distortion", "grid_cells",
           "FixtureRun", "run_fixture", "graph_hinge", "plane_chart",
           "toy_hierarchy", "write_toy_dataset"]


@dataclass
class Fixture:
    dataset: GraphDataset
    roles: list  # per node: "graph" or "unobserved"
    grid: np.ndarray  # (g, g, 2) background lattice for distortion diagnostics


def _dataset(points, graph_nodes, edges):
    names = list(points)
    idx = {n: i for i, n in enumerate(names)}
    X = np.array([points[n] for n in names], dtype=float)
    e = np.array([(idx[a], idx[b]) for a, b in edges], dtype=np.int64)
    split = np.array(["train" if n in graph_nodes else "test" for n in names], dtype=object)
    roles = ["graph" if n in graph_nodes else "unobserved" for n in names]
    return GraphDataset(names, e, X, split), roles


def _lattice(lo, hi, n):
    t = np.linspace(lo, hi, n)
    gx, gy = np.meshgrid(t, t, indexing="ij")
    return np.stack([gx, gy], axis=-1)


def crossed():
    pts = {
        "P": (-0.5, 0.5),
        "Q": (0.5, -0.5),
        "R": (-0.5, -0.5),
        "S": (0.5, 0.5),
        "A": (-1.0, -1.0),
        "B": (1.0, -1.0),
        "C": (1.0, -0.25),
    }
    ds, roles = _dataset(pts, {"P", "Q", "R", "S"}, [("P", "Q"), ("R", "S")])
    return Fixture(ds, roles, _lattice(-1.25, 1.25, 11))


def cycle():
    pts = {
        "P": (-0.9, 0.05),
        "Q": (-0.3, -0.05),
        "R": (0.3, 0.05),
        "S": (0.9, -0.05),
        "A": (-0.9, 0.8),
        "B": (-0.3, -0.8),
        "C": (0.3, 0.8),
        "D": (0.9, -0.8),
    }
    edges = [("P", "Q"), ("Q", "R"), ("R", "S"), ("S", "P")]
    ds, roles = _dataset(pts, {"P", "Q", "R", "S"}, edges)
    return Fixture(ds, roles, _lattice(-1.0, 1.0, 11))


def tree():
    ang = {"A": 90.0, "B": 210.0, "C": 330.0}
    pts = {"R": (0.0, 0.0)}
    for k, a in ang.items():
        t = np.deg2rad(a)
        pts[k] = (0.5 * np.cos(t), 0.5 * np.sin(t))
    for k, a in ang.items():
        for j, off in ((1, -20.0), (2, 20.0)):
            t = np.deg2rad(a + 180.0 + off)
            pts[f"{k}{j}"] = (np.cos(t), np.sin(t))
    edges = [("A", "R"), ("B", "R"), ("C", "R"), ("A1", "A"), ("B1", "B"), ("C2", "C")]
    ds, roles = _dataset(pts, {"R", "A", "B", "C", "A1", "B1", "C2"}, edges)
    return Fixture(ds, roles, _lattice(-1.0, 1.0, 11))


FIXTURES = {"crossed": crossed, "cycle": cycle, "tree": tree}


def grid_cells(grid):
    """Quadrilateral cells ``(i, j) -> 4 corner indices`` of a ``(g, g, d)`` lattice."""
    g = grid.shape[0]
    cells = []
    for i in range(g - 1):
        for j in range(g - 1):
            cells.append((i * g + j, (i + 1) * g + j, (i + 1) * g + j + 1, i * g + j + 1))
    return np.array(cells, dtype=np.int64)


def _quad_area(p):
    # shoelace on (..., 4, 2)
    x, y = p[..., 0], p[..., 1]
    return 0.5 * np.abs(np.sum(x * np.roll(y, -1, axis=-1) - np.roll(x, -1, axis=-1) * y, axis=-1))


def area_distortion(grid, mapped_grid, chart=None):
    """Spread of log area ratios over the lattice cells.

    ``mapped_grid`` holds the images of the flattened lattice points. For
    non-planar targets pass ``chart`` (a callable mapping image points to 2-D
    chart coordinates). Returns the standard deviation of
    ``log(area_after / area_before)`` over cells; it is 0 for any similarity
    transform, so it measures non-uniform stretching only.
    """
    src = grid.reshape(-1, grid.shape[-1])
    dst = np.asarray(mapped_grid, dtype=float).reshape(len(src), -1)
    if chart is not None:
        dst = np.asarray(chart(dst))
    cells = grid_cells(grid)
    a0 = _quad_area(src[cells])
    a1 = _quad_area(dst[cells])
    r = np.log(np.maximum(a1, 1e-300) / a0)
    return float(np.std(r))


# ---------------------------------------------------------------------------
# training on fixtures


@dataclass
class FixtureRun:
    fixture: Fixture
    variant: str
    target: object  # Manifold of the transformed points
    points: np.ndarray  # transformed labelled points
    mapped_grid: np.ndarray  # transformed lattice, flattened
    net: object = None  # None for the standard (table) variant
    fit: object = None


def run_fixture(which, variant="conformal", target="E2", seed=0, epochs=600, margin=0.1, lam=1.0,
                conformality_C=math.inf, hidden=16, lr=0.01):
    """Train one retrofitting variant on a named fixture.

    ``variant`` is ``"conformal"`` (pullback regulariser, any 2-D target),
    ``"explicit"`` (proximity regulariser, ``E2`` target) or ``"standard"``
    (free table). The lattice points take part in the preservation term so
    the regulariser sees the whole plotted region.
    """
    fx = FIXTURES[which]()
    ds = fx.dataset
    flat_grid = fx.grid.reshape(-1, 2)
    if variant == "standard":
        table = run_standard_retrofit(ds, BaselineConfig(lam=lam, iterations=max(epochs, 1)))
        return FixtureRun(fx, variant, Euclidean(2), table, flat_grid.copy())
    if variant not in ("conformal", "explicit"):
        raise ValueError(f"unknown fixture variant {variant!r}")
    if variant == "explicit":
        target = "E2"
    net = init_network(f"E2 -> E{hidden} -> E{hidden} -> {target}", np.random.default_rng(seed))
    lc = LossConfig(
        variant=variant,
        margin=margin,
        lambda_balance=lam,
        conformality_C=conformality_C,
        distance_kind="euclidean",
    )
    tc = TrainConfig(epochs=epochs, seed=seed, euclidean_lr=lr, riemannian_lr=10 * lr, vertex_batch=32)
    res = fit(net, ds, lc, tc, extra_points=flat_grid)
    return FixtureRun(
        fx,
        variant,
        res.net.target,
        network_forward(res.net, ds.embeddings),
        network_forward(res.net, flat_grid),
        res.net,
        res,
    )


def graph_hinge(points, dataset, manifold, margin=0.1):
    """Mean over directed graph edges ``(u, v)`` of the summed hinge
    ``max(0, margin + d(u, v) - d(u, x))`` over every other graph node ``x``
    that is not a neighbour of ``u``.
    """
    e = dataset.edges
    adj = adjacency(dataset.n_nodes, e)
    graph_nodes = sorted({int(i) for i in e.ravel()})
    totals = []
    for u, v in np.concatenate([e, e[:, ::-1]]):
        negs = [x for x in graph_nodes if x != u and x not in adj[u]]
        if not negs:
            totals.append(0.0)
            continue
        d_uv = float(manifold.dist(points[u], points[v]))
        d_neg = np.asarray(manifold.dist(points[u][None, :], points[negs]))
        totals.append(float(np.maximum(0.0, margin + d_uv - d_neg).sum()))
    return float(np.mean(totals))


def plane_chart(manifold):
    """2-D chart for plotting/area measurement: identity on E2 and the
    Poincare disc, stereographic projection from the south pole on S2."""
    if isinstance(manifold, Sphere):
        return lambda y: y[:, 1:] / (1.0 + y[:, :1])
    return lambda y: y


def toy_hierarchy(n_nodes=60, dim=8, branching=3, noise=0.6, seed=0):
    """Random tree whose node vectors drift from their parent's vector.

    Returns ``(names, child_parent_pairs, vectors)``; a small stand-in for a
    hypernym hierarchy with noisy distributional embeddings.
    """
    rng = np.random.default_rng(seed)
    names = [f"n{i:03d}" for i in range(n_nodes)]
    vecs = np.zeros((n_nodes, dim))
    vecs[0] = rng.normal(size=dim)
    pairs = []
    for i in range(1, n_nodes):
        parent = (i - 1) // branching
        pairs.append((i, parent))
        vecs[i] = vecs[parent] + noise * rng.normal(size=dim)
    return names, pairs, vecs


def write_toy_dataset(directory, n_nodes=60, dim=8, seed=0):
    """Write ``edges.tsv`` and ``embeddings.txt`` of :func:`toy_hierarchy`."""
    import os

    from .data import write_edges, write_embeddings

    names, pairs, vecs = toy_hierarchy(n_nodes, dim, seed=seed)
    os.makedirs(directory, exist_ok=True)
    write_edges(os.path.join(directory, "edges.tsv"), names, pairs)
    write_embeddings(os.path.join(directory, "embeddings.txt"), names, vecs)
    return os.path.join(directory, "edges.tsv"), os.path.join(directory, "embeddings.txt")
