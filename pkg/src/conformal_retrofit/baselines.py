"""Standard and explicit retrofitting baselines.

Standard retrofitting optimises a free table of target vectors; nodes without
training edges therefore never move. Explicit retrofitting trains a
Euclidean network with the same max-margin fidelity and negative sampling as
conformal retrofitting, but with the proximity penalty ``||f(w) - w||^2`` as
the preservation term.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import split_edges
from .layers import init_network
from .losses import LossConfig
from .optim import TrainConfig, fit

__all__ = ["BaselineConfig", "run_standard_retrofit", "run_explicit_retrofit"]


@dataclass
class BaselineConfig:
    variant: str = "standard"
    lam: float = 1.0
    lr: float = 0.05
    iterations: int = 500
    distance_kind: str = "cosine"

    def __post_init__(self):
        if self.variant not in ("standard", "explicit"):
            raise ValueError(f"baseline variant must be 'standard' or 'explicit', got {self.variant!r}")
        if self.lam < 0 or self.lr <= 0 or self.iterations < 0:
            raise ValueError("lam >= 0, lr > 0 and iterations >= 0 are required")


def run_standard_retrofit(dataset, cfg, edges=None):
    """Gradient descent on ``sum_E ||u - v||^2 + lam * sum_V ||w - w_src||^2``.

    The table starts at the source embeddings. ``edges`` defaults to the
    training edges when the dataset has a split, otherwise all edges.
    Returns the ``(n_nodes, d)`` target table.
    """
    src = np.asarray(dataset.embeddings, dtype=float)
    if edges is None:
        edges = split_edges(dataset)["train"] if dataset.split is not None else dataset.edges
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    w = src.copy()
    for _ in range(cfg.iterations):
        diff = w[e[:, 0]] - w[e[:, 1]]
        g = 2.0 * cfg.lam * (w - src)
        np.add.at(g, e[:, 0], 2.0 * diff)
        np.add.at(g, e[:, 1], -2.0 * diff)
        w = w - cfg.lr * g
    return w


def run_explicit_retrofit(dataset, loss_cfg=None, train_cfg=None, hidden=(256, 256), rng=None):
    """Train a Euclidean network ``E_d -> E_h ... -> E_d`` (max-margin + proximity).

    Returns the :class:`~conformal_retrofit.optim.FitResult`; evaluation uses
    ``loss_cfg.distance_kind`` (cosine by default).
    """
    d = dataset.embeddings.shape[1]
    loss_cfg = loss_cfg or LossConfig(variant="explicit", distance_kind="cosine")
    if loss_cfg.variant != "explicit":
        raise ValueError("run_explicit_retrofit needs variant='explicit'")
    train_cfg = train_cfg or TrainConfig()
    rng = rng if rng is not None else np.random.default_rng(train_cfg.seed)
    arch = " -> ".join([f"E{d}"] + [f"E{h}" for h in hidden] + [f"E{d}"])
    net = init_network(arch, rng)
    return fit(net, dataset, loss_cfg, train_cfg, eval_distance=loss_cfg.distance_kind)
