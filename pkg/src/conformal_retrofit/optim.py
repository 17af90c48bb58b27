"""Optimisation: Riemannian SGD, Adam, gradient-norm balancing, training loop.

Manifold-valued parameters (bias points on spheres, balls and products) are
updated with Riemannian SGD; weight matrices and biases on Euclidean
manifolds with Adam. The two objectives (fidelity and preservation) are
balanced by inverse gradient norms relative to their geometric mean,
measured on the weight matrix of the last layer.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import diff as ad
from . import spd
from .data import adjacency, split_edges
from .evaluation import mean_average_precision
from .layers import network_forward, network_program
from .losses import LossConfig, cr_fidelity, proximity_loss, pullback_terms
from .manifolds import Euclidean
from .neighbors import build_index, maybe_refresh, query_negatives_batch, recall_at_k

log = logging.getLogger(__name__)

__all__ = [
    "AdamMoment",
    "GradNormState",
    "TrainConfig",
    "OptimizerState",
    "rsgd_step",
    "adam_step",
    "gradnorm_weights",
    "make_objective",
    "train_step",
    "fit",
    "FitResult",
]


# ---------------------------------------------------------------------------
# single-parameter updates


def rsgd_step(m, p, euclidean_grad, lr, counter=None):
    """One Riemannian SGD step ``p <- exp_p(-lr * rgrad)``.

    The Riemannian gradient is the Euclidean gradient rescaled by the inverse
    metric and projected to the tangent space. Non-finite gradients skip the
    step; ``counter`` (a dict) then gets ``skipped`` incremented.
    """
    p = np.asarray(p, dtype=float)
    g = np.asarray(euclidean_grad, dtype=float)
    if not np.all(np.isfinite(g)):
        if counter is not None:
            counter["skipped"] = counter.get("skipped", 0) + 1
        return p
    rgrad = np.asarray(m.egrad2rgrad(p, g))
    out = np.asarray(m.expmap(p, -lr * rgrad), dtype=float)
    return m.check_point(out)


@dataclass
class AdamMoment:
    """First/second moment estimates and step count for one parameter."""

    m: np.ndarray | None = None
    v: np.ndarray | None = None
    t: int = 0


def adam_step(state, param, grad, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam update; mutates ``state`` and returns the new value."""
    param = np.asarray(param, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if state.m is None:
        state.m = np.zeros_like(param)
        state.v = np.zeros_like(param)
    state.t += 1
    state.m = beta1 * state.m + (1 - beta1) * grad
    state.v = beta2 * state.v + (1 - beta2) * grad * grad
    mhat = state.m / (1 - beta1**state.t)
    vhat = state.v / (1 - beta2**state.t)
    return param - lr * mhat / (np.sqrt(vhat) + eps)


@dataclass
class GradNormState:
    beta: float = 0.9
    ema: np.ndarray | None = None


def gradnorm_weights(norms, state):
    """Objective weights inversely proportional to smoothed gradient norms.

    ``w_i = geomean(ema) / ema_i``, rescaled so the weights sum to the number
    of objectives. The first call initialises the moving averages with the
    given norms.
    """
    norms = np.maximum(np.asarray(norms, dtype=float), 1e-12)
    if state.ema is None:
        state.ema = norms.copy()
    else:
        state.ema = state.beta * state.ema + (1 - state.beta) * norms
    geo = np.exp(np.mean(np.log(state.ema)))
    w = geo / state.ema
    return w * (len(w) / np.sum(w))


# ---------------------------------------------------------------------------
# configuration and state


@dataclass
class TrainConfig:
    euclidean_lr: float = 1e-3
    riemannian_lr: float = 1e-2
    batch_size: int = 128
    epochs: int = 100
    gradnorm_enabled: bool = True
    gradnorm_beta: float = 0.9
    patience: int = 50
    seed: int = 0
    neighbors_k: int = 50
    refresh_period: int | None = None  # steps; default one epoch
    vertex_batch: int = 64
    eval_every: int = 1
    recall_queries: int = 0  # >0: report chart-kNN recall on each rebuild

    def __post_init__(self):
        for name in ("batch_size", "epochs", "neighbors_k", "vertex_batch", "eval_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if self.euclidean_lr < 0 or self.riemannian_lr < 0:
            raise ValueError("learning rates must be nonnegative")
        if not 0 <= self.gradnorm_beta < 1:
            raise ValueError("gradnorm beta must be in [0, 1)")


@dataclass
class OptimizerState:
    adam: dict = field(default_factory=dict)
    gradnorm: GradNormState = field(default_factory=GradNormState)
    counters: dict = field(default_factory=lambda: {"skipped": 0})
    diagnostics: spd.SpdDiagnostics = field(default_factory=spd.SpdDiagnostics)
    step: int = 0


# ---------------------------------------------------------------------------
# objectives


def _masked_fidelity(net, params, X, batch, cfg, distance):
    ids = [batch["u"], batch["v"], batch["neg"][batch["neg"] >= 0]]
    uniq = np.unique(np.concatenate(ids))
    pos = np.searchsorted(uniq, np.maximum(batch["neg"], 0))
    prog = network_program(net)
    Y = prog(X[uniq], params)
    u_t = ad.getitem(Y, np.searchsorted(uniq, batch["u"]))
    v_t = ad.getitem(Y, np.searchsorted(uniq, batch["v"]))
    n_t = ad.getitem(Y, pos)
    mask = (batch["neg"] >= 0).astype(float)
    per_edge = cr_fidelity(u_t, v_t, n_t, cfg.margin, distance, mask=mask)
    return ad.div(ad.sum(per_edge), float(len(batch["u"])))


def make_objective(net, cfg: LossConfig):
    """Return ``objective(params, X, batch, diagnostics) -> {term: value}``.

    Terms are batch means. ``conformal`` uses the target geodesic distance
    and the conformality penalty; ``explicit`` uses ``cfg.distance_kind``
    and the proximity penalty (requires equal source/target dimensions).
    """
    if cfg.variant == "conformal":
        distance = net.target

        def preservation(params, X, batch, diagnostics):
            x = batch["vertex_points"]
            pen = pullback_terms(net, params, x, cfg.conformality_C, diagnostics)
            return ad.div(ad.sum(pen), float(len(x)))

    elif cfg.variant == "explicit":
        if net.target.ambient_dim != net.source.ambient_dim or not isinstance(net.target, Euclidean):
            raise ValueError("explicit retrofitting needs a Euclidean target of the source dimension")
        distance = cfg.distance_kind
        prog = network_program(net)

        def preservation(params, X, batch, diagnostics):
            x = batch["vertex_points"]
            return ad.div(ad.sum(proximity_loss(x, prog(x, params))), float(len(x)))

    else:
        raise ValueError(f"variant {cfg.variant!r} does not train a network")

    def objective(params, X, batch, diagnostics=None):
        return {
            "fidelity": _masked_fidelity(net, params, X, batch, cfg, distance),
            "preservation": preservation(params, X, batch, diagnostics),
        }

    objective.distance = distance
    return objective


# ---------------------------------------------------------------------------
# one step


def _grads(term, tape):
    g = ad.backward(term)
    return {k: g.get(id(v), np.zeros_like(v.value)) for k, v in tape.items()}


def train_step(net, batch, X, objective, loss_cfg, train_cfg, state):
    """One optimisation step on ``batch``.

    Parameters
    ----------
    net : RiemannianNetwork
    batch : dict
        ``u``, ``v`` (edge endpoint ids), ``neg`` (``(B, k)`` negative ids,
        ``-1`` padded) and ``vertex_points`` (source points for the
        preservation term).
    X : ndarray
        Source embeddings of all nodes.
    objective : callable from :func:`make_objective`

    Returns
    -------
    net, state, metrics
    """
    params = net.params()
    tape = {k: ad.Var(v) for k, v in params.items()}
    terms = objective(tape, X, batch, state.diagnostics)
    g_fid = _grads(terms["fidelity"], tape)
    g_pres = _grads(terms["preservation"], tape)
    shared = f"l{len(net.layers) - 1}.A"
    norms = (float(np.linalg.norm(g_fid[shared])), float(np.linalg.norm(g_pres[shared])))
    if train_cfg.gradnorm_enabled:
        w = gradnorm_weights(norms, state.gradnorm)
    else:
        w = np.ones(2)
    lam = loss_cfg.lambda_balance
    manifolds = net.param_manifolds()
    new = {}
    for name, p in params.items():
        g = w[0] * g_fid[name] + w[1] * lam * g_pres[name]
        m = manifolds[name]
        if m is None or isinstance(m, Euclidean):
            if not np.all(np.isfinite(g)):
                state.counters["skipped"] += 1
                new[name] = p
                continue
            new[name] = adam_step(state.adam.setdefault(name, AdamMoment()), p, g, train_cfg.euclidean_lr)
        else:
            new[name] = rsgd_step(m, p, g, train_cfg.riemannian_lr, state.counters)
    state.step += 1
    metrics = {
        "fidelity": float(ad.value(terms["fidelity"])),
        "preservation": float(ad.value(terms["preservation"])),
        "weight_fidelity": float(w[0]),
        "weight_preservation": float(w[1]),
        "gradnorm_fidelity": norms[0],
        "gradnorm_preservation": norms[1],
    }
    return net.with_params(new), state, metrics


# ---------------------------------------------------------------------------
# training loop


@dataclass
class FitResult:
    net: object
    best_epoch: int
    best_val_map: float
    history: list  # dicts: epoch, split, map, skipped_queries
    losses: list  # dicts: epoch and mean term values
    state: OptimizerState
    stopped_early: bool = False


def _directed_edges(edges):
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    return np.concatenate([e, e[:, ::-1]], axis=0)


def fit(net, dataset, loss_cfg, train_cfg, eval_distance=None, extra_points=None, log_every=0):
    """Train ``net`` on the train split of ``dataset`` with early stopping.

    Validation mAP is evaluated every ``eval_every`` epochs and the best
    network is kept; training stops after ``patience`` epochs without
    improvement. Without validation queries the last network is kept.

    The preservation term is evaluated on ``vertex_batch`` points sampled
    from all node embeddings (labels are never used) plus ``extra_points``.
    """
    rng = np.random.default_rng(train_cfg.seed)
    X = dataset.embeddings
    pres_pool = X if extra_points is None else np.concatenate([X, np.asarray(extra_points, float)])
    train_ids = dataset.ids("train")
    edges = split_edges(dataset)["train"]
    if len(edges) == 0:
        raise ValueError("no training edges")
    directed = _directed_edges(edges)
    adj = adjacency(dataset.n_nodes, edges)
    exclusions_all = [adj[i] | {i} for i in range(dataset.n_nodes)]
    objective = make_objective(net, loss_cfg)
    eval_distance = objective.distance if eval_distance is None else eval_distance
    steps_per_epoch = int(math.ceil(len(directed) / train_cfg.batch_size))
    period = train_cfg.refresh_period or steps_per_epoch
    state = OptimizerState(gradnorm=GradNormState(beta=train_cfg.gradnorm_beta))
    k = min(loss_cfg.neighbor_count, train_cfg.neighbors_k)

    def report_recall(idx, Y):
        if train_cfg.recall_queries:
            q = range(min(train_cfg.recall_queries, len(train_ids)))
            log.info("step %d: chart kNN recall@%d = %.3f", idx.build_step, k, recall_at_k(idx, Y, k, q))

    def evaluate(current, epoch):
        Y = network_forward(current, X)
        rows = []
        for split in ("train", "val"):
            r = mean_average_precision(Y, dataset, split, eval_distance)
            rows.append({"epoch": epoch, "split": split, "map": r.map, "skipped_queries": r.skipped})
        return rows

    history = evaluate(net, 0)
    best_val = history[-1]["map"]
    best_net, best_epoch = net, 0
    losses = []
    Y0 = network_forward(net, X[train_ids])
    index = build_index(net.target, Y0, train_ids, 0, period)
    report_recall(index, Y0)
    since = 0
    stopped = False
    for epoch in range(1, train_cfg.epochs + 1):
        order = rng.permutation(len(directed))
        sums = {}
        for s in range(steps_per_epoch):
            sel = directed[order[s * train_cfg.batch_size : (s + 1) * train_cfg.batch_size]]
            if len(sel) == 0:
                continue
            fresh = maybe_refresh(index, state.step, lambda: network_forward(net, X[train_ids]))
            if fresh is not index and train_cfg.recall_queries:
                report_recall(fresh, network_forward(net, X[train_ids]))
            index = fresh
            u, v = sel[:, 0], sel[:, 1]
            neg = query_negatives_batch(index, u, k, [exclusions_all[i] for i in u])
            n_pool = len(pres_pool)
            vertices = np.sort(rng.choice(n_pool, size=min(train_cfg.vertex_batch, n_pool), replace=False))
            batch = {"u": u, "v": v, "neg": neg, "vertex_points": pres_pool[vertices]}
            net, state, metrics = train_step(net, batch, X, objective, loss_cfg, train_cfg, state)
            for key, val in metrics.items():
                sums[key] = sums.get(key, 0.0) + val
        row = {"epoch": epoch}
        row.update({key: val / steps_per_epoch for key, val in sums.items()})
        row["skipped_steps"] = state.counters["skipped"]
        row["floored_eigenvalues"] = state.diagnostics.floored
        losses.append(row)
        if log_every and epoch % log_every == 0:
            log.info("epoch %d: %s", epoch, {k2: round(v2, 5) for k2, v2 in row.items()})
        if epoch % train_cfg.eval_every == 0 or epoch == train_cfg.epochs:
            rows = evaluate(net, epoch)
            history.extend(rows)
            val = rows[-1]["map"]
            if math.isnan(val):
                best_net, best_epoch = net, epoch
            elif not val <= best_val:
                best_val, best_net, best_epoch, since = val, net, epoch, 0
            else:
                since += train_cfg.eval_every
                if since >= train_cfg.patience:
                    stopped = True
                    break
    return FitResult(best_net, best_epoch, best_val, history, losses, state, stopped)

