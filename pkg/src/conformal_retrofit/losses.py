"""Fidelity and preservation objectives for the three retrofitting variants.

* standard: free target table, squared edge lengths + proximity to the source.
* explicit: a Euclidean network, max-margin fidelity + proximity.
* conformal: a Riemannian network, max-margin fidelity on the target manifold
  + a penalty on how far the pullback metric is from a scalar multiple of the
  source metric.

For the conformality penalty write ``M = G^-1/2 F G^-1/2`` with eigenvalues
``mu``, ``n`` its size and ``ldr = sum(log mu)``. Minimising
``||log(M) - alpha I||^2`` over ``|alpha| <= C`` gives

    sum(log(mu)^2) - ldr^2 / n                   if |ldr| / n <= C
    sum(log(mu)^2) - 2 C |ldr| + C^2 n           otherwise,

which is continuous in ``ldr``, equals the isometry penalty at ``C = 0`` and
vanishes exactly on conformal maps with ``|alpha| <= C``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import diff as ad
from . import spd
from .layers import chart_tangents, network_jacobian, network_program
from .manifolds import Euclidean, Manifold, PoincareBall, Product

__all__ = [
    "LossConfig",
    "resolve_conformality",
    "embedding_distance",
    "proximity_loss",
    "sr_objective",
    "er_fidelity",
    "cr_fidelity",
    "source_metric",
    "pullback_metric",
    "isometry_loss",
    "conformality_from_metrics",
    "conformality_loss",
    "conformality_penalty",
    "pullback_terms",
    "total_conformal_objective",
]

VARIANTS = ("standard", "explicit", "conformal")


@dataclass
class LossConfig:
    """Loss hyperparameters.

    ``conformality_C`` may be ``math.inf`` (no constraint on the scale factor,
    i.e. a pure conformality penalty) or any value >= 0; ``0`` gives the
    isometry penalty. ``conformality_label`` together with
    ``conformality_table`` lets a run name a conformality level by an opaque
    label (for instance the grid ``0.0 ... 1.0``) that the user maps to ``C``.
    """

    variant: str = "conformal"
    lambda_balance: float = 1.0
    margin: float = 0.1
    conformality_C: float = math.inf
    conformality_label: str | None = None
    conformality_table: dict = field(default_factory=dict)
    distance_kind: str = "euclidean"
    neighbor_count: int = 50

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not self.margin > 0:
            raise ValueError("margin must be positive")
        if self.neighbor_count < 1:
            raise ValueError("neighbor_count must be at least 1")
        if self.lambda_balance < 0:
            raise ValueError("lambda must be nonnegative")
        if self.distance_kind not in ("euclidean", "cosine"):
            raise ValueError("distance_kind must be 'euclidean' or 'cosine'")
        self.conformality_C = resolve_conformality(
            self.conformality_C, self.conformality_label, self.conformality_table
        )


def resolve_conformality(C=math.inf, label=None, table=None):
    """Return the numeric bound ``C`` for a config.

    A label, when given, must appear in ``table``; values may be numbers or
    the strings ``"inf"``/``"infinity"``.
    """
    if label is not None:
        table = table or {}
        key = str(label)
        if key not in table:
            raise ValueError(f"conformality label {key!r} not found in conformality_table")
        C = table[key]
    if isinstance(C, str):
        C = float(C.strip().lower().replace("infinity", "inf"))
    C = float(C)
    if C < 0 or math.isnan(C):
        raise ValueError(f"conformality bound must be >= 0, got {C}")
    return C


# ---------------------------------------------------------------------------
# distances and simple terms


def embedding_distance(u, v, kind="euclidean"):
    """Euclidean distance, or cosine distance ``1 - cos(u, v)``."""
    if kind == "euclidean":
        return ad.norm(ad.sub(u, v), keepdims=False)
    if kind == "cosine":
        num = ad.dot(u, v, keepdims=False)
        den = ad.mul(ad.norm(u, keepdims=False), ad.norm(v, keepdims=False))
        return ad.sub(1.0, ad.div(num, ad.clip(den, 1e-12, np.inf)))
    raise ValueError(f"unknown distance kind {kind!r}")


def _dist_fn(m):
    if isinstance(m, Manifold):
        return m.dist
    return lambda a, b: embedding_distance(a, b, m)


def proximity_loss(w_source, w_target):
    """``||w_source - w_target||^2`` along the last axis."""
    d = ad.sub(w_target, w_source)
    return ad.sum(ad.mul(d, d), axis=-1)


def sr_objective(targets, sources, edges, lam=1.0):
    """Standard retrofitting objective for an embedding table.

    ``targets`` and ``sources`` are ``(n_nodes, d)``; ``edges`` is an
    ``(n_edges, 2)`` integer array.
    """
    targets = np.asarray(targets, dtype=float)
    sources = np.asarray(sources, dtype=float)
    edges = np.asarray(edges, dtype=int).reshape(-1, 2)
    diff = targets[edges[:, 0]] - targets[edges[:, 1]]
    return float(np.sum(diff * diff) + lam * np.sum((targets - sources) ** 2))


def er_fidelity(u_t, v_t, graph_dist, kind="euclidean"):
    """Squared gap between an embedding distance and the graph distance."""
    d = ad.sub(embedding_distance(u_t, v_t, kind), graph_dist)
    return ad.mul(d, d)


def cr_fidelity(u_t, v_t, negatives, margin, m, mask=None):
    """Max-margin fidelity ``sum_x max(0, margin + d(u, v) - d(u, x))``.

    ``u_t`` and ``v_t`` are ``(..., ambient)``, ``negatives`` is
    ``(..., k, ambient)``; ``m`` is the target manifold, or the string
    ``"euclidean"``/``"cosine"`` for the Euclidean baselines. ``mask``
    (``(..., k)`` of 0/1) drops padded negatives. Returns the per-edge sums
    with shape ``(...)``.
    """
    dist = _dist_fn(m)
    d_pos = dist(u_t, v_t)
    u_b = ad.getitem(u_t, (Ellipsis, None, slice(None)))
    d_neg = dist(u_b, negatives)
    hinge = ad.relu(ad.sub(ad.add(margin, ad.getitem(d_pos, (Ellipsis, None))), d_neg))
    if mask is not None:
        hinge = ad.mul(hinge, np.asarray(mask, dtype=float))
    return ad.sum(hinge, axis=-1)


# ---------------------------------------------------------------------------
# metrics


def source_metric(m, x):
    """Metric tensor of ``m`` at ``x`` in the orthonormal chart."""
    return m.metric_tensor(np.asarray(x, dtype=float))


def _output_weights(target, y):
    """Per-ambient-coordinate metric weights at output points ``y``.

    The metric of every supported manifold is a conformal multiple of the
    ambient inner product on each factor, so ``F = sum_k w_k D_k^T D_k`` for
    the ambient output tangents ``D``.
    """
    parts = []
    factors = target.factors
    for k, f in enumerate(factors):
        sl = target.amb_slices[k] if isinstance(target, Product) else slice(None)
        yk = ad.getitem(y, (Ellipsis, sl))
        if isinstance(f, PoincareBall):
            lam = f._lambda(yk)
            s = ad.mul(lam, lam)
            parts.append(ad.mul(s, np.ones(f.ambient_dim)))
        else:
            parts.append(np.ones(ad.value(yk).shape))
    return ad.concat(parts, axis=-1)


def _pullback_from_tangent(target, y, d):
    """``F = D^T W D`` with ``D`` of shape ``(..., ambient, n)``."""
    w = _output_weights(target, y)
    wd = ad.mul(d, ad.getitem(w, (Ellipsis, slice(None), None)))
    return ad.matmul(ad.swapaxes(d, -1, -2), wd)


def pullback_metric(net, w_source, diagnostics=None):
    """Pullback of the target metric through ``net`` in the source chart.

    Returns ``J^T G_f(p) J`` (symmetrised, spectrum floored) with shape
    ``(..., n, n)``, ``n`` the source intrinsic dimension.
    """
    x = net.source.check_point(w_source)
    J = network_jacobian(net, x)
    y = np.asarray(network_program(net)(x))
    G = net.target.metric_tensor(y)
    if net.target.dim < net.source.dim:
        warnings.warn(
            f"target {net.target} has lower dimension than source {net.source}; "
            "the pullback metric is singular",
            RuntimeWarning,
            stacklevel=2,
        )
    return spd.make_spd(np.swapaxes(J, -1, -2) @ G @ J, diagnostics)


def _penalty_value_and_grad(mu, C):
    """Closed-form penalty from ratio eigenvalues plus d(penalty)/d(mu)."""
    n = mu.shape[-1]
    lm = np.log(mu)
    ldr = np.sum(lm, axis=-1)
    sq = np.sum(lm * lm, axis=-1)
    inside = np.abs(ldr) / n <= C
    if math.isinf(C):
        corr = ldr * ldr / n
        dcorr = 2.0 * ldr / n
    else:
        corr = np.where(inside, ldr * ldr / n, 2.0 * C * np.abs(ldr) - C * C * n)
        dcorr = np.where(inside, 2.0 * ldr / n, 2.0 * C * np.sign(ldr))
    val = np.maximum(sq - corr, 0.0)
    dmu = (2.0 * lm - dcorr[..., None]) / mu
    return val, dmu


def conformality_from_metrics(F, G, C, diagnostics=None):
    """Closed-form conformality penalty between SPD stacks ``F`` and ``G``."""
    mu = spd.ratio_eigenvalues(F, G, diagnostics)
    val, _ = _penalty_value_and_grad(mu, float(C))
    return val


def conformality_penalty(M, C, diagnostics=None):
    """Penalty of a (possibly taped) SPD stack ``M`` relative to the identity.

    Differentiable primitive: for ``M = V diag(mu) V^T`` the gradient is
    ``V diag(dP/dmu) V^T``. Eigenvalues are floored like everywhere else.
    """
    Mv = 0.5 * (ad.value(M) + np.swapaxes(ad.value(M), -1, -2))
    mu, V = spd.sym_eig(Mv)
    if diagnostics is not None:
        diagnostics.record(mu)
    floored = mu < spd.EIG_FLOOR
    mu = np.maximum(mu, spd.EIG_FLOOR)
    val, dmu = _penalty_value_and_grad(mu, float(C))
    dmu = np.where(floored, 0.0, dmu)
    grad = (V * dmu[..., None, :]) @ np.swapaxes(V, -1, -2)

    def vjp(g):
        return np.asarray(g)[..., None, None] * grad

    return ad.custom(val, [(M, vjp)])


def isometry_loss(net, w_source, diagnostics=None):
    """``||log(F G^-1)||^2`` between the pullback and the source metric."""
    return conformality_loss(net, w_source, 0.0, diagnostics)


def conformality_loss(net, w_source, C, diagnostics=None):
    """Conformality penalty of ``net`` at source points ``w_source``."""
    F = pullback_metric(net, w_source, diagnostics)
    G = source_metric(net.source, w_source)
    return conformality_from_metrics(F, G, C, diagnostics)


# ---------------------------------------------------------------------------
# differentiable objective pieces (used by training)


def pullback_terms(net_meta, params, x, C, diagnostics=None):
    """Per-point conformality penalty as a taped function of ``params``.

    ``net_meta`` is the :class:`~conformal_retrofit.layers.RiemannianNetwork`
    whose structure is used; ``params`` may contain tape variables.
    """
    source, target = net_meta.source, net_meta.target
    prog = network_program(net_meta)
    out = prog(ad.Dual(x, chart_tangents(source, x)), params)
    y = out.primal
    n = source.dim
    if out.tangent is None:
        d = np.zeros(ad.value(y).shape + (n,))
    else:
        d = out.tangent  # (n, ..., ambient)
        nd = ad.value(d).ndim
        for i in range(nd - 1):
            d = ad.swapaxes(d, i, i + 1)
    F = _pullback_from_tangent(target, y, d)
    G = source.metric_tensor(x)
    s = spd.spd_inv_sqrt(G)
    M = ad.matmul(ad.matmul(s, F), s)
    return conformality_penalty(M, C, diagnostics)


def total_conformal_objective(net, edge_batch, vertex_batch, negatives_per_u, cfg, weights=(1.0, 1.0)):
    """Weighted conformal-retrofitting objective on a batch (values only).

    Parameters
    ----------
    net : RiemannianNetwork
    edge_batch : tuple of arrays
        ``(u_source, v_source)`` source points, each ``(B, ambient)``.
    vertex_batch : array
        ``(V, ambient)`` source points for the preservation term.
    negatives_per_u : array
        ``(B, k, ambient)`` source points of the sampled negatives.
    cfg : LossConfig
    weights : pair
        Balancer weights for (fidelity, lambda * preservation).

    Returns
    -------
    total : float
    terms : dict with ``fidelity`` and ``preservation`` sums.
    """
    fid = 0.0
    u_s, v_s = edge_batch
    if len(u_s):
        fwd = network_program(net)
        u_t = fwd(np.asarray(u_s, float))
        v_t = fwd(np.asarray(v_s, float))
        n_t = fwd(np.asarray(negatives_per_u, float))
        fid = float(np.sum(cr_fidelity(u_t, v_t, n_t, cfg.margin, net.target)))
    pres = 0.0
    if len(vertex_batch):
        pres = float(np.sum(conformality_loss(net, vertex_batch, cfg.conformality_C)))
    total = weights[0] * fid + weights[1] * cfg.lambda_balance * pres
    return total, {"fidelity": fid, "preservation": pres}
