"""Riemannian feedforward layers and networks.

A layer maps ``x`` on its source manifold to

    exp_{b_t}( B_t sigma( A B_s^T log_{b_s}(x) ) )

where ``B_s`` and ``B_t`` are the orthonormal tangent bases at the two bias
points. The nonlinearity therefore acts on intrinsic chart coordinates at
``b_t``. With Euclidean source and target, ``b_t = 0`` and ``b_s = -A^+ b``
this is the ordinary dense layer ``sigma(A x + b)``.

Networks are evaluated with the primitives of :mod:`conformal_retrofit.diff`,
so the same code yields values, chart Jacobians and parameter gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import diff as ad
from .manifolds import Euclidean, Manifold, parse_manifold

__all__ = [
    "NONLINEARITIES",
    "RiemannianFeedforwardLayer",
    "RiemannianNetwork",
    "parse_architecture",
    "init_network",
    "rfl_forward",
    "network_forward",
    "network_program",
    "network_jacobian",
    "chart_tangents",
]

NONLINEARITIES = {"tanh": ad.tanh, "relu": ad.relu, "identity": ad.identity}


@dataclass(frozen=True)
class RiemannianFeedforwardLayer:
    source: Manifold
    target: Manifold
    A: np.ndarray
    b_source: np.ndarray
    b_target: np.ndarray
    nonlinearity: str = "identity"

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        if A.shape != (self.target.dim, self.source.dim):
            raise ValueError(
                f"A has shape {A.shape}, expected {(self.target.dim, self.source.dim)} "
                f"for {self.source} -> {self.target}"
            )
        if self.nonlinearity not in NONLINEARITIES:
            raise ValueError(f"unknown nonlinearity {self.nonlinearity!r}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b_source", self.source.check_point(self.b_source))
        object.__setattr__(self, "b_target", self.target.check_point(self.b_target))


def _apply_layer(source, target, nonlinearity, A, b_s, b_t, x):
    v = source.logmap(b_s, x)
    z = source.to_chart(b_s, v)
    h = NONLINEARITIES[nonlinearity](ad.matvec(A, z))
    return target.expmap(b_t, target.from_chart(b_t, h))


def rfl_forward(layer, x):
    """Apply one layer to points ``x`` (``(..., source ambient)``)."""
    x = layer.source.check_point(x)
    return np.asarray(
        _apply_layer(
            layer.source, layer.target, layer.nonlinearity, layer.A, layer.b_source, layer.b_target, x
        )
    )


@dataclass(frozen=True)
class RiemannianNetwork:
    """An ordered stack of layers with chained manifolds."""

    layers: tuple = field(default_factory=tuple)

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ValueError("a network needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.target != b.source:
                raise ValueError(f"layer chain mismatch: {a.target} feeds {b.source}")
        object.__setattr__(self, "layers", layers)

    @property
    def source(self):
        return self.layers[0].source

    @property
    def target(self):
        return self.layers[-1].target

    @property
    def architecture(self):
        return " -> ".join([str(self.source)] + [str(l.target) for l in self.layers])

    def params(self):
        """Parameter table ``{"l0.A": ..., "l0.b_source": ..., ...}`` (copies)."""
        out = {}
        for i, l in enumerate(self.layers):
            out[f"l{i}.A"] = l.A.copy()
            out[f"l{i}.b_source"] = l.b_source.copy()
            out[f"l{i}.b_target"] = l.b_target.copy()
        return out

    def param_manifolds(self):
        """Manifold on which each parameter lives (``None`` for weight matrices)."""
        out = {}
        for i, l in enumerate(self.layers):
            out[f"l{i}.A"] = None
            out[f"l{i}.b_source"] = l.source
            out[f"l{i}.b_target"] = l.target
        return out

    def with_params(self, params):
        layers = []
        for i, l in enumerate(self.layers):
            layers.append(
                replace(
                    l,
                    A=params.get(f"l{i}.A", l.A),
                    b_source=params.get(f"l{i}.b_source", l.b_source),
                    b_target=params.get(f"l{i}.b_target", l.b_target),
                )
            )
        return RiemannianNetwork(tuple(layers))

    def n_parameters(self):
        return int(sum(np.size(v) for v in self.params().values()))


def _forward_fn(meta):
    def fn(params, x):
        for i, (src, tgt, nl) in enumerate(meta):
            x = _apply_layer(
                src, tgt, nl, params[f"l{i}.A"], params[f"l{i}.b_source"], params[f"l{i}.b_target"], x
            )
        return x

    return fn


def network_program(net):
    """Wrap the network as a :class:`diff.Program` over ambient coordinates."""
    meta = tuple((l.source, l.target, l.nonlinearity) for l in net.layers)
    return ad.Program(_forward_fn(meta), net.params(), net.source.ambient_dim, net.target.ambient_dim)


def network_forward(net, x):
    x = net.source.check_point(x)
    return np.asarray(network_program(net)(x))


def chart_tangents(m, x):
    """Dual-number seeds along the orthonormal tangent basis at ``x``.

    Returns an array of shape ``(dim, ..., ambient)`` whose i-th slice is the
    i-th basis column at every point of the batch.
    """
    basis = m.tangent_basis(x)  # (..., ambient, dim)
    return np.moveaxis(basis, -1, 0).copy()


def network_jacobian(net, x, ambient=False):
    """Chart-to-chart Jacobian of the network at ``x``.

    The result has shape ``(..., target dim, source dim)`` and is expressed in
    the orthonormal charts of ``tangent_basis`` at ``x`` and at ``f(x)``. With
    ``ambient=True`` the output side is left in ambient coordinates
    (``(..., target ambient, source dim)``).
    """
    x = net.source.check_point(x)
    prog = network_program(net)
    out = prog(ad.Dual(x, chart_tangents(net.source, x)))
    y = ad.value(out)
    t = np.zeros((net.source.dim,) + y.shape) if out.tangent is None else ad.value(out.tangent)
    d = np.moveaxis(np.broadcast_to(t, (net.source.dim,) + y.shape), 0, -1)
    if ambient:
        return d
    basis = net.target.tangent_basis(y)
    return np.swapaxes(basis, -1, -2) @ d


def parse_architecture(text):
    """Parse ``"E50 -> E1600 -> E1600 -> S30xH30"`` into a list of manifolds."""
    parts = [p.strip() for p in str(text).split("->")]
    if len(parts) < 2 or any(not p for p in parts):
        raise ValueError(f"bad architecture string {text!r}")
    return [parse_manifold(p) for p in parts]


def _orthogonal(rng, rows, cols):
    big, small = max(rows, cols), min(rows, cols)
    q, r = np.linalg.qr(rng.standard_normal((big, small)))
    q = q * np.sign(np.diag(r))
    return q if rows >= cols else q.T


def init_network(architecture, rng, hidden_nonlinearity="tanh", final_nonlinearity="identity"):
    """Build a network for an architecture string or list of manifolds.

    Weight matrices get orthonormal columns (or rows when the layer narrows);
    bias points start at each manifold's origin: zero on Euclidean factors,
    ``e1`` on spheres and the centre of the ball.
    """
    chain = parse_architecture(architecture) if isinstance(architecture, str) else list(architecture)
    layers = []
    for i, (src, tgt) in enumerate(zip(chain, chain[1:])):
        last = i == len(chain) - 2
        layers.append(
            RiemannianFeedforwardLayer(
                source=src,
                target=tgt,
                A=_orthogonal(rng, tgt.dim, src.dim),
                b_source=src.origin(),
                b_target=tgt.origin(),
                nonlinearity=final_nonlinearity if last else hidden_nonlinearity,
            )
        )
    return RiemannianNetwork(tuple(layers))


def euclidean_layer(A, b, nonlinearity="identity"):
    """Dense layer ``sigma(A x + b)`` expressed as a Riemannian layer."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    out_dim, in_dim = A.shape
    return RiemannianFeedforwardLayer(
        source=Euclidean(in_dim),
        target=Euclidean(out_dim),
        A=A,
        b_source=-np.linalg.pinv(A) @ b,
        b_target=np.zeros(out_dim),
        nonlinearity=nonlinearity,
    )
