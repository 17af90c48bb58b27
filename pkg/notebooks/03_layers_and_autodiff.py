"""Riemannian feedforward layers and the differentiation engine.

A layer maps the source manifold to its tangent space at ``b_source``
(log map), applies ``A``, moves the result into the target tangent space at
``b_target`` via orthonormal frames, and returns to the manifold through the
exp map. Forward-mode dual numbers give the input Jacobian; a reverse tape on
top differentiates Jacobian-dependent losses in the parameters.
"""

# %% a network from an architecture string
import numpy as np

from conformal_retrofit import diff as ad
from conformal_retrofit import layers as L
from conformal_retrofit import losses as Lo

rng = np.random.default_rng(0)
net = L.init_network("E4 -> E8 -> S2xH2", rng)
x = rng.normal(size=(3, 4))
y = L.network_forward(net, x)
print("outputs on", net.target, "\n", np.round(y, 4))

# %% Jacobian in the orthonormal charts, checked against finite differences
J = L.network_jacobian(net, x[0])
prog = L.network_program(net)
Ja = ad.value_and_jacobian(prog, x[0])[1]
print("chart Jacobian shape", J.shape, "ambient Jacobian shape", Ja.shape)
print("max |analytic - finite difference| =", np.max(np.abs(Ja - ad.finite_diff_jacobian(prog, x[0]))))

# %% Euclidean layers are ordinary dense layers
A, b = rng.normal(size=(3, 4)), rng.normal(size=3)
layer = L.euclidean_layer(A, b, "tanh")
print("RFL vs tanh(Ax + b):", np.max(np.abs(L.rfl_forward(layer, x) - np.tanh(x @ A.T + b))))

# %% gradient of the conformality penalty in the parameters
params = net.params()
tape = {k: ad.Var(v) for k, v in params.items()}
penalty = ad.sum(Lo.pullback_terms(net, tape, x, np.inf))
grads = ad.backward(penalty)
print("penalty", ad.value(penalty))
for k in params:
    g = grads.get(id(tape[k]))
    if g is not None:
        print(f"  d/d{k}: norm {np.linalg.norm(g):.4f}")
