"""Geometry of the supported manifolds.

Euclidean space, the unit sphere, the Poincare ball and their products share
one interface: points are ambient numpy arrays, tangent vectors are ambient
arrays orthogonal to the normal directions, and every manifold has an
orthonormal chart (``tangent_basis``) in which metric tensors are expressed.

Run with ``python notebooks/01_manifolds.py``.
"""

# %% descriptors
import numpy as np

from conformal_retrofit.manifolds import parse_manifold

rng = np.random.default_rng(0)
for text in ["E5", "S3", "H3", "S30xH30", "s2xe1xh2"]:
    m = parse_manifold(text)
    print(f"{text:>10} -> {m}  intrinsic dim {m.dim}, ambient dim {m.ambient_dim}")

# %% exp and log are inverse
m = parse_manifold("S30xH30")
p, q = m.random_point(rng, (5,)), m.random_point(rng, (5,))
v = m.logmap(p, q)
print("max |exp_p(log_p q) - q| =", np.max(np.abs(m.expmap(p, v) - q)))

# %% product distances decompose over factors
d = m.dist(p, q)
parts = [f.dist(p[:, s], q[:, s]) for f, s in zip(m.factors, m.amb_slices)]
print("d^2 =", d**2)
print("sum of factor d^2 =", sum(x**2 for x in parts))

# %% the Poincare ball metric grows towards the boundary
H = parse_manifold("H2")
for r in (0.0, 0.5, 0.9, 0.99):
    G = H.metric_tensor(np.array([r, 0.0]))
    print(f"|p| = {r:<5} metric scale {G[0, 0]:10.2f}")

# %% two sphere points and the geodesic between them
S = parse_manifold("S2")
a, b = np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])
path = [S.expmap(a, t * S.logmap(a, b)) for t in np.linspace(0, 1, 5)]
print("geodesic samples:\n", np.round(path, 3))
print("length:", S.dist(a, b), "(pi/2 =", np.pi / 2, ")")
