"""SPD geometry and the isometry / conformality penalties.

A map ``f`` between manifolds pulls the target metric back to a metric ``F``
on the source. Comparing ``F`` with the source metric ``G`` through the
spectrum of ``F G^-1`` gives the isometry penalty (all eigenvalues 1) and the
conformality penalty (all eigenvalues equal, up to a scale factor whose log
is limited to ``C``).
"""

# %% affine-invariant SPD distance
import math

import numpy as np

from conformal_retrofit import layers as L
from conformal_retrofit import losses as Lo
from conformal_retrofit import spd
from conformal_retrofit.manifolds import Euclidean, Sphere

I2 = np.eye(2)
print("D(I, e^2 I) =", spd.spd_geodesic_sq(I2, math.e**2 * I2))
rng = np.random.default_rng(0)
A = rng.normal(size=(4, 4))
X, Y = A @ A.T + np.eye(4), np.diag([1.0, 2, 3, 4])
print("congruence invariance:", spd.spd_geodesic_sq(X, Y), spd.spd_geodesic_sq(A @ X @ A.T, A @ Y @ A.T))


# %% scaling maps: isometric penalty > 0, conformal penalty 0 when C allows it
def scaling(s):
    layer = L.RiemannianFeedforwardLayer(Euclidean(2), Euclidean(2), s * np.eye(2), np.zeros(2), np.zeros(2))
    return L.RiemannianNetwork((layer,))


x = rng.normal(size=(3, 2))
for s in (0.5, 1.0, 2.0):
    net = scaling(s)
    print(f"f(x) = {s}x: isometry {Lo.isometry_loss(net, x)[0]:.6f}",
          f" conformal C=inf {Lo.conformality_loss(net, x, math.inf)[0]:.2e}",
          f" conformal C=0.5 {Lo.conformality_loss(net, x, 0.5)[0]:.6f}")

# %% rotations of the sphere are isometries
S = Sphere(2)
p = np.array([0.0, 0.0, 1.0])
theta = 0.7
R = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
rot = L.RiemannianNetwork((L.RiemannianFeedforwardLayer(S, S, R, p, p),))
pts = S.random_point(rng, (5,))
pts[:, 2] = np.abs(pts[:, 2])
print("sphere rotation, isometry penalty:", Lo.isometry_loss(rot, pts))
