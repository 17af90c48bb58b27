"""Euclidean, spherical, Poincare-ball and product manifolds.

Points and tangent vectors are plain arrays in ambient coordinates with the
manifold along the last axis; leading axes broadcast. The geometry kernels
(``expmap``, ``logmap``, ``dist``, chart maps) are written with the primitives
from :mod:`conformal_retrofit.diff`, so they accept ndarrays, tape variables
and dual numbers alike. The module-level functions (``distance``,
``exp_map`` ...) are the validated ndarray entry points.

Charts: every tangent space gets an orthonormal (ambient inner product) basis
from :meth:`Manifold.tangent_basis`; metric tensors are expressed in it.
"""

from __future__ import annotations

import re

import numpy as np

from . import diff as ad

__all__ = [
    "Manifold",
    "Euclidean",
    "Sphere",
    "PoincareBall",
    "Product",
    "parse_manifold",
    "InvalidPoint",
    "ManifoldMismatch",
    "UndefinedLog",
    "BALL_MAX_NORM",
    "metric_tensor",
    "distance",
    "exp_map",
    "log_map",
    "tangent_basis",
    "project_to_tangent",
    "random_point",
]

BALL_MAX_NORM = 1.0 - 1e-5
SPHERE_TOL = 1e-9
TANGENT_TOL = 1e-9


def _shape(size, n):
    return tuple(np.atleast_1d(size).astype(int)) + (n,) if np.size(size) else (n,)


class InvalidPoint(ValueError):
    pass


class ManifoldMismatch(ValueError):
    pass


class UndefinedLog(ValueError):
    """Logarithm requested between antipodal points of a sphere."""


class Manifold:
    kind = ""
    letter = ""

    def __init__(self, dim):
        dim = int(dim)
        if dim < 1:
            raise ValueError(f"dimension must be positive, got {dim}")
        self.dim = dim

    # descriptor ---------------------------------------------------------
    @property
    def ambient_dim(self):
        return self.dim

    @property
    def factors(self):
        return (self,)

    def __str__(self):
        return f"{self.letter}{self.dim}"

    def __repr__(self):
        return f"{type(self).__name__}({self.dim})"

    def __eq__(self, other):
        return isinstance(other, Manifold) and str(self) == str(other)

    def __hash__(self):
        return hash(str(self))

    # validation ---------------------------------------------------------
    def _check_shape(self, x, what="point"):
        x = np.asarray(x, dtype=float)
        if x.ndim == 0 or x.shape[-1] != self.ambient_dim:
            raise ManifoldMismatch(
                f"{what} has trailing size {x.shape[-1] if x.ndim else 0}, "
                f"{self} expects {self.ambient_dim}"
            )
        return x

    def check_point(self, x):
        x = self._check_shape(x)
        if not np.all(np.isfinite(x)):
            raise InvalidPoint(f"non-finite coordinates on {self}")
        return x

    def check_tangent(self, p, v):
        return self._check_shape(v, "tangent vector")

    # geometry (generic) -------------------------------------------------
    def origin(self):
        return np.zeros(self.ambient_dim)

    def projx(self, x):
        return x

    def proj_tangent(self, p, w):
        return w

    def egrad2rgrad(self, p, g):
        return g

    def to_chart(self, p, v):
        return v

    def from_chart(self, p, z):
        return z

    def metric_scale(self, p):
        """Conformal factor of the metric (squared length scale) at ``p``."""
        return 1.0

    def tangent_basis(self, p):
        p = np.asarray(p, dtype=float)
        return np.broadcast_to(np.eye(self.dim), p.shape[:-1] + (self.dim, self.dim)).copy()

    def metric_tensor(self, p):
        p = np.asarray(p, dtype=float)
        s = np.asarray(ad.value(self.metric_scale(p)))
        eye = np.eye(self.dim)
        if s.ndim:
            return s[..., None, None] * eye
        return np.broadcast_to(s * eye, p.shape[:-1] + eye.shape).copy()


class Euclidean(Manifold):
    kind = "Euclidean"
    letter = "E"

    def dist(self, x, y):
        return ad.norm(ad.sub(x, y), keepdims=False)

    def expmap(self, p, v):
        return ad.add(p, v)

    def logmap(self, p, q):
        return ad.sub(q, p)

    def random_point(self, rng, size=()):
        return rng.standard_normal(_shape(size, self.dim))


class Sphere(Manifold):
    """Unit sphere S^d in R^(d+1) with the round metric."""

    kind = "Sphere"
    letter = "S"

    @property
    def ambient_dim(self):
        return self.dim + 1

    def check_point(self, x):
        x = super().check_point(x)
        err = np.abs(np.linalg.norm(x, axis=-1) - 1.0)
        if np.any(err > SPHERE_TOL):
            raise InvalidPoint(f"point off the unit sphere by {err.max():.3g}")
        return x

    def check_tangent(self, p, v):
        v = super().check_tangent(p, v)
        p = np.asarray(p, dtype=float)
        err = np.abs(np.sum(p * v, axis=-1))
        if np.any(err > TANGENT_TOL):
            raise InvalidPoint(f"vector not tangent to the sphere (|<p,v>| = {err.max():.3g})")
        return v

    def origin(self):
        e = np.zeros(self.ambient_dim)
        e[0] = 1.0
        return e

    def projx(self, x):
        return ad.div(x, ad.norm(x))

    def proj_tangent(self, p, w):
        return ad.sub(w, ad.mul(ad.dot(p, w), p))

    egrad2rgrad = proj_tangent

    def dist(self, x, y):
        return ad.arccos(ad.clip(ad.dot(x, y, keepdims=False), -1.0, 1.0))

    def expmap(self, p, v):
        n = ad.norm(v)
        out = ad.add(ad.mul(ad.cos(n), p), ad.mul(ad.sinc(n), v))
        return self.projx(out)

    def logmap(self, p, q):
        c = ad.clip(ad.dot(p, q), -1.0, 1.0)
        u = ad.sub(q, ad.mul(c, p))
        theta = ad.arccos(c)
        return ad.div(u, ad.sinc(theta))

    # Householder frame: H = I - 2 w w^T / w^T w with w = p + e1 sends e1 to
    # -p, so columns 2.. of H span the tangent space at p. The frame is
    # smooth everywhere except at p = -e1, far from the default base point.
    def _householder(self, p):
        e1 = self.origin()
        w = ad.add(p, e1)
        ww = ad.dot(w, w)
        return w, ww

    def to_chart(self, p, v):
        w, ww = self._householder(p)
        hv = ad.sub(v, ad.mul(ad.div(ad.mul(2.0, ad.dot(w, v)), ww), w))
        return ad.getitem(hv, (Ellipsis, slice(1, None)))

    def from_chart(self, p, z):
        w, ww = self._householder(p)
        wz = ad.dot(ad.getitem(w, (Ellipsis, slice(1, None))), z)
        zeros = np.zeros(ad.value(z).shape[:-1] + (1,))
        padded = ad.concat([zeros, z], axis=-1)
        return ad.sub(padded, ad.mul(ad.div(ad.mul(2.0, wz), ww), w))

    def tangent_basis(self, p):
        p = np.asarray(p, dtype=float)
        w = p.copy()
        w[..., 0] += 1.0
        ww = np.sum(w * w, axis=-1)[..., None, None]
        h = np.eye(self.ambient_dim) - 2.0 * w[..., :, None] * w[..., None, :] / ww
        return h[..., :, 1:]

    def random_point(self, rng, size=()):
        x = rng.standard_normal(_shape(size, self.ambient_dim))
        return x / np.linalg.norm(x, axis=-1, keepdims=True)


class PoincareBall(Manifold):
    """Poincare ball of curvature -1, metric ((2 / (1 - |p|^2))^2) I."""

    kind = "PoincareBall"
    letter = "H"

    def check_point(self, x):
        x = super().check_point(x)
        r = np.linalg.norm(x, axis=-1)
        if np.any(r > BALL_MAX_NORM + 1e-12):
            raise InvalidPoint(f"ball point radius {r.max():.12g} exceeds {BALL_MAX_NORM}")
        return x

    def projx(self, x):
        n = ad.norm(x)
        return ad.mul(x, ad.div(BALL_MAX_NORM, ad.clip(n, BALL_MAX_NORM, np.inf)))

    def _lambda(self, p):
        return ad.div(2.0, ad.sub(1.0, ad.dot(p, p)))

    def metric_scale(self, p):
        lam = self._lambda(p)
        return ad.getitem(ad.mul(lam, lam), (Ellipsis, 0))

    def egrad2rgrad(self, p, g):
        s = ad.div(ad.sub(1.0, ad.dot(p, p)), 2.0)
        return ad.mul(ad.mul(s, s), g)

    @staticmethod
    def mobius_add(x, y):
        xy = ad.dot(x, y)
        x2 = ad.dot(x, x)
        y2 = ad.dot(y, y)
        num = ad.add(
            ad.mul(ad.add(ad.add(1.0, ad.mul(2.0, xy)), y2), x),
            ad.mul(ad.sub(1.0, x2), y),
        )
        den = ad.add(ad.add(1.0, ad.mul(2.0, xy)), ad.mul(x2, y2))
        return ad.div(num, den)

    def dist(self, x, y):
        diff = ad.sub(x, y)
        num = ad.mul(2.0, ad.dot(diff, diff, keepdims=False))
        den = ad.mul(
            ad.sub(1.0, ad.dot(x, x, keepdims=False)),
            ad.sub(1.0, ad.dot(y, y, keepdims=False)),
        )
        return ad.arccosh(ad.clip(ad.add(1.0, ad.div(num, den)), 1.0, np.inf))

    def expmap(self, p, v):
        lam = self._lambda(p)
        half = ad.mul(0.5, lam)
        t = ad.mul(half, ad.norm(v))
        step = ad.mul(ad.mul(ad.tanhc(t), half), v)
        return self.projx(self.mobius_add(p, step))

    def logmap(self, p, q):
        w = self.mobius_add(ad.neg(p), q)
        n = ad.clip(ad.norm(w), 0.0, BALL_MAX_NORM)
        scale = ad.sub(1.0, ad.dot(p, p))
        return ad.mul(ad.mul(scale, ad.artanhc(n)), w)

    def random_point(self, rng, size=()):
        shape = _shape(size, self.dim)
        d = rng.standard_normal(shape)
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        r = 0.5 * rng.uniform(size=shape[:-1] + (1,)) ** (1.0 / self.dim)
        return d * r


class Product(Manifold):
    """Cartesian product; factor coordinates are concatenated."""

    kind = "Product"

    def __init__(self, factors):
        flat = []
        for f in factors:
            flat.extend(f.factors)
        if not flat:
            raise ValueError("a product needs at least one factor")
        self._factors = tuple(flat)
        self.dim = sum(f.dim for f in flat)
        self.amb_slices = []
        self.int_slices = []
        a = i = 0
        for f in flat:
            self.amb_slices.append(slice(a, a + f.ambient_dim))
            self.int_slices.append(slice(i, i + f.dim))
            a += f.ambient_dim
            i += f.dim
        self._ambient = a

    @property
    def ambient_dim(self):
        return self._ambient

    @property
    def factors(self):
        return self._factors

    def __str__(self):
        return "x".join(str(f) for f in self._factors)

    def __repr__(self):
        return f"Product({list(self._factors)!r})"

    def _amb(self, x, k):
        return ad.getitem(x, (Ellipsis, self.amb_slices[k]))

    def _int(self, x, k):
        return ad.getitem(x, (Ellipsis, self.int_slices[k]))

    def _each(self, fn, *args, chart_in=(), chart_out=False):
        parts = []
        for k, f in enumerate(self._factors):
            sub = [self._int(a, k) if j in chart_in else self._amb(a, k) for j, a in enumerate(args)]
            parts.append(fn(f, *sub))
        return ad.concat(parts, axis=-1)

    def check_point(self, x):
        x = self._check_shape(x)
        for k, f in enumerate(self._factors):
            f.check_point(x[..., self.amb_slices[k]])
        return x

    def check_tangent(self, p, v):
        v = self._check_shape(v, "tangent vector")
        p = np.asarray(p, dtype=float)
        for k, f in enumerate(self._factors):
            f.check_tangent(p[..., self.amb_slices[k]], v[..., self.amb_slices[k]])
        return v

    def origin(self):
        return np.concatenate([f.origin() for f in self._factors])

    def projx(self, x):
        return self._each(lambda f, a: f.projx(a), x)

    def proj_tangent(self, p, w):
        return self._each(lambda f, a, b: f.proj_tangent(a, b), p, w)

    def egrad2rgrad(self, p, g):
        return self._each(lambda f, a, b: f.egrad2rgrad(a, b), p, g)

    def expmap(self, p, v):
        return self._each(lambda f, a, b: f.expmap(a, b), p, v)

    def logmap(self, p, q):
        return self._each(lambda f, a, b: f.logmap(a, b), p, q)

    def to_chart(self, p, v):
        parts = [f.to_chart(self._amb(p, k), self._amb(v, k)) for k, f in enumerate(self._factors)]
        return ad.concat(parts, axis=-1)

    def from_chart(self, p, z):
        parts = [f.from_chart(self._amb(p, k), self._int(z, k)) for k, f in enumerate(self._factors)]
        return ad.concat(parts, axis=-1)

    def factor_dists(self, x, y):
        return [f.dist(self._amb(x, k), self._amb(y, k)) for k, f in enumerate(self._factors)]

    def dist(self, x, y):
        total = None
        for d in self.factor_dists(x, y):
            sq = ad.mul(d, d)
            total = sq if total is None else ad.add(total, sq)
        return ad.sqrt(total)

    def tangent_basis(self, p):
        p = np.asarray(p, dtype=float)
        out = np.zeros(p.shape[:-1] + (self.ambient_dim, self.dim))
        for k, f in enumerate(self._factors):
            out[..., self.amb_slices[k], self.int_slices[k]] = f.tangent_basis(p[..., self.amb_slices[k]])
        return out

    def metric_tensor(self, p):
        p = np.asarray(p, dtype=float)
        out = np.zeros(p.shape[:-1] + (self.dim, self.dim))
        for k, f in enumerate(self._factors):
            s = self.int_slices[k]
            out[..., s, s] = f.metric_tensor(p[..., self.amb_slices[k]])
        return out

    def random_point(self, rng, size=()):
        return np.concatenate([f.random_point(rng, size) for f in self._factors], axis=-1)


_FACTOR = re.compile(r"^\s*([SHE])\s*(\d+)\s*$", re.IGNORECASE)
_KINDS = {"S": Sphere, "H": PoincareBall, "E": Euclidean}


def parse_manifold(text):
    """Parse descriptors such as ``"E50"``, ``"S30xH30"`` or ``"s50xe5xh5"``."""
    if isinstance(text, Manifold):
        return text
    parts = re.split(r"[xX]", str(text).strip())
    factors = []
    for part in parts:
        m = _FACTOR.match(part)
        if not m:
            raise ValueError(f"bad manifold descriptor {text!r}")
        factors.append(_KINDS[m.group(1).upper()](int(m.group(2))))
    if len(factors) == 1:
        return factors[0]
    return Product(factors)


# ---------------------------------------------------------------------------
# validated ndarray entry points


def metric_tensor(m, p):
    """Metric tensor at ``p`` in the orthonormal chart of ``tangent_basis``."""
    p = m.check_point(p)
    return m.metric_tensor(p)


def distance(m, x, y):
    x = m.check_point(x)
    y = m.check_point(y)
    return np.asarray(m.dist(x, y))


def exp_map(m, p, v):
    p = m.check_point(p)
    v = m._check_shape(v, "tangent vector")
    return np.asarray(m.expmap(p, v))


def log_map(m, p, q):
    p = m.check_point(p)
    q = m.check_point(q)
    for k, f in enumerate(m.factors):
        if isinstance(f, Sphere):
            s = m.amb_slices[k] if isinstance(m, Product) else slice(None)
            c = np.sum(p[..., s] * q[..., s], axis=-1)
            if np.any(c <= -1.0 + 1e-12):
                raise UndefinedLog("log map between antipodal sphere points")
    return np.asarray(m.logmap(p, q))


def tangent_basis(m, p):
    return m.tangent_basis(m.check_point(p))


def project_to_tangent(m, p, w):
    p = m.check_point(p)
    return np.asarray(m.proj_tangent(p, np.asarray(w, dtype=float)))


def random_point(m, rng, size=()):
    """Sample points: uniform on spheres, N(0, I) on Euclidean factors, and
    uniform inside radius 0.5 on ball factors."""
    return m.random_point(rng, size)
