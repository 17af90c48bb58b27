"""Small array differentiation engine.

Two layers work together:

* :class:`Var` records a reverse-mode tape over numpy arrays.
* :class:`Dual` carries a primal value and a stack of tangents (leading axis,
  one slice per input direction) for forward-mode Jacobians.

Every primitive below dispatches on its arguments: plain ndarrays run numpy,
``Var`` arguments extend the tape, and ``Dual`` arguments propagate tangents
using the same primitives on their components. Because the tangent rules are
themselves written with taped primitives, a ``Dual`` whose components are
``Var`` objects lets the reverse pass differentiate *through* a Jacobian,
which is what the pullback-metric regularizers need.

Kink convention: relu, clip, sqrt at 0, arccos at +-1 and arccosh at 1 all use
a derivative of 0 at the non-differentiable point.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Mapping

import numpy as np

__all__ = [
    "Var",
    "Dual",
    "Program",
    "UnknownParameter",
    "value",
    "backward",
    "custom",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "dot",
    "matvec",
    "tanh",
    "relu",
    "identity",
    "sin",
    "cos",
    "sqrt",
    "arctanh",
    "arccos",
    "arccosh",
    "sinc",
    "tanhc",
    "artanhc",
    "clip",
    "norm",
    "sum",
    "getitem",
    "concat",
    "swapaxes",
    "value_and_jacobian",
    "param_gradients",
    "finite_diff_jacobian",
    "finite_diff_param_gradients",
]


class UnknownParameter(KeyError):
    """A gradient was requested for a parameter the program does not own."""


# ---------------------------------------------------------------------------
# reverse mode


class Var:
    """A node on the reverse-mode tape."""

    __slots__ = ("value", "parents")
    __array_ufunc__ = None  # make ``ndarray op Var`` defer to our reflected ops

    def __init__(self, value, parents=()):
        self.value = np.asarray(value, dtype=float)
        self.parents = parents  # tuple of (Var, vjp)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Var(shape={self.value.shape})"

    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __getitem__(self, idx):
        return getitem(self, idx)


def custom(value, parents):
    """Create a tape node for a user-defined primitive.

    ``parents`` is a sequence of ``(var, vjp)`` pairs where ``vjp`` maps the
    output cotangent (ndarray) to the cotangent of that parent.
    """
    parents = tuple((p, f) for p, f in parents if isinstance(p, Var))
    if not parents:
        return np.asarray(value, dtype=float)
    return Var(value, parents)


def value(x):
    """Strip tape/tangent wrappers and return the primal ndarray."""
    if isinstance(x, Dual):
        x = x.primal
    if isinstance(x, Var):
        return x.value
    return np.asarray(x, dtype=float)


def backward(out, seed=None):
    """Run the reverse pass from ``out``; returns ``{id(var): grad}``."""
    if not isinstance(out, Var):
        return {}
    order = []
    seen = set()
    stack = [(out, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    grads = {id(out): np.ones_like(out.value) if seed is None else np.asarray(seed, float)}
    for node in reversed(order):
        g = grads.pop(id(node), None) if node.parents else grads.get(id(node))
        if g is None:
            continue
        if not node.parents:
            continue
        for parent, vjp in node.parents:
            contrib = vjp(g)
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + contrib
            else:
                grads[id(parent)] = contrib
    return grads


def _unbroadcast(g, shape):
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# forward mode


class Dual:
    """Primal value plus tangents stacked along a new leading axis.

    ``tangent[i]`` is the directional derivative of ``primal`` along the i-th
    seed direction; ``None`` means identically zero.
    """

    __slots__ = ("primal", "tangent")
    __array_ufunc__ = None

    def __init__(self, primal, tangent=None):
        self.primal = primal
        self.tangent = tangent

    @property
    def shape(self):
        return value(self.primal).shape

    @property
    def ndim(self):
        return value(self.primal).ndim

    def __repr__(self):
        return f"Dual(shape={self.shape})"

    __add__ = Var.__add__
    __radd__ = Var.__radd__
    __sub__ = Var.__sub__
    __rsub__ = Var.__rsub__
    __mul__ = Var.__mul__
    __rmul__ = Var.__rmul__
    __truediv__ = Var.__truediv__
    __rtruediv__ = Var.__rtruediv__
    __neg__ = Var.__neg__
    __matmul__ = Var.__matmul__
    __rmatmul__ = Var.__rmatmul__
    __getitem__ = Var.__getitem__


def _split(x):
    if isinstance(x, Dual):
        return x.primal, x.tangent
    return x, None


def _tadd(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return add(a, b)


def _neg_axis(axis, ndim):
    return axis - ndim if axis >= 0 else axis


# ---------------------------------------------------------------------------
# binary primitives


def add(a, b):
    if isinstance(a, Dual) or isinstance(b, Dual):
        pa, ta = _split(a)
        pb, tb = _split(b)
        return Dual(add(pa, pb), _tadd(ta, tb))
    if isinstance(a, Var) or isinstance(b, Var):
        va, vb = value(a), value(b)
        return custom(
            va + vb,
            [(a, lambda g: _unbroadcast(g, va.shape)), (b, lambda g: _unbroadcast(g, vb.shape))],
        )
    return np.add(a, b)


def neg(a):
    if isinstance(a, Dual):
        return Dual(neg(a.primal), None if a.tangent is None else neg(a.tangent))
    if isinstance(a, Var):
        return custom(-a.value, [(a, lambda g: -g)])
    return np.negative(a)


def sub(a, b):
    if isinstance(a, Dual) or isinstance(b, Dual):
        pa, ta = _split(a)
        pb, tb = _split(b)
        return Dual(sub(pa, pb), _tadd(ta, None if tb is None else neg(tb)))
    if isinstance(a, Var) or isinstance(b, Var):
        va, vb = value(a), value(b)
        return custom(
            va - vb,
            [(a, lambda g: _unbroadcast(g, va.shape)), (b, lambda g: _unbroadcast(-g, vb.shape))],
        )
    return np.subtract(a, b)


def mul(a, b):
    if isinstance(a, Dual) or isinstance(b, Dual):
        pa, ta = _split(a)
        pb, tb = _split(b)
        t = None
        if ta is not None:
            t = mul(ta, pb)
        if tb is not None:
            t = _tadd(t, mul(pa, tb))
        return Dual(mul(pa, pb), t)
    if isinstance(a, Var) or isinstance(b, Var):
        va, vb = value(a), value(b)
        return custom(
            va * vb,
            [
                (a, lambda g: _unbroadcast(g * vb, va.shape)),
                (b, lambda g: _unbroadcast(g * va, vb.shape)),
            ],
        )
    return np.multiply(a, b)


def div(a, b):
    if isinstance(a, Dual) or isinstance(b, Dual):
        pa, ta = _split(a)
        pb, tb = _split(b)
        out = div(pa, pb)
        t = None
        if ta is not None:
            t = div(ta, pb)
        if tb is not None:
            t = _tadd(t, neg(mul(div(out, pb), tb)))
        return Dual(out, t)
    if isinstance(a, Var) or isinstance(b, Var):
        va, vb = value(a), value(b)
        return custom(
            va / vb,
            [
                (a, lambda g: _unbroadcast(g / vb, va.shape)),
                (b, lambda g: _unbroadcast(-g * va / (vb * vb), vb.shape)),
            ],
        )
    return np.divide(a, b)


def _mT(x):
    return np.swapaxes(x, -1, -2)


def matmul(a, b):
    """Matrix product with numpy broadcasting; ``b`` must be at least 2-D."""
    if isinstance(a, Dual) or isinstance(b, Dual):
        pa, ta = _split(a)
        pb, tb = _split(b)
        t = None
        if ta is not None:
            t = matmul(ta, pb)
        if tb is not None:
            t = _tadd(t, matmul(pa, tb))
        return Dual(matmul(pa, pb), t)
    if isinstance(a, Var) or isinstance(b, Var):
        va, vb = value(a), value(b)
        if vb.ndim < 2:
            raise ValueError("matmul: right operand must be at least 2-D")
        out = np.matmul(va, vb)

        def vjp_a(g):
            if va.ndim == 1:
                return _unbroadcast(np.matmul(g[..., None, :], _mT(vb))[..., 0, :], va.shape)
            return _unbroadcast(np.matmul(g, _mT(vb)), va.shape)

        def vjp_b(g):
            if va.ndim == 1:
                return _unbroadcast(va[:, None] * g[..., None, :], vb.shape)
            return _unbroadcast(np.matmul(_mT(va), g), vb.shape)

        return custom(out, [(a, vjp_a), (b, vjp_b)])
    return np.matmul(a, b)


# ---------------------------------------------------------------------------
# unary primitives: value, first and second derivatives in numpy


def _safe(fn, x, mask):
    out = np.zeros_like(x)
    out[mask] = fn(x[mask])
    return out


def _series(t, coeffs):
    t2 = t * t
    acc = np.zeros_like(t)
    for c in reversed(coeffs):
        acc = acc * t2 + c
    return acc


_SMALL = 0.1

def _fact(n):
    out = 1.0
    for i in range(2, n + 1):
        out *= i
    return out


# sin(t)/t = sum (-1)^k t^2k / (2k+1)!
_SINC = [(-1) ** k / _fact(2 * k + 1) for k in range(9)]
# tanh(t)/t Taylor coefficients (Bernoulli numbers)
_TANHC = [1.0, -1 / 3, 2 / 15, -17 / 315, 62 / 2835, -1382 / 155925, 21844 / 6081075, -929569 / 638512875]
# artanh(t)/t = sum t^2k / (2k+1)
_ARTANHC = [1.0 / (2 * k + 1) for k in range(12)]


def _d_series(coeffs):
    # coefficients (in t^2 powers) of f'(t)/t, where f = sum c_k t^2k
    return [2 * k * c for k, c in enumerate(coeffs)][1:]


def _d2_series(coeffs):
    # coefficients (in t^2 powers) of f''(t)
    return [2 * k * (2 * k - 1) * c for k, c in enumerate(coeffs)][1:]


def _even_fn(coeffs, exact, dexact, d2exact):
    d1c, d2c = _d_series(coeffs), _d2_series(coeffs)

    def f(t):
        small = np.abs(t) < _SMALL
        out = np.empty_like(t)
        out[small] = _series(t[small], coeffs)
        out[~small] = exact(t[~small])
        return out

    def df(t):
        small = np.abs(t) < _SMALL
        out = np.empty_like(t)
        out[small] = t[small] * _series(t[small], d1c)
        out[~small] = dexact(t[~small])
        return out

    def d2f(t):
        small = np.abs(t) < _SMALL
        out = np.empty_like(t)
        out[small] = _series(t[small], d2c)
        out[~small] = d2exact(t[~small])
        return out

    return f, df, d2f


_sinc_f = _even_fn(
    _SINC,
    lambda t: np.sin(t) / t,
    lambda t: (t * np.cos(t) - np.sin(t)) / t**2,
    lambda t: -np.sin(t) / t - 2 * np.cos(t) / t**2 + 2 * np.sin(t) / t**3,
)


def _sech2(t):
    return 1.0 / np.cosh(t) ** 2


_tanhc_f = _even_fn(
    _TANHC,
    lambda t: np.tanh(t) / t,
    lambda t: (t * _sech2(t) - np.tanh(t)) / t**2,
    lambda t: -2 * _sech2(t) * np.tanh(t) / t - 2 * (t * _sech2(t) - np.tanh(t)) / t**3,
)
_artanhc_f = _even_fn(
    _ARTANHC,
    lambda t: np.arctanh(t) / t,
    lambda t: (t / (1 - t * t) - np.arctanh(t)) / t**2,
    lambda t: 2 / (1 - t * t) ** 2 - 2 / (t * t * (1 - t * t)) + 2 * np.arctanh(t) / t**3,
)

_UNARY = {
    "tanh": (
        np.tanh,
        lambda x: 1 - np.tanh(x) ** 2,
        lambda x: -2 * np.tanh(x) * (1 - np.tanh(x) ** 2),
    ),
    "relu": (
        lambda x: np.maximum(x, 0.0),
        lambda x: (x > 0).astype(float),
        lambda x: np.zeros_like(x),
    ),
    "sin": (np.sin, np.cos, lambda x: -np.sin(x)),
    "cos": (np.cos, lambda x: -np.sin(x), lambda x: -np.cos(x)),
    "sqrt": (
        np.sqrt,
        lambda x: _safe(lambda y: 0.5 / np.sqrt(y), x, x > 0),
        lambda x: _safe(lambda y: -0.25 * y**-1.5, x, x > 0),
    ),
    "arctanh": (
        np.arctanh,
        lambda x: 1 / (1 - x * x),
        lambda x: 2 * x / (1 - x * x) ** 2,
    ),
    "arccos": (
        np.arccos,
        lambda x: _safe(lambda y: -1 / np.sqrt(1 - y * y), x, np.abs(x) < 1),
        lambda x: _safe(lambda y: -y / (1 - y * y) ** 1.5, x, np.abs(x) < 1),
    ),
    "arccosh": (
        np.arccosh,
        lambda x: _safe(lambda y: 1 / np.sqrt(y * y - 1), x, x > 1),
        lambda x: _safe(lambda y: -y / (y * y - 1) ** 1.5, x, x > 1),
    ),
    "sinc": _sinc_f,
    "tanhc": _tanhc_f,
    "artanhc": _artanhc_f,
}


def _apply_unary(x, f, df, d2f):
    if isinstance(x, Dual):
        t = None if x.tangent is None else mul(x.tangent, _apply_unary(x.primal, df, d2f, None))
        return Dual(_apply_unary(x.primal, f, df, d2f), t)
    if isinstance(x, Var):
        v = x.value
        if df is None:
            raise NotImplementedError("third derivatives are not supported")
        return custom(f(v), [(x, lambda g: g * df(v))])
    return f(np.asarray(x, dtype=float))


def _make_unary(name):
    f, df, d2f = _UNARY[name]

    def op(x):
        return _apply_unary(x, f, df, d2f)

    op.__name__ = name
    return op


tanh = _make_unary("tanh")
relu = _make_unary("relu")
sin = _make_unary("sin")
cos = _make_unary("cos")
sqrt = _make_unary("sqrt")
arctanh = _make_unary("arctanh")
arccos = _make_unary("arccos")
arccosh = _make_unary("arccosh")
sinc = _make_unary("sinc")
sinc.__doc__ = "sin(t)/t, equal to 1 at t = 0."
tanhc = _make_unary("tanhc")
tanhc.__doc__ = "tanh(t)/t, equal to 1 at t = 0."
artanhc = _make_unary("artanhc")
artanhc.__doc__ = "artanh(t)/t, equal to 1 at t = 0."


def identity(x):
    return x


def clip(x, lo=-np.inf, hi=np.inf):
    """Clamp into ``[lo, hi]``; derivative 1 strictly inside, 0 elsewhere."""

    def f(v):
        return np.clip(v, lo, hi)

    def df(v):
        return ((v > lo) & (v < hi)).astype(float)

    return _apply_unary(x, f, df, lambda v: np.zeros_like(v))


# ---------------------------------------------------------------------------
# reductions and structural ops


def sum(x, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    if isinstance(x, Dual):
        nd = x.ndim
        if axis is None:
            axis = tuple(range(-nd, 0))
        elif isinstance(axis, int):
            axis = _neg_axis(axis, nd)
        else:
            axis = tuple(_neg_axis(a, nd) for a in axis)
        t = None if x.tangent is None else sum(x.tangent, axis=axis, keepdims=keepdims)
        return Dual(sum(x.primal, axis=axis, keepdims=keepdims), t)
    if isinstance(x, Var):
        v = x.value
        out = np.sum(v, axis=axis, keepdims=keepdims)

        def vjp(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return np.broadcast_to(g, v.shape).copy()

        return custom(out, [(x, vjp)])
    return np.sum(x, axis=axis, keepdims=keepdims)


def dot(a, b, keepdims=True):
    """Inner product over the last axis."""
    return sum(mul(a, b), axis=-1, keepdims=keepdims)


def matvec(w, x):
    """Apply ``w`` (out x in) to row vectors ``x`` (..., in)."""
    return matmul(x, swapaxes(w, -1, -2))


def norm(x, axis=-1, keepdims=True):
    """Euclidean norm; gradient 0 at the origin."""
    return sqrt(sum(mul(x, x), axis=axis, keepdims=keepdims))


def getitem(x, idx):
    if isinstance(x, Dual):
        tidx = idx if isinstance(idx, tuple) else (idx,)
        t = None if x.tangent is None else getitem(x.tangent, (slice(None),) + tidx)
        return Dual(getitem(x.primal, idx), t)
    if isinstance(x, Var):
        v = x.value

        def vjp(g):
            out = np.zeros_like(v)
            np.add.at(out, idx, g)
            return out

        return custom(v[idx], [(x, vjp)])
    return np.asarray(x)[idx]


def concat(xs, axis=-1):
    xs = list(xs)
    if any(isinstance(x, Dual) for x in xs):
        nd = max(np.ndim(value(x)) for x in xs)
        axis = _neg_axis(axis, nd)
        prims = [_split(x)[0] for x in xs]
        tangents = [_split(x)[1] for x in xs]
        t = None
        if any(tt is not None for tt in tangents):
            k = next(value(tt).shape[0] for tt in tangents if tt is not None)
            full = []
            for p, tt in zip(prims, tangents):
                if tt is None:
                    shp = np.broadcast_shapes(value(p).shape)
                    tt = np.zeros((k,) + shp)
                full.append(tt)
            t = concat(full, axis=axis)
        return Dual(concat(prims, axis=axis), t)
    if any(isinstance(x, Var) for x in xs):
        vals = [value(x) for x in xs]
        out = np.concatenate(vals, axis=axis)
        bounds = np.cumsum([v.shape[axis] for v in vals])[:-1]

        def make(i):
            return lambda g: np.split(g, bounds, axis=axis)[i]

        return custom(out, [(x, make(i)) for i, x in enumerate(xs)])
    return np.concatenate([np.asarray(x, dtype=float) for x in xs], axis=axis)


def swapaxes(x, a1, a2):
    if isinstance(x, Dual):
        nd = x.ndim
        a1, a2 = _neg_axis(a1, nd), _neg_axis(a2, nd)
        t = None if x.tangent is None else swapaxes(x.tangent, a1, a2)
        return Dual(swapaxes(x.primal, a1, a2), t)
    if isinstance(x, Var):
        return custom(np.swapaxes(x.value, a1, a2), [(x, lambda g: np.swapaxes(g, a1, a2))])
    return np.swapaxes(x, a1, a2)


# ---------------------------------------------------------------------------
# programs


@dataclass(frozen=True)
class Program:
    """A differentiable map ``x -> fn(params, x)`` with a named parameter table.

    ``fn`` must be written with the primitives of this module so that it can be
    evaluated on ndarrays, tape variables or dual numbers alike. Inputs and
    outputs are vectors along the last axis.
    """

    fn: Callable[[Mapping[str, Any], Any], Any]
    params: Mapping[str, np.ndarray]
    in_dim: int
    out_dim: int

    def __call__(self, x, params=None):
        return self.fn(self.params if params is None else params, x)


def _seed(x):
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    eye = np.eye(n)
    # tangent[i] = e_i broadcast over the batch
    return np.broadcast_to(eye.reshape((n,) + (1,) * (x.ndim - 1) + (n,)), (n,) + x.shape).copy()


def _jacobian_from_tangent(t, out_shape, n_in):
    if t is None:
        return np.zeros(out_shape + (n_in,))
    t = np.broadcast_to(value(t), (n_in,) + out_shape)
    return np.moveaxis(t, 0, -1)


def value_and_jacobian(prog, x, params=None):
    """Evaluate ``prog`` at ``x`` and its Jacobian ``d out / d x``.

    Forward mode: all input directions are carried at once as a stack of
    tangents. For batched ``x`` of shape ``(..., in)`` the Jacobian has shape
    ``(..., out, in)``.
    """
    x = np.asarray(x, dtype=float)
    out = prog(Dual(x, _seed(x)), params)
    primal = value(out)
    tangent = out.tangent if isinstance(out, Dual) else None
    return primal, _jacobian_from_tangent(tangent, primal.shape, x.shape[-1])


def _traced(prog, x, wrt):
    tape = {k: Var(v) if k in wrt else np.asarray(v, float) for k, v in prog.params.items()}
    x = np.asarray(x, dtype=float)
    out = prog(Dual(x, _seed(x)), tape)
    if isinstance(out, Dual):
        prim, tan = out.primal, out.tangent
    else:
        prim, tan = out, None
    n = x.shape[-1]
    out_shape = value(prim).shape
    if tan is None:
        jac = np.zeros(out_shape + (n,))
    else:
        if value(tan).shape != (n,) + out_shape:
            tan = add(tan, np.zeros((n,) + out_shape))
        # move the direction axis to the end: (n, ..., out) -> (..., out, n)
        jac = tan
        nd = len(out_shape) + 1
        for i in range(nd - 1):
            jac = swapaxes(jac, i, i + 1)
    return tape, prim, jac


def param_gradients(loss, prog, x, wrt=None):
    """Gradients of ``loss(output, jacobian)`` with respect to parameters.

    The Jacobian is built in forward mode from taped primitives, and the
    reverse pass then runs through both the output and the Jacobian.

    Returns ``(loss_value, {name: gradient})``.
    """
    names = list(prog.params) if wrt is None else list(wrt)
    for name in names:
        if name not in prog.params:
            raise UnknownParameter(name)
    tape, prim, jac = _traced(prog, x, set(names))
    out = loss(prim, jac)
    grads = backward(out)
    result = {}
    for name in names:
        node = tape[name]
        g = grads.get(id(node))
        result[name] = np.zeros_like(node.value) if g is None else g
    return float(np.sum(value(out))), result


def finite_diff_jacobian(prog, x, h=1e-5, params=None):
    """Central-difference Jacobian, used as an independent oracle."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    cols = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        hi = value(prog(x + e, params))
        lo = value(prog(x - e, params))
        cols.append((hi - lo) / (2 * h))
    return np.stack(cols, axis=-1)


def finite_diff_param_gradients(loss, prog, x, h=1e-5, wrt=None):
    """Central differences of ``loss(output, jacobian)`` in each parameter.

    The inner Jacobian comes from :func:`value_and_jacobian`, so only the
    outer parameter derivative is approximated.
    """
    names = list(prog.params) if wrt is None else list(wrt)
    base = {k: np.array(v, dtype=float) for k, v in prog.params.items()}

    def total(params):
        out, jac = value_and_jacobian(prog, x, params)
        return float(np.sum(value(loss(out, jac))))

    result = {}
    for name in names:
        if name not in base:
            raise UnknownParameter(name)
        p = base[name]
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            hi = total(base)
            p[idx] = old - h
            lo = total(base)
            p[idx] = old
            g[idx] = (hi - lo) / (2 * h)
        result[name] = g
    return result
