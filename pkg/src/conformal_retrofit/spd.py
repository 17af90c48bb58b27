"""Functions of symmetric positive-definite matrices.

All routines accept stacks of matrices (``(..., n, n)``). Eigenvalues below
``EIG_FLOOR`` are raised to the floor instead of failing; pass an
:class:`SpdDiagnostics` to count how often that happens.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "EIG_FLOOR",
    "SpdDiagnostics",
    "EigFailure",
    "DimMismatch",
    "make_spd",
    "sym_eig",
    "jacobi_eig",
    "spd_function",
    "spd_log",
    "spd_inv_sqrt",
    "ratio_eigenvalues",
    "spd_geodesic_sq",
    "logdet_ratio",
]

EIG_FLOOR = 1e-12


class EigFailure(RuntimeError):
    pass


class DimMismatch(ValueError):
    pass


@dataclass
class SpdDiagnostics:
    """Running count of eigenvalues that had to be floored."""

    floored: int = 0
    calls: int = 0

    def record(self, eigvals):
        self.calls += 1
        self.floored += int(np.count_nonzero(eigvals < EIG_FLOOR))


def _sym(x):
    x = np.asarray(x, dtype=float)
    if x.ndim < 2 or x.shape[-1] != x.shape[-2]:
        raise DimMismatch(f"expected square matrices, got shape {x.shape}")
    return 0.5 * (x + np.swapaxes(x, -1, -2))


def jacobi_eig(x, max_sweeps=100, tol=1e-15):
    """Cyclic Jacobi eigensolver for one symmetric matrix.

    Returns eigenvalues in ascending order and the matching orthonormal
    eigenvectors as columns. Raises :class:`EigFailure` if the off-diagonal
    mass has not vanished after ``max_sweeps`` sweeps.
    """
    a = _sym(x).copy()
    if a.ndim != 2:
        raise DimMismatch("jacobi_eig works on a single matrix")
    n = a.shape[0]
    v = np.eye(n)
    scale = max(np.linalg.norm(a), 1e-300)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.triu(a, 1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        off = np.sqrt(np.sum(np.triu(a, 1) ** 2))
        if off > 1e-10 * scale:
            raise EigFailure(f"Jacobi did not converge in {max_sweeps} sweeps (off-diagonal {off:.3g})")
    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def sym_eig(x, method="lapack"):
    """Eigen-decomposition ``X = V diag(w) V^T`` with ascending ``w``.

    ``method="lapack"`` uses ``numpy.linalg.eigh`` and handles stacks;
    ``method="jacobi"`` uses :func:`jacobi_eig` matrix by matrix.
    """
    a = _sym(x)
    if method == "lapack":
        try:
            return np.linalg.eigh(a)
        except np.linalg.LinAlgError as exc:
            raise EigFailure(str(exc)) from exc
    if method != "jacobi":
        raise ValueError(f"unknown eigensolver {method!r}")
    flat = a.reshape((-1,) + a.shape[-2:])
    ws, vs = zip(*(jacobi_eig(m) for m in flat))
    return np.stack(ws).reshape(a.shape[:-1]), np.stack(vs).reshape(a.shape)


def make_spd(x, diagnostics=None):
    """Symmetrize and floor the spectrum of ``x`` at ``EIG_FLOOR``."""
    w, v = sym_eig(x)
    if diagnostics is not None:
        diagnostics.record(w)
    w = np.maximum(w, EIG_FLOOR)
    return (v * w[..., None, :]) @ np.swapaxes(v, -1, -2)


def spd_function(x, fn, diagnostics=None):
    """Apply a scalar function to the (floored) spectrum: ``V f(w) V^T``."""
    w, v = sym_eig(x)
    if diagnostics is not None:
        diagnostics.record(w)
    w = np.maximum(w, EIG_FLOOR)
    return (v * fn(w)[..., None, :]) @ np.swapaxes(v, -1, -2)


def spd_log(x, diagnostics=None):
    return spd_function(x, np.log, diagnostics)


def spd_inv_sqrt(x, diagnostics=None):
    return spd_function(x, lambda w: 1.0 / np.sqrt(w), diagnostics)


def _check_pair(x, y):
    x = _sym(x)
    y = _sym(y)
    if x.shape[-1] != y.shape[-1]:
        raise DimMismatch(f"matrix sizes differ: {x.shape[-1]} vs {y.shape[-1]}")
    return x, y


def ratio_eigenvalues(x, y, diagnostics=None):
    """Eigenvalues of ``Y^-1/2 X Y^-1/2`` (the spectrum of ``X Y^-1``)."""
    x, y = _check_pair(x, y)
    s = spd_inv_sqrt(y, diagnostics)
    m = s @ x @ s
    w, _ = sym_eig(m)
    if diagnostics is not None:
        diagnostics.record(w)
    return np.maximum(w, EIG_FLOOR)


def spd_geodesic_sq(x, y, diagnostics=None):
    """Squared affine-invariant distance ``||log(Y^-1/2 X Y^-1/2)||_F^2``."""
    lw = np.log(ratio_eigenvalues(x, y, diagnostics))
    return np.sum(lw * lw, axis=-1)


def logdet_ratio(x, y, diagnostics=None):
    """``log det(X Y^-1)`` from the symmetrized ratio spectrum."""
    return np.sum(np.log(ratio_eigenvalues(x, y, diagnostics)), axis=-1)
