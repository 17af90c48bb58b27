import math

import numpy as np
import pytest

from conformal_retrofit import spd
from conformal_retrofit.spd import DimMismatch, EigFailure, SpdDiagnostics


def _rand_spd(rng, n, cond=1.0):
    A = rng.normal(size=(n, n))
    return A @ A.T + cond * np.eye(n)


def test_sym_eig_examples():
    for method in ("lapack", "jacobi"):
        lam, V = spd.sym_eig(np.diag([1.0, math.e]), method=method)
        assert np.allclose(lam, [1, math.e])
        assert np.allclose(np.abs(V), np.eye(2))
        lam, _ = spd.sym_eig(np.eye(3), method=method)
        assert np.allclose(lam, [1, 1, 1])


@pytest.mark.parametrize("method", ["lapack", "jacobi"])
def test_sym_eig_reconstruction(method):
    rng = np.random.default_rng(0)
    for n in (2, 5, 17, 40):
        X = _rand_spd(rng, n)
        lam, V = spd.sym_eig(X, method=method)
        assert np.all(np.diff(lam) >= 0)
        rec = (V * lam) @ V.T
        assert np.linalg.norm(rec - X) / np.linalg.norm(X) < 1e-8
        assert np.allclose(V.T @ V, np.eye(n), atol=1e-10)


def test_jacobi_matches_lapack_and_is_deterministic():
    X = _rand_spd(np.random.default_rng(4), 12)
    a, Va = spd.sym_eig(X, "jacobi")
    b, _ = spd.sym_eig(X, "lapack")
    assert np.allclose(a, b, rtol=1e-10)
    a2, Va2 = spd.sym_eig(X, "jacobi")
    assert np.array_equal(a, a2) and np.array_equal(Va, Va2)


def test_jacobi_sweep_cap_raises():
    X = _rand_spd(np.random.default_rng(1), 10)
    with pytest.raises(EigFailure):
        spd.jacobi_eig(X, max_sweeps=1, tol=1e-300)


def test_spd_log_examples():
    assert np.allclose(spd.spd_log(np.diag([1.0, math.e])), np.diag([0.0, 1.0]), atol=1e-14)
    assert np.allclose(spd.spd_log(np.eye(4)), 0.0, atol=1e-15)
    assert np.allclose(spd.spd_log(np.diag([4.0, 4.0])), np.diag([1.386294, 1.386294]), atol=1e-6)


def test_floor_counter():
    diag = SpdDiagnostics()
    spd.spd_log(np.diag([1.0, 0.0]), diagnostics=diag)
    assert diag.floored == 1 and diag.calls == 1
    assert np.all(np.isfinite(spd.spd_log(np.diag([1.0, -1e-3]))))


def test_geodesic_examples():
    assert spd.spd_geodesic_sq(np.eye(2), math.e**2 * np.eye(2)) == pytest.approx(8.0, abs=1e-10)
    X = _rand_spd(np.random.default_rng(2), 4)
    assert spd.spd_geodesic_sq(X, X) == pytest.approx(0.0, abs=1e-20)
    with pytest.raises(DimMismatch):
        spd.spd_geodesic_sq(np.eye(2), np.eye(3))


def test_logdet_ratio_examples():
    assert spd.logdet_ratio(4 * np.eye(2), np.eye(2)) == pytest.approx(math.log(16), abs=1e-12)
    assert spd.logdet_ratio(4 * np.eye(2), np.eye(2)) == pytest.approx(2.772589, abs=1e-6)
    rng = np.random.default_rng(3)
    for _ in range(50):
        n = rng.integers(2, 8)
        X, Y = _rand_spd(rng, n), _rand_spd(rng, n)
        assert spd.logdet_ratio(X, X) == pytest.approx(0.0, abs=1e-12)
        assert spd.logdet_ratio(X, Y) == pytest.approx(-spd.logdet_ratio(Y, X), abs=1e-10)
        ref = np.linalg.slogdet(X)[1] - np.linalg.slogdet(Y)[1]
        assert spd.logdet_ratio(X, Y) == pytest.approx(ref, abs=1e-9)


def _pairs(n_pairs=100, max_dim=60, seed=0):
    rng = np.random.default_rng(seed)
    dims = np.linspace(2, max_dim, n_pairs).astype(int)
    for n in dims:
        yield rng, _rand_spd(rng, n, 1.0) / n, _rand_spd(rng, n, 1.0) / n


def test_geodesic_invariances():
    worst = 0.0
    for rng, X, Y in _pairs():
        n = X.shape[0]
        base = spd.spd_geodesic_sq(X, Y)
        c = float(rng.uniform(0.1, 10))
        A = np.eye(n) + 0.3 * rng.normal(size=(n, n)) / math.sqrt(n)
        vals = [
            spd.spd_geodesic_sq(c * X, c * Y),
            spd.spd_geodesic_sq(np.linalg.inv(X), np.linalg.inv(Y)),
            spd.spd_geodesic_sq(A @ X @ A.T, A @ Y @ A.T),
            spd.spd_geodesic_sq(Y, X),
        ]
        worst = max(worst, max(abs(v - base) / max(1.0, base) for v in vals))
    assert worst <= 1e-8


def test_log_of_inverse_and_identity_reference():
    rng = np.random.default_rng(8)
    for _ in range(30):
        n = rng.integers(2, 12)
        X = _rand_spd(rng, n) / n
        L = spd.spd_log(X)
        assert np.allclose(spd.spd_log(np.linalg.inv(X)), -L, atol=1e-8)
        assert spd.spd_geodesic_sq(X, np.eye(n)) == pytest.approx(np.sum(L * L), abs=1e-10, rel=1e-12)


def test_make_spd_symmetrizes():
    X = np.array([[2.0, 1.0 + 1e-12], [1.0, 2.0]])
    S = spd.make_spd(X)
    assert np.array_equal(S, S.T)
