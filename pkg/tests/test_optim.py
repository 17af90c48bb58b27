import math

import numpy as np
import pytest

from conformal_retrofit import diff as ad
from conformal_retrofit import fixtures
from conformal_retrofit import layers as L
from conformal_retrofit import optim as O
from conformal_retrofit.data import GraphDataset, make_splits
from conformal_retrofit.losses import LossConfig
from conformal_retrofit.manifolds import Euclidean, PoincareBall, Sphere, parse_manifold


# ---------------------------------------------------------------------------
# rsgd / adam / gradnorm


def test_rsgd_examples():
    p = np.array([0.0, 1.0])
    assert np.array_equal(O.rsgd_step(Sphere(1), p, np.zeros(2), 0.1), p)
    q = np.array([1.0, 0.0])
    assert np.allclose(O.rsgd_step(Sphere(1), q, np.array([1.0, 0.0]), 0.5), q)
    assert np.allclose(O.rsgd_step(Euclidean(2), np.zeros(2), np.array([1.0, 0.0]), 0.1), [-0.1, 0.0])


def test_rsgd_ball_rescaling():
    m = PoincareBall(2)
    p = np.array([0.3, 0.4])
    g = np.array([1.0, -2.0])
    lr = 1e-3
    expect = m.expmap(p, -lr * ((1 - 0.25) / 2) ** 2 * g)
    assert np.allclose(O.rsgd_step(m, p, g, lr), expect, atol=1e-15)


def test_rsgd_skips_nonfinite():
    counter = {}
    p = np.array([0.1, 0.2])
    out = O.rsgd_step(PoincareBall(2), p, np.array([np.nan, 0.0]), 0.1, counter)
    assert np.array_equal(out, p) and counter["skipped"] == 1


def test_rsgd_keeps_invariants():
    rng = np.random.default_rng(0)
    for name in ["S4", "H4", "S2xH3xE1"]:
        m = parse_manifold(name)
        p = m.random_point(rng)
        for _ in range(100):
            p = O.rsgd_step(m, p, rng.normal(size=p.shape) * 10, 0.5)
            m.check_point(p)


def test_adam_examples():
    st = O.AdamMoment()
    assert np.array_equal(O.adam_step(st, np.array([1.0]), np.zeros(1), 0.1), [1.0])
    st = O.AdamMoment()
    g = 0.37
    out = O.adam_step(st, np.array([2.0]), np.array([g]), 0.1)
    assert out[0] == pytest.approx(2.0 - 0.1 * g / (abs(g) + 1e-8), abs=1e-12)
    st = O.AdamMoment()
    p1 = O.adam_step(st, np.array([0.0]), np.array([-1.0]), 0.1)
    p2 = O.adam_step(st, p1, np.array([-1.0]), 0.1)
    assert 0 < p1[0] < p2[0]


def test_gradnorm_examples():
    w = O.gradnorm_weights([1.0, 4.0], O.GradNormState())
    assert np.allclose(w, [1.6, 0.4])
    assert np.allclose(O.gradnorm_weights([3.0, 3.0, 3.0], O.GradNormState()), 1.0)
    norms = np.array([0.2, 5.0, 1.3])
    perm = np.array([2, 0, 1])
    a = O.gradnorm_weights(norms, O.GradNormState())
    b = O.gradnorm_weights(norms[perm], O.GradNormState())
    assert np.allclose(a[perm], b)


def test_gradnorm_scale_invariance_and_ema():
    s1, s2 = O.GradNormState(beta=0.9), O.GradNormState(beta=0.9)
    rng = np.random.default_rng(1)
    for _ in range(10):
        n = rng.uniform(0.1, 10, size=2)
        assert np.allclose(O.gradnorm_weights(n, s1), O.gradnorm_weights(1000 * n, s2))
    st = O.GradNormState(beta=0.9)
    O.gradnorm_weights([1.0, 1.0], st)
    O.gradnorm_weights([2.0, 1.0], st)
    assert np.allclose(st.ema, [1.1, 1.0])
    assert np.all(O.gradnorm_weights([0.0, 1.0], O.GradNormState()) > 0)


# ---------------------------------------------------------------------------
# train_step


def _path_dataset():
    X = np.array([[0.0, 0.0], [1.0, 0.2], [2.0, -0.1], [3.0, 0.3]])
    edges = np.array([[0, 1], [1, 2], [2, 3]])
    return GraphDataset(["a", "b", "c", "d"], edges, X, np.array(["train"] * 4, dtype=object))


def _step_setup(arch="E2 -> E3 -> S1xH1", variant="conformal", seed=0):
    ds = _path_dataset()
    net = L.init_network(arch, np.random.default_rng(seed))
    lc = LossConfig(variant=variant, margin=0.5, conformality_C=math.inf)
    batch = {
        "u": np.array([0, 1, 2]),
        "v": np.array([1, 2, 3]),
        "neg": np.array([[2, 3], [3, -1], [0, -1]]),
        "vertex_points": ds.embeddings,
    }
    return ds, net, lc, batch


def test_train_step_deterministic():
    outs = []
    for _ in range(2):
        ds, net, lc, batch = _step_setup()
        tc = O.TrainConfig(seed=0)
        obj = O.make_objective(net, lc)
        new, st, metrics = O.train_step(net, batch, ds.embeddings, obj, lc, tc, O.OptimizerState())
        outs.append((repr(sorted(metrics.items())), new.params()))
    assert outs[0][0] == outs[1][0]
    for k in outs[0][1]:
        assert np.array_equal(outs[0][1][k], outs[1][1][k])


def test_train_step_zero_lr_is_noop():
    ds, net, lc, batch = _step_setup()
    tc = O.TrainConfig(euclidean_lr=0.0, riemannian_lr=0.0)
    obj = O.make_objective(net, lc)
    new, _, _ = O.train_step(net, batch, ds.embeddings, obj, lc, tc, O.OptimizerState())
    for k, v in net.params().items():
        assert np.array_equal(new.params()[k], v)


def test_objective_gradients_match_finite_differences():
    # the gradient train_step applies (GradNorm off) is d/dtheta of fid + lam * pres
    ds, net, lc, batch = _step_setup("E2 -> E3 -> E2")
    lam = 0.7
    lc = LossConfig(variant="conformal", margin=0.5, lambda_balance=lam, conformality_C=0.2)
    obj = O.make_objective(net, lc)

    def total(params):
        t = obj(params, ds.embeddings, batch)
        return ad.add(t["fidelity"], ad.mul(lam, t["preservation"]))

    ps = net.params()
    tape = {k: ad.Var(v) for k, v in ps.items()}
    g = ad.backward(total(tape))
    h = 1e-6
    for name in ("l0.A", "l1.A", "l0.b_source"):
        p = ps[name]
        fd = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            hi, lo = dict(ps), dict(ps)
            a = p.copy()
            a[idx] += h
            hi[name] = a
            b = p.copy()
            b[idx] -= h
            lo[name] = b
            fd[idx] = (float(ad.value(total(hi))) - float(ad.value(total(lo)))) / (2 * h)
        rel = np.max(np.abs(fd - g[id(tape[name])])) / max(1e-8, np.max(np.abs(fd)))
        assert rel <= 1e-4, (name, rel)


def test_train_step_without_gradnorm_uses_unit_weights():
    ds, net, lc, batch = _step_setup()
    tc = O.TrainConfig(gradnorm_enabled=False)
    obj = O.make_objective(net, lc)
    _, _, metrics = O.train_step(net, batch, ds.embeddings, obj, lc, tc, O.OptimizerState())
    assert metrics["weight_fidelity"] == 1.0 and metrics["weight_preservation"] == 1.0


def test_train_config_validation():
    with pytest.raises(ValueError):
        O.TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        O.TrainConfig(gradnorm_beta=1.0)
    with pytest.raises(ValueError):
        O.TrainConfig(euclidean_lr=-1.0)


def _tree_fit(seed, gradnorm):
    fx = fixtures.tree()
    net = L.init_network("E2 -> E16 -> E16 -> E2", np.random.default_rng(seed))
    tc = O.TrainConfig(euclidean_lr=0.01, riemannian_lr=0.1, epochs=200, patience=1000, seed=seed,
                       vertex_batch=32, gradnorm_enabled=gradnorm)
    res = O.fit(net, fx.dataset, LossConfig(margin=0.1), tc, extra_points=fx.grid.reshape(-1, 2))
    assert len(res.losses) == 200  # one step per epoch on this fixture
    return res.losses[0], res.losses[-1]


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_loss_decreases_on_tree_fixture(seed):
    # a fixed objective (GradNorm off, lambda = 1) must go down over 200 steps
    first, last = _tree_fit(seed, gradnorm=False)
    assert last["fidelity"] + last["preservation"] < first["fidelity"] + first["preservation"]


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_fidelity_decreases_with_gradnorm(seed):
    # with GradNorm the weights move, so only the fidelity term is tracked
    first, last = _tree_fit(seed, gradnorm=True)
    assert last["fidelity"] < first["fidelity"]


def test_fit_early_stopping_and_history():
    names, pairs, vecs = fixtures.toy_hierarchy(n_nodes=40, dim=4, seed=0)
    ds = GraphDataset(names, pairs, vecs)
    ds = ds.with_split(make_splits(ds, seed=0))
    net = L.init_network("E4 -> E8 -> E8 -> E4", np.random.default_rng(0))
    lc = LossConfig(margin=0.1)
    tc = O.TrainConfig(euclidean_lr=0.0, riemannian_lr=0.0, epochs=20, patience=3, seed=0)
    res = O.fit(net, ds, lc, tc)
    # zero learning rates: validation never improves, so training stops after 3 epochs
    assert res.stopped_early and res.best_epoch == 0 and len(res.losses) == 3
    assert [r["split"] for r in res.history[:2]] == ["train", "val"]
