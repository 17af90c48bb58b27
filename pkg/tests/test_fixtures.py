import numpy as np
import pytest

from conformal_retrofit import fixtures as F
from conformal_retrofit.data import GraphDataset
from conformal_retrofit.manifolds import Euclidean, PoincareBall, Sphere


@pytest.mark.parametrize("which", ["crossed", "cycle", "tree"])
def test_fixture_shapes(which):
    fx = F.FIXTURES[which]()
    ds = fx.dataset
    assert ds.embeddings.shape == (ds.n_nodes, 2)
    assert len(fx.roles) == ds.n_nodes
    graph = {int(i) for i in ds.edges.ravel()}
    for i, role in enumerate(fx.roles):
        assert (role == "graph") == (i in graph)
        assert ds.split[i] == ("train" if role == "graph" else "test")
    assert fx.grid.shape == (11, 11, 2)


def test_tree_layout():
    ds = F.tree().dataset
    assert ds.names[:4] == ["R", "A", "B", "C"] and len(ds.names) == 10
    assert len(ds.edges) == 6
    X = dict(zip(ds.names, ds.embeddings))
    # children sit on the far side of the root from their parent
    for parent, child in (("A", "A1"), ("B", "B1"), ("C", "C2")):
        assert np.dot(X[parent], X[child]) < 0


def test_area_distortion_zero_for_similarities():
    grid = F.cycle().grid
    flat = grid.reshape(-1, 2)
    th = 0.7
    R = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    assert F.area_distortion(grid, 3.0 * flat @ R.T + 1.0) == pytest.approx(0.0, abs=1e-12)
    # a non-uniform stretch is detected
    warped = np.stack([flat[:, 0] * (1 + 0.5 * flat[:, 0]), flat[:, 1]], axis=1)
    assert F.area_distortion(grid, warped) > 0.1


def test_grid_cells():
    cells = F.grid_cells(np.zeros((3, 3, 2)))
    assert cells.shape == (4, 4)
    assert cells[0].tolist() == [0, 3, 4, 1]


def test_graph_hinge():
    ds = F.tree().dataset
    # the source layout itself violates the margin (children are far from parents)
    assert F.graph_hinge(ds.embeddings, ds, Euclidean(2)) > 0
    path = GraphDataset(["a", "b", "c"], [(0, 1), (1, 2)], np.zeros((3, 1)))
    line = np.array([[0.0], [1.0], [2.0]])
    assert F.graph_hinge(line, path, Euclidean(1), margin=0.1) == 0.0
    # squeeze c towards a: the a->b edge now has hinge 0.1 + 1 - 1.05 = 0.05
    near = np.array([[0.0], [1.0], [1.05]])
    # directed edges: a->b 0.05, b->a 0, b->c 0, c->b: 0.1 + 0.05 - 1.05 < 0
    assert F.graph_hinge(near, path, Euclidean(1), margin=0.1) == pytest.approx(0.05 / 4)


def test_plane_chart():
    assert np.array_equal(F.plane_chart(Euclidean(2))(np.ones((2, 2))), np.ones((2, 2)))
    assert np.array_equal(F.plane_chart(PoincareBall(2))(np.full((1, 2), 0.3)), np.full((1, 2), 0.3))
    y = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    assert np.allclose(F.plane_chart(Sphere(2))(y), [[0, 0], [1, 0]])


def test_run_fixture_variants():
    std = F.run_fixture("crossed", "standard", epochs=50)
    ds = std.fixture.dataset
    # unobserved points keep their source embeddings
    for i, role in enumerate(std.fixture.roles):
        if role == "unobserved":
            assert np.array_equal(std.points[i], ds.embeddings[i])
    exp = F.run_fixture("crossed", "explicit", target="H2", epochs=5)
    assert str(exp.target) == "E2"
    conf = F.run_fixture("tree", "conformal", target="S2", epochs=5)
    assert conf.points.shape == (10, 3) and conf.mapped_grid.shape == (121, 3)
    with pytest.raises(ValueError):
        F.run_fixture("tree", "other")


def test_toy_hierarchy(tmp_path):
    names, pairs, vecs = F.toy_hierarchy(n_nodes=13, dim=3, branching=3)
    assert len(names) == 13 and len(pairs) == 12 and vecs.shape == (13, 3)
    assert pairs[:3] == [(1, 0), (2, 0), (3, 0)]
    e, v = F.write_toy_dataset(str(tmp_path), n_nodes=13, dim=3)
    assert open(e).read().splitlines()[0] == "n001\tn000"
