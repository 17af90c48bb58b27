import os

import numpy as np
import pytest

from conformal_retrofit import data as D

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
MAMMALS = os.path.join(ROOT, "data", "mammals")


def _write(path, text):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return str(path)


def _check_partition_rule(ds, labels):
    parts = D.split_edges(ds, labels)
    seen = 0
    for name, edges in parts.items():
        for a, b in edges:
            pair = {labels[a], labels[b]}
            if name == "train":
                assert pair == {"train"}
            elif name == "val":
                assert "val" in pair and "test" not in pair
            else:
                assert "test" in pair
        seen += len(edges)
    assert seen == len(ds.edges)


def test_load_edges_examples(tmp_path, caplog):
    names, edges, stats = D.load_edges(_write(tmp_path / "e.tsv", "a\tb\nb\tc\n"))
    assert names == ["a", "b", "c"] and len(edges) == 2
    names, edges, stats = D.load_edges(_write(tmp_path / "d.tsv", "# header\na\tb\na\tb\nb\ta\n"))
    assert len(edges) == 1 and stats["duplicates"] == 2
    names, edges, stats = D.load_edges(_write(tmp_path / "s.tsv", "a\ta\na\tb\n"))
    assert stats["self_loops"] == 1 and len(edges) == 1
    assert "self-loop" in caplog.text
    with pytest.raises(D.DataError, match=":2:"):
        D.load_edges(_write(tmp_path / "bad.tsv", "a\tb\nonlyone\n"))


def test_load_embeddings_examples(tmp_path):
    table = D.load_embeddings(_write(tmp_path / "v.txt", "x 1 2 3\ny 4 5 6\n"), 3)
    assert set(table) == {"x", "y"} and np.array_equal(table["y"], [4, 5, 6])
    with pytest.raises(D.DataError, match=":2:"):
        D.load_embeddings(_write(tmp_path / "w.txt", "x 1 2 3\ny 4 5\n"))
    with pytest.raises(D.DataError, match=":1:"):
        D.load_embeddings(_write(tmp_path / "z.txt", "x 1 2\n"), 3)


def test_missing_embedding_drops_node(tmp_path):
    e = _write(tmp_path / "e.tsv", "a\tb\nb\tc\n")
    v = _write(tmp_path / "v.txt", "a 1 0\nb 0 1\n")
    ds = D.build_dataset(e, v, 2)
    assert ds.names == ["a", "b"] and ds.stats["dropped_nodes"] == 1
    assert ds.stats["dropped_edges"] == 1 and len(ds.edges) == 1


def test_path_graph_split_rule():
    names = [f"n{i}" for i in range(10)]
    ds = D.GraphDataset(names, [(i, i + 1) for i in range(9)], np.zeros((10, 2)))
    labels = D.make_splits(ds, seed=0)
    assert [int(np.sum(labels == s)) for s in D.SPLITS] == [8, 1, 1]
    _check_partition_rule(ds, labels)
    assert np.array_equal(labels, D.make_splits(ds, seed=0))


def test_partition_rule_exhaustive_random_graphs():
    rng = np.random.default_rng(0)
    for seed in range(20):
        n = int(rng.integers(10, 60))
        edges = {tuple(sorted(rng.choice(n, 2, replace=False))) for _ in range(2 * n)}
        ds = D.GraphDataset([str(i) for i in range(n)], sorted(edges))
        _check_partition_rule(ds, D.make_splits(ds, seed=seed))


def test_split_errors():
    ds = D.GraphDataset(["a", "b", "c"], [(0, 1)])
    with pytest.raises(D.SplitTooSmall):
        D.make_splits(ds)
    with pytest.raises(ValueError):
        D.make_splits(ds, ratios=(0.5, 0.5, 0.5))


def test_graph_neighbors_and_bfs():
    ds = D.GraphDataset(["a", "b", "c", "d"], [(0, 1), (1, 2)])
    assert D.graph_neighbors(ds, 1) == {0, 2}
    assert D.graph_neighbors(ds, 3) == set()
    for u in range(4):
        for v in D.graph_neighbors(ds, u):
            assert u in D.graph_neighbors(ds, v)
    assert D.bfs_distance(ds, 0, 2) == 2
    assert D.bfs_distance(ds, 1, 1) == 0
    assert D.bfs_distance(ds, 0, 3) == D.UNREACHABLE
    # restricted to train edges
    assert D.graph_neighbors(ds, 1, edges=[(0, 1)]) == {0}


def test_dataset_validation():
    with pytest.raises(D.DataError):
        D.GraphDataset(["a"], [(0, 0)])
    with pytest.raises(D.DataError):
        D.GraphDataset(["a", "b"], [(0, 1)], np.zeros((3, 2)))
    with pytest.raises(D.DataError):
        D.GraphDataset(["a", "b"], [(0, 1)], split=["train", "other"])


def test_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    names = [f"w{i}" for i in range(30)]
    pairs = [(i, (i - 1) // 2) for i in range(1, 30)]
    X = rng.normal(size=(30, 4))
    ds = D.GraphDataset(names, pairs, X)
    labels = D.make_splits(ds, seed=3)
    D.write_edges(tmp_path / "e.tsv", names, pairs)
    D.write_embeddings(tmp_path / "v.txt", names, X, header="E4")
    D.write_split(tmp_path / "s.tsv", names, labels)
    back = D.build_dataset(tmp_path / "e.tsv", tmp_path / "v.txt", 4)
    # node ids follow first appearance in the edge file, so compare by name
    assert sorted(back.names) == sorted(names)

    def named_edges(d):
        return {frozenset((d.names[a], d.names[b])) for a, b in d.edges}

    assert named_edges(back) == named_edges(ds)
    for i, n in enumerate(back.names):
        assert np.array_equal(back.embeddings[i], X[ds.index[n]])
    back_labels = D.read_split(tmp_path / "s.tsv", back.names)
    assert all(back_labels[i] == labels[ds.index[n]] for i, n in enumerate(back.names))


def test_read_split_requires_every_node(tmp_path):
    p = _write(tmp_path / "s.tsv", "a\ttrain\n")
    with pytest.raises(D.DataError, match="missing"):
        D.read_split(p, ["a", "b"])
    with pytest.raises(D.DataError):
        D.read_split(_write(tmp_path / "t.tsv", "a\tdev\n"), ["a"])


def test_mammals_reference_split_counts():
    ds = D.build_dataset(os.path.join(MAMMALS, "edges.tsv"), os.path.join(MAMMALS, "embeddings.txt"), 50)
    assert ds.n_nodes == 1180 and len(ds.edges) == 1180
    labels = D.read_split(os.path.join(MAMMALS, "split.tsv"), ds.names)
    assert [int(np.sum(labels == s)) for s in D.SPLITS] == [944, 118, 118]
    parts = D.split_edges(ds, labels)
    assert [len(parts[s]) for s in D.SPLITS] == [762, 234, 184]
    _check_partition_rule(ds, labels)
