import csv
import json
import os

import numpy as np
import pytest

from conformal_retrofit import cli, fixtures
from conformal_retrofit.data import build_dataset, load_embeddings, read_split
from conformal_retrofit.evaluation import mean_average_precision
from conformal_retrofit.manifolds import parse_manifold


@pytest.fixture(scope="module")
def toy(tmp_path_factory):
    d = tmp_path_factory.mktemp("toy")
    edges, emb = fixtures.write_toy_dataset(str(d), n_nodes=40, dim=6, seed=0)
    cfg = {
        "dataset": {"edges": "edges.tsv", "embeddings": "embeddings.txt", "embedding_dim": 6},
        "architecture": "E6 -> E8 -> E8 -> S3xH3",
        "optim": {"epochs": 3, "patience": 3, "batch_size": 32, "vertex_batch": 8},
        "neighbors": {"k": 10},
        "loss": {"neighbor_count": 10},
    }
    path = d / "config.json"
    path.write_text(json.dumps(cfg))
    return d, str(path)


def _train(cfg_path, out, *extra):
    return cli.main(["train", "--config", cfg_path, "--out", str(out), *extra])


@pytest.fixture(scope="module")
def trained(toy, tmp_path_factory):
    d, cfg = toy
    out = tmp_path_factory.mktemp("run")
    assert _train(cfg, out) == 0
    return d, cfg, out


def test_train_writes_artifacts(trained):
    _, _, out = trained
    for name in ("config.json", "metrics.csv", "losses.csv", "checkpoint.json"):
        assert (out / name).exists()
    lines = (out / "metrics.csv").read_text().splitlines()
    assert lines[0].startswith("# ") and lines[1] == "split,epoch,map,skipped_queries"
    resolved = json.loads((out / "config.json").read_text())
    assert resolved["neighbors"]["refresh_period"] is None  # defaults materialised
    assert os.path.isabs(resolved["dataset"]["edges"])


def test_train_is_deterministic(trained, tmp_path):
    _, cfg, out = trained
    assert _train(cfg, tmp_path) == 0
    assert (tmp_path / "metrics.csv").read_bytes() == (out / "metrics.csv").read_bytes()
    assert (tmp_path / "checkpoint.json").read_bytes() == (out / "checkpoint.json").read_bytes()


def test_seed_override_changes_run(trained, tmp_path):
    _, cfg, out = trained
    assert _train(cfg, tmp_path, "--seed", "5") == 0
    assert json.loads((tmp_path / "config.json").read_text())["seed"] == 5
    assert (tmp_path / "checkpoint.json").read_bytes() != (out / "checkpoint.json").read_bytes()


def test_train_exit_codes(toy, tmp_path):
    d, _ = toy
    missing = tmp_path / "m.json"
    missing.write_text(json.dumps({"dataset": {"edges": "nope.tsv", "embeddings": "nope.txt"}}))
    assert _train(str(missing), tmp_path / "o") == 2
    unknown = tmp_path / "u.json"
    unknown.write_text(json.dumps({"unknown": 1}))
    assert _train(str(unknown), tmp_path / "o") == 2
    bad = tmp_path / "b.tsv"
    bad.write_text("a\tb\nthree fields here\n")
    data_err = tmp_path / "d.json"
    data_err.write_text(json.dumps({"dataset": {"edges": str(bad), "embeddings": str(d / "embeddings.txt")}}))
    assert _train(str(data_err), tmp_path / "o") == 3


def test_evaluate_reproduces_recorded_val_map(trained, capsys):
    _, cfg, out = trained
    meta = json.loads((out / "checkpoint.json").read_text())["meta"]
    capsys.readouterr()
    assert cli.main(["evaluate", "--config", cfg, "--checkpoint", str(out / "checkpoint.json"),
                     "--split", "val", "test", "--out", str(out / "eval")]) == 0
    rows = list(csv.DictReader(open(out / "eval" / "evaluation.csv")))
    assert abs(float(rows[0]["map"]) - meta["best_val_map"]) <= 1e-12
    assert abs(float(rows[1]["map"]) - meta["test_map"]) <= 1e-12


def test_evaluate_identity_equals_direct_call(toy, tmp_path):
    d, cfg = toy
    assert cli.main(["evaluate", "--config", cfg, "--checkpoint", "identity", "--out", str(tmp_path)]) == 0
    row = next(csv.DictReader(open(tmp_path / "evaluation.csv")))
    ds = build_dataset(str(d / "edges.tsv"), str(d / "embeddings.txt"), 6)
    from conformal_retrofit.data import make_splits

    ds = ds.with_split(make_splits(ds, seed=0))
    assert float(row["map"]) == mean_average_precision(ds.embeddings, ds, "test", "cosine").map


def test_evaluate_bad_split_is_usage_error(toy):
    _, cfg = toy
    assert cli.main(["evaluate", "--config", cfg, "--checkpoint", "identity", "--split", "dev"]) == 2


def test_transform(trained, tmp_path):
    d, _, out = trained
    src = d / "embeddings.txt"
    dst = tmp_path / "out.txt"
    assert cli.main(["transform", "--checkpoint", "identity", "--input", str(src), "--output", str(dst)]) == 0
    lines = dst.read_text().splitlines()
    assert lines[0] == "# manifold E6"
    a, b = load_embeddings(str(src)), load_embeddings(str(dst))
    assert list(a) == list(b) and all(np.array_equal(a[k], b[k]) for k in a)

    assert cli.main(["transform", "--checkpoint", str(out / "checkpoint.json"), "--input", str(src), "--output", str(dst)]) == 0
    lines = dst.read_text().splitlines()
    assert lines[0] == "# manifold S3xH3" and len(lines) == 1 + len(a)
    m = parse_manifold("S3xH3")
    for v in load_embeddings(str(dst)).values():
        m.check_point(v)


def test_split_command(toy, tmp_path, capsys):
    d, _ = toy
    a, b = tmp_path / "a.tsv", tmp_path / "b.tsv"
    assert cli.main(["split", "--edges", str(d / "edges.tsv"), "--seed", "3", "--output", str(a)]) == 0
    assert cli.main(["split", "--edges", str(d / "edges.tsv"), "--seed", "3", "--output", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert cli.main(["split", "--edges", str(d / "edges.tsv"), "--ratios", "0.5", "0.5", "0.5",
                     "--output", str(a)]) == 2
    ds = build_dataset(str(d / "edges.tsv"))
    labels = read_split(str(b), ds.names)
    assert [int(np.sum(labels == s)) for s in ("train", "val", "test")] == [32, 4, 4]


def test_check_grad_passes_and_detects_injected_error(capsys):
    assert cli.main(["check-grad"]) == 0
    report = capsys.readouterr().out
    assert "PASS" in report and "max rel err" in report
    assert "l0.A" in report
    assert cli.main(["check-grad", "--inject-error", "0.01"]) == 4
    assert "FAIL" in capsys.readouterr().out


def test_figure_data_schema(tmp_path):
    assert cli.main(["figure-data", "crossed", "--epochs", "5", "--out", str(tmp_path)]) == 0
    header = (tmp_path / "points.csv").read_text().splitlines()[0].split(",")
    assert header == ["id", "role", "src_x", "src_y", "tgt_0", "tgt_1", "chart_x", "chart_y"]
    assert (tmp_path / "edges.csv").read_text().splitlines()[0] == "source,target"
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert {"graph_hinge", "area_distortion"} <= set(summary)
    out2 = tmp_path / "s2"
    assert cli.main(["figure-data", "tree", "--target", "S2", "--epochs", "5", "--out", str(out2)]) == 0
    header = (out2 / "points.csv").read_text().splitlines()[0].split(",")
    assert header[4:7] == ["tgt_0", "tgt_1", "tgt_2"]


def test_usage_errors():
    assert cli.main([]) == 2
    assert cli.main(["train"]) == 2
