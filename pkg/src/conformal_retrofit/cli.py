"""Command-line interface: ``conformal-retrofit <command> ...``.

Commands
--------
train        train a retrofitting variant from a JSON config
evaluate     mAP of a checkpoint (or the untransformed embeddings) on a split
transform    map an embedding file through a checkpoint
figure-data  train on a synthetic fixture and write plot-ready CSV
split        write a reproducible train/val/test node split
check-grad   compare analytic and finite-difference gradients

Exit codes: 0 success, 2 usage/config error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys

import numpy as np

from . import checkpoints, config as config_mod, diff as ad, fixtures
from .baselines import BaselineConfig, run_standard_retrofit
from .data import DataError, build_dataset, l2_normalize, load_embeddings, make_splits, read_split, write_embeddings, write_split, split_edges
from .evaluation import mean_average_precision
from .layers import init_network, network_forward, network_program, parse_architecture
from .manifolds import Euclidean, parse_manifold
from .optim import fit, make_objective
from .spd import EigFailure

log = logging.getLogger("conformal_retrofit")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
METRICS_HEADER = ["split", "epoch", "map", "skipped_queries"]
METRICS_VERSION = "# conformal-retrofit metrics v1"


class UsageError(Exception):
    pass


class NumericalFailure(Exception):
    pass


def _num(x):
    """Stable text for floats (``repr`` round-trips exactly)."""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_csv(path, header, rows, comment=None):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if comment:
            fh.write(comment + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_num(row.get(k, "")) for k in header])


def _out_dir(args, cfg=None):
    out = args.out or (cfg or {}).get("out") or "."
    os.makedirs(out, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# dataset plumbing


def dataset_from_config(cfg):
    ds_cfg = cfg["dataset"]
    if not ds_cfg["edges"] or not ds_cfg["embeddings"]:
        raise UsageError("config needs dataset.edges and dataset.embeddings")
    for key in ("edges", "embeddings", "split"):
        if ds_cfg[key] is not None and not os.path.exists(ds_cfg[key]):
            raise UsageError(f"dataset.{key}: no such file {ds_cfg[key]}")
    ds = build_dataset(ds_cfg["edges"], ds_cfg["embeddings"], ds_cfg["embedding_dim"])
    if ds.n_nodes == 0:
        raise DataError("no node of the edge file has an embedding")
    if ds_cfg["normalize"]:
        ds.embeddings = l2_normalize(ds.embeddings)
    if ds_cfg["split"] is not None:
        labels = read_split(ds_cfg["split"], ds.names)
    else:
        labels = make_splits(ds, ds_cfg["ratios"], ds_cfg["split_seed"])
    return ds.with_split(labels)


def _eval_distance(meta, target):
    kind = meta.get("eval_distance", "manifold")
    return target if kind == "manifold" else kind


def _check_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise NumericalFailure(f"{name} contains non-finite values")


# ---------------------------------------------------------------------------
# train


def _norm_tag(cfg):
    return "l2" if cfg["dataset"]["normalize"] else "none"


def _train_network(cfg, ds, variant):
    lc = config_mod.loss_config(cfg)
    tc = config_mod.train_config(cfg)
    chain = parse_architecture(cfg["architecture"])
    d = ds.embeddings.shape[1]
    if chain[0].ambient_dim != d:
        raise UsageError(f"architecture source {chain[0]} does not match embedding dimension {d}")
    if variant == "explicit":
        # same hidden stack, Euclidean target of the source dimension
        arch = " -> ".join([str(m) for m in chain[:-1]] + [f"E{d}"])
        eval_kind = lc.distance_kind
    else:
        arch = cfg["architecture"]
        eval_kind = "manifold"
    net = init_network(arch, np.random.default_rng(tc.seed), hidden_nonlinearity=cfg["hidden_nonlinearity"])
    res = fit(net, ds, lc, tc, eval_distance=None if eval_kind == "manifold" else eval_kind)
    Y = network_forward(res.net, ds.embeddings)
    _check_finite("network output", Y)
    dist = res.net.target if eval_kind == "manifold" else eval_kind
    test = mean_average_precision(Y, ds, "test", dist)
    history = list(res.history)
    history.append({"epoch": res.best_epoch, "split": "test", "map": test.map, "skipped_queries": test.skipped})
    meta = {
        "variant": variant,
        "eval_distance": eval_kind,
        "best_epoch": res.best_epoch,
        "best_val_map": res.best_val_map,
        "test_map": test.map,
        "stopped_early": res.stopped_early,
        "input_normalization": _norm_tag(cfg),
    }
    return checkpoints.network_to_dict(res.net, meta), history, res.losses


def _train_standard(cfg, ds):
    st = cfg["standard"]
    bc = BaselineConfig(variant="standard", lam=float(cfg["loss"]["lambda"]), lr=float(st["lr"]), iterations=int(st["iterations"]))
    table = run_standard_retrofit(ds, bc)
    _check_finite("retrofitted table", table)
    history = []
    for split in ("train", "val", "test"):
        r = mean_average_precision(table, ds, split, "cosine")
        history.append({"epoch": bc.iterations, "split": split, "map": r.map, "skipped_queries": r.skipped})
    meta = {"variant": "standard", "eval_distance": "cosine", "best_epoch": bc.iterations,
            "best_val_map": history[1]["map"], "test_map": history[2]["map"],
            "input_normalization": _norm_tag(cfg)}
    d = table.shape[1]
    return checkpoints.table_to_dict(ds.names, table, f"E{d}", meta), history, []


def cmd_train(args):
    cfg = config_mod.load_config(args.config, seed=args.seed)
    if args.variant is not None:
        cfg["loss"]["variant"] = args.variant
    variant = cfg["loss"]["variant"]
    out = _out_dir(args)
    ds = dataset_from_config(cfg)
    log.info("dataset: %d nodes, %d edges, splits %s", ds.n_nodes, len(ds.edges),
             {s: len(ds.ids(s)) for s in ("train", "val", "test")})
    with open(os.path.join(out, "config.json"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(config_mod.dumps(cfg))
    if variant == "standard":
        doc, history, losses = _train_standard(cfg, ds)
    else:
        doc, history, losses = _train_network(cfg, ds, variant)
    _write_csv(os.path.join(out, "metrics.csv"), METRICS_HEADER, history, METRICS_VERSION)
    if losses:
        keys = ["epoch"] + sorted({k for row in losses for k in row} - {"epoch"})
        _write_csv(os.path.join(out, "losses.csv"), keys, losses)
    checkpoints.save(os.path.join(out, "checkpoint.json"), doc)
    meta = doc["meta"]
    print(f"best epoch {meta['best_epoch']}  val mAP {_num(meta['best_val_map'])}  test mAP {_num(meta['test_map'])}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate / transform


def embed_with_checkpoint(doc, names, X):
    """Apply a loaded checkpoint to rows ``X`` keyed by ``names``.

    Returns ``(Y, distance, manifold_string)``.
    """
    kind = doc["kind"]
    if doc["meta"].get("input_normalization", "none") == "l2":
        X = l2_normalize(X)
    if kind == "identity":
        return X, "cosine", f"E{X.shape[1]}"
    if kind == "table":
        table = dict(zip(doc["names"], doc["table"]))
        Y = np.array([table.get(n, x) for n, x in zip(names, X)], dtype=float)
        return Y, doc["meta"].get("eval_distance", "cosine"), doc["manifold"]
    net = doc["network"]
    if X.shape[1] != net.source.ambient_dim:
        raise UsageError(f"checkpoint expects {net.source.ambient_dim}-d inputs, got {X.shape[1]}")
    Y = network_forward(net, X)
    return Y, _eval_distance(doc["meta"], net.target), str(net.target)


def _load_checkpoint(path):
    if path == "identity":
        return {"kind": "identity", "meta": {}}
    if not os.path.exists(path):
        raise UsageError(f"no such checkpoint {path}")
    return checkpoints.load(path)


def cmd_evaluate(args):
    cfg = config_mod.load_config(args.config, seed=args.seed)
    ds = dataset_from_config(cfg)
    doc = _load_checkpoint(args.checkpoint)
    Y, dist, _ = embed_with_checkpoint(doc, ds.names, ds.embeddings)
    _check_finite("embeddings", Y)
    rows = []
    for split in args.split:
        r = mean_average_precision(Y, ds, split, dist)
        rows.append({"split": split, "map": r.map, "n_queries": r.n_queries, "skipped_queries": r.skipped})
        print(f"{split}\tmAP {_num(r.map)}\tqueries {r.n_queries}\tskipped {r.skipped}")
    if args.out:
        _write_csv(os.path.join(_out_dir(args), "evaluation.csv"), ["split", "map", "n_queries", "skipped_queries"], rows)
    return EXIT_OK


def cmd_transform(args):
    doc = _load_checkpoint(args.checkpoint)
    table = load_embeddings(args.input)
    names = list(table)
    if not names:
        raise DataError(f"{args.input}: no embeddings")
    dims = {len(v) for v in table.values()}
    if len(dims) != 1:
        raise DataError(f"{args.input}: mixed vector dimensions {sorted(dims)}")
    X = np.stack([table[n] for n in names])
    Y, _, manifold = embed_with_checkpoint(doc, names, X)
    _check_finite("transformed embeddings", Y)
    m = parse_manifold(manifold)
    for row in Y:
        m.check_point(row)
    write_embeddings(args.output, names, Y, header=manifold)
    print(f"wrote {len(names)} vectors on {manifold} to {args.output}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# figure data


def cmd_figure_data(args):
    out = _out_dir(args)
    run = fixtures.run_fixture(args.which, args.variant, args.target, seed=args.seed or 0, epochs=args.epochs,
                               margin=args.margin, lam=args.lam)
    ds = run.fixture.dataset
    chart = fixtures.plane_chart(run.target)
    Yc = chart(run.points)
    Gc = chart(run.mapped_grid)
    td = run.points.shape[1]
    rows = []
    for i, name in enumerate(ds.names):
        row = {"id": name, "role": run.fixture.roles[i], "src_x": ds.embeddings[i, 0], "src_y": ds.embeddings[i, 1],
               "chart_x": Yc[i, 0], "chart_y": Yc[i, 1]}
        row.update({f"tgt_{k}": run.points[i, k] for k in range(td)})
        rows.append(row)
    tgt_cols = [f"tgt_{k}" for k in range(td)]
    _write_csv(os.path.join(out, "points.csv"), ["id", "role", "src_x", "src_y"] + tgt_cols + ["chart_x", "chart_y"], rows)
    _write_csv(os.path.join(out, "edges.csv"), ["source", "target"],
               [{"source": ds.names[a], "target": ds.names[b]} for a, b in ds.edges])
    g = run.fixture.grid
    n = g.shape[0]
    flat = g.reshape(-1, 2)
    grows = []
    for k in range(len(flat)):
        grows.append({"i": k // n, "j": k % n, "src_x": flat[k, 0], "src_y": flat[k, 1],
                      "chart_x": Gc[k, 0], "chart_y": Gc[k, 1]})
    _write_csv(os.path.join(out, "grid.csv"), ["i", "j", "src_x", "src_y", "chart_x", "chart_y"], grows)
    summary = {
        "which": args.which,
        "variant": args.variant,
        "target": str(run.target),
        "seed": args.seed or 0,
        "epochs": args.epochs,
        "graph_hinge": fixtures.graph_hinge(run.points, ds, run.target, args.margin),
        "area_distortion": fixtures.area_distortion(g, run.mapped_grid, chart),
    }
    with open(os.path.join(out, "summary.json"), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------
# split


def cmd_split(args):
    ratios = tuple(args.ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise UsageError(f"--ratios must be three nonnegative numbers summing to 1, got {list(ratios)}")
    if not os.path.exists(args.edges):
        raise UsageError(f"no such edge file {args.edges}")
    ds = build_dataset(args.edges, args.embeddings) if args.embeddings else build_dataset(args.edges)
    labels = make_splits(ds, ratios, args.seed or 0)
    out = args.output or os.path.join(_out_dir(args), "split.tsv")
    write_split(out, ds.names, labels)
    ds = ds.with_split(labels)
    parts = split_edges(ds)
    counts = {s: (len(ds.ids(s)), len(parts[s])) for s in ("train", "val", "test")}
    print("  ".join(f"{s}: {n} nodes / {e} edges" for s, (n, e) in counts.items()))
    return EXIT_OK


# ---------------------------------------------------------------------------
# gradient check


def _relerr(a, b):
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-8)
    return float(np.max(np.abs(a - b)) / scale)


def check_gradients(cfg, seed=0, inject_error=0.0, n_points=4, tol=1e-4):
    """Finite-difference check of the network Jacobian and of the
    parameter gradients of the full training objective on a small random
    instance of the configured architecture (hidden widths capped at 8).

    Returns ``(ok, report)`` where ``report`` maps block name to the max
    relative error.
    """
    rng = np.random.default_rng(seed)
    chain = parse_architecture(cfg["architecture"])
    small = [str(chain[0])] + [f"E{min(m.ambient_dim, 8)}" if isinstance(m, Euclidean) else str(m) for m in chain[1:-1]] + [str(chain[-1])]
    net = init_network(" -> ".join(small), rng, hidden_nonlinearity=cfg["hidden_nonlinearity"])
    lc = config_mod.loss_config(cfg)
    d = net.source.ambient_dim
    X = rng.normal(size=(n_points + 3, d))
    report = {}
    prog = network_program(net)
    params = net.params()
    for i in range(2):
        _, J = ad.value_and_jacobian(prog, X[i])
        J_fd = ad.finite_diff_jacobian(prog, X[i])
        report[f"jacobian[{i}]"] = _relerr(J, J_fd)
    objective = make_objective(net, lc)
    batch = {
        "u": np.arange(2),
        "v": np.arange(1, 3),
        "neg": np.array([[3, 4], [4, 5]]),
        "vertex_points": X[:n_points],
    }

    def total(p):
        terms = objective(p, X, batch)
        return ad.add(terms["fidelity"], ad.mul(lc.lambda_balance, terms["preservation"]))

    tape = {k: ad.Var(v) for k, v in params.items()}
    g = ad.backward(total(tape))
    h = 1e-6
    for name in sorted(params):
        analytic = g.get(id(tape[name]), np.zeros_like(params[name]))
        if inject_error and name == sorted(params)[0]:
            analytic = analytic * (1.0 + inject_error)
        base = {k: np.array(v, dtype=float) for k, v in params.items()}
        p = base[name]
        fd = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            hi = float(ad.value(total(base)))
            p[idx] = old - h
            lo = float(ad.value(total(base)))
            p[idx] = old
            fd[idx] = (hi - lo) / (2 * h)
        report[name] = _relerr(analytic, fd)
    ok = all(v <= tol for v in report.values())
    return ok, report


def cmd_check_grad(args):
    cfg = config_mod.load_config(args.config, seed=args.seed) if args.config else config_mod.resolve({"architecture": "E4 -> E8 -> E8 -> S2xH2"}, seed=args.seed)
    ok, report = check_gradients(cfg, seed=cfg["seed"], inject_error=args.inject_error)
    for name, err in report.items():
        print(f"{name}\tmax rel err {err:.3e}")
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_NUMERIC


# ---------------------------------------------------------------------------
# entry point


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="conformal-retrofit", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[common], help="train from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--variant", choices=("standard", "explicit", "conformal"), default=None)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", parents=[common], help="mAP of a checkpoint")
    e.add_argument("--config", required=True, help="config naming the dataset and split")
    e.add_argument("--checkpoint", required=True, help="checkpoint path, or 'identity' for the untransformed embeddings")
    e.add_argument("--split", nargs="+", default=["test"], choices=("train", "val", "test"))
    e.set_defaults(func=cmd_evaluate)

    tr = sub.add_parser("transform", parents=[common], help="map embeddings through a checkpoint")
    tr.add_argument("--checkpoint", required=True)
    tr.add_argument("--input", required=True)
    tr.add_argument("--output", required=True)
    tr.set_defaults(func=cmd_transform)

    f = sub.add_parser("figure-data", parents=[common], help="synthetic fixture CSV for plotting")
    f.add_argument("which", choices=sorted(fixtures.FIXTURES))
    f.add_argument("--variant", choices=("conformal", "explicit", "standard"), default="conformal")
    f.add_argument("--target", default="E2", help="E2, H2 or S2 (conformal variant)")
    f.add_argument("--epochs", type=int, default=600)
    f.add_argument("--margin", type=float, default=0.1)
    f.add_argument("--lam", type=float, default=1.0)
    f.set_defaults(func=cmd_figure_data)

    s = sub.add_parser("split", parents=[common], help="write a reproducible node split")
    s.add_argument("--edges", required=True)
    s.add_argument("--embeddings", default=None, help="drop nodes without a vector before splitting")
    s.add_argument("--ratios", type=float, nargs=3, default=[0.8, 0.1, 0.1])
    s.add_argument("--output", default=None)
    s.set_defaults(func=cmd_split)

    g = sub.add_parser("check-grad", parents=[common], help="finite-difference gradient check")
    g.add_argument("--config", default=None)
    g.add_argument("--inject-error", type=float, default=0.0, help=argparse.SUPPRESS)
    g.set_defaults(func=cmd_check_grad)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors already
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (UsageError, config_mod.ConfigError, checkpoints.CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalFailure, EigFailure, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
