"""Run configuration: a JSON document with every default materialised.

Unknown keys are rejected at every nesting level. Relative dataset paths are
resolved against the directory of the config file.
"""

from __future__ import annotations

import copy
import json
import math
import os

from .losses import LossConfig
from .optim import TrainConfig

__all__ = ["ConfigError", "DEFAULTS", "resolve", "load_config", "loss_config", "train_config", "dumps"]


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "dataset": {
        "edges": None,
        "embeddings": None,
        "embedding_dim": None,
        "split": None,
        "split_seed": 0,
        "ratios": [0.8, 0.1, 0.1],
        "normalize": False,
    },
    "architecture": "E50 -> E256 -> E256 -> S30xH30",
    "hidden_nonlinearity": "tanh",
    "loss": {
        "variant": "conformal",
        "lambda": 1.0,
        "margin": 0.1,
        "conformality_C": "inf",
        "conformality_neg_log_c": None,
        "conformality_table": {},
        "distance_kind": "cosine",
        "neighbor_count": 50,
    },
    "optim": {
        "euclidean_lr": 1e-3,
        "riemannian_lr": 1e-2,
        "batch_size": 128,
        "epochs": 100,
        "gradnorm": {"enabled": True, "beta": 0.9},
        "patience": 50,
        "vertex_batch": 64,
        "eval_every": 1,
    },
    "neighbors": {"k": 50, "refresh_period": None},
    "standard": {"lr": 0.05, "iterations": 500},
    "seed": 0,
}

_PATH_KEYS = ("edges", "embeddings", "split")


def _merge(default, given, where):
    if not isinstance(given, dict):
        raise ConfigError(f"{where or 'config'} must be an object")
    out = copy.deepcopy(default)
    for key, val in given.items():
        if key not in default:
            raise ConfigError(f"unknown config key {where + '.' if where else ''}{key}")
        if isinstance(default[key], dict) and default[key] and key != "conformality_table":
            out[key] = _merge(default[key], val, f"{where}.{key}" if where else key)
        else:
            out[key] = val
    return out


def resolve(given, base_dir=None, seed=None):
    """Merge ``given`` over :data:`DEFAULTS`, validate, and resolve paths."""
    cfg = _merge(DEFAULTS, given or {}, "")
    if seed is not None:
        cfg["seed"] = int(seed)
    ds = cfg["dataset"]
    for key in _PATH_KEYS:
        if ds[key] is not None and base_dir is not None and not os.path.isabs(ds[key]):
            ds[key] = os.path.normpath(os.path.join(base_dir, ds[key]))
    # build the typed configs once to surface value errors early
    try:
        loss_config(cfg)
        train_config(cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path, seed=None):
    try:
        with open(path, encoding="utf-8") as fh:
            given = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return resolve(given, os.path.dirname(os.path.abspath(path)), seed)


def loss_config(cfg):
    lc = cfg["loss"]
    C = lc["conformality_C"]
    return LossConfig(
        variant=lc["variant"],
        lambda_balance=float(lc["lambda"]),
        margin=float(lc["margin"]),
        conformality_C=math.inf if C is None else C,
        conformality_label=lc["conformality_neg_log_c"],
        conformality_table=dict(lc["conformality_table"]),
        distance_kind=lc["distance_kind"],
        neighbor_count=int(lc["neighbor_count"]),
    )


def train_config(cfg):
    oc = cfg["optim"]
    nc = cfg["neighbors"]
    return TrainConfig(
        euclidean_lr=float(oc["euclidean_lr"]),
        riemannian_lr=float(oc["riemannian_lr"]),
        batch_size=int(oc["batch_size"]),
        epochs=int(oc["epochs"]),
        gradnorm_enabled=bool(oc["gradnorm"]["enabled"]),
        gradnorm_beta=float(oc["gradnorm"]["beta"]),
        patience=int(oc["patience"]),
        seed=int(cfg["seed"]),
        neighbors_k=int(nc["k"]),
        refresh_period=None if nc["refresh_period"] is None else int(nc["refresh_period"]),
        vertex_batch=int(oc["vertex_batch"]),
        eval_every=int(oc["eval_every"]),
    )


def dumps(cfg):
    return json.dumps(cfg, indent=2, sort_keys=True) + "\n"
