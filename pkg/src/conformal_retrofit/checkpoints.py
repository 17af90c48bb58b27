"""JSON checkpoints for trained networks and retrofitted tables.

A checkpoint is a single human-readable JSON document::

    {"format": "conformal-retrofit", "version": 1, "kind": "network",
     "architecture": "E50 -> E256 -> E256 -> S30xH30",
     "nonlinearities": ["tanh", "tanh", "identity"],
     "params": {"l0.A": {"shape": [256, 50], "data": [...]}, ...},
     "meta": {...}}

``kind`` may also be ``"table"`` (standard retrofitting: ``names`` and
``vectors`` plus the ``manifold`` string) or ``"identity"``. Floats are
written with ``repr`` precision, so save -> load -> save is byte-identical.
"""

from __future__ import annotations

import json

import numpy as np

from .layers import RiemannianFeedforwardLayer, RiemannianNetwork, parse_architecture

__all__ = ["FORMAT", "VERSION", "CheckpointError", "network_to_dict", "save", "load", "dumps"]

FORMAT = "conformal-retrofit"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _arr(a):
    a = np.asarray(a, dtype=float)
    return {"shape": list(a.shape), "data": [float(x) for x in a.ravel()]}


def _unarr(d):
    return np.asarray(d["data"], dtype=float).reshape(d["shape"])


def network_to_dict(net, meta=None):
    return {
        "format": FORMAT,
        "version": VERSION,
        "kind": "network",
        "architecture": net.architecture,
        "nonlinearities": [l.nonlinearity for l in net.layers],
        "params": {k: _arr(v) for k, v in net.params().items()},
        "meta": meta or {},
    }


def table_to_dict(names, vectors, manifold, meta=None):
    return {
        "format": FORMAT,
        "version": VERSION,
        "kind": "table",
        "manifold": str(manifold),
        "names": list(names),
        "vectors": _arr(vectors),
        "meta": meta or {},
    }


def dumps(doc):
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def save(path, doc):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(doc))


def load(path):
    """Read a checkpoint; networks are rebuilt as :class:`RiemannianNetwork`.

    Returns the raw document with an extra ``"network"`` entry for network
    checkpoints and ``"table"`` (``(n, d)`` array) for table checkpoints.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: invalid JSON ({exc})") from None
    if doc.get("format") != FORMAT or doc.get("version") != VERSION:
        raise CheckpointError(f"{path}: not a version-{VERSION} {FORMAT} checkpoint")
    kind = doc.get("kind")
    if kind == "network":
        chain = parse_architecture(doc["architecture"])
        nls = doc["nonlinearities"]
        params = {k: _unarr(v) for k, v in doc["params"].items()}
        layers = []
        for i, (src, tgt) in enumerate(zip(chain, chain[1:])):
            layers.append(
                RiemannianFeedforwardLayer(
                    src,
                    tgt,
                    params[f"l{i}.A"],
                    params[f"l{i}.b_source"],
                    params[f"l{i}.b_target"],
                    nls[i],
                )
            )
        doc["network"] = RiemannianNetwork(tuple(layers))
    elif kind == "table":
        doc["table"] = _unarr(doc["vectors"])
    elif kind != "identity":
        raise CheckpointError(f"{path}: unknown checkpoint kind {kind!r}")
    return doc


def strip(doc):
    """Drop the in-memory entries added by :func:`load`."""
    return {k: v for k, v in doc.items() if k not in ("network", "table")}
