import json
import math
import os

import numpy as np
import pytest

from conformal_retrofit import checkpoints as C
from conformal_retrofit import config as K
from conformal_retrofit.layers import init_network, network_forward


def test_defaults_materialised(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"dataset": {"edges": "e.tsv", "embeddings": "v.txt"}}))
    cfg = K.load_config(p)
    assert cfg["dataset"]["edges"] == os.path.join(str(tmp_path), "e.tsv")
    assert cfg["optim"]["gradnorm"] == {"enabled": True, "beta": 0.9}
    assert cfg["neighbors"]["k"] == 50 and cfg["loss"]["margin"] == 0.1
    assert cfg["dataset"]["normalize"] is False
    assert math.isinf(K.loss_config(cfg).conformality_C)
    assert K.load_config(p, seed=7)["seed"] == 7


@pytest.mark.parametrize(
    "given",
    [
        {"bogus": 1},
        {"optim": {"lr": 0.1}},
        {"optim": {"gradnorm": {"alpha": 1}}},
        {"loss": {"margin": -1}},
        {"loss": {"variant": "other"}},
        {"optim": {"batch_size": 0}},
        {"dataset": []},
    ],
)
def test_rejects_bad_configs(given):
    with pytest.raises(K.ConfigError):
        K.resolve(given)


def test_conformality_table_is_opaque():
    cfg = K.resolve({"loss": {"conformality_neg_log_c": "0.2", "conformality_table": {"0.2": 1.5, "any": "inf"}}})
    assert K.loss_config(cfg).conformality_C == 1.5
    with pytest.raises(K.ConfigError):
        K.resolve({"loss": {"conformality_neg_log_c": "0.4", "conformality_table": {"0.2": 1.5}}})


def test_config_file_errors(tmp_path):
    with pytest.raises(K.ConfigError):
        K.load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(K.ConfigError):
        K.load_config(bad)


def test_dumps_is_stable():
    cfg = K.resolve({})
    assert K.dumps(cfg) == K.dumps(json.loads(K.dumps(cfg)))


def test_network_checkpoint_round_trip_is_byte_identical(tmp_path):
    rng = np.random.default_rng(0)
    net = init_network("E5 -> E7 -> S2xH3", rng)
    ps = {k: v + (0.1 * rng.normal(size=v.shape) if net.param_manifolds()[k] is None else 0) for k, v in net.params().items()}
    net = net.with_params(ps)
    first = tmp_path / "a.json"
    C.save(first, C.network_to_dict(net, {"best_epoch": 3, "best_val_map": 0.1 + 0.2}))
    doc = C.load(first)
    second = tmp_path / "b.json"
    C.save(second, C.strip(doc))
    assert first.read_bytes() == second.read_bytes()
    x = rng.normal(size=(4, 5))
    assert np.array_equal(network_forward(doc["network"], x), network_forward(net, x))
    assert doc["meta"]["best_val_map"] == 0.1 + 0.2


def test_table_checkpoint_round_trip(tmp_path):
    vecs = np.random.default_rng(1).normal(size=(3, 2)) / 3
    first = tmp_path / "t.json"
    C.save(first, C.table_to_dict(["a", "b", "c"], vecs, "E2"))
    doc = C.load(first)
    assert np.array_equal(doc["table"], vecs)
    second = tmp_path / "u.json"
    C.save(second, C.strip(doc))
    assert first.read_bytes() == second.read_bytes()


def test_checkpoint_errors(tmp_path):
    p = tmp_path / "x.json"
    p.write_text('{"format": "other", "version": 1}')
    with pytest.raises(C.CheckpointError):
        C.load(p)
    p.write_text("[")
    with pytest.raises(C.CheckpointError):
        C.load(p)
    p.write_text(json.dumps({"format": C.FORMAT, "version": C.VERSION, "kind": "weird"}))
    with pytest.raises(C.CheckpointError):
        C.load(p)
