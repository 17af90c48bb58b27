"""Standard, explicit and conformal retrofitting on a toy hierarchy.

Standard retrofitting moves a free table of vectors, so nodes without
training edges never change. Explicit retrofitting learns a Euclidean map
kept close to the identity. Conformal retrofitting learns a map into a
product of a sphere and a hyperbolic space, kept close to conformal.
"""

# %% data
import numpy as np

from conformal_retrofit.baselines import BaselineConfig, run_explicit_retrofit, run_standard_retrofit
from conformal_retrofit.data import GraphDataset, make_splits
from conformal_retrofit.evaluation import mean_average_precision
from conformal_retrofit.fixtures import toy_hierarchy
from conformal_retrofit.layers import init_network, network_forward
from conformal_retrofit.losses import LossConfig
from conformal_retrofit.optim import TrainConfig, fit

names, pairs, vecs = toy_hierarchy(n_nodes=80, dim=8, seed=1)
ds = GraphDataset(names, np.array(pairs), vecs)
ds = ds.with_split(make_splits(ds, seed=0))
print("identity test mAP:", mean_average_precision(ds.embeddings, ds, "test", "cosine").map)

# %% standard retrofitting
table = run_standard_retrofit(ds, BaselineConfig(lam=1.0, iterations=200))
print("standard test mAP:", mean_average_precision(table, ds, "test", "cosine").map)

# %% explicit retrofitting
tc = TrainConfig(epochs=40, euclidean_lr=0.01, batch_size=32, vertex_batch=16, seed=0)
res = run_explicit_retrofit(ds, LossConfig(variant="explicit", distance_kind="cosine"), tc, hidden=(32,))
out = network_forward(res.net, ds.embeddings)
print("explicit test mAP:", mean_average_precision(out, ds, "test", "cosine").map, "best epoch", res.best_epoch)

# %% conformal retrofitting into S4 x H4
net = init_network("E8 -> E32 -> S4xH4", np.random.default_rng(0))
res = fit(net, ds, LossConfig(variant="conformal"), tc)
out = network_forward(res.net, ds.embeddings)
print("conformal test mAP:", mean_average_precision(out, ds, "test", res.net.target).map,
      "best epoch", res.best_epoch)
