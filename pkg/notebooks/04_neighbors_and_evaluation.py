"""Negative sampling and link-prediction evaluation.

Negatives for the max-margin loss are the nearest non-neighbours of a node.
They come from an index built in the tangent space at the Karcher mean of
the current target embeddings. Evaluation ranks candidate nodes by distance
and reports mean average precision.
"""

# %% Karcher means
import numpy as np

from conformal_retrofit import neighbors as N
from conformal_retrofit.data import GraphDataset, make_splits
from conformal_retrofit.evaluation import mean_average_precision
from conformal_retrofit.fixtures import toy_hierarchy
from conformal_retrofit.manifolds import PoincareBall, Sphere

print("sphere mean of e1, e2:", N.karcher_mean(Sphere(2), np.eye(3)[:2]))
print("ball mean of +-0.4 e1:", N.karcher_mean(PoincareBall(2), np.array([[0.4, 0], [-0.4, 0]])))

# %% tangent-chart kNN with exclusions
rng = np.random.default_rng(0)
H = PoincareBall(3)
pts = H.random_point(rng, (200,))
index = N.build_index(H, pts)
print("negatives of node 0 (excluding 1..5):", N.query_negatives(index, 0, 5, {0, 1, 2, 3, 4, 5}))
print("recall@10 of the chart against exact geodesic kNN:", N.recall_at_k(index, pts, k=10))

# %% mAP on a toy hierarchy with the untransformed vectors
names, pairs, vecs = toy_hierarchy(n_nodes=60, dim=8, seed=0)
ds = GraphDataset(names, np.array(pairs), vecs)
ds = ds.with_split(make_splits(ds, seed=0))
for split in ("train", "val", "test"):
    r = mean_average_precision(ds.embeddings, ds, split, "cosine")
    print(f"{split:>5}: mAP {r.map:.3f} over {r.n_queries} queries ({r.skipped} skipped)")
