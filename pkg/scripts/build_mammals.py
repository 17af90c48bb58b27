"""Build the Mammals hypernymy dataset shipped in ``data/mammals``.

Inputs (not shipped, pass their paths):

* WordNet 3.0 database directory (``data.noun`` and ``index.noun``), e.g.
  from the Princeton release or the ``wn`` 0.0.23 sdist;
* GloVe-derived 100-d word vectors, either a GloVe text file or the JSON
  file of the ``wink-embeddings-sg-100d`` npm package (GloVe 6B, PDDL).

Outputs in ``--out``:

``edges.tsv``
    ``child<TAB>parent`` direct hypernym edges, node names in the usual
    ``lemma.n.NN`` synset form.
``embeddings.txt``
    one 50-d vector per node (GloVe text format, keyed by node name).
``split.tsv``
    reference train/val/test split matching the published node counts
    944/118/118 and edge counts 762/234/184.

Node vectors: the GloVe vector of the first single-word lemma in the
vocabulary; otherwise the mean over in-vocabulary parts of the lemmas
(``"grevy's_zebra" -> zebra``); otherwise a seeded random vector with the
median vocabulary norm. The 100-d vectors are projected to 50-d with the top
right singular vectors of the 50k most frequent words (uncentred, so cosine
structure is kept as far as possible).

Usage::

    python scripts/build_mammals.py --wordnet DIR --glove FILE --out data/mammals
"""

import argparse
import collections
import hashlib
import json
import os
import re

import numpy as np

from conformal_retrofit.data import SPLITS, GraphDataset, split_edges, write_embeddings, write_split

ROOT = "mammal.n.01"
# The instance-inclusive hyponym closure of mammal.n.01 has 1182 synsets; the
# published dataset has 1180. These two instance leaves are excluded to match.
EXCLUDE = ("lucy.n.01", "citation.n.06")
NODE_COUNTS = (944, 118, 118)
EDGE_COUNTS = (762, 234, 184)


def read_wordnet(directory):
    syn = {}
    with open(os.path.join(directory, "data.noun"), encoding="latin-1") as fh:
        for line in fh:
            if line.startswith("  "):
                continue
            head = line.partition(" | ")[0].split()
            off, n_words = head[0], int(head[3], 16)
            words = [head[4 + 2 * i] for i in range(n_words)]
            i = 4 + 2 * n_words
            n_ptr = int(head[i])
            i += 1
            ptrs = []
            for _ in range(n_ptr):
                ptrs.append((head[i], head[i + 1], head[i + 2]))
                i += 4
            syn[off] = (words, ptrs)
    sense = {}
    with open(os.path.join(directory, "index.noun"), encoding="latin-1") as fh:
        for line in fh:
            if line.startswith("  "):
                continue
            t = line.split()
            lemma, n_syn = t[0], int(t[2])
            for k, off in enumerate(t[-n_syn:]):
                sense[(lemma, off)] = k + 1
    return syn, sense


def synset_name(syn, sense, off):
    lemma = syn[off][0][0].lower()
    lemma = re.sub(r"\(.*\)$", "", lemma)
    return f"{lemma}.n.{sense[(lemma, off)]:02d}"


def mammal_graph(syn, sense):
    root = next(o for o, v in syn.items() if synset_name(syn, sense, o) == ROOT)
    nodes, stack = {root}, [root]
    while stack:
        x = stack.pop()
        for kind, off, pos in syn[x][1]:
            if kind in ("~", "~i") and pos == "n" and off not in nodes:
                nodes.add(off)
                stack.append(off)
    names = {o: synset_name(syn, sense, o) for o in nodes}
    keep = {o for o in nodes if names[o] not in EXCLUDE}
    edges = set()
    for o in keep:
        for kind, off, pos in syn[o][1]:
            if kind in ("@", "@i") and off in keep:
                edges.add((names[o], names[off]))
    return {names[o]: syn[o][0] for o in keep}, sorted(edges)


def read_vectors(path):
    """Ordered ``(words, (n, d) array)`` from GloVe text or the wink JSON."""
    if path.endswith(".json"):
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        dim = doc["dimensions"]
        words = list(doc["vectors"])
        return words, np.array([doc["vectors"][w][:dim] for w in words], dtype=float)
    words, rows = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.rstrip().split(" ")
            words.append(parts[0])
            rows.append([float(v) for v in parts[1:]])
    return words, np.array(rows)


def project(vectors, dim, top=50_000):
    _, _, vt = np.linalg.svd(vectors[:top], full_matrices=False)
    return vectors @ vt[:dim].T


def node_vector(lemmas, index, vectors, name, fallback_norm):
    single = [re.sub(r"\(.*\)$", "", l.lower()) for l in lemmas]
    for l in single:
        if l in index:
            return vectors[index[l]], "token"
    parts = [p for l in single for p in re.split(r"[_\-]", l) if p]
    hits = [vectors[index[p]] for p in parts if p in index]
    hits += [vectors[index[p[:-2]]] for p in parts if p.endswith("'s") and p[:-2] in index]
    if hits:
        return np.mean(hits, axis=0), "parts"
    seed = int.from_bytes(hashlib.sha256(name.encode()).digest()[:8], "little")
    v = np.random.default_rng(seed).normal(size=vectors.shape[1])
    return v * fallback_norm / np.linalg.norm(v), "random"


def reference_split(names, edges, seed=0, max_iter=200_000):
    """Node split with the published node and edge counts.

    Starts from a seeded uniform split of the published sizes and swaps
    labels of node pairs while that reduces the distance to the published
    edge counts.
    """
    idx = {n: i for i, n in enumerate(names)}
    e = np.array([(idx[a], idx[b]) for a, b in edges])
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(names))
    labels = np.empty(len(names), dtype=object)
    a, b = NODE_COUNTS[0], NODE_COUNTS[0] + NODE_COUNTS[1]
    labels[order[:a]], labels[order[a:b]], labels[order[b:]] = "train", "val", "test"
    ds = GraphDataset(list(names), e, None, None)

    def cost(lab):
        parts = split_edges(ds, lab)
        return sum(abs(len(parts[s]) - t) for s, t in zip(SPLITS, EDGE_COUNTS))

    best = cost(labels)
    for _ in range(max_iter):
        if best == 0:
            break
        i, j = rng.integers(len(names), size=2)
        if labels[i] == labels[j]:
            continue
        labels[i], labels[j] = labels[j], labels[i]
        c = cost(labels)
        if c <= best:
            best = c
        else:
            labels[i], labels[j] = labels[j], labels[i]
    if best != 0:
        raise RuntimeError(f"split search ended {best} edges away from the published counts")
    return labels


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--wordnet", required=True, help="WordNet 3.0 dict directory")
    p.add_argument("--glove", required=True, help="GloVe text file or wink-embeddings JSON")
    p.add_argument("--out", default="data/mammals")
    p.add_argument("--dim", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    syn, sense = read_wordnet(args.wordnet)
    lemmas, edges = mammal_graph(syn, sense)
    names = sorted(lemmas)
    print(f"{len(names)} nodes, {len(edges)} edges")

    words, vecs = read_vectors(args.glove)
    vecs = project(vecs, args.dim) if vecs.shape[1] != args.dim else vecs
    index = {w: i for i, w in enumerate(words)}
    norm = float(np.median(np.linalg.norm(vecs[:50_000], axis=1)))
    table, how = [], collections.Counter()
    for n in names:
        v, kind = node_vector(lemmas[n], index, vecs, n, norm)
        table.append(v)
        how[kind] += 1
    print("vector sources:", dict(how))

    os.makedirs(args.out, exist_ok=True)
    write_edges_by_name(os.path.join(args.out, "edges.tsv"), edges)
    write_embeddings(os.path.join(args.out, "embeddings.txt"), names, np.round(np.array(table), 6))
    labels = reference_split(names, edges, seed=args.seed)
    write_split(os.path.join(args.out, "split.tsv"), names, labels)
    print("split:", collections.Counter(labels))


def write_edges_by_name(path, pairs):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# child<TAB>parent, direct WordNet 3.0 hypernym edges below mammal.n.01\n")
        for a, b in pairs:
            fh.write(f"{a}\t{b}\n")


if __name__ == "__main__":
    main()
