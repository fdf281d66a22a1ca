"""Synthetic node-classification datasets with planted communities."""

import os

import networkx as nx
import numpy as np

from . import formats
from .graph import build_graph
from .rng import stream


def _split_masks(n, rng, train_frac, val_frac):
    perm = rng.permutation(n)
    n_train = int(round(train_frac * n))
    n_val = int(round(val_frac * n))
    train = np.zeros(n, bool)
    val = np.zeros(n, bool)
    test = np.zeros(n, bool)
    train[perm[:n_train]] = True
    val[perm[n_train:n_train + n_val]] = True
    test[perm[n_train + n_val:]] = True
    return train, val, test


def _features(labels, n_classes, d_in, separation, noise, rng):
    means = rng.normal(size=(n_classes, d_in))
    means *= separation / np.linalg.norm(means, axis=1, keepdims=True)
    return means[labels] + noise * rng.normal(size=(len(labels), d_in))


def generate(kind="sbm", n=2000, blocks=2, p_in=0.01, p_out=0.001, degree=6, d_in=16,
             separation=1.0, noise=1.0, train_frac=0.5, val_frac=0.25, seed=0):
    """Return a :class:`~musegnn.graph.Graph` with planted labels.

    ``kind='sbm'``: stochastic block model with equal blocks, edge probability
    ``p_in`` within and ``p_out`` across blocks.  ``kind='regular'``: random
    ``degree``-regular graph with labels assigned in contiguous blocks, so the
    structure carries no label information.  Features are the class mean
    (norm ``separation``) plus isotropic Gaussian noise of scale ``noise``.
    """
    sizes = [n // blocks + (1 if i < n % blocks else 0) for i in range(blocks)]
    labels = np.repeat(np.arange(blocks), sizes)
    graph_seed = int(stream(seed, "gen", "graph").integers(2**31))
    if kind == "sbm":
        probs = [[p_in if a == b else p_out for b in range(blocks)] for a in range(blocks)]
        G = nx.stochastic_block_model(sizes, probs, seed=graph_seed, sparse=True)
    elif kind == "regular":
        G = nx.random_regular_graph(degree, n, seed=graph_seed)
    else:
        raise ValueError(f"unknown synthetic graph kind {kind!r}")
    edges = np.array(sorted(G.edges()), dtype=np.int64).reshape(-1, 2)
    rng = stream(seed, "gen", "features")
    X = _features(labels, blocks, d_in, separation, noise, rng)
    # round-trip through float32 so in-memory graphs match ones read from disk
    X = X.astype(np.float32).astype(np.float64)
    masks = _split_masks(n, stream(seed, "gen", "split"), train_frac, val_frac)
    return build_graph(edges, n, X, labels, *masks)


def write_dataset(g, out_dir):
    """Write the four dataset files; returns their paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {k: os.path.join(out_dir, f) for k, f in
             (("edges", "edges.tsv"), ("features", "features.bin"), ("labels", "labels.txt"),
              ("masks", "masks.txt"))}
    rows = np.repeat(np.arange(g.n), g.degrees)
    keep = rows < g.targets
    formats.write_edge_list(paths["edges"], np.stack([rows[keep], g.targets[keep]], axis=1))
    formats.write_features(paths["features"], g.features)
    formats.write_labels(paths["labels"], g.labels)
    formats.write_masks(paths["masks"], g.train_mask, g.val_mask, g.test_mask)
    return paths
