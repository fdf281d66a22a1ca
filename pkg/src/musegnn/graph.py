"""Immutable CSR graph storage, Laplacian products and induced subgraphs."""

import hashlib
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp


class GraphError(ValueError):
    """Raised for malformed graph input or inconsistent shapes."""


def _frozen(a, dtype):
    a = np.ascontiguousarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


class _CSRMixin:
    """Operations shared by full graphs and subgraph samples."""

    @property
    def n(self):
        return len(self.offsets) - 1

    @property
    def num_edges(self):
        """Number of undirected edges."""
        return int(self.offsets[-1]) // 2

    @cached_property
    def degrees(self):
        return _frozen(np.diff(self.offsets), np.int64)

    @property
    def max_degree(self):
        return int(self.degrees.max()) if self.n else 0

    @cached_property
    def adjacency(self):
        n = self.n
        data = np.ones(len(self.targets), dtype=np.float64)
        return sp.csr_matrix((data, self.targets, self.offsets), shape=(n, n))

    @cached_property
    def _edge_rows(self):
        return _frozen(np.repeat(np.arange(self.n), self.degrees), np.int64)

    def neighbors(self, v):
        return self.targets[self.offsets[v]:self.offsets[v + 1]]

    def dense_laplacian(self):
        A = self.adjacency.toarray()
        return np.diag(A.sum(axis=1)) - A


@dataclass(frozen=True, eq=False)
class Graph(_CSRMixin):
    """Undirected full graph with node features, labels and split masks."""

    offsets: np.ndarray
    targets: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray

    @property
    def num_features(self):
        return self.features.shape[1]

    @property
    def num_classes(self):
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    def split_nodes(self, split):
        mask = {"train": self.train_mask, "val": self.val_mask, "test": self.test_mask}[split]
        return np.flatnonzero(mask)

    @cached_property
    def digest(self):
        """SHA-256 over structure, features, labels and masks (32 bytes)."""
        h = hashlib.sha256()
        h.update(np.int64(self.n).tobytes())
        for a in (self.offsets, self.targets, self.labels):
            h.update(np.asarray(a, dtype="<i8").tobytes())
        h.update(np.asarray(self.features, dtype="<f8").tobytes())
        for m in (self.train_mask, self.val_mask, self.test_mask):
            h.update(np.asarray(m, dtype=np.uint8).tobytes())
        return h.digest()


@dataclass(frozen=True, eq=False)
class SubgraphSample(_CSRMixin):
    """One offline subgraph; local index i maps to global node ``global_ids[i]``.

    Target nodes occupy local indices ``0..n_targets``.
    """

    global_ids: np.ndarray
    offsets: np.ndarray
    targets: np.ndarray
    n_targets: int

    def __eq__(self, other):
        if not isinstance(other, SubgraphSample):
            return NotImplemented
        return (self.n_targets == other.n_targets
                and np.array_equal(self.global_ids, other.global_ids)
                and np.array_equal(self.offsets, other.offsets)
                and np.array_equal(self.targets, other.targets))

    __hash__ = None


def _csr_from_edges(src, dst, n):
    keep = src != dst
    src, dst = src[keep], dst[keep]
    rows = np.concatenate([src, dst])
    cols = np.concatenate([dst, src])
    key = np.unique(rows * n + cols)
    rows, cols = key // n, key % n
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n), out=offsets[1:])
    return offsets, cols.astype(np.int64)


def build_graph(edges, n, features, labels=None, train_mask=None, val_mask=None,
                test_mask=None):
    """Build a symmetric, deduplicated, self-loop-free CSR graph.

    ``edges`` is any iterable of ``(src, dst)`` pairs or an ``(E, 2)`` array.
    Errors name the offending edge by its 1-based position in the input.
    """
    n = int(n)
    edges = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges,
                       dtype=np.int64).reshape(-1, 2)
    bad = np.flatnonzero((edges < 0).any(axis=1) | (edges >= n).any(axis=1))
    if len(bad):
        i = int(bad[0])
        raise GraphError(f"edge at line {i + 1} references node outside [0, {n}): "
                         f"{tuple(int(x) for x in edges[i])}")
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] != n:
        raise GraphError(f"features must have {n} rows, got shape {features.shape}")
    labels = np.zeros(n, dtype=np.int64) if labels is None else np.asarray(labels, dtype=np.int64)
    if labels.shape != (n,):
        raise GraphError(f"labels must have length {n}, got {labels.shape}")
    if len(labels) and labels.min() < 0:
        raise GraphError("labels must be nonnegative")
    masks = []
    for name, m in (("train", train_mask), ("val", val_mask), ("test", test_mask)):
        m = np.zeros(n, dtype=bool) if m is None else np.asarray(m, dtype=bool)
        if m.shape != (n,):
            raise GraphError(f"{name} mask must have length {n}, got {m.shape}")
        masks.append(m)
    if (masks[0] & masks[1]).any() or (masks[0] & masks[2]).any() or (masks[1] & masks[2]).any():
        raise GraphError("split masks must be pairwise disjoint")
    offsets, targets = _csr_from_edges(edges[:, 0], edges[:, 1], n)
    return Graph(
        offsets=_frozen(offsets, np.int64),
        targets=_frozen(targets, np.int64),
        features=_frozen(features, np.float64),
        labels=_frozen(labels, np.int64),
        train_mask=_frozen(masks[0], bool),
        val_mask=_frozen(masks[1], bool),
        test_mask=_frozen(masks[2], bool),
    )


def laplacian_apply(g, Y):
    """Return ``(D - A) @ Y`` using the CSR structure only."""
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.shape[0] != g.n:
        raise GraphError(f"Y has {Y.shape[0]} rows, graph has {g.n} nodes")
    return g.degrees[:, None] * Y - g.adjacency @ Y


def laplacian_quadratic(g, Y):
    """``tr(Y^T L Y)`` as half the sum of squared differences over stored arcs."""
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.shape[0] != g.n:
        raise GraphError(f"Y has {Y.shape[0]} rows, graph has {g.n} nodes")
    diff = Y[g._edge_rows] - Y[g.targets]
    return 0.5 * float(np.einsum("ij,ij->", diff, diff))


def induced_subgraph(g, node_set, n_targets):
    """Node-induced subgraph over ``node_set``; the first ``n_targets`` are targets."""
    ids = np.asarray(node_set, dtype=np.int64).ravel()
    if len(np.unique(ids)) != len(ids):
        raise GraphError("node_set contains duplicate ids")
    if len(ids) and (ids.min() < 0 or ids.max() >= g.n):
        raise GraphError(f"node_set ids must lie in [0, {g.n})")
    n_targets = int(n_targets)
    if not 0 <= n_targets <= len(ids):
        raise GraphError(f"n_targets={n_targets} outside [0, {len(ids)}]")
    if len(ids):
        sub = g.adjacency[ids][:, ids].tocsr()
        sub.sort_indices()
        offsets, targets = sub.indptr, sub.indices
    else:
        offsets, targets = np.zeros(1, dtype=np.int64), np.zeros(0, dtype=np.int64)
    return SubgraphSample(
        global_ids=_frozen(ids, np.int64),
        offsets=_frozen(offsets, np.int64),
        targets=_frozen(targets, np.int64),
        n_targets=n_targets,
    )
