"""Offline subgraph sampling: ShadowKHop, target partitioning and i.i.d. node draws."""

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .graph import GraphError, SubgraphSample, _frozen, induced_subgraph
from .rng import stream

BUNDLE_MAGIC = b"MUSB1"


class BundleError(ValueError):
    """Raised when a bundle file is malformed or belongs to another graph."""


@dataclass(eq=False)
class SampleBundle:
    """An ordered, fixed set of subgraphs plus where they came from."""

    subgraphs: list
    sampler: str
    digest: bytes
    seed: int = 0
    fanouts: tuple = ()
    params: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.subgraphs)

    def __iter__(self):
        return iter(self.subgraphs)

    def __getitem__(self, i):
        return self.subgraphs[i]

    def __eq__(self, other):
        if not isinstance(other, SampleBundle):
            return NotImplemented
        return (self.sampler == other.sampler and self.digest == other.digest
                and self.seed == other.seed and tuple(self.fanouts) == tuple(other.fanouts)
                and self.params == other.params
                and len(self) == len(other)
                and all(a == b for a, b in zip(self.subgraphs, other.subgraphs)))

    __hash__ = None

    def check_graph(self, g):
        if self.digest != g.digest:
            raise BundleError("bundle was sampled from a different graph (digest mismatch)")

    def target_counts(self, n):
        """Number of times each global node appears as a target."""
        counts = np.zeros(n, dtype=np.int64)
        for s in self.subgraphs:
            np.add.at(counts, s.global_ids[:s.n_targets], 1)
        return counts

    def appearance_counts(self, n):
        counts = np.zeros(n, dtype=np.int64)
        for s in self.subgraphs:
            counts[s.global_ids] += 1
        return counts


def shadow_khop(g, seed_nodes, fanouts, rng_seed):
    """Sample a ShadowKHop subgraph around ``seed_nodes``.

    Each hop draws up to ``fanouts[h]`` neighbors per frontier node without
    replacement (all neighbors when the degree does not exceed the fanout).
    The result is the node-induced subgraph over every sampled node, with the
    seeds first and the remaining nodes in ascending global order.
    """
    seeds = np.asarray(seed_nodes, dtype=np.int64).ravel()
    if len(seeds) == 0:
        raise GraphError("shadow_khop needs at least one seed node")
    if len(fanouts) == 0:
        raise GraphError("fanouts must be nonempty")
    if len(np.unique(seeds)) != len(seeds):
        raise GraphError("seed nodes must be distinct")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else stream(rng_seed, "shadow_khop")
    seen = np.zeros(g.n, dtype=bool)
    seen[seeds] = True
    frontier = seeds
    for fanout in fanouts:
        fanout = int(fanout)
        picked = []
        for u in frontier:
            nbrs = g.neighbors(u)
            if len(nbrs) > fanout:
                nbrs = rng.choice(nbrs, size=fanout, replace=False)
            picked.append(nbrs)
        if not picked:
            break
        cand = np.unique(np.concatenate(picked))
        frontier = cand[~seen[cand]]
        seen[frontier] = True
    seen[seeds] = False
    nodes = np.concatenate([seeds, np.flatnonzero(seen)])
    return induced_subgraph(g, nodes, len(seeds))


def partition_targets(g, batch_size, rng_seed, split="train"):
    """Shuffle the split's nodes and chunk them into batches of ``batch_size``."""
    batch_size = int(batch_size)
    if batch_size < 1:
        raise GraphError("batch_size must be >= 1")
    nodes = g.split_nodes(split)
    if len(nodes) == 0:
        raise GraphError(f"graph has no {split} nodes")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else stream(rng_seed, "partition", split)
    perm = rng.permutation(nodes)
    return [perm[i:i + batch_size] for i in range(0, len(perm), batch_size)]


def _map(fn, items, workers):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def sample_split(g, split, fanouts, batch_size, seed, workers=1):
    """ShadowKHop bundle whose targets cover ``split`` exactly once."""
    batches = partition_targets(g, batch_size, stream(seed, "partition", split))

    def one(i):
        return shadow_khop(g, batches[i], fanouts, stream(seed, "shadow_khop", split, i))

    subgraphs = _map(one, range(len(batches)), workers)
    return SampleBundle(subgraphs, "shadow_khop", g.digest, int(seed), tuple(int(f) for f in fanouts),
                        {"split": split, "batch_size": int(batch_size)})


def iid_node_sample(g, p, m, rng_seed, workers=1):
    """Draw ``m`` subgraphs, each keeping every node independently with probability ``p``.

    All kept nodes are targets.  A draw may be empty; it is kept as an empty
    subgraph so that Monte-Carlo averages over draws stay unbiased.
    """
    p = float(p)
    if not 0.0 < p <= 1.0:
        raise GraphError(f"inclusion probability p={p} outside (0, 1]")
    m = int(m)
    if m < 1:
        raise GraphError("m must be >= 1")
    gen = rng_seed if isinstance(rng_seed, np.random.Generator) else None

    def one(s):
        if p == 1.0:
            keep = np.arange(g.n)
        else:
            rng = gen if gen is not None else stream(rng_seed, "iid", s)
            keep = np.flatnonzero(rng.random(g.n) < p)
        return induced_subgraph(g, keep, len(keep))

    subgraphs = _map(one, range(m), 1 if gen is not None else workers)
    seed_val = 0 if gen is not None else int(rng_seed)
    return SampleBundle(subgraphs, "iid", g.digest, seed_val, (), {"p": p})


def _u64(*vals):
    return struct.pack(f"<{len(vals)}Q", *vals)


def save_bundle(b, path):
    """Write ``b``: magic, graph digest, m, per-subgraph blocks, provenance trailer."""
    if len(b.subgraphs) == 0:
        raise BundleError("refusing to save a bundle with no subgraphs")
    for i, s in enumerate(b.subgraphs):
        if s.n == 0 or s.n_targets == 0:
            raise BundleError(f"subgraph {i} is empty; empty subgraphs cannot be stored")
    if len(b.digest) != 32:
        raise BundleError("bundle digest must be 32 bytes")
    prov = json.dumps({"sampler": b.sampler, "seed": b.seed, "fanouts": list(b.fanouts),
                       "params": b.params}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(BUNDLE_MAGIC)
        fh.write(b.digest)
        fh.write(_u64(len(b.subgraphs)))
        for s in b.subgraphs:
            fh.write(_u64(s.n, s.n_targets))
            fh.write(np.ascontiguousarray(s.global_ids, dtype="<u8").tobytes())
            fh.write(np.ascontiguousarray(s.offsets, dtype="<u8").tobytes())
            fh.write(np.ascontiguousarray(s.targets, dtype="<u8").tobytes())
        fh.write(_u64(len(prov)))
        fh.write(prov)


class _Reader:
    def __init__(self, data, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, nbytes):
        if self.pos + nbytes > len(self.data):
            raise BundleError(f"{self.path}: truncated bundle file")
        out = self.data[self.pos:self.pos + nbytes]
        self.pos += nbytes
        return out

    def u64(self, count=1):
        return np.frombuffer(self.take(8 * count), dtype="<u8").astype(np.int64)


def load_bundle(path, g=None):
    """Read a bundle; if ``g`` is given its digest must match."""
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), path)
    if r.take(5) != BUNDLE_MAGIC:
        raise BundleError(f"{path}: not a bundle file (bad magic)")
    digest = bytes(r.take(32))
    m = int(r.u64()[0])
    subgraphs = []
    for _ in range(m):
        n_s, n_t = (int(v) for v in r.u64(2))
        ids = r.u64(n_s)
        offsets = r.u64(n_s + 1)
        targets = r.u64(int(offsets[-1]))
        if not 1 <= n_t <= n_s:
            raise BundleError(f"{path}: invalid target count {n_t} for subgraph of {n_s} nodes")
        subgraphs.append(SubgraphSample(_frozen(ids, np.int64), _frozen(offsets, np.int64),
                                        _frozen(targets, np.int64), n_t))
    plen = int(r.u64()[0])
    prov = json.loads(r.take(plen).decode("utf-8"))
    if r.pos != len(r.data):
        raise BundleError(f"{path}: trailing bytes after bundle")
    b = SampleBundle(subgraphs, prov["sampler"], digest, prov["seed"], tuple(prov["fanouts"]),
                     prov["params"])
    if g is not None:
        b.check_graph(g)
    return b
