import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from musegnn.graph import GraphError, build_graph
from musegnn.rng import stream
from musegnn.sampler import (BundleError, iid_node_sample, load_bundle, partition_targets,
                             sample_split, save_bundle, shadow_khop)
from musegnn.synth import generate

from conftest import dense_L, random_graph


def _star(k):
    return build_graph([(0, i) for i in range(1, k + 1)], k + 1, np.zeros((k + 1, 1)),
                       train_mask=np.ones(k + 1, bool))


def _khop(g, seeds, hops):
    seen = set(seeds)
    frontier = set(seeds)
    for _ in range(hops):
        frontier = {int(v) for u in frontier for v in g.neighbors(u)} - seen
        seen |= frontier
    return seen


def test_saturating_fanout_is_exact_khop():
    g = random_graph(60, 0.08, seed=4)
    s = shadow_khop(g, [0, 5], [100, 100], 0)
    assert set(s.global_ids.tolist()) == _khop(g, [0, 5], 2)
    assert s.global_ids[:2].tolist() == [0, 5] and s.n_targets == 2
    assert list(s.global_ids[2:]) == sorted(s.global_ids[2:])


def test_isolated_seed():
    g = build_graph([(1, 2)], 3, np.zeros((3, 1)))
    s = shadow_khop(g, [0], [5, 5], 0)
    assert s.n == 1 and s.num_edges == 0 and s.n_targets == 1


def test_star_hub_fanout_two_every_outcome():
    g = _star(4)
    outcomes = set()
    for seed in range(200):
        s = shadow_khop(g, [0], [2], seed)
        assert s.n == 3 and s.num_edges == 2
        assert all(0 in (i, j) for i, j in _edges(s))
        outcomes.add(tuple(s.global_ids[1:]))
    # all C(4,2) leaf pairs are reachable
    assert outcomes == set(itertools.combinations(range(1, 5), 2))


def _edges(s):
    return [(int(s.global_ids[i]), int(s.global_ids[j])) for i in range(s.n) for j in s.neighbors(i)]


def test_empty_seed_rejected():
    with pytest.raises(GraphError):
        shadow_khop(_star(2), [], [1], 0)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6), f1=st.integers(1, 4), f2=st.integers(1, 4))
def test_shadow_khop_node_induced_and_deterministic(seed, f1, f2):
    g = random_graph(80, 0.06, seed=seed % 97)
    seeds = stream(seed, "t").choice(80, size=3, replace=False)
    s = shadow_khop(g, seeds, [f1, f2], seed)
    assert s == shadow_khop(g, seeds, [f1, f2], seed)
    ids = s.global_ids
    A = -dense_L(g)
    np.fill_diagonal(A, 0)
    B = -dense_L(s)
    np.fill_diagonal(B, 0)
    np.testing.assert_array_equal(B, A[np.ix_(ids, ids)])


def test_partition_examples():
    g = build_graph(np.zeros((0, 2), int), 12, np.zeros((12, 1)),
                    train_mask=np.arange(12) < 10)
    b = partition_targets(g, 3, 7)
    assert [len(x) for x in b] == [3, 3, 3, 1]
    assert sorted(np.concatenate(b).tolist()) == list(range(10))
    assert len(partition_targets(g, 50, 7)) == 1
    assert all(np.array_equal(x, y) for x, y in zip(b, partition_targets(g, 3, 7)))
    with pytest.raises(GraphError):
        partition_targets(g, 0, 7)
    with pytest.raises(GraphError):
        partition_targets(g, 3, 7, split="val")


def test_split_bundle_covers_train_once():
    g = generate(n=300, p_in=0.05, p_out=0.005, seed=1)
    b = sample_split(g, "train", [3, 3], 16, seed=5)
    counts = b.target_counts(g.n)
    np.testing.assert_array_equal(counts, g.train_mask.astype(int))
    assert b == sample_split(g, "train", [3, 3], 16, seed=5)
    assert b == sample_split(g, "train", [3, 3], 16, seed=5, workers=4)


def test_iid_p_one_is_full_graph():
    g = random_graph(20, 0.2, seed=2)
    for s in iid_node_sample(g, 1.0, 3, 0):
        np.testing.assert_array_equal(s.offsets, g.offsets)
        np.testing.assert_array_equal(s.targets, g.targets)
        assert s.n_targets == g.n


def test_iid_bad_p():
    g = random_graph(5, 0.5)
    for p in (0.0, 1.5, -0.1):
        with pytest.raises(GraphError):
            iid_node_sample(g, p, 1, 0)


def test_iid_inclusion_frequencies():
    # path 0-1-2: node inclusion ~ p, edge (0,1) ~ p^2, nodes 0 and 2 uncorrelated
    g = build_graph([(0, 1), (1, 2)], 3, np.zeros((3, 1)))
    p, T = 0.3, 10_000
    b = iid_node_sample(g, p, T, 11)
    node = np.array([[v in s.global_ids for v in range(3)] for s in b])
    edge = np.array([s.num_edges > 0 and {0, 1} <= set(s.global_ids.tolist()) for s in b])
    for v in range(3):
        se = np.sqrt(p * (1 - p) / T)
        assert abs(node[:, v].mean() - p) < 3 * se
    se = np.sqrt(p**2 * (1 - p**2) / T)
    assert abs(edge.mean() - p**2) < 3 * se
    corr = np.corrcoef(node[:, 0], node[:, 2])[0, 1]
    assert abs(corr) < 3 / np.sqrt(T)


def test_bundle_round_trip(tmp_path):
    g = generate(n=200, p_in=0.05, seed=3)
    b = sample_split(g, "val", [4, 2], 10, seed=2)
    save_bundle(b, tmp_path / "b.bin")
    c = load_bundle(tmp_path / "b.bin", g)
    assert c == b
    assert c.fanouts == (4, 2) and c.params == {"split": "val", "batch_size": 10}
    save_bundle(c, tmp_path / "c.bin")
    assert (tmp_path / "b.bin").read_bytes() == (tmp_path / "c.bin").read_bytes()


def test_bundle_header_layout(tmp_path):
    g = generate(n=100, p_in=0.05, seed=3)
    b = sample_split(g, "train", [2], 64, seed=0)
    save_bundle(b, tmp_path / "b.bin")
    raw = (tmp_path / "b.bin").read_bytes()
    assert raw[:5] == b"MUSB1" and raw[5:37] == g.digest
    assert int.from_bytes(raw[37:45], "little") == len(b)


def test_bundle_wrong_graph(tmp_path):
    g = generate(n=100, p_in=0.05, seed=3)
    save_bundle(sample_split(g, "train", [2], 20, seed=0), tmp_path / "b.bin")
    with pytest.raises(BundleError, match="digest"):
        load_bundle(tmp_path / "b.bin", generate(n=100, p_in=0.05, seed=4))


def test_bundle_truncated(tmp_path):
    g = generate(n=100, p_in=0.05, seed=3)
    save_bundle(sample_split(g, "train", [2], 20, seed=0), tmp_path / "b.bin")
    raw = (tmp_path / "b.bin").read_bytes()
    for cut in (10, 60, len(raw) - 1):
        (tmp_path / "t.bin").write_bytes(raw[:cut])
        with pytest.raises(BundleError):
            load_bundle(tmp_path / "t.bin")


def test_empty_subgraph_rejected_at_save(tmp_path):
    g = random_graph(30, 0.1)
    b = iid_node_sample(g, 0.01, 200, 0)
    assert any(s.n == 0 for s in b)
    with pytest.raises(BundleError):
        save_bundle(b, tmp_path / "b.bin")
