import numpy as np
import pytest

from musegnn.graph import build_graph


def random_graph(n, edge_p, d=3, seed=0, train=True):
    rng = np.random.default_rng(seed)
    iu = np.triu_indices(n, 1)
    keep = rng.random(len(iu[0])) < edge_p
    X = rng.normal(size=(n, d))
    mask = np.ones(n, bool) if train else None
    return build_graph(np.stack([iu[0][keep], iu[1][keep]], axis=1), n, X, train_mask=mask)


def path2(features=((1.0,), (0.0,))):
    return build_graph([(0, 1)], 2, np.array(features, dtype=float))


def dense_L(g):
    A = np.zeros((g.n, g.n))
    for i in range(g.n):
        A[i, g.neighbors(i)] = 1.0
    return np.diag(A.sum(1)) - A


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
