import numpy as np
import pytest

from graphcal import graphcore


@pytest.fixture
def path_graph():
    """0 - 1 - 2 path."""
    return graphcore.build_csr([(0, 1), (1, 2)], 3)


@pytest.fixture
def identity_graph():
    """CSR identity matrix on 4 nodes (already 'normalized')."""
    n = 4
    return graphcore.SparseGraph(
        num_nodes=n,
        row_ptr=np.arange(n + 1, dtype=np.int64),
        col_idx=np.arange(n, dtype=np.int64),
        values=np.ones(n),
    )


@pytest.fixture
def tiny_sbm():
    """Small separable block-model dataset used across modules."""
    return graphcore.generate_sbm(
        num_nodes=60, num_classes=3, p_in=0.6, p_out=0.02,
        feature_dim=8, feature_noise=0.2, seed=5,
        labels_per_class=5, val_size=15, test_size=20,
    )


def random_graph(rng, max_nodes=40, max_edges=120):
    n = int(rng.integers(1, max_nodes))
    e = int(rng.integers(0, max_edges))
    edges = rng.integers(0, n, size=(e, 2))
    return graphcore.build_csr(edges, n)
