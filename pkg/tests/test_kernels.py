"""Backend equivalence for the sparse-dense kernels."""

import numpy as np
import pytest

from graphcal import _kernels, graphcore
from graphcal.nn import spmm
from graphcal.errors import InputError

from conftest import random_graph


def test_backend_reported():
    assert _kernels.BACKEND in ("numba", "numpy")


def test_identity_times_dense(identity_graph):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((4, 3))
    assert np.array_equal(spmm(identity_graph, x), x)


def test_hand_product():
    g = graphcore.SparseGraph(
        num_nodes=2,
        row_ptr=np.array([0, 2, 4], dtype=np.int64),
        col_idx=np.array([0, 1, 0, 1], dtype=np.int64),
        values=np.array([0.5, 0.5, 0.5, 0.5]),
    )
    out = spmm(g, np.array([[2.0], [0.0]]))
    assert np.array_equal(out, [[1.0], [1.0]])


def test_zero_dense_gives_zero(path_graph):
    out = spmm(graphcore.normalize_sym(path_graph), np.zeros((3, 4)))
    assert np.array_equal(out, np.zeros((3, 4)))


def test_shape_mismatch_rejected(path_graph):
    with pytest.raises(InputError):
        spmm(path_graph, np.zeros((4, 2)))


def test_matches_dense_reference():
    rng = np.random.default_rng(21)
    for _ in range(20):
        g = graphcore.normalize_sym(random_graph(rng))
        x = rng.standard_normal((g.num_nodes, int(rng.integers(1, 9))))
        ref = g.to_dense() @ x
        assert np.allclose(spmm(g, x), ref, rtol=1e-12, atol=1e-12)


@pytest.mark.skipif(not _kernels.HAS_NUMBA, reason="numba unavailable")
def test_numba_and_numpy_paths_bitwise_equal():
    rng = np.random.default_rng(31)
    for _ in range(25):
        g = graphcore.normalize_sym(random_graph(rng))
        for width in (1, 4, 19):
            x = np.ascontiguousarray(rng.standard_normal((g.num_nodes, width)))
            a = _kernels.spmm_numba(g.row_ptr, g.col_idx, g.values, x)
            b = _kernels.spmm_numpy(g.row_ptr, g.col_idx, g.values, x)
            assert np.array_equal(a, b)


def test_empty_graph_rows():
    g = graphcore.build_csr(np.empty((0, 2), dtype=np.int64), 3)
    out = spmm(g, np.ones((3, 2)))
    assert np.array_equal(out, np.zeros((3, 2)))
