"""Sparse CSR kernels: numba-jitted fast path with a pure-numpy fallback.

The backend is picked once at import time. Setting the environment variable
``GRAPHCAL_KERNELS=numpy`` forces the fallback even when numba is installed;
``GRAPHCAL_KERNELS=numba`` insists on numba and raises if it is missing.

Both paths accumulate each output cell over edges in the same order
(ascending edge index within a row), so they produce bitwise-identical
results; the test suite asserts this. ``benchmarks/bench_kernels.py``
compares their speed.
"""

import os

import numpy as np

_requested = os.environ.get("GRAPHCAL_KERNELS", "auto").strip().lower()
if _requested not in ("auto", "numba", "numpy", ""):
    raise RuntimeError(
        f"GRAPHCAL_KERNELS must be 'numba', 'numpy' or unset, got {_requested!r}"
    )

try:
    if _requested == "numpy":
        raise ImportError("numpy backend forced via GRAPHCAL_KERNELS")
    from numba import njit

    HAS_NUMBA = True
except ImportError:
    if _requested == "numba":
        raise RuntimeError("GRAPHCAL_KERNELS=numba but numba is not importable")
    HAS_NUMBA = False

BACKEND = "numba" if HAS_NUMBA else "numpy"


def spmm_numpy(row_ptr, col_idx, values, dense):
    """CSR times dense, pure numpy.

    np.bincount adds weights sequentially in edge order, which keeps the
    result deterministic and equal to the jitted kernel bit for bit.
    """
    n = row_ptr.shape[0] - 1
    m = dense.shape[1]
    rows = np.repeat(np.arange(n, dtype=np.int64), np.diff(row_ptr))
    out = np.empty((n, m), dtype=np.float64)
    for c in range(m):
        out[:, c] = np.bincount(rows, weights=values * dense[col_idx, c], minlength=n)
    return out


if HAS_NUMBA:

    @njit(cache=True)
    def _spmm_csr_jit(row_ptr, col_idx, values, dense, out):  # pragma: no cover - jitted
        n = row_ptr.shape[0] - 1
        m = dense.shape[1]
        for i in range(n):
            for e in range(row_ptr[i], row_ptr[i + 1]):
                j = col_idx[e]
                v = values[e]
                for c in range(m):
                    out[i, c] += v * dense[j, c]

    def spmm_numba(row_ptr, col_idx, values, dense):
        """CSR times dense via the jitted kernel."""
        out = np.zeros((row_ptr.shape[0] - 1, dense.shape[1]), dtype=np.float64)
        _spmm_csr_jit(row_ptr, col_idx, values, dense, out)
        return out

    _spmm_impl = spmm_numba
else:
    spmm_numba = None
    _spmm_impl = spmm_numpy


def spmm_csr(row_ptr, col_idx, values, dense):
    """Sparse CSR matrix times dense matrix on the active backend."""
    dense = np.ascontiguousarray(dense, dtype=np.float64)
    return _spmm_impl(row_ptr, col_idx, values, dense)
