"""Independent brute-force reference implementations used by the tests.

These deliberately avoid the library's code paths: explicit Python loops,
dense matrices, direct-from-definition formulas. Scalar accumulation uses
math.fsum, which is correctly rounded and therefore order-independent, so
agreement with the library can be checked exactly.
"""

import math
from math import fsum

import numpy as np


def ece_bruteforce(confidence, correct, num_bins):
    """Per-bin scan straight from the definition: bins (lo, hi], 0 in bin 1."""
    n = len(confidence)
    total = []
    for m in range(1, num_bins + 1):
        lo = (m - 1) / num_bins
        hi = m / num_bins
        conf_sum = 0.0
        acc_sum = 0.0
        count = 0
        member_conf = []
        member_acc = []
        for p, c in zip(confidence, correct):
            inside = (lo < p <= hi) or (m == 1 and p == 0.0)
            if inside:
                count += 1
                member_conf.append(float(p))
                member_acc.append(1.0 if c else 0.0)
        if count:
            conf_mean = fsum(member_conf) / count
            acc_mean = fsum(member_acc) / count
            total.append((count / n) * abs(acc_mean - conf_mean))
    return fsum(total)


def brier_bruteforce(probs, labels):
    n, k = probs.shape
    terms = []
    for i in range(n):
        row = []
        for j in range(k):
            y = 1.0 if j == labels[i] else 0.0
            d = probs[i, j] - y
            row.append(d * d)
        terms.append(fsum(row))
    return fsum(terms) / n


def total_variation_bruteforce(graph, confidence):
    dense = graph.to_dense()
    n = graph.num_nodes
    terms = []
    for i in range(n):
        for j in range(i + 1, n):
            if dense[i, j] != 0.0:
                terms.append(abs(confidence[i] - confidence[j]))
    return fsum(terms)


def dense_gcn_logits(ahat_dense, x, w1, w2):
    """Straightforward dense evaluation of the two-layer forward pass."""
    h = np.maximum(ahat_dense @ (x @ w1), 0.0)
    return ahat_dense @ (h @ w2)


def dense_cagcn_temperatures(ahat_dense, logits, w1, w2):
    h = np.maximum(ahat_dense @ (logits @ w1), 0.0)
    raw = (ahat_dense @ (h @ w2))[:, 0]
    return np.log1p(np.exp(-np.abs(raw))) + np.maximum(raw, 0.0)


def finite_difference_grads(objective, arrays, step=1e-5):
    """Central finite differences of a scalar objective over numpy arrays."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + step
            hi = objective()
            arr[idx] = orig - step
            lo = objective()
            arr[idx] = orig
            g[idx] = (hi - lo) / (2.0 * step)
            it.iternext()
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric, floor=1e-12):
    """Largest entrywise deviation relative to each gradient block's scale.

    Central differences at step 1e-5 in double precision carry absolute
    noise around 1e-9 (cancellation of two O(1) objective values), so
    entries far below the block's magnitude cannot be resolved entry by
    entry; deviations are measured against the infinity norm instead.
    """
    worst = 0.0
    for a, b in zip(analytic, numeric):
        scale = max(float(np.abs(a).max()), float(np.abs(b).max()), floor)
        worst = max(worst, float(np.abs(a - b).max() / scale))
    return worst
