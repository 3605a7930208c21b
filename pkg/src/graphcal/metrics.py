"""Calibration and accuracy metrics.

Binning convention for everything confidence-based: M equal-width bins over
[0, 1], half-open (lo, hi] with the first bin closed at 0, so a confidence
of exactly m/M lands in bin m and 1.0 lands in the top bin.

Scalar accumulations use math.fsum (correctly rounded), so results do not
depend on summation order and match brute-force reimplementations bit for
bit.
"""

import json
from dataclasses import dataclass
from math import fsum

import numpy as np

from .errors import InputError
from .graphcore import SparseGraph

LOG_CLAMP = 1e-12


def bin_edges(num_bins: int) -> np.ndarray:
    return np.arange(num_bins + 1) / num_bins


def bin_index(confidence, num_bins: int) -> np.ndarray:
    """1-based bin assignment under the (lo, hi] convention."""
    confidence = np.asarray(confidence, dtype=np.float64)
    idx = np.searchsorted(bin_edges(num_bins), confidence, side="left")
    return np.maximum(idx, 1)


def _check_confidence(confidence, correct, num_bins):
    confidence = np.asarray(confidence, dtype=np.float64)
    correct = np.asarray(correct, dtype=bool)
    if num_bins < 1:
        raise InputError(f"number of bins must be positive, got {num_bins}")
    if confidence.size == 0:
        raise InputError("confidence array is empty")
    if confidence.shape != correct.shape:
        raise InputError(
            f"confidence and correctness lengths differ: {confidence.shape} vs {correct.shape}"
        )
    if confidence.min() < 0.0 or confidence.max() > 1.0:
        raise InputError("confidence values must lie in [0, 1]")
    return confidence, correct


def ece(confidence, correct, num_bins: int) -> float:
    """Expected calibration error: bin-weighted |accuracy - confidence| gap."""
    confidence, correct = _check_confidence(confidence, correct, num_bins)
    n = confidence.shape[0]
    idx = bin_index(confidence, num_bins)
    terms = []
    for m in range(1, num_bins + 1):
        members = idx == m
        count = int(members.sum())
        if count == 0:
            continue
        conf_m = fsum(confidence[members]) / count
        acc_m = fsum(correct[members].astype(np.float64)) / count
        terms.append((count / n) * abs(acc_m - conf_m))
    return fsum(terms)


def brier(probs, labels) -> float:
    """Mean squared distance between probability rows and one-hot labels."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = probs.shape[0]
    diff = probs.copy()
    diff[np.arange(n), labels] -= 1.0
    sq = diff * diff
    return fsum(fsum(row) for row in sq) / n


def total_variation(graph: SparseGraph, confidence) -> float:
    """Sum of |confidence_i - confidence_j| over undirected edges.

    Each edge counts once (i < j); self-loops are ignored. Computed on the
    raw adjacency, not the renormalized one.
    """
    confidence = np.asarray(confidence, dtype=np.float64)
    if confidence.shape[0] != graph.num_nodes:
        raise InputError(
            f"confidence length {confidence.shape[0]} != num_nodes {graph.num_nodes}"
        )
    rows = graph.row_indices()
    keep = rows < graph.col_idx
    return fsum(np.abs(confidence[rows[keep]] - confidence[graph.col_idx[keep]]))


def mean_nll(probs, labels) -> float:
    """Per-node average negative log likelihood, clamped at 1e-12."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    picked = np.maximum(probs[np.arange(probs.shape[0]), labels], LOG_CLAMP)
    return fsum(-np.log(picked)) / probs.shape[0]


@dataclass
class ReliabilityReport:
    """Per-bin reliability data plus the scalar metrics of the same inputs."""

    num_bins: int
    bin_edges: np.ndarray
    bin_count: np.ndarray
    bin_conf: np.ndarray
    bin_acc: np.ndarray
    ece: float
    nll: float
    brier: float
    accuracy: float


def reliability_report(probs, labels, num_bins: int) -> ReliabilityReport:
    """Bin statistics and scalar metrics for one prediction set.

    The stored ece field is computed by :func:`ece` on the same confidence
    and correctness arrays, so the two always agree exactly.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    confidence = probs.max(axis=1)
    correct = probs.argmax(axis=1) == labels
    confidence_checked, correct_checked = _check_confidence(confidence, correct, num_bins)

    idx = bin_index(confidence_checked, num_bins)
    counts = np.zeros(num_bins, dtype=np.int64)
    conf_means = np.zeros(num_bins)
    acc_means = np.zeros(num_bins)
    for m in range(1, num_bins + 1):
        members = idx == m
        c = int(members.sum())
        counts[m - 1] = c
        if c:
            conf_means[m - 1] = fsum(confidence_checked[members]) / c
            acc_means[m - 1] = fsum(correct_checked[members].astype(np.float64)) / c
    return ReliabilityReport(
        num_bins=num_bins,
        bin_edges=bin_edges(num_bins),
        bin_count=counts,
        bin_conf=conf_means,
        bin_acc=acc_means,
        ece=ece(confidence_checked, correct_checked, num_bins),
        nll=mean_nll(probs, labels),
        brier=brier(probs, labels),
        accuracy=fsum(correct_checked.astype(np.float64)) / probs.shape[0],
    )


def confidence_histogram(confidence, correct, num_bins: int):
    """Counts of correct / incorrect predictions per confidence bin."""
    confidence, correct = _check_confidence(confidence, correct, num_bins)
    idx = bin_index(confidence, num_bins) - 1
    hits = np.bincount(idx[correct], minlength=num_bins)
    misses = np.bincount(idx[~correct], minlength=num_bins)
    return hits, misses


def write_reliability_csv(path, report: ReliabilityReport) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("bin,lo,hi,count,mean_confidence,mean_accuracy\n")
        for m in range(report.num_bins):
            fh.write(
                f"{m + 1},{report.bin_edges[m]!r},{report.bin_edges[m + 1]!r},"
                f"{int(report.bin_count[m])},{report.bin_conf[m]!r},{report.bin_acc[m]!r}\n"
            )


def write_histogram_csv(path, edges, hits, misses) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("bin,lo,hi,correct,incorrect\n")
        for m in range(len(hits)):
            fh.write(f"{m + 1},{edges[m]!r},{edges[m + 1]!r},{int(hits[m])},{int(misses[m])}\n")


def write_metrics(path_prefix, values: dict) -> None:
    """Flat key-value text block plus a JSON twin."""
    with open(f"{path_prefix}.txt", "w", encoding="utf-8") as fh:
        for key in sorted(values):
            fh.write(f"{key} = {values[key]!r}\n")
    with open(f"{path_prefix}.json", "w", encoding="utf-8") as fh:
        json.dump(values, fh, sort_keys=True, indent=2)
        fh.write("\n")
