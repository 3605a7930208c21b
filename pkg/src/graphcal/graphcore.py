"""Sparse undirected graphs in CSR form.

Construction (:func:`build_csr`), symmetric renormalization with self-loops
(:func:`normalize_sym`), synthetic homophilous graphs (:func:`generate_sbm`)
and the plain-text edge list format.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .seeding import TAG_SBM, substream


@dataclass(frozen=True)
class SparseGraph:
    """Symmetric CSR matrix; immutable and safe to share across threads.

    ``row_ptr`` has length ``num_nodes + 1``; row i's entries live in
    ``col_idx[row_ptr[i]:row_ptr[i+1]]`` (sorted by column) with matching
    ``values``.
    """

    num_nodes: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        for arr in (self.row_ptr, self.col_idx, self.values):
            arr.setflags(write=False)

    @property
    def nnz(self) -> int:
        return int(self.col_idx.shape[0])

    def row_indices(self) -> np.ndarray:
        """Per-entry row index (COO expansion of row_ptr)."""
        return np.repeat(
            np.arange(self.num_nodes, dtype=np.int64), np.diff(self.row_ptr)
        )

    def to_dense(self) -> np.ndarray:
        """Dense copy, intended for tests and tiny graphs only."""
        out = np.zeros((self.num_nodes, self.num_nodes), dtype=np.float64)
        out[self.row_indices(), self.col_idx] = self.values
        return out

    def transpose(self) -> "SparseGraph":
        """CSR of the transpose (equals self for every graph we build)."""
        rows = self.row_indices()
        return _from_coo(self.col_idx, rows, self.values.copy(), self.num_nodes)


def _from_coo(src, dst, vals, num_nodes):
    order = np.lexsort((dst, src))
    src, dst, vals = src[order], dst[order], vals[order]
    row_ptr = np.zeros(num_nodes + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=num_nodes), out=row_ptr[1:])
    return SparseGraph(num_nodes, row_ptr, dst.astype(np.int64), vals.astype(np.float64))


def build_csr(edges, num_nodes: int) -> SparseGraph:
    """Symmetric CSR with value 1.0 per edge.

    ``edges`` is any (E, 2) array-like of node id pairs. Both directions are
    stored, duplicates are merged and rows are sorted by column index.
    """
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if num_nodes < 0:
        raise InputError(f"num_nodes must be nonnegative, got {num_nodes}")
    if edges.size:
        lo, hi = int(edges.min()), int(edges.max())
        if lo < 0 or hi >= num_nodes:
            raise InputError(
                f"edge endpoint out of range [0, {num_nodes}): found {lo if lo < 0 else hi}"
            )
    src = np.concatenate([edges[:, 0], edges[:, 1]])
    dst = np.concatenate([edges[:, 1], edges[:, 0]])
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    if src.size:
        keep = np.ones(src.shape[0], dtype=bool)
        keep[1:] = (src[1:] != src[:-1]) | (dst[1:] != dst[:-1])
        src, dst = src[keep], dst[keep]
    row_ptr = np.zeros(num_nodes + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=num_nodes), out=row_ptr[1:])
    return SparseGraph(num_nodes, row_ptr, dst, np.ones(dst.shape[0], dtype=np.float64))


def normalize_sym(graph: SparseGraph) -> SparseGraph:
    """Symmetric renormalization with self-loops.

    Entry (i, j) of the result is 1/sqrt(d_i * d_j), where d counts each
    node's neighbors plus its own self-loop. Pre-existing self-loop entries
    are replaced (never doubled), so every node carries exactly one. Isolated
    nodes end up with a lone diagonal 1.
    """
    n = graph.num_nodes
    rows = graph.row_indices()
    off = rows != graph.col_idx
    src = np.concatenate([rows[off], np.arange(n, dtype=np.int64)])
    dst = np.concatenate([graph.col_idx[off], np.arange(n, dtype=np.int64)])
    deg = np.bincount(src, minlength=n).astype(np.float64)
    inv_sqrt = 1.0 / np.sqrt(deg)
    vals = inv_sqrt[src] * inv_sqrt[dst]
    return _from_coo(src, dst, vals, n)


def generate_sbm(
    num_nodes: int,
    num_classes: int,
    p_in: float,
    p_out: float,
    feature_dim: int,
    feature_noise: float,
    seed: int,
    labels_per_class: int = 10,
    val_size: int = 200,
    test_size: int = 500,
):
    """Stochastic block model dataset with class-centroid features.

    Node i gets label ``i % num_classes``; each unordered pair is connected
    with probability ``p_in`` (same class) or ``p_out``. Features are the
    one-hot centroid of the class (index ``label % feature_dim``) plus
    i.i.d. Gaussian noise of scale ``feature_noise``. Masks come from
    :func:`graphcal.datasets.make_split` with the same seed. Deterministic,
    bitwise, for a fixed seed.
    """
    from .datasets import LabeledDataset, make_split

    if num_classes < 1 or num_classes > num_nodes:
        raise InputError(
            f"num_classes must be in [1, num_nodes]: got {num_classes} for {num_nodes} nodes"
        )
    if feature_dim < 1:
        raise InputError(f"feature_dim must be positive, got {feature_dim}")
    for name, p in (("p_in", p_in), ("p_out", p_out)):
        if not 0.0 <= p <= 1.0:
            raise InputError(f"{name} must lie in [0, 1], got {p}")

    rng = substream(seed, TAG_SBM)
    labels = np.arange(num_nodes, dtype=np.int64) % num_classes

    iu, ju = np.triu_indices(num_nodes, k=1)
    probs = np.where(labels[iu] == labels[ju], p_in, p_out)
    picked = rng.random(iu.shape[0]) < probs
    edges = np.stack([iu[picked], ju[picked]], axis=1)
    graph = build_csr(edges, num_nodes)

    centroids = np.zeros((num_classes, feature_dim), dtype=np.float64)
    centroids[np.arange(num_classes), np.arange(num_classes) % feature_dim] = 1.0
    features = centroids[labels].copy()
    if feature_noise != 0.0:
        features += feature_noise * rng.standard_normal((num_nodes, feature_dim))

    train, val, test = make_split(labels, labels_per_class, val_size, test_size, seed)
    return LabeledDataset(
        graph=graph,
        features=features,
        labels=labels,
        train_mask=train,
        val_mask=val,
        test_mask=test,
        num_classes=num_classes,
    )


def read_edge_list(path) -> np.ndarray:
    """Parse the edge list format: two node ids per line, '#' comments."""
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            parts = text.split()
            if len(parts) != 2:
                raise InputError(f"{path}:{lineno}: expected two node ids, got {text!r}")
            try:
                pairs.append((int(parts[0]), int(parts[1])))
            except ValueError:
                raise InputError(f"{path}:{lineno}: node ids must be integers, got {text!r}")
    return np.asarray(pairs, dtype=np.int64).reshape(-1, 2)


def write_edge_list(path, graph: SparseGraph) -> None:
    """Write each undirected edge once (i <= j), one pair per line."""
    rows = graph.row_indices()
    keep = rows <= graph.col_idx
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# source target\n")
        for i, j in zip(rows[keep], graph.col_idx[keep]):
            fh.write(f"{i} {j}\n")
