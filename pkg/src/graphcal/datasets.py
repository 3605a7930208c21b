"""Dataset container, plain-text ingestion and split construction.

Directory layout for :func:`load_dataset` / :func:`save_dataset`:

    edges.txt     two whitespace-separated node ids per line ('#' comments)
    features.csv  node_id followed by the feature values, comma-separated
    labels.csv    node_id,class_id
    masks.csv     node_id,split with split in {train,val,test}  (optional)

All files are UTF-8; lines starting with '#' are ignored. Floats are written
with repr so a save/load round trip is bit-exact.
"""

import os
from dataclasses import dataclass, replace

import numpy as np

from . import graphcore
from .errors import InputError
from .seeding import TAG_SPLIT, substream


@dataclass
class LabeledDataset:
    """Graph, features, integer labels and the three evaluation masks.

    The graph is stored raw (no self-loops, no normalization); training code
    renormalizes on demand. Masks are boolean arrays over nodes and must be
    pairwise disjoint; nodes outside all three masks form the unlabeled pool
    used by self-training.
    """

    graph: graphcore.SparseGraph
    features: np.ndarray
    labels: np.ndarray
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray
    num_classes: int

    @property
    def num_nodes(self) -> int:
        return self.graph.num_nodes

    @property
    def feature_dim(self) -> int:
        return int(self.features.shape[1])

    def unlabeled_pool(self) -> np.ndarray:
        return ~(self.train_mask | self.val_mask | self.test_mask)

    def validate(self) -> None:
        n = self.num_nodes
        if self.features.shape[0] != n or self.labels.shape[0] != n:
            raise InputError(
                f"inconsistent node count: graph has {n}, features {self.features.shape[0]}, "
                f"labels {self.labels.shape[0]}"
            )
        for name, mask in (
            ("train_mask", self.train_mask),
            ("val_mask", self.val_mask),
            ("test_mask", self.test_mask),
        ):
            if mask.shape[0] != n or mask.dtype != np.bool_:
                raise InputError(f"{name} must be a boolean array of length {n}")
        overlap = (
            (self.train_mask & self.val_mask)
            | (self.train_mask & self.test_mask)
            | (self.val_mask & self.test_mask)
        )
        if overlap.any():
            raise InputError(f"masks overlap at node {int(np.flatnonzero(overlap)[0])}")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise InputError(
                f"labels must lie in [0, {self.num_classes}), "
                f"found range [{self.labels.min()}, {self.labels.max()}]"
            )

    def with_training(self, train_mask, labels) -> "LabeledDataset":
        """Copy with a different training mask / label array (self-training)."""
        return replace(self, train_mask=train_mask, labels=labels)


def make_split(labels, labels_per_class: int, val_size: int, test_size: int, seed: int):
    """Seeded per-class split: (train, val, test) boolean masks.

    Nodes are visited in one seeded shuffle; the first ``labels_per_class``
    of each class become training nodes, then the next ``val_size`` remaining
    nodes (any class) validation and the ``test_size`` after that test.
    """
    labels = np.asarray(labels)
    n = labels.shape[0]
    num_classes = int(labels.max()) + 1 if n else 0
    counts = np.bincount(labels, minlength=num_classes)
    if (counts < labels_per_class).any():
        short = int(np.argmin(counts))
        raise InputError(
            f"class {short} has only {int(counts[short])} nodes, "
            f"need {labels_per_class} for the training split"
        )
    if n - num_classes * labels_per_class < val_size + test_size:
        raise InputError(
            f"not enough nodes for val_size={val_size} + test_size={test_size} "
            f"after {num_classes * labels_per_class} training nodes (total {n})"
        )
    order = substream(seed, TAG_SPLIT).permutation(n)
    train = np.zeros(n, dtype=bool)
    taken = np.zeros(num_classes, dtype=np.int64)
    rest = []
    for node in order:
        c = labels[node]
        if taken[c] < labels_per_class:
            taken[c] += 1
            train[node] = True
        else:
            rest.append(node)
    rest = np.asarray(rest, dtype=np.int64)
    val = np.zeros(n, dtype=bool)
    test = np.zeros(n, dtype=bool)
    val[rest[:val_size]] = True
    test[rest[val_size : val_size + test_size]] = True
    return train, val, test


def row_normalize(features: np.ndarray) -> np.ndarray:
    """Divide each row by its L1 norm; zero rows are left alone."""
    norms = np.abs(features).sum(axis=1, keepdims=True)
    safe = np.where(norms == 0.0, 1.0, norms)
    return features / safe


def _data_lines(path):
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            yield lineno, text


def _split_fields(text):
    return text.replace(",", " ").split()


def load_dataset(
    directory,
    row_normalize_features: bool = True,
    labels_per_class: int = 20,
    val_size: int = 500,
    test_size: int = 1000,
    split_seed: int = 0,
) -> LabeledDataset:
    """Load a dataset directory; build masks when masks.csv is absent."""
    directory = os.fspath(directory)
    for name in ("edges.txt", "features.csv", "labels.csv"):
        if not os.path.exists(os.path.join(directory, name)):
            raise InputError(f"{os.path.join(directory, name)}: missing required file")

    feat_path = os.path.join(directory, "features.csv")
    rows = {}
    width = None
    for lineno, text in _data_lines(feat_path):
        parts = _split_fields(text)
        try:
            node = int(parts[0])
            vec = [float(v) for v in parts[1:]]
        except (ValueError, IndexError):
            raise InputError(f"{feat_path}:{lineno}: malformed feature row {text!r}")
        if width is None:
            width = len(vec)
        elif len(vec) != width:
            raise InputError(
                f"{feat_path}:{lineno}: expected {width} features, got {len(vec)}"
            )
        if node in rows:
            raise InputError(f"{feat_path}:{lineno}: duplicate node id {node}")
        rows[node] = vec
    if not rows:
        raise InputError(f"{feat_path}: no feature rows found")
    n = max(rows) + 1
    if sorted(rows) != list(range(n)):
        missing = next(i for i in range(n) if i not in rows)
        raise InputError(f"{feat_path}: node ids must cover 0..{n - 1}; missing {missing}")
    features = np.asarray([rows[i] for i in range(n)], dtype=np.float64)

    label_path = os.path.join(directory, "labels.csv")
    labels = np.full(n, -1, dtype=np.int64)
    for lineno, text in _data_lines(label_path):
        parts = _split_fields(text)
        try:
            node, cls = int(parts[0]), int(parts[1])
        except (ValueError, IndexError):
            raise InputError(f"{label_path}:{lineno}: malformed label row {text!r}")
        if not 0 <= node < n:
            raise InputError(f"{label_path}:{lineno}: node id {node} out of range [0, {n})")
        if cls < 0:
            raise InputError(f"{label_path}:{lineno}: unknown class id {cls}")
        labels[node] = cls
    if (labels < 0).any():
        raise InputError(
            f"{label_path}: node {int(np.flatnonzero(labels < 0)[0])} has no label"
        )
    num_classes = int(labels.max()) + 1

    edge_path = os.path.join(directory, "edges.txt")
    edges = graphcore.read_edge_list(edge_path)
    if edges.size and edges.max() >= n:
        raise InputError(
            f"{edge_path}: node id {int(edges.max())} exceeds feature table size {n}"
        )
    graph = graphcore.build_csr(edges, n)

    mask_path = os.path.join(directory, "masks.csv")
    if os.path.exists(mask_path):
        names = {"train": 0, "val": 1, "test": 2}
        masks = np.zeros((3, n), dtype=bool)
        for lineno, text in _data_lines(mask_path):
            parts = _split_fields(text)
            if len(parts) != 2 or parts[1] not in names:
                raise InputError(
                    f"{mask_path}:{lineno}: expected 'node_id,train|val|test', got {text!r}"
                )
            node = int(parts[0])
            if not 0 <= node < n:
                raise InputError(f"{mask_path}:{lineno}: node id {node} out of range")
            masks[names[parts[1]], node] = True
        train, val, test = masks
    else:
        train, val, test = make_split(labels, labels_per_class, val_size, test_size, split_seed)

    if row_normalize_features:
        features = row_normalize(features)

    ds = LabeledDataset(
        graph=graph,
        features=features,
        labels=labels,
        train_mask=train,
        val_mask=val,
        test_mask=test,
        num_classes=num_classes,
    )
    ds.validate()
    return ds


def save_dataset(directory, ds: LabeledDataset) -> None:
    """Write a dataset in the loader's format; reloadable bit-exactly."""
    directory = os.fspath(directory)
    os.makedirs(directory, exist_ok=True)
    graphcore.write_edge_list(os.path.join(directory, "edges.txt"), ds.graph)
    with open(os.path.join(directory, "features.csv"), "w", encoding="utf-8") as fh:
        fh.write("# node_id,f0..f{d-1}\n")
        for i in range(ds.num_nodes):
            vals = ",".join(repr(float(v)) for v in ds.features[i])
            fh.write(f"{i},{vals}\n")
    with open(os.path.join(directory, "labels.csv"), "w", encoding="utf-8") as fh:
        fh.write("# node_id,class_id\n")
        for i, c in enumerate(ds.labels):
            fh.write(f"{i},{int(c)}\n")
    with open(os.path.join(directory, "masks.csv"), "w", encoding="utf-8") as fh:
        fh.write("# node_id,split\n")
        for name, mask in (("train", ds.train_mask), ("val", ds.val_mask), ("test", ds.test_mask)):
            for i in np.flatnonzero(mask):
                fh.write(f"{int(i)},{name}\n")
