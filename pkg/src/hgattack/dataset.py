"""Node feature/label data: citation content files, synthetic clusters, splits."""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DuplicateError, EmptyInputError, FormatError, ParameterError


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    node_ids: tuple
    num_classes: int
    label_names: tuple = field(default=())

    def __post_init__(self):
        n = len(self.node_ids)
        if self.features.shape[0] != n or self.labels.shape[0] != n:
            raise FormatError(
                f"{self.features.shape[0]} feature rows and {self.labels.shape[0]} labels "
                f"for {n} node ids"
            )
        if len(set(self.node_ids)) != n:
            raise DuplicateError("node ids are not unique")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise FormatError(f"labels outside [0, {self.num_classes})")
        if n and len(np.unique(self.labels)) != self.num_classes:
            raise FormatError("some class has no nodes")

    @property
    def num_nodes(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def row_normalized(self):
        """Copy with each feature row scaled to sum to 1 (zero rows untouched)."""
        sums = self.features.sum(axis=1, keepdims=True)
        sums[sums == 0] = 1.0
        return Dataset(self.features / sums, self.labels, self.node_ids,
                       self.num_classes, self.label_names)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.node_ids == other.node_ids
                and self.num_classes == other.num_classes
                and self.label_names == other.label_names
                and np.array_equal(self.features, other.features)
                and np.array_equal(self.labels, other.labels))


def load_content_file(path):
    """Read a ``<id>\\t<f1>...\\t<fD>\\t<label>`` file (one node per line, no header).

    Labels become dense ids in order of first appearance; row order is file order.
    """
    path = Path(path)
    ids, rows, raw_labels = [], [], []
    seen = set()
    width = None
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) < 3:
                raise FormatError(f"expected id, features and label, got {len(parts)} fields", lineno)
            if width is None:
                width = len(parts)
            elif len(parts) != width:
                raise FormatError(f"ragged row: {len(parts)} fields, expected {width}", lineno)
            node_id = parts[0]
            if node_id in seen:
                raise DuplicateError(f"duplicate node id {node_id!r}", lineno)
            seen.add(node_id)
            try:
                rows.append([float(v) for v in parts[1:-1]])
            except ValueError as exc:
                raise FormatError(f"non-numeric feature: {exc}", lineno) from None
            ids.append(node_id)
            raw_labels.append(parts[-1])
    if not ids:
        raise EmptyInputError(f"{path} contains no nodes")

    mapping = {}
    for lab in raw_labels:
        mapping.setdefault(lab, len(mapping))
    labels = np.array([mapping[lab] for lab in raw_labels], dtype=np.int64)
    return Dataset(
        features=np.array(rows, dtype=np.float64),
        labels=labels,
        node_ids=tuple(ids),
        num_classes=len(mapping),
        label_names=tuple(mapping),
    )


def write_content_file(d, path):
    names = d.label_names or tuple(str(c) for c in range(d.num_classes))
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for node_id, row, lab in zip(d.node_ids, d.features, d.labels):
            feats = "\t".join(repr(float(v)) for v in row)
            fh.write(f"{node_id}\t{feats}\t{names[lab]}\n")


def class_centers(num_classes, dim):
    """Deterministic distinct cluster centers: class ``c`` sits on axis ``c % dim``
    at distance ``2 * (1 + c // dim)`` from the origin."""
    centers = np.zeros((num_classes, dim))
    for c in range(num_classes):
        centers[c, c % dim] = 2.0 * (1 + c // dim)
    return centers


def gen_synthetic(num_nodes, num_classes, dim, cluster_spread, seed):
    """Gaussian clusters around :func:`class_centers`; labels assigned round-robin."""
    if num_classes < 2 or num_nodes < num_classes:
        raise ParameterError(f"need num_nodes >= num_classes >= 2, got {num_nodes}, {num_classes}")
    if dim < 2:
        raise ParameterError(f"dim must be >= 2, got {dim}")
    if cluster_spread < 0:
        raise ParameterError(f"cluster_spread must be >= 0, got {cluster_spread}")
    rng = np.random.default_rng(seed)
    labels = np.arange(num_nodes, dtype=np.int64) % num_classes
    noise = rng.standard_normal((num_nodes, dim))
    features = class_centers(num_classes, dim)[labels] + cluster_spread * noise
    return Dataset(
        features=features,
        labels=labels,
        node_ids=tuple(f"n{i}" for i in range(num_nodes)),
        num_classes=num_classes,
        label_names=tuple(f"c{c}" for c in range(num_classes)),
    )


@dataclass(frozen=True)
class Split:
    train_idx: tuple
    val_idx: tuple
    test_idx: tuple
    seed: int

    def as_dict(self):
        return {"train": list(self.train_idx), "val": list(self.val_idx),
                "test": list(self.test_idx), "seed": self.seed}


def make_split(d, per_class_train=20, val_size=500, test_size=1000, seed=0):
    """Per-class train quota, then validation and test drawn from the remainder.

    ``test_size=None`` assigns every remaining node to the test set.
    """
    if per_class_train < 1 or val_size < 0 or (test_size is not None and test_size < 0):
        raise ParameterError("split sizes must be non-negative and per_class_train >= 1")
    rng = np.random.default_rng(seed)
    train = []
    for c in range(d.num_classes):
        members = np.flatnonzero(d.labels == c)
        if len(members) < per_class_train:
            raise ParameterError(
                f"class {c} has {len(members)} nodes, fewer than per_class_train={per_class_train}"
            )
        train.extend(rng.choice(members, size=per_class_train, replace=False).tolist())
    taken = np.zeros(d.num_nodes, dtype=bool)
    taken[train] = True
    rest = rng.permutation(np.flatnonzero(~taken))
    if test_size is None:
        test_size = len(rest) - val_size
    if val_size + test_size > len(rest) or test_size < 0:
        raise ParameterError(
            f"cannot take {val_size} validation and {test_size} test nodes "
            f"from {len(rest)} remaining"
        )
    val = rest[:val_size]
    test = rest[val_size:val_size + test_size]
    return Split(
        train_idx=tuple(sorted(train)),
        val_idx=tuple(sorted(val.tolist())),
        test_idx=tuple(sorted(test.tolist())),
        seed=seed,
    )
