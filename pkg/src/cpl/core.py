"""Shared domain types: datasets, episodes, hyperparameters and errors."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

SPLITS = ("train", "test_seen", "test_unseen")
TRAIN, TEST_SEEN, TEST_UNSEEN = range(3)


class CPLError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(CPLError, ValueError):
    pass


class ConfigError(CPLError, ValueError):
    pass


class DatasetError(CPLError, ValueError):
    def __init__(self, message, violations=()):
        super().__init__(message)
        self.violations = list(violations)


class FormatError(CPLError):
    """A file could not be parsed. Carries the path and byte offset when known."""

    def __init__(self, message, path=None, offset=None):
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"offset {offset}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.path = path
        self.offset = offset


class CheckpointError(FormatError):
    pass


class NumericError(CPLError, ArithmeticError):
    pass


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Precomputed features with labels, class attributes and split tags.

    ``features`` keep their on-disk float32 precision; use
    :meth:`features64` for training math. ``split`` holds integer codes
    indexing :data:`SPLITS`.
    """

    features: np.ndarray
    labels: np.ndarray
    attributes: np.ndarray
    seen_classes: tuple
    unseen_classes: tuple
    split: np.ndarray
    class_names: tuple = ()

    def __post_init__(self):
        feats = np.asarray(self.features)
        if feats.ndim != 2:
            raise ShapeError(f"features must be 2-d, got shape {feats.shape}")
        attrs = np.asarray(self.attributes)
        if attrs.ndim != 2:
            raise ShapeError(f"attributes must be 2-d, got shape {attrs.shape}")
        object.__setattr__(self, "features", _frozen(feats, np.float32))
        object.__setattr__(self, "labels", _frozen(np.asarray(self.labels).reshape(-1), np.int64))
        object.__setattr__(self, "attributes", _frozen(attrs, np.float64))
        object.__setattr__(self, "split", _frozen(np.asarray(self.split).reshape(-1), np.int8))
        object.__setattr__(self, "seen_classes", tuple(int(c) for c in self.seen_classes))
        object.__setattr__(self, "unseen_classes", tuple(int(c) for c in self.unseen_classes))
        names = tuple(str(n) for n in self.class_names)
        if not names:
            names = tuple(f"class_{k}" for k in range(attrs.shape[0]))
        object.__setattr__(self, "class_names", names)
        n = feats.shape[0]
        if self.labels.shape[0] != n or self.split.shape[0] != n:
            raise ShapeError(
                f"{n} feature rows but {self.labels.shape[0]} labels and {self.split.shape[0]} split tags"
            )
        if len(self.class_names) != attrs.shape[0]:
            raise ShapeError(f"{len(self.class_names)} class names for {attrs.shape[0]} attribute rows")

    @property
    def n_samples(self):
        return self.features.shape[0]

    @property
    def d_feat(self):
        return self.features.shape[1]

    @property
    def n_classes(self):
        return self.attributes.shape[0]

    @property
    def d_attr(self):
        return self.attributes.shape[1]

    def features64(self, idx=None):
        f = self.features if idx is None else self.features[idx]
        return f.astype(np.float64)

    def indices(self, split):
        code = SPLITS.index(split) if isinstance(split, str) else split
        return np.flatnonzero(self.split == code)

    def train_indices_by_class(self):
        """Map every seen class to the (sorted) indices of its train samples."""
        tr = self.indices(TRAIN)
        out = {c: [] for c in self.seen_classes}
        for i in tr:
            out.setdefault(int(self.labels[i]), []).append(int(i))
        return {c: np.asarray(v, dtype=np.int64) for c, v in out.items()}

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.seen_classes == other.seen_classes
            and self.unseen_classes == other.unseen_classes
            and self.class_names == other.class_names
            and self.features.shape == other.features.shape
            and self.features.tobytes() == other.features.tobytes()
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.split, other.split)
            and self.attributes.shape == other.attributes.shape
            and self.attributes.tobytes() == other.attributes.tobytes()
        )

    __hash__ = None


def normalize_attributes(ds):
    """Return a copy of ``ds`` whose attribute rows have unit L2 norm (zero rows untouched)."""
    norms = np.linalg.norm(ds.attributes, axis=1, keepdims=True)
    attrs = ds.attributes / np.where(norms > 0, norms, 1.0)
    return replace(ds, attributes=attrs)


def validate_dataset(ds):
    """List every violated dataset invariant; an empty list means valid."""
    problems = []
    n_classes = ds.n_classes
    seen, unseen = set(ds.seen_classes), set(ds.unseen_classes)

    for name, ids in (("seen", ds.seen_classes), ("unseen", ds.unseen_classes)):
        if len(set(ids)) != len(ids):
            problems.append(f"duplicate class ids in {name}_classes")
        for c in ids:
            if not 0 <= c < n_classes:
                problems.append(f"{name} class {c} outside [0, {n_classes})")
    for c in sorted(seen & unseen):
        problems.append(f"class {c} is both seen and unseen")
    if not seen:
        problems.append("no seen classes (K must be > 0)")
    if not unseen:
        problems.append("no unseen classes (L must be > 0)")

    if not np.all(np.isfinite(ds.features)):
        problems.append("features contain non-finite values")
    if not np.all(np.isfinite(ds.attributes)):
        problems.append("attributes contain non-finite values")

    for i, (y, s) in enumerate(zip(ds.labels.tolist(), ds.split.tolist())):
        if not 0 <= s < len(SPLITS):
            problems.append(f"sample {i} has unknown split code {s}")
            continue
        if not 0 <= y < n_classes:
            problems.append(f"sample {i} label {y} outside [0, {n_classes})")
        elif s in (TRAIN, TEST_SEEN) and y not in seen:
            problems.append(f"sample {i} ({SPLITS[s]}) has label {y} which is not a seen class")
        elif s == TEST_UNSEEN and y not in unseen:
            problems.append(f"sample {i} (test_unseen) has label {y} which is not an unseen class")
    return problems


@dataclass(frozen=True, eq=False)
class Episode:
    """One sampled task: ``C`` classes and their support samples.

    ``support_indices`` index into the dataset; ``support_labels`` are
    episode-local positions into ``class_ids``.
    """

    class_ids: tuple
    support_indices: np.ndarray
    support_labels: np.ndarray
    support_features: np.ndarray
    attribute_rows: np.ndarray

    @property
    def n_classes(self):
        return len(self.class_ids)

    def __eq__(self, other):
        if not isinstance(other, Episode):
            return NotImplemented
        return (
            self.class_ids == other.class_ids
            and np.array_equal(self.support_indices, other.support_indices)
            and np.array_equal(self.support_labels, other.support_labels)
        )

    __hash__ = None


def make_episode(ds, class_ids, support_indices):
    class_ids = tuple(int(c) for c in class_ids)
    pos = {c: j for j, c in enumerate(class_ids)}
    support_indices = np.asarray(support_indices, dtype=np.int64)
    labels = np.array([pos[int(ds.labels[i])] for i in support_indices], dtype=np.int64)
    return Episode(
        class_ids=class_ids,
        support_indices=support_indices,
        support_labels=labels,
        support_features=ds.features64(support_indices),
        attribute_rows=ds.attributes[list(class_ids)].astype(np.float64),
    )


@dataclass(frozen=True)
class HyperParams:
    """Training hyperparameters. Defaults follow the coarse-grained benchmark setup."""

    C: int = 10
    S: int = 10
    lam: float = 0.1
    gamma: float = 0.9
    epochs: int = 40
    learning_rate: float = 2e-4
    weight_decay: float = 1e-4
    hidden_size: int = 1024
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lambda must lie in [0, 1], got {self.lam}")
        if not self.gamma > 0:
            raise ConfigError(f"gamma must be > 0, got {self.gamma}")
        if self.C < 1 or self.S < 1:
            raise ConfigError(f"C and S must be >= 1, got C={self.C}, S={self.S}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.hidden_size < 1:
            raise ConfigError(f"hidden_size must be >= 1, got {self.hidden_size}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
