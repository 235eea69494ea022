"""On-disk formats and the synthetic dataset generator.

Features: ``CPLF`` | u32 version | u64 n_samples | u64 d_feat | f32 rows,
all little-endian. Labels and split tags live in one CSV
(``sample_index,class_id,split``); attributes in another (``class_id`` then
one column per attribute). An optional classes CSV
(``class_id,name,role``) records names and seen/unseen roles.

Checkpoints: ``CPLM`` | u32 version | u32 flags | u64 d_attr, hidden, d_feat,
step, C, S, epochs, seed | f64 lambda, gamma, lr, weight_decay, beta1,
beta2, eps | f64 arrays W1, b1, W2, b2, then first and second moments in
the same order.
"""
from __future__ import annotations

import csv
import io
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (
    SPLITS,
    TEST_SEEN,
    TEST_UNSEEN,
    TRAIN,
    CheckpointError,
    ConfigError,
    Dataset,
    DatasetError,
    FormatError,
    HyperParams,
    validate_dataset,
)
from .net import AdamState, AttributeEmbedder, GradientSet

FEATURE_MAGIC = b"CPLF"
CHECKPOINT_MAGIC = b"CPLM"
FORMAT_VERSION = 1

_FEAT_HEADER = struct.Struct("<4sIQQ")
_CK_HEAD = struct.Struct("<4sII")
_CK_INTS = struct.Struct("<8Q")
_CK_FLOATS = struct.Struct("<7d")

FLAG_NORMALIZED_ATTRIBUTES = 1

MANIFEST_KEYS = ("features", "labels", "attributes", "classes", "d_feat", "d_attr", "n_samples", "n_classes")
_REQUIRED_KEYS = ("features", "labels", "attributes", "d_feat", "d_attr", "n_samples", "n_classes")


# ---------------------------------------------------------------- features

def write_features(path, features):
    feats = np.ascontiguousarray(features, dtype="<f4")
    if feats.ndim != 2:
        raise ValueError(f"features must be 2-d, got shape {feats.shape}")
    with open(path, "wb") as fh:
        fh.write(_FEAT_HEADER.pack(FEATURE_MAGIC, FORMAT_VERSION, feats.shape[0], feats.shape[1]))
        fh.write(feats.tobytes())


def read_features(path):
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _FEAT_HEADER.size:
        raise FormatError(f"truncated feature header: {len(data)} of {_FEAT_HEADER.size} bytes",
                          path, len(data))
    magic, version, n, d = _FEAT_HEADER.unpack_from(data)
    if magic != FEATURE_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {FEATURE_MAGIC!r}", path, 0)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported feature format version {version}", path, 4)
    expected = _FEAT_HEADER.size + 4 * n * d
    if len(data) != expected:
        if len(data) < expected:
            row_bytes = 4 * d if d else 1
            full_rows = (len(data) - _FEAT_HEADER.size) // row_bytes
            offset = _FEAT_HEADER.size + full_rows * row_bytes
            raise FormatError(
                f"feature payload truncated in row {full_rows} of {n} "
                f"({len(data)} bytes, expected {expected})", path, offset)
        raise FormatError(f"{len(data) - expected} trailing bytes after feature payload", path, expected)
    arr = np.frombuffer(data, dtype="<f4", count=n * d, offset=_FEAT_HEADER.size)
    return arr.reshape(n, d).astype(np.float32)


# ---------------------------------------------------------------- manifest

@dataclass(frozen=True)
class Manifest:
    features_path: Path
    labels_path: Path
    attributes_path: Path
    d_feat: int
    d_attr: int
    n_samples: int
    n_classes: int
    classes_path: Path = None

    @classmethod
    def in_dir(cls, directory, d_feat, d_attr, n_samples, n_classes):
        directory = Path(directory)
        return cls(directory / "features.cplf", directory / "labels.csv",
                   directory / "attributes.csv", d_feat, d_attr, n_samples, n_classes,
                   directory / "classes.csv")

    @classmethod
    def for_dataset(cls, directory, ds):
        return cls.in_dir(directory, ds.d_feat, ds.d_attr, ds.n_samples, ds.n_classes)


def write_manifest(path, manifest):
    path = Path(path)
    base = path.parent.resolve()

    def rel(p):
        p = Path(p).resolve()
        try:
            return str(p.relative_to(base))
        except ValueError:
            return str(p)

    lines = [
        f"features={rel(manifest.features_path)}",
        f"labels={rel(manifest.labels_path)}",
        f"attributes={rel(manifest.attributes_path)}",
    ]
    if manifest.classes_path is not None:
        lines.append(f"classes={rel(manifest.classes_path)}")
    lines += [
        f"d_feat={manifest.d_feat}",
        f"d_attr={manifest.d_attr}",
        f"n_samples={manifest.n_samples}",
        f"n_classes={manifest.n_classes}",
    ]
    path.write_text("\n".join(lines) + "\n")


def parse_key_values(text, source="<config>"):
    """Parse flat ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"line {lineno}: expected key=value, got {raw!r}", source)
        key, value = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise FormatError(f"line {lineno}: duplicate key {key!r}", source)
        out[key] = value
    return out


def read_manifest(path):
    path = Path(path)
    kv = parse_key_values(path.read_text(), path)
    unknown = sorted(set(kv) - set(MANIFEST_KEYS))
    if unknown:
        raise FormatError(f"unknown manifest keys {unknown}", path)
    missing = [k for k in _REQUIRED_KEYS if k not in kv]
    if missing:
        raise FormatError(f"manifest missing keys {missing}", path)
    base = path.parent

    def resolve(v):
        p = Path(v)
        return p if p.is_absolute() else base / p

    try:
        dims = {k: int(kv[k]) for k in ("d_feat", "d_attr", "n_samples", "n_classes")}
    except ValueError as exc:
        raise FormatError(f"non-integer dimension in manifest: {exc}", path) from None
    return Manifest(
        features_path=resolve(kv["features"]),
        labels_path=resolve(kv["labels"]),
        attributes_path=resolve(kv["attributes"]),
        classes_path=resolve(kv["classes"]) if "classes" in kv else None,
        **dims,
    )


# ---------------------------------------------------------------- dataset

def _write_text(path, text):
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _float_repr(x):
    return repr(float(x))


def save_dataset(ds, manifest, manifest_path=None):
    """Write features, labels/splits, attributes and classes files for ``ds``.

    When ``manifest_path`` is given the manifest itself is written too.
    """
    for p in (manifest.features_path, manifest.labels_path, manifest.attributes_path):
        Path(p).parent.mkdir(parents=True, exist_ok=True)
    write_features(manifest.features_path, ds.features)

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sample_index", "class_id", "split"])
    for i, (y, s) in enumerate(zip(ds.labels.tolist(), ds.split.tolist())):
        w.writerow([i, y, SPLITS[s]])
    _write_text(manifest.labels_path, buf.getvalue())

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class_id"] + [f"a{j}" for j in range(ds.d_attr)])
    for k, row in enumerate(ds.attributes):
        w.writerow([k] + [_float_repr(v) for v in row])
    _write_text(manifest.attributes_path, buf.getvalue())

    if manifest.classes_path is not None:
        seen, unseen = set(ds.seen_classes), set(ds.unseen_classes)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class_id", "name", "role"])
        # Role order within each set is preserved by listing seen then unseen first.
        order = list(ds.seen_classes) + list(ds.unseen_classes)
        order += [k for k in range(ds.n_classes) if k not in seen and k not in unseen]
        for k in order:
            role = "seen" if k in seen else "unseen" if k in unseen else "none"
            w.writerow([k, ds.class_names[k], role])
        _write_text(manifest.classes_path, buf.getvalue())

    if manifest_path is not None:
        write_manifest(manifest_path, manifest)


def _read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError("empty CSV file (missing header)", path, 0)
    return rows[0], rows[1:]


def _read_labels(path, n_samples):
    header, rows = _read_csv(path)
    if header != ["sample_index", "class_id", "split"]:
        raise FormatError(f"unexpected labels header {header}", path, 0)
    if len(rows) != n_samples:
        raise DatasetError(f"labels file {path}: expected {n_samples} rows, found {len(rows)}")
    labels = np.empty(n_samples, dtype=np.int64)
    split = np.empty(n_samples, dtype=np.int8)
    for line, row in enumerate(rows, 2):
        if len(row) != 3:
            raise FormatError(f"line {line}: expected 3 fields, got {len(row)}", path)
        try:
            i, y = int(row[0]), int(row[1])
        except ValueError:
            raise FormatError(f"line {line}: non-integer index or class id", path) from None
        if i != line - 2:
            raise FormatError(f"line {line}: sample_index {i} out of order", path)
        if row[2] not in SPLITS:
            raise FormatError(f"line {line}: unknown split {row[2]!r}", path)
        labels[i] = y
        split[i] = SPLITS.index(row[2])
    return labels, split


def _read_attributes(path, n_classes, d_attr):
    header, rows = _read_csv(path)
    if not header or header[0] != "class_id":
        raise FormatError("attributes header must start with class_id", path, 0)
    found = len(header) - 1
    if found != d_attr:
        raise DatasetError(f"attributes file {path}: manifest declares d_attr={d_attr}, found {found} columns")
    if len(rows) != n_classes:
        raise DatasetError(f"attributes file {path}: manifest declares n_classes={n_classes}, found {len(rows)} rows")
    attrs = np.empty((n_classes, d_attr))
    for line, row in enumerate(rows, 2):
        if len(row) != d_attr + 1:
            raise FormatError(f"line {line}: expected {d_attr + 1} fields, got {len(row)}", path)
        try:
            k = int(row[0])
            vals = [float(v) for v in row[1:]]
        except ValueError:
            raise FormatError(f"line {line}: non-numeric attribute row", path) from None
        if k != line - 2:
            raise FormatError(f"line {line}: class_id {k} out of order", path)
        attrs[k] = vals
    return attrs


def _read_classes(path, n_classes):
    header, rows = _read_csv(path)
    if header != ["class_id", "name", "role"]:
        raise FormatError(f"unexpected classes header {header}", path, 0)
    names = [None] * n_classes
    seen, unseen = [], []
    for line, row in enumerate(rows, 2):
        if len(row) != 3:
            raise FormatError(f"line {line}: expected 3 fields, got {len(row)}", path)
        try:
            k = int(row[0])
        except ValueError:
            raise FormatError(f"line {line}: non-integer class id", path) from None
        if not 0 <= k < n_classes or names[k] is not None:
            raise FormatError(f"line {line}: class id {k} invalid or repeated", path)
        names[k] = row[1]
        if row[2] == "seen":
            seen.append(k)
        elif row[2] == "unseen":
            unseen.append(k)
        elif row[2] != "none":
            raise FormatError(f"line {line}: unknown role {row[2]!r}", path)
    if any(n is None for n in names):
        raise DatasetError(f"classes file {path}: expected {n_classes} classes, found {len(rows)}")
    return names, seen, unseen


def load_dataset(manifest):
    """Read and validate the dataset described by ``manifest`` (or a manifest path)."""
    if not isinstance(manifest, Manifest):
        manifest = read_manifest(manifest)
    feats = read_features(manifest.features_path)
    if feats.shape != (manifest.n_samples, manifest.d_feat):
        raise DatasetError(
            f"features file {manifest.features_path}: manifest declares "
            f"(n_samples={manifest.n_samples}, d_feat={manifest.d_feat}), found {feats.shape}")
    labels, split = _read_labels(manifest.labels_path, manifest.n_samples)
    attrs = _read_attributes(manifest.attributes_path, manifest.n_classes, manifest.d_attr)
    if manifest.classes_path is not None:
        names, seen, unseen = _read_classes(manifest.classes_path, manifest.n_classes)
    else:
        names = ()
        seen = sorted(set(labels[(split == TRAIN) | (split == TEST_SEEN)].tolist()))
        unseen = sorted(set(labels[split == TEST_UNSEEN].tolist()))
    ds = Dataset(feats, labels, attrs, tuple(seen), tuple(unseen), split, tuple(names))
    problems = validate_dataset(ds)
    if problems:
        raise DatasetError(f"dataset violates {len(problems)} invariant(s): " + "; ".join(problems[:5]),
                           problems)
    return ds


# ---------------------------------------------------------------- checkpoints

@dataclass(frozen=True, eq=False)
class Checkpoint:
    hyper: HyperParams
    params: AttributeEmbedder
    adam: AdamState
    flags: int = 0

    @property
    def step(self):
        return self.adam.t

    def bit_equal(self, other):
        return (
            self.hyper == other.hyper
            and self.flags == other.flags
            and self.params.bit_equal(other.params)
            and self.adam.t == other.adam.t
            and (self.adam.beta1, self.adam.beta2, self.adam.eps)
            == (other.adam.beta1, other.adam.beta2, other.adam.eps)
            and self.adam.m.bit_equal(other.adam.m)
            and self.adam.v.bit_equal(other.adam.v)
        )


def checkpoint_bytes(ck):
    p, a, h = ck.params, ck.adam, ck.hyper
    parts = [
        _CK_HEAD.pack(CHECKPOINT_MAGIC, FORMAT_VERSION, ck.flags),
        _CK_INTS.pack(p.d_attr, p.hidden_size, p.d_feat, a.t, h.C, h.S, h.epochs, h.seed),
        _CK_FLOATS.pack(h.lam, h.gamma, h.learning_rate, h.weight_decay, a.beta1, a.beta2, a.eps),
    ]
    for group in (p, a.m, a.v):
        parts.extend(np.ascontiguousarray(arr, dtype="<f8").tobytes() for arr in group.arrays())
    return b"".join(parts)


def save_checkpoint(ck, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(f"{path}.tmp")
    tmp.write_bytes(checkpoint_bytes(ck))
    os.replace(tmp, path)


def load_checkpoint(path):
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 4 or data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"not a checkpoint: bad magic {data[:4]!r}", path, 0)
    head = _CK_HEAD.size + _CK_INTS.size + _CK_FLOATS.size
    if len(data) < head:
        raise CheckpointError("truncated checkpoint header", path, len(data))
    _, version, flags = _CK_HEAD.unpack_from(data)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {FORMAT_VERSION})", path, 4)
    d_attr, hidden, d_feat, t, C, S, epochs, seed = _CK_INTS.unpack_from(data, _CK_HEAD.size)
    lam, gamma, lr, wd, b1, b2, eps = _CK_FLOATS.unpack_from(data, _CK_HEAD.size + _CK_INTS.size)
    shapes = [(d_attr, hidden), (hidden,), (hidden, d_feat), (d_feat,)]
    need = head + 3 * 8 * sum(math.prod(s) for s in shapes)
    if len(data) != need:
        raise CheckpointError(f"checkpoint payload is {len(data)} bytes, expected {need}", path,
                              min(len(data), need))
    offset = head
    groups = []
    for _ in range(3):
        arrays = []
        for shape in shapes:
            count = math.prod(shape)
            arrays.append(np.frombuffer(data, dtype="<f8", count=count, offset=offset)
                          .reshape(shape).astype(np.float64))
            offset += 8 * count
        groups.append(arrays)
    try:
        hyper = HyperParams(C=C, S=S, lam=lam, gamma=gamma, epochs=epochs, learning_rate=lr,
                            weight_decay=wd, hidden_size=hidden, seed=seed)
    except ConfigError as exc:
        raise CheckpointError(f"invalid hyperparameters in checkpoint: {exc}", path) from None
    adam = AdamState(GradientSet(*groups[1]), GradientSet(*groups[2]), t, b1, b2, eps)
    return Checkpoint(hyper, AttributeEmbedder(*groups[0]), adam, flags)


# ---------------------------------------------------------------- synthetic data

@dataclass(frozen=True)
class SyntheticSpec:
    K: int = 27
    L: int = 10
    S_per_class_train: int = 50
    n_test_per_class: int = 30
    d_attr: int = 16
    d_feat: int = 64
    noise_sigma: float = 0.1
    seed: int = 0
    max_classes: int = None


@dataclass(frozen=True, eq=False)
class SyntheticData:
    dataset: Dataset
    projection: np.ndarray  # d_attr x d_feat ground-truth linear map
    class_means: np.ndarray  # n_classes x d_feat, float64


def make_synthetic(spec):
    """Generate a synthetic dataset together with its hidden ground truth.

    Classes ``0..K-1`` are seen, ``K..K+L-1`` unseen. Seen classes get
    ``S_per_class_train`` train and ``n_test_per_class`` test_seen samples;
    unseen classes only ``n_test_per_class`` test_unseen samples.
    """
    if spec.K < 2 or spec.L < 2:
        raise ConfigError(f"need K >= 2 and L >= 2, got K={spec.K}, L={spec.L}")
    if min(spec.d_attr, spec.d_feat) < 1:
        raise ConfigError("d_attr and d_feat must be >= 1")
    if spec.S_per_class_train < 1 or spec.n_test_per_class < 0:
        raise ConfigError("need S_per_class_train >= 1 and n_test_per_class >= 0")
    if spec.noise_sigma < 0:
        raise ConfigError(f"noise_sigma must be >= 0, got {spec.noise_sigma}")
    n_classes = spec.K + spec.L
    if spec.max_classes is not None and n_classes > spec.max_classes:
        raise ConfigError(f"K+L={n_classes} exceeds the class budget of {spec.max_classes}")

    rng = np.random.default_rng(np.random.SeedSequence([int(spec.seed), 0x5E7]))
    attrs = rng.uniform(0.0, 1.0, size=(n_classes, spec.d_attr))
    G = rng.standard_normal((spec.d_attr, spec.d_feat)) / np.sqrt(spec.d_attr)
    means = np.maximum(attrs @ G, 0.0)

    labels, split = [], []
    for c in range(spec.K):
        labels += [c] * (spec.S_per_class_train + spec.n_test_per_class)
        split += [TRAIN] * spec.S_per_class_train + [TEST_SEEN] * spec.n_test_per_class
    for c in range(spec.K, n_classes):
        labels += [c] * spec.n_test_per_class
        split += [TEST_UNSEEN] * spec.n_test_per_class
    labels = np.asarray(labels, dtype=np.int64)
    noise = rng.standard_normal((len(labels), spec.d_feat)) * spec.noise_sigma
    feats = np.maximum(means[labels] + noise, 0.0).astype(np.float32)

    ds = Dataset(feats, labels, attrs, tuple(range(spec.K)), tuple(range(spec.K, n_classes)),
                 np.asarray(split, dtype=np.int8))
    return SyntheticData(ds, G, means)


def generate_synthetic(spec):
    return make_synthetic(spec).dataset
