"""Nearest-prototype recognition and per-class accuracy reporting."""
from __future__ import annotations

import io
import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .core import TEST_SEEN, TEST_UNSEEN, ConfigError, DatasetError, ShapeError
from .net import forward

log = logging.getLogger(__name__)

_CHUNK = 256


@dataclass(frozen=True, eq=False)
class EvalReport:
    """Per-class counts and the averaged accuracies, all as fractions."""

    per_class_accuracy: dict
    counts: dict  # class id -> (n, correct)
    acc_unseen: float
    acc_seen: float = None
    harmonic_mean: float = None
    confusion: Counter = field(default_factory=Counter)

    def to_csv(self):
        out = io.StringIO()
        out.write("class_id,n,correct,accuracy\n")
        for c in sorted(self.counts):
            n, k = self.counts[c]
            acc = self.per_class_accuracy.get(c)
            out.write(f"{c},{n},{k},{'' if acc is None else f'{acc:.6f}'}\n")
        out.write(self.summary_line() + "\n")
        return out.getvalue()

    def summary_line(self):
        parts = [f"acc_unseen={100 * self.acc_unseen:.1f}"]
        if self.acc_seen is not None:
            parts.append(f"acc_seen={100 * self.acc_seen:.1f}")
            parts.append(f"H={100 * self.harmonic_mean:.1f}")
        return "# " + " ".join(parts)

    def table(self, class_names=None):
        rows = [("class", "name", "n", "correct", "acc%")]
        for c in sorted(self.counts):
            n, k = self.counts[c]
            acc = self.per_class_accuracy.get(c)
            name = class_names[c] if class_names else ""
            rows.append((str(c), name, str(n), str(k), "-" if acc is None else f"{100 * acc:.1f}"))
        widths = [max(len(r[i]) for r in rows) for i in range(5)]
        lines = ["  ".join(v.rjust(w) if i != 1 else v.ljust(w) for i, (v, w) in enumerate(zip(r, widths)))
                 for r in rows]
        lines.append("")
        lines.append(f"Acc_U = {100 * self.acc_unseen:.1f}%")
        if self.acc_seen is not None:
            lines.append(f"Acc_S = {100 * self.acc_seen:.1f}%")
            lines.append(f"H     = {100 * self.harmonic_mean:.1f}%")
        return "\n".join(lines)


def harmonic_mean(acc_s, acc_u):
    """``2ab / (a + b)``, defined as 0 when both are 0. Units must agree."""
    if acc_s < 0 or acc_u < 0:
        raise ValueError(f"accuracies must be non-negative, got {acc_s}, {acc_u}")
    total = acc_s + acc_u
    return 0.0 if total == 0 else 2.0 * acc_s * acc_u / total


def make_prototypes(emb, attributes, class_ids):
    """Prototype for each requested class, returned as ``[(class_id, vector), ...]``."""
    attributes = np.asarray(attributes)
    ids = [int(c) for c in class_ids]
    missing = [c for c in ids if not 0 <= c < attributes.shape[0]]
    if missing:
        raise DatasetError(f"no attribute row for classes {missing}")
    if not ids:
        return []
    protos, _ = forward(emb, attributes[ids])
    return list(zip(ids, protos))


def _stack(prototypes):
    if len(prototypes) == 0:
        raise ConfigError("no prototypes to recognize against")
    order = sorted(range(len(prototypes)), key=lambda i: prototypes[i][0])
    ids = np.array([prototypes[i][0] for i in order], dtype=np.int64)
    M = np.stack([np.asarray(prototypes[i][1], dtype=np.float64) for i in order])
    return ids, M


def recognize_batch(X, prototypes):
    """Nearest-prototype class for every row of ``X``; ties go to the lowest class id."""
    ids, M = _stack(prototypes)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != M.shape[1]:
        raise ShapeError(f"feature width {X.shape[1]} != prototype width {M.shape[1]}")
    out = np.empty(X.shape[0], dtype=np.int64)
    for start in range(0, X.shape[0], _CHUNK):
        block = X[start:start + _CHUNK]
        diff = block[:, None, :] - M[None, :, :]
        d = np.sqrt(np.einsum("icd,icd->ic", diff, diff))
        # argmin returns the first minimum, i.e. the lowest id after sorting.
        out[start:start + _CHUNK] = ids[np.argmin(d, axis=1)]
    return out


def recognize(x, prototypes):
    return int(recognize_batch(np.asarray(x)[None, :], prototypes)[0])


def per_class_accuracy(true, pred, classes):
    """Per-class correct/count over ``classes`` and their unweighted mean.

    Classes with no samples are reported with ``n=0`` and left out of the
    mean (with a warning).
    """
    true = np.asarray(true)
    pred = np.asarray(pred)
    counts, accs = {}, {}
    for c in classes:
        mask = true == c
        n = int(mask.sum())
        k = int((pred[mask] == c).sum())
        counts[c] = (n, k)
        if n:
            accs[c] = k / n
        else:
            log.warning("class %d has no test samples; excluded from the per-class mean", c)
    mean = float(np.mean([accs[c] for c in classes if c in accs])) if accs else 0.0
    return counts, accs, mean


def _confusion(true, pred):
    return Counter(zip(np.asarray(true).tolist(), np.asarray(pred).tolist()))


def evaluate_with_prototypes(ds, prototypes, generalized=False):
    """Score the test splits of ``ds`` against an explicit prototype set."""
    u_idx = ds.indices(TEST_UNSEEN)
    if len(u_idx) == 0:
        raise DatasetError("dataset has no test_unseen samples")
    u_pred = recognize_batch(ds.features64(u_idx), prototypes)
    u_true = ds.labels[u_idx]
    counts, accs, acc_u = per_class_accuracy(u_true, u_pred, ds.unseen_classes)
    confusion = _confusion(u_true, u_pred)
    if not generalized:
        return EvalReport(accs, counts, acc_u, confusion=confusion)

    s_idx = ds.indices(TEST_SEEN)
    if len(s_idx) == 0:
        raise DatasetError("generalized evaluation needs test_seen samples")
    s_pred = recognize_batch(ds.features64(s_idx), prototypes)
    s_true = ds.labels[s_idx]
    s_counts, s_accs, acc_s = per_class_accuracy(s_true, s_pred, ds.seen_classes)
    counts.update(s_counts)
    accs.update(s_accs)
    confusion.update(_confusion(s_true, s_pred))
    return EvalReport(accs, counts, acc_u, acc_s, harmonic_mean(acc_s, acc_u), confusion)


def evaluate_standard(ds, emb):
    """Standard setting: test_unseen samples searched over unseen prototypes only."""
    protos = make_prototypes(emb, ds.attributes, ds.unseen_classes)
    return evaluate_with_prototypes(ds, protos)


def evaluate_generalized(ds, emb, candidate_classes=None):
    """Generalized setting: both test splits searched over seen and unseen prototypes.

    ``candidate_classes`` narrows the search space (by default all seen and
    unseen classes).
    """
    if candidate_classes is None:
        candidate_classes = tuple(ds.seen_classes) + tuple(ds.unseen_classes)
    protos = make_prototypes(emb, ds.attributes, candidate_classes)
    return evaluate_with_prototypes(ds, protos, generalized=True)
