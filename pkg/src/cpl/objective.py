"""Prototype losses: distance softmax cross-entropy (CEP) plus encoding cost (PEC)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import NumericError, ShapeError

PROB_FLOOR = 1e-300
DIST_GUARD = 1e-12


@dataclass(frozen=True, eq=False)
class EpisodeLossBreakdown:
    cep: float
    pec: float
    combined: float
    probabilities: np.ndarray


def l2_distance(x, m):
    """Euclidean (non-squared) distance between two equal-length vectors."""
    x = np.asarray(x, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    if x.shape != m.shape:
        raise ShapeError(f"length mismatch: {x.shape} vs {m.shape}")
    d = x - m
    return float(np.sqrt(np.dot(d, d)))


def pec_loss(x, m_true):
    """Encoding cost of ``x`` under its own class prototype."""
    return l2_distance(x, m_true)


def pairwise_distances(X, M):
    """``D[i, j] = ||X[i] - M[j]||`` computed from explicit differences."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    if X.shape[1] != M.shape[1]:
        raise ShapeError(f"feature width {X.shape[1]} != prototype width {M.shape[1]}")
    diff = X[:, None, :] - M[None, :, :]
    return np.sqrt(np.einsum("icd,icd->ic", diff, diff))


def class_probabilities(distances, gamma):
    """Softmax of ``-gamma * distances`` along the last axis, max-shifted."""
    d = np.asarray(distances, dtype=np.float64)
    if d.ndim == 0 or d.shape[-1] == 0:
        raise ShapeError("empty distance vector")
    if not gamma > 0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    logits = -gamma * d
    logits = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=-1, keepdims=True)


def _log_probabilities(D, gamma):
    logits = -gamma * D
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def cep_loss(probabilities, true_index):
    """Cross-entropy ``-log p[true_index]`` with the probability floored at 1e-300."""
    p = np.asarray(probabilities, dtype=np.float64)
    if not 0 <= true_index < p.shape[-1]:
        raise ShapeError(f"true index {true_index} outside [0, {p.shape[-1]})")
    return float(-np.log(max(p[true_index], PROB_FLOOR)))


def _loss_weights(lam, cep_only):
    # cep_only drops the encoding term and leaves CEP unweighted.
    return (1.0, 0.0) if cep_only else (float(lam), 1.0)


def _check_episode(episode, prototypes):
    M = np.asarray(prototypes, dtype=np.float64)
    X = episode.support_features
    if M.ndim != 2 or M.shape[0] != episode.n_classes:
        raise ShapeError(f"expected {episode.n_classes} prototypes, got array of shape {M.shape}")
    if M.shape[1] != X.shape[1]:
        raise ShapeError(f"prototype width {M.shape[1]} != feature width {X.shape[1]}")
    return X, M


def episode_loss(episode, prototypes, lam, gamma, reduction="mean", cep_only=False):
    """Loss breakdown of one episode.

    ``cep`` and ``pec`` are averaged over support samples (summed when
    ``reduction="sum"``); ``combined = lam * cep + pec``.
    """
    X, M = _check_episode(episode, prototypes)
    y = episode.support_labels
    n = X.shape[0]
    D = pairwise_distances(X, M)
    logp = _log_probabilities(D, gamma)
    rows = np.arange(n)
    cep_terms = -np.maximum(logp[rows, y], np.log(PROB_FLOOR))
    pec_terms = D[rows, y]
    if reduction == "mean":
        cep, pec = float(cep_terms.mean()), float(pec_terms.mean())
    elif reduction == "sum":
        cep, pec = float(cep_terms.sum()), float(pec_terms.sum())
    else:
        raise ValueError(f"unknown reduction {reduction!r}")
    w_cep, w_pec = _loss_weights(lam, cep_only)
    combined = w_cep * cep + w_pec * pec
    return EpisodeLossBreakdown(cep, pec, combined, np.exp(logp))


def episode_loss_grad(episode, prototypes, lam, gamma, reduction="mean", cep_only=False):
    """Gradient of the combined episode loss with respect to each prototype (C x d_feat).

    A sample closer than 1e-12 to a prototype contributes nothing to that
    prototype's gradient.
    """
    X, M = _check_episode(episode, prototypes)
    y = episode.support_labels
    n, c = X.shape[0], M.shape[0]
    diff = M[None, :, :] - X[:, None, :]
    D = np.sqrt(np.einsum("icd,icd->ic", diff, diff))
    P = np.exp(_log_probabilities(D, gamma))
    onehot = np.zeros((n, c))
    onehot[np.arange(n), y] = 1.0

    w_cep, w_pec = _loss_weights(lam, cep_only)
    g_dist = w_cep * gamma * (onehot - P) + w_pec * onehot
    if reduction == "mean":
        g_dist = g_dist / n
    elif reduction != "sum":
        raise ValueError(f"unknown reduction {reduction!r}")

    live = D >= DIST_GUARD
    coef = np.where(live, g_dist / np.where(live, D, 1.0), 0.0)
    grad = np.einsum("ic,icd->cd", coef, diff)
    if not np.all(np.isfinite(grad)):
        bad_c = np.flatnonzero(~np.all(np.isfinite(grad), axis=1))
        bad_i = np.flatnonzero(~np.all(np.isfinite(coef), axis=1))
        raise NumericError(
            f"non-finite prototype gradient (prototypes {bad_c.tolist()}, samples {bad_i.tolist()})"
        )
    return grad
