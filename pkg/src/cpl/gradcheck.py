"""Central finite-difference checks of the hand-written gradients.

Each trial builds a small random network and episode, then compares the
analytic gradient of the combined loss (through prototypes and network
parameters) with central differences.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import objective
from .core import Episode
from .net import AttributeEmbedder, backward, forward, init_embedder

LAMBDAS = (0.0, 0.1, 1.0)
GAMMAS = (0.9, 1.0)
_KINK_MARGIN = 1e-4


@dataclass
class GradCheckResult:
    trials: int
    max_rel_error: float
    max_abs_error: float
    worst: str  # human-readable coordinate of the worst entry
    n_checked: int
    n_failed: int
    tol: float

    @property
    def passed(self):
        return self.n_failed == 0


def random_instance(rng):
    """A random small (network, episode, lambda, gamma) away from ReLU kinks."""
    while True:
        d_attr = int(rng.integers(2, 6))
        hidden = int(rng.integers(3, 9))
        d_feat = int(rng.integers(2, 7))
        C = int(rng.integers(2, 5))
        S = int(rng.integers(1, 4))
        emb = init_embedder(d_attr, hidden, d_feat, int(rng.integers(2**32)))
        emb = AttributeEmbedder(emb.W1, rng.normal(0, 0.3, hidden), emb.W2, rng.normal(0.3, 0.3, d_feat))
        A = rng.uniform(0, 1, size=(C, d_attr))
        labels = np.repeat(np.arange(C), S)
        X = rng.uniform(0, 1.5, size=(C * S, d_feat))
        _, cache = forward(emb, A)
        pre = np.concatenate([cache.hidden_pre.ravel(), cache.output_pre.ravel()])
        if np.min(np.abs(pre)) < _KINK_MARGIN:
            continue
        protos, _ = forward(emb, A)
        D = objective.pairwise_distances(X, protos)
        if D.min() < _KINK_MARGIN:
            continue
        ep = Episode(tuple(range(C)), np.arange(C * S), labels, X, A)
        lam = LAMBDAS[int(rng.integers(len(LAMBDAS)))]
        gamma = GAMMAS[int(rng.integers(len(GAMMAS)))]
        return emb, ep, lam, gamma


def combined_loss(emb, ep, lam, gamma, reduction="mean"):
    protos, _ = forward(emb, ep.attribute_rows)
    return objective.episode_loss(ep, protos, lam, gamma, reduction).combined


def analytic_grad(emb, ep, lam, gamma, reduction="mean"):
    protos, cache = forward(emb, ep.attribute_rows)
    upstream = objective.episode_loss_grad(ep, protos, lam, gamma, reduction)
    return backward(emb, cache, upstream)


def numeric_grad(emb, ep, lam, gamma, h=1e-6, reduction="mean"):
    out = []
    for arr in emb.arrays():
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + h
            fp = combined_loss(emb, ep, lam, gamma, reduction)
            arr[idx] = orig - h
            fm = combined_loss(emb, ep, lam, gamma, reduction)
            arr[idx] = orig
            g[idx] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def compare(analytic, numeric, tol=1e-5, atol=1e-8):
    """Elementwise ``(relative error, absolute error, ok)``.

    An entry is ok when it agrees within ``atol`` or within ``tol``
    relatively. Relative errors of entries whose gradient and discrepancy
    are both below ``atol`` are reported as 0.
    """
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    rel = np.where((scale >= atol) | (diff > atol), diff / np.where(scale > 0, scale, 1.0), 0.0)
    ok = (diff <= atol) | (rel < tol)
    return rel, diff, ok


def check_gradients(trials=100, seed=0, tol=1e-5, h=1e-6, atol=1e-8):
    rng = np.random.default_rng(seed)
    worst, worst_key, worst_abs, where, n, failed = 0.0, -1.0, 0.0, "none", 0, 0
    for trial in range(trials):
        emb, ep, lam, gamma = random_instance(rng)
        emb = emb.copy()
        ga = analytic_grad(emb, ep, lam, gamma)
        gn = numeric_grad(emb, ep, lam, gamma, h)
        for (name, a), num in zip(ga.items(), gn):
            rel, diff, ok = compare(a, num, tol, atol)
            n += rel.size
            worst = max(worst, float(rel.max()))
            failed += int((~ok).sum())
            worst_abs = max(worst_abs, float(diff.max()))
            # Failing entries rank ahead of passing ones when picking the worst.
            key = rel + np.where(ok, 0.0, np.inf)
            k = int(np.argmax(key))
            if key.flat[k] > worst_key:
                worst_key = float(key.flat[k])
                coord = np.unravel_index(k, rel.shape)
                where = (f"trial {trial} {name}{list(map(int, coord))} "
                         f"(lambda={lam}, gamma={gamma}): analytic={a[coord]:.10g} numeric={num[coord]:.10g}")
    return GradCheckResult(trials, worst, worst_abs, where, n, failed, tol)
