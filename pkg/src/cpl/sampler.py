"""Episode construction from the training split.

Every episode's random stream is derived from ``(seed, epoch, episode)``
alone, so any episode can be regenerated without replaying earlier ones.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import TRAIN, ConfigError, DatasetError, make_episode

TASK_LEVEL = "task_level"
SAMPLE_LEVEL = "sample_level"
MODES = (TASK_LEVEL, SAMPLE_LEVEL)
SCHEDULES = ("uniform", "coverage")

_EPISODE_TAG = 0xE915
_COVERAGE_TAG = 0xC0FE


@dataclass(frozen=True)
class EpisodePlan:
    C: int
    S: int
    seed: int = 0
    mode: str = TASK_LEVEL
    schedule: str = "uniform"
    classes: tuple = None  # restrict task-level draws to these seen classes

    def __post_init__(self):
        if self.C < 1 or self.S < 1:
            raise ConfigError(f"C and S must be >= 1, got C={self.C}, S={self.S}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown sampling mode {self.mode!r}; expected one of {MODES}")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"unknown class schedule {self.schedule!r}; expected one of {SCHEDULES}")


def episode_rng(seed, epoch, episode):
    return np.random.default_rng(np.random.SeedSequence([int(seed), _EPISODE_TAG, int(epoch), int(episode)]))


def _pool(ds, plan):
    return tuple(ds.seen_classes if plan.classes is None else plan.classes)


def _coverage_classes(pool, C, seed, epoch, episode):
    # Each pass over a fresh permutation covers every class once; the final
    # chunk of a pass wraps to the head of the same permutation.
    k = len(pool)
    chunks = math.ceil(k / C)
    p, j = divmod(episode, chunks)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), _COVERAGE_TAG, int(epoch), int(p)]))
    perm = rng.permutation(k)
    take = perm[j * C:(j + 1) * C]
    if len(take) < C:
        take = np.concatenate([take, perm[: C - len(take)]])
    return [pool[i] for i in take]


def sample_episode(ds, plan, epoch=0, episode=0, by_class=None):
    """Task-level episode: ``C`` distinct seen classes, ``S`` train samples each.

    A class with fewer than ``S`` train samples is sampled with replacement.
    """
    pool = _pool(ds, plan)
    if plan.C > len(pool):
        raise ConfigError(f"C={plan.C} exceeds the {len(pool)} available seen classes")
    if by_class is None:
        by_class = ds.train_indices_by_class()
    rng = episode_rng(plan.seed, epoch, episode)
    if plan.schedule == "coverage":
        classes = _coverage_classes(pool, plan.C, plan.seed, epoch, episode)
    else:
        classes = [pool[i] for i in rng.choice(len(pool), size=plan.C, replace=False)]
    support = []
    for c in classes:
        idx = by_class.get(c)
        if idx is None or len(idx) == 0:
            raise DatasetError(f"seen class {c} has no training samples")
        support.append(rng.choice(idx, size=plan.S, replace=len(idx) < plan.S))
    return make_episode(ds, classes, np.concatenate(support))


def sample_batch(ds, plan, epoch=0, episode=0, train_idx=None):
    """Sample-level batch of ``C*S`` train samples drawn without replacement.

    The episode's classes are the distinct labels in the batch, in
    ascending id order.
    """
    if train_idx is None:
        train_idx = ds.indices(TRAIN)
    n = plan.C * plan.S
    if n > len(train_idx):
        raise ConfigError(f"batch size C*S={n} exceeds the {len(train_idx)} training samples")
    rng = episode_rng(plan.seed, epoch, episode)
    chosen = train_idx[rng.choice(len(train_idx), size=n, replace=False)]
    classes = sorted(set(ds.labels[chosen].tolist()))
    return make_episode(ds, classes, chosen)


def draw(ds, plan, epoch, episode, **kw):
    if plan.mode == TASK_LEVEL:
        return sample_episode(ds, plan, epoch, episode, by_class=kw.get("by_class"))
    return sample_batch(ds, plan, epoch, episode, train_idx=kw.get("train_idx"))


def episodes_per_epoch(ds, plan):
    """``ceil(n_train / (C*S))``, at least 1."""
    n_train = len(ds.indices(TRAIN)) if not isinstance(ds, int) else ds
    return max(1, math.ceil(n_train / (plan.C * plan.S)))
