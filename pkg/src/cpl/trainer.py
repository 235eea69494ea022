"""Episodic training loop: sample a task, build its prototypes, descend on the loss."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .core import ConfigError, DatasetError, HyperParams, NumericError, normalize_attributes, validate_dataset
from .dataio import FLAG_NORMALIZED_ATTRIBUTES, Checkpoint, load_checkpoint, save_checkpoint
from .evaluation import make_prototypes, per_class_accuracy, recognize_batch
from .net import AdamState, adam_step, apply_weight_decay, backward, forward, init_embedder
from .objective import episode_loss, episode_loss_grad
from .sampler import SAMPLE_LEVEL, TASK_LEVEL, EpisodePlan, draw, episodes_per_epoch

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    hyper: HyperParams = HyperParams()
    mode: str = TASK_LEVEL
    reduction: str = "mean"
    normalize_attributes: bool = False
    cep_only: bool = False
    schedule: str = "uniform"
    checkpoint_path: Path = None
    log_path: Path = None
    log_every: int = 0
    validation_classes: tuple = ()

    def __post_init__(self):
        if self.mode not in (TASK_LEVEL, SAMPLE_LEVEL):
            raise ConfigError(f"unknown sampling mode {self.mode!r}")
        if self.reduction not in ("mean", "sum"):
            raise ConfigError(f"unknown loss reduction {self.reduction!r}")
        if self.validation_classes and self.mode != TASK_LEVEL:
            raise ConfigError("validation-class selection needs task_level sampling")

    @property
    def flags(self):
        return FLAG_NORMALIZED_ATTRIBUTES if self.normalize_attributes else 0


@dataclass(frozen=True)
class TrainLogRecord:
    epoch: int
    episode: int
    cep: float
    pec: float
    combined: float
    millis: float


def write_train_log(path, records):
    lines = ["epoch,episode,cep,pec,combined,millis"]
    lines += [f"{r.epoch},{r.episode},{r.cep!r},{r.pec!r},{r.combined!r},{r.millis:.3f}" for r in records]
    Path(path).write_text("\n".join(lines) + "\n")


def _prepare(ds, cfg):
    problems = validate_dataset(ds)
    if problems:
        raise DatasetError(f"dataset violates {len(problems)} invariant(s): " + "; ".join(problems[:5]), problems)
    if cfg.normalize_attributes:
        ds = normalize_attributes(ds)
    bad = [c for c in cfg.validation_classes if c not in ds.seen_classes]
    if bad:
        raise ConfigError(f"validation classes {bad} are not seen classes")
    pool = tuple(c for c in ds.seen_classes if c not in set(cfg.validation_classes))
    if not pool:
        raise ConfigError("no seen classes left for training after holding out validation classes")
    h = cfg.hyper
    plan = EpisodePlan(h.C, h.S, h.seed, cfg.mode, cfg.schedule,
                       classes=pool if cfg.validation_classes else None)
    if cfg.mode == TASK_LEVEL and h.C > len(pool):
        raise ConfigError(f"C={h.C} exceeds the {len(pool)} seen classes available for episodes")
    by_class = ds.train_indices_by_class()
    empty = [c for c in pool if len(by_class.get(c, ())) == 0]
    if empty:
        raise DatasetError(f"seen classes {empty} have no training samples")
    train_idx = np.sort(np.concatenate([by_class[c] for c in pool]))
    if cfg.mode == SAMPLE_LEVEL and h.C * h.S > len(train_idx):
        raise ConfigError(f"batch size C*S={h.C * h.S} exceeds the {len(train_idx)} training samples")
    epe = episodes_per_epoch(len(train_idx), plan)
    return ds, plan, by_class, train_idx, epe


def _validation_accuracy(ds, emb, classes, by_class):
    idx = np.concatenate([by_class[c] for c in classes])
    protos = make_prototypes(emb, ds.attributes, classes)
    pred = recognize_batch(ds.features64(idx), protos)
    return per_class_accuracy(ds.labels[idx], pred, classes)[2]


def _run(ds, cfg, emb, adam, start_epoch, prepared):
    ds, plan, by_class, train_idx, epe = prepared
    h = cfg.hyper
    records = []
    best = (-1.0, emb)
    for epoch in range(start_epoch, start_epoch + h.epochs):
        for k in range(epe):
            t0 = time.perf_counter()
            ep = draw(ds, plan, epoch, k, by_class=by_class, train_idx=train_idx)
            protos, cache = forward(emb, ep.attribute_rows)
            loss = episode_loss(ep, protos, h.lam, h.gamma, cfg.reduction, cfg.cep_only)
            if not np.isfinite(loss.combined):
                raise NumericError(f"non-finite loss at epoch {epoch}, episode {k} "
                                   f"(cep={loss.cep}, pec={loss.pec})")
            try:
                upstream = episode_loss_grad(ep, protos, h.lam, h.gamma, cfg.reduction, cfg.cep_only)
                grads = backward(emb, cache, upstream)
                grads = apply_weight_decay(grads, emb, h.weight_decay)
                emb, adam = adam_step(emb, grads, adam, h.learning_rate)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, episode {k}: {exc}") from exc
            rec = TrainLogRecord(epoch, k, loss.cep, loss.pec, loss.combined,
                                 1000.0 * (time.perf_counter() - t0))
            records.append(rec)
            if cfg.log_every and len(records) % cfg.log_every == 0:
                log.info("epoch %d episode %d cep=%.5f pec=%.5f loss=%.5f",
                         epoch, k, rec.cep, rec.pec, rec.combined)
        if cfg.validation_classes:
            acc = _validation_accuracy(ds, emb, cfg.validation_classes, by_class)
            log.info("epoch %d validation accuracy %.4f", epoch, acc)
            if acc > best[0]:
                best = (acc, emb)
    return emb, adam, records, best[1] if cfg.validation_classes and best[0] >= 0 else emb


def _finish(cfg, emb, adam, records, selected, epochs_done):
    ck = Checkpoint(replace(cfg.hyper, epochs=epochs_done), emb, adam, cfg.flags)
    if cfg.checkpoint_path is not None:
        save_checkpoint(ck, cfg.checkpoint_path)
        if cfg.validation_classes:
            save_checkpoint(replace(ck, params=selected), f"{cfg.checkpoint_path}.best")
    if cfg.log_path is not None:
        write_train_log(cfg.log_path, records)
    return selected, records


def train(ds, cfg):
    """Train a fresh attribute embedder for ``cfg.hyper.epochs`` epochs.

    Returns ``(embedder, log_records)``. With validation classes the
    returned embedder is the best epoch's; the checkpoint always holds the
    final optimizer state.
    """
    prepared = _prepare(ds, cfg)
    h = cfg.hyper
    emb = init_embedder(ds.d_attr, h.hidden_size, ds.d_feat, h.seed)
    adam = AdamState.fresh(emb)
    emb, adam, records, selected = _run(ds, cfg, emb, adam, 0, prepared)
    return _finish(cfg, emb, adam, records, selected, h.epochs)


def resume(ds, cfg, checkpoint):
    """Continue training from ``checkpoint`` for ``cfg.hyper.epochs`` more epochs."""
    if not isinstance(checkpoint, Checkpoint):
        checkpoint = load_checkpoint(checkpoint)
    p, h = checkpoint.params, cfg.hyper
    want = (ds.d_attr, h.hidden_size, ds.d_feat)
    have = (p.d_attr, p.hidden_size, p.d_feat)
    if want != have:
        raise ConfigError(f"checkpoint dimensions (d_attr, hidden, d_feat)={have} do not match {want}")
    if checkpoint.flags != cfg.flags:
        raise ConfigError(f"checkpoint flags {checkpoint.flags} do not match config flags {cfg.flags}")
    prepared = _prepare(ds, cfg)
    epe = prepared[-1]
    done, rem = divmod(checkpoint.step, epe)
    if rem:
        raise ConfigError(f"checkpoint step {checkpoint.step} is not a whole number of "
                          f"{epe}-episode epochs for this dataset and config")
    emb, adam, records, selected = _run(ds, cfg, checkpoint.params, checkpoint.adam, done, prepared)
    return _finish(cfg, emb, adam, records, selected, done + h.epochs)
