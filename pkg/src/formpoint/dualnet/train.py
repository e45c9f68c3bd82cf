"""Training loop: plain SGD with momentum over pointer cross-entropy."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from ..docmodel import Corpus
from .config import ModelConfig, ModelParams, TaskBInstance
from .layers import masked_cross_entropy
from .model import Batch, PageFeatures, forward_batch, backward_batch, \
    init_params, key_text_feature

log = logging.getLogger("formpoint.dualnet")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    train_f1: float
    val_f1: float
    seconds: float


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)

    def final(self) -> EpochStats:
        return self.epochs[-1]

    def lines(self) -> list:
        return [f"epoch={e.epoch} loss={e.train_loss:.6f} "
                f"train_f1={e.train_f1:.4f} val_f1={e.val_f1:.4f} "
                f"sec={e.seconds:.1f}" for e in self.epochs]


def instances_from_documents(documents, cfg: ModelConfig) -> list:
    """One Task-B instance per link; over-budget pages are skipped."""
    instances = []
    skipped = 0
    for doc in documents:
        if len(doc.page.segments) > cfg.max_segments:
            skipped += 1
            continue
        for link in doc.links:
            key_text = doc.page.segment(link.key_segment).text
            instances.append(TaskBInstance(
                key_text=key_text, page=doc.page,
                gold_index=link.value_segment, intent=link.intent))
    if skipped:
        log.warning("skipped %d pages over the %d-segment budget",
                    skipped, cfg.max_segments)
    return instances


class FeatureCache:
    """PageFeatures and key-text features, computed once per page/key."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self._pages = {}
        self._keys = {}

    def page(self, page) -> PageFeatures:
        found = self._pages.get(id(page))
        if found is None:
            found = PageFeatures(page, self.cfg)
            self._pages[id(page)] = found
        return found

    def key(self, text: str) -> np.ndarray:
        found = self._keys.get(text)
        if found is None:
            found = key_text_feature(text, self.cfg)
            self._keys[text] = found
        return found

    def item(self, instance: TaskBInstance) -> tuple:
        return (self.page(instance.page), self.key(instance.key_text),
                instance.gold_class)


# Per-epoch train-set metric is computed on at most this many instances;
# inference uses wider batches than training for fewer dispatches.
TRAIN_EVAL_BUDGET = 960
EVAL_BATCH_FACTOR = 2


def predict_instances(params: ModelParams, instances, cfg: ModelConfig = None,
                      cache: FeatureCache = None) -> list:
    """Batched argmax predictions; None stands for the empty-value class."""
    cfg = cfg or params.config
    cache = cache or FeatureCache(cfg)
    step = cfg.batch_size * EVAL_BATCH_FACTOR
    out = []
    for start in range(0, len(instances), step):
        chunk = instances[start:start + step]
        batch = Batch([cache.item(inst) for inst in chunk], cfg)
        scores, valid, _ = forward_batch(params.tensors, batch, cfg)
        masked = np.where(valid > 0, scores, -np.inf)
        winners = masked.argmax(axis=1)
        out.extend(None if w == 0 else int(w) - 1 for w in winners)
    return out


def _weighted_f1(instances, preds) -> float:
    from ..evalkit import task_b_report
    return task_b_report(instances, preds).weighted_f1


def train(corpus, cfg: ModelConfig) -> tuple:
    """Train on corpus.splits['train'], tracking val each epoch.

    Accepts a Corpus or a plain document list (then no val tracking).
    Returns (ModelParams, TrainHistory). Deterministic for a fixed config
    seed on a single thread.
    """
    if isinstance(corpus, Corpus):
        train_docs = corpus.splits.get("train", [])
        val_docs = corpus.splits.get("val", [])
    else:
        train_docs, val_docs = list(corpus), []
    if not train_docs:
        raise ValueError("training corpus is empty")

    cache = FeatureCache(cfg)
    train_instances = instances_from_documents(train_docs, cfg)
    val_instances = instances_from_documents(val_docs, cfg)
    if not train_instances:
        raise ValueError("no trainable instances in corpus")

    params = init_params(cfg)
    velocity = {k: np.zeros_like(v) for k, v in params.tensors.items()}
    shuffle_rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([cfg.seed, 7])))
    drop_rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([cfg.seed, 8]))) \
        if cfg.dropout > 0 else None

    items = [cache.item(inst) for inst in train_instances]
    history = TrainHistory()
    for epoch in range(cfg.epochs):
        t0 = time.time()
        lr = cfg.learning_rate * (cfg.lr_decay ** epoch)
        order = shuffle_rng.permutation(len(items))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            chosen = [items[i] for i in order[start:start + cfg.batch_size]]
            batch = Batch(chosen, cfg)
            scores, valid, fwd_cache = forward_batch(
                params.tensors, batch, cfg, drop_rng)
            loss, d_scores, _ = masked_cross_entropy(scores, valid, batch.gold)
            if not math.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss {loss} at epoch {epoch} "
                    f"batch {start // cfg.batch_size}")
            grads = backward_batch(d_scores, fwd_cache, params.tensors, cfg)
            if cfg.grad_clip > 0:
                norm = math.sqrt(sum(float((g * g).sum())
                                     for g in grads.values()))
                if norm > cfg.grad_clip:
                    scale = cfg.grad_clip / norm
                    for g in grads.values():
                        g *= scale
            for name, grad in grads.items():
                v = velocity[name]
                v *= cfg.momentum
                v -= lr * grad
                params.tensors[name] += v
            losses.append(loss)

        eval_slice = train_instances[:TRAIN_EVAL_BUDGET]
        train_preds = predict_instances(params, eval_slice, cfg, cache)
        train_f1 = _weighted_f1(eval_slice, train_preds)
        if val_instances:
            val_preds = predict_instances(params, val_instances, cfg, cache)
            val_f1 = _weighted_f1(val_instances, val_preds)
        else:
            val_f1 = float("nan")
        stats = EpochStats(epoch=epoch, train_loss=float(np.mean(losses)),
                           train_f1=train_f1, val_f1=val_f1,
                           seconds=time.time() - t0)
        history.epochs.append(stats)
        log.info("epoch %d loss %.4f train_f1 %.4f val_f1 %.4f",
                 epoch, stats.train_loss, train_f1, val_f1)
        if cfg.early_stop_train_f1 is not None \
                and train_f1 >= cfg.early_stop_train_f1:
            log.info("early stop: train F1 %.4f reached", train_f1)
            break
    return params, history
