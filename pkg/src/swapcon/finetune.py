"""Supervised finetuning of a (pre)trained trunk with a classification head."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .embed import FittedEmbedder
from .flowdata import FlowTable
from .neuralnet import Adam, Network, backward, forward, freeze_prefix, init_block, predict


class FinetuneError(ValueError):
    pass


@dataclass
class FinetuneConfig:
    mode: str = "full"  # "full" | "partial"
    frozen_prefix: int = 0
    head_layers: int = 3
    head_width: int = 128
    max_epochs: int = 2
    eval_every: int = 200
    patience: int = 1
    batch_size: int = 128
    lr: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("full", "partial"):
            raise FinetuneError(f"mode must be 'full' or 'partial', got {self.mode!r}")
        if self.mode == "partial" and self.frozen_prefix < 1:
            raise FinetuneError("partial finetuning needs frozen_prefix >= 1")
        if self.head_layers < 1:
            raise FinetuneError("head_layers must be >= 1")
        if self.batch_size < 2 or self.eval_every < 1 or self.patience < 1 or self.max_epochs < 0:
            raise FinetuneError("batch_size >= 2, eval_every >= 1, patience >= 1, max_epochs >= 0")


def attach_head(pretrained: Network, head_layers: int, widths: int | list[int] = 128,
                seed: int = 0) -> Network:
    """Copy ``pretrained`` and stack ``head_layers`` classification layers.

    Hidden head layers are relu blocks with batch norm; the last layer is a
    plain linear map to one logit, initialised to zero.
    """
    if head_layers < 1:
        raise FinetuneError("need at least one head layer")
    hidden = [widths] * (head_layers - 1) if isinstance(widths, int) else list(widths)
    if len(hidden) != head_layers - 1:
        raise FinetuneError(f"{head_layers} head layers need {head_layers - 1} hidden widths")
    net = pretrained.copy()
    rng = np.random.default_rng([int(seed), 17])
    prev = net.output_width
    for w in hidden:
        net.blocks.append(init_block(prev, w, "relu", rng))
        prev = w
    net.blocks.append(init_block(prev, 1, "none", rng, use_bn=False, zero=True))
    net.trunk_size = pretrained.trunk_size or len(pretrained.blocks)
    net.meta = dict(pretrained.meta, head_seed=int(seed), head_layers=head_layers)
    return net


def bce_loss(logits, labels):
    """Mean sigmoid cross-entropy and its gradient w.r.t. the logits."""
    z = np.asarray(logits, dtype=np.float64).reshape(-1)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(z)):
        raise FinetuneError("non-finite logits")
    # log(1 + e^z) - y z, in a form that never overflows
    per = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    sig = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
    return float(per.mean()), (sig - y) / z.size


def score_table(net: Network, embedder: FittedEmbedder, table: FlowTable,
                batch_size: int = 2048) -> np.ndarray:
    """Eval-mode logits for every record of ``table``."""
    out = np.empty(len(table))
    for lo in range(0, len(table), batch_size):
        idx = np.arange(lo, min(lo + batch_size, len(table)))
        X = embedder.embed_table(table, idx).reshape(idx.size, -1)
        out[idx] = predict(net, X)[:, 0]
    return out


@dataclass
class EarlyStopState:
    patience: int = 1
    best_auc: float = -math.inf
    best_step: int = -1
    snapshot: Network | None = None
    since_improvement: int = 0
    history: list = field(default_factory=list)

    def update(self, step: int, auc: float, net: Network) -> bool:
        """Record one evaluation; return True when training should stop."""
        self.history.append((step, auc))
        if auc > self.best_auc:
            self.best_auc = auc
            self.best_step = step
            self.snapshot = net.copy()
            self.since_improvement = 0
        else:
            self.since_improvement += 1
        return self.since_improvement >= self.patience


def finetune(net: Network, embedder: FittedEmbedder, finetune_set: FlowTable,
             validation_set: FlowTable, cfg: FinetuneConfig, evaluate=None):
    """Train with BCE and early stopping on validation AUC.

    Returns ``(net, log)`` where ``net`` holds the best snapshot and
    ``log`` is a list of ``(step, train_loss, val_auc, stopped)`` rows
    (``val_auc`` is NaN on steps without an evaluation).
    """
    from .evalharness import auc as auc_fn

    if len(validation_set) == 0 and evaluate is None:
        raise FinetuneError("validation set is empty")
    if embedder.trainable:
        raise FinetuneError("embedder must be frozen before finetuning")
    if evaluate is None:
        y_val = validation_set.labels

        def evaluate(model):
            return auc_fn(score_table(model, embedder, validation_set), y_val).auc

    freeze_prefix(net, cfg.frozen_prefix if cfg.mode == "partial" else 0)
    opt = Adam(lr=cfg.lr)
    rng = np.random.default_rng([int(cfg.seed), 31])
    stop = EarlyStopState(cfg.patience)
    log: list[list] = []
    n = len(finetune_set)
    step = 0
    stopped = False

    def checkpoint():
        nonlocal stopped
        score = float(evaluate(net))
        stopped = stop.update(step, score, net)
        log[-1][2] = score
        log[-1][3] = stopped

    for _ in range(cfg.max_epochs):
        order = rng.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            if idx.size < 2:
                continue
            X = embedder.embed_table(finetune_set, idx).reshape(idx.size, -1)
            y = finetune_set.labels[idx]
            net.train()
            out, caches = forward(net, X)
            loss, dlogit = bce_loss(out[:, 0], y)
            grads, _ = backward(net, caches, dlogit[:, None])
            opt.step(net.params(), grads, net.frozen_names())
            step += 1
            log.append([step, loss, math.nan, False])
            if step % cfg.eval_every == 0:
                checkpoint()
                if stopped:
                    break
        if stopped:
            break
        if log and math.isnan(log[-1][2]):
            checkpoint()
            if stopped:
                break
    if stop.snapshot is None:
        if log:
            checkpoint()
        else:
            stop.update(0, float(evaluate(net)), net)
    best = stop.snapshot
    best.mode = "eval"
    best.meta = dict(best.meta, best_val_auc=stop.best_auc, best_step=stop.best_step)
    return best, [tuple(r) for r in log]


def write_training_log(path, log) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "train_loss", "val_auc", "stopped_flag"])
        for step, loss, val, flag in log:
            w.writerow([step, repr(float(loss)), "" if math.isnan(val) else repr(float(val)),
                        int(bool(flag))])
