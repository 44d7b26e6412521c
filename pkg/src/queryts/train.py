"""Training loop with validation-loss early stopping.

Optimization is Adam; early stopping fires at the first epoch where the
validation loss has not strictly improved for `patience` consecutive epochs,
and the best-validation parameter snapshot is what survives. Everything is
deterministic given (data, config, seed): the only per-seed variation is
parameter initialization and batch order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ValidationError
from .model import make_forecast_batch, masked_mse_loss
from .params import AdamState, adam_step
from . import tensor as T


@dataclass
class TrainConfig:
    task: str = "forecast"
    epochs: int = 150
    patience: int = 50
    batch_size: int = 16
    learning_rate: float = 1e-3
    seeds: tuple = (1, 2, 3, 4, 5)

    def __post_init__(self):
        if self.patience < 1:
            raise ValidationError("patience must be >= 1")
        if not self.seeds:
            raise ValidationError("seeds must be nonempty")
        if self.task not in ("forecast", "classify"):
            raise ValidationError(f"unknown task {self.task!r}")


@dataclass
class TrainResult:
    best_arrays: dict
    best_val: float
    best_epoch: int
    stopped_epoch: int
    curve: list = field(default_factory=list)   # (epoch, train_loss, val_loss)


def split_instances(instances, test_fraction, val_fraction, split_seed):
    """Instance-level split, fixed by the data seed (training seeds never
    change the split). Returns (train, val, test) lists."""
    n = len(instances)
    if n < 3:
        raise ValidationError("need at least 3 instances to split")
    rng = np.random.default_rng([split_seed, 101])
    perm = rng.permutation(n)
    n_test = max(1, round(test_fraction * n))
    test_idx = sorted(perm[:n_test])
    rest = perm[n_test:]
    n_val = max(1, round(val_fraction * len(rest)))
    val_idx = sorted(rest[:n_val])
    train_idx = sorted(rest[n_val:])
    if not train_idx:
        raise ValidationError("split left no training instances")
    pick = lambda idx: [instances[i] for i in idx]
    return pick(train_idx), pick(val_idx), pick(test_idx)


def _chunks(items, size):
    for i in range(0, len(items), size):
        yield items[i:i + size]


def _epoch_rng(seed, epoch):
    return np.random.default_rng([seed, epoch, 7919])


def train_model(model, loss_fn, train_items, val_items, tc: TrainConfig, seed):
    """Generic loop: ``loss_fn(model, items) -> (Tensor loss, weight)`` where
    weight is the number of contributing targets (for weighted averaging)."""
    opt = AdamState(model.params, tc.learning_rate)
    best_val = float("inf")
    best_epoch = -1
    best_arrays = model.params.state_arrays()
    stale = 0
    curve = []
    order = np.arange(len(train_items))
    for epoch in range(tc.epochs):
        rng = _epoch_rng(seed, epoch)
        rng.shuffle(order)
        train_se, train_n = 0.0, 0.0
        for batch_idx in _chunks(order, tc.batch_size):
            batch = [train_items[i] for i in batch_idx]
            try:
                loss, weight = loss_fn(model, batch)
                loss.backward()
            except NumericalError as e:
                raise NumericalError(f"training diverged at epoch {epoch}: {e}") from e
            adam_step(model.params, opt)
            train_se += loss.item() * weight
            train_n += weight
        val_se, val_n = 0.0, 0.0
        for batch in _chunks(val_items, tc.batch_size):
            try:
                loss, weight = loss_fn(model, batch)
            except NumericalError as e:
                raise NumericalError(f"training diverged at epoch {epoch}: {e}") from e
            val_se += loss.item() * weight
            val_n += weight
            model.params.zero_grad()
        train_loss = train_se / max(train_n, 1.0)
        val_loss = val_se / max(val_n, 1.0)
        if not np.isfinite(val_loss) or not np.isfinite(train_loss):
            raise NumericalError(f"training diverged at epoch {epoch}")
        curve.append((epoch, train_loss, val_loss))
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_arrays = model.params.state_arrays()
            stale = 0
        else:
            stale += 1
            if stale >= tc.patience:
                break
    model.params.load_arrays(best_arrays)
    return TrainResult(best_arrays, best_val, best_epoch, epoch, curve)


# -- task-specific loss closures ---------------------------------------------------

def forecast_loss_fn(model_cfg, predict):
    """``predict(fb) -> Tensor [B x Lp x N]``; loss weight is the target count."""
    def fn(model, splits):
        fb = make_forecast_batch(splits, model_cfg)
        preds = predict(fb)
        loss = masked_mse_loss(preds, fb.targets, fb.target_mask)
        return loss, float(fb.target_mask.sum())
    return fn


def classify_loss_fn(batch_fn):
    """``batch_fn(instances) -> (PaddedBatch, labels)``; model must expose
    ``classify``."""
    def fn(model, instances):
        padded, labels = batch_fn(instances)
        logits = model.classify(padded)
        loss = T.cross_entropy(logits, labels)
        return loss, float(len(labels))
    return fn
