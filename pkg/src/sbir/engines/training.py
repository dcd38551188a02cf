from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from sbir.numerics.adam import AdamState, adam_step, clip_by_norm
from sbir.numerics.autograd import NonFiniteError, Tensor, grad
from sbir.numerics.module import Module

log = logging.getLogger(__name__)

# loss(model, row_indices, rng) -> scalar Tensor averaged over the rows
LossFn = Callable[[Module, np.ndarray, np.random.Generator], Tensor]


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 100
    validation_fraction: float = 0.1
    patience: int = 20
    max_epochs: int = 500
    learning_rate: float = 5e-4
    clip_norm: float | None = 5.0

    def __post_init__(self):
        if not 0 < self.validation_fraction < 0.5:
            raise ValueError("validation_fraction must be in (0, 0.5)")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0
    epochs: int = 0
    n_train: int = 0
    n_val: int = 0
    lr_halvings: int = 0
    final_train_loss: float = math.nan
    final_val_loss: float = math.nan

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def evaluate_loss(model, loss: LossFn, idx: np.ndarray, batch_size: int, seed: int) -> float:
    """Row-weighted mean loss over ``idx`` with a fixed RNG (for atom draws)."""
    rng = np.random.default_rng(seed)
    total, count = 0.0, 0
    for chunk in _chunks(idx, batch_size):
        total += float(loss(model, chunk, rng).value) * chunk.size
        count += chunk.size
    return total / count


def _chunks(idx: np.ndarray, batch_size: int) -> list[np.ndarray]:
    n_batches = max(1, int(math.ceil(idx.size / batch_size)))
    return [c for c in np.array_split(idx, n_batches) if c.size]


def train_estimator(
    model: Module,
    valid: np.ndarray,
    loss: LossFn,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> tuple[Module, TrainReport]:
    """Adam on shuffled minibatches with early stopping on held-out loss.

    Args:
        model: Trained in place; on return holds the best-validation weights.
        valid: Boolean mask over dataset rows; only valid rows are used.
        loss: Batch loss on row indices.
        cfg: Optimization settings.
        rng: Drives the split, shuffling and any randomness inside ``loss``.
    """
    rows = np.flatnonzero(np.asarray(valid, bool))
    if rows.size == 0:
        raise TrainingError("no valid rows to train on")
    if rows.size < 2 * cfg.batch_size:
        raise TrainingError(f"need at least {2 * cfg.batch_size} valid rows, got {rows.size}")
    perm = rng.permutation(rows)
    n_val = max(1, int(round(cfg.validation_fraction * rows.size)))
    val_idx, train_idx = np.sort(perm[:n_val]), perm[n_val:]
    val_seed = int(rng.integers(2**63))
    report = TrainReport(n_train=train_idx.size, n_val=n_val)

    params = model.get_flat()
    state = AdamState.zeros(params.size, lr=cfg.learning_rate)
    best = params.copy()
    best_val = math.inf
    stale = 0
    retried = False
    epoch = 0
    while epoch < cfg.max_epochs:
        start_params, start_state = params.copy(), state
        try:
            losses = []
            for batch in _chunks(rng.permutation(train_idx), cfg.batch_size):
                value = loss(model, batch, rng)
                g = model.flat_grad(grad(value, model.parameters()))
                if not np.all(np.isfinite(g)):
                    raise NonFiniteError("gradient")
                params, state = adam_step(params, clip_by_norm(g, cfg.clip_norm), state)
                model.set_flat(params)
                losses.append(float(value.value))
            val = evaluate_loss(model, loss, val_idx, cfg.batch_size, val_seed)
            if not math.isfinite(val):
                raise NonFiniteError("validation loss")
        except NonFiniteError as exc:
            if retried:
                raise TrainingError(f"non-finite loss persisted after halving lr: {exc}") from exc
            retried = True
            report.lr_halvings += 1
            log.warning("non-finite loss in epoch %d (%s); retrying with halved lr", epoch, exc)
            params = start_params
            state = start_state.with_lr(start_state.lr / 2)
            model.set_flat(params)
            continue
        epoch += 1
        report.train_loss.append(float(np.mean(losses)))
        report.val_loss.append(val)
        if val < best_val:
            best_val, best, stale = val, params.copy(), 0
            report.best_epoch = epoch
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    report.epochs = epoch
    model.set_flat(best)
    report.final_val_loss = evaluate_loss(model, loss, val_idx, cfg.batch_size, val_seed)
    report.final_train_loss = evaluate_loss(model, loss, np.sort(train_idx), cfg.batch_size, val_seed)
    return model, report
