"""Optimization loop: masked MSE, Adam, plateau LR scheduling, early stopping.

Three regimes share one loop. Subject-specific (ss) and pooled runs start
from a fresh deterministic initialization; fine-tuning (ft) warm-starts
from a pooled checkpoint. The best checkpoint is selected by validation
loss, validation always runs the eval-mode forward, and every random
choice derives from the training seed, so identical configs reproduce
identical histories.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import corpus
from . import model as mdl
from . import numerics as nm
from .errors import (
    ConfigError,
    DegenerateBatchError,
    NumericError,
    RegistryConflictError,
    ShapeError,
)

REGIMES = ("ss", "pooled", "ft")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    regime: str = "ss"
    learning_rate: float = 1e-4
    batch_size: int = 16
    scheduler_factor: float = 0.5
    scheduler_patience: int = 5
    min_lr: float = 1e-6
    early_stop_patience: int = 15
    max_epochs: int = 300
    seed: int = 0
    warm_start: str | None = None

    def validate(self) -> None:
        if self.regime not in REGIMES:
            raise ConfigError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.regime == "ft" and not self.warm_start:
            raise ConfigError("fine-tuning needs a warm-start checkpoint path")
        if self.max_epochs < 0:
            raise ConfigError(f"max epochs must be >= 0, got {self.max_epochs}")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")


@dataclass
class HistoryRow:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float


@dataclass
class TrainState:
    lr: float
    epoch: int = 0
    step: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)
    best_val: float | None = None
    since_improve: int = 0
    sched_wait: int = 0
    history: list[HistoryRow] = field(default_factory=list)


def masked_mse(pred: nm.Tensor, target: nm.Tensor, mask: np.ndarray,
               tape: nm.GradientTape | None = None) -> nm.Tensor:
    """Mean squared error over valid frames and all output channels.

    The sum of squared errors over `mask`-valid frames is divided by
    (valid_frame_count x channels), so appending padded frames leaves the
    value untouched.
    """
    if pred.shape != target.shape:
        raise ShapeError(f"pred shape {pred.shape} != target shape {target.shape}")
    if pred.data.ndim != 3 or mask.shape != pred.shape[:2]:
        raise ShapeError(
            f"expected (B, T, C) tensors with (B, T) mask, got {pred.shape} / {mask.shape}")
    valid = int(mask.sum())
    if valid == 0:
        raise DegenerateBatchError("batch has no valid frames")
    mask3 = nm.Tensor(mask[..., None].astype(np.float64))
    diff = nm.sub(pred, target, tape)
    sq = nm.mul(diff, diff, tape)
    total = nm.sum_all(nm.mul(sq, mask3, tape), tape)
    return nm.scale(total, 1.0 / (valid * pred.shape[2]), tape)


def adam_step(params: mdl.ModelParams, grads: dict[str, nm.Tensor],
              state: TrainState, lr: float) -> None:
    """One in-place Adam update with bias correction."""
    state.step += 1
    t = state.step
    bias1 = 1.0 - ADAM_BETA1 ** t
    bias2 = 1.0 - ADAM_BETA2 ** t
    for name, tensor in params.tensors.items():
        g = grads[name].data
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        if g.shape != tensor.shape:
            raise ShapeError(f"gradient for {name!r} has shape {g.shape}, "
                             f"parameter has {tensor.shape}")
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(tensor.data)
            v = np.zeros_like(tensor.data)
        m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * (g * g)
        state.first_moment[name] = m
        state.second_moment[name] = v
        tensor.data -= lr * (m / bias1) / (np.sqrt(v / bias2) + ADAM_EPS)


def scheduler_step(state: TrainState, val_loss: float, factor: float = 0.5,
                   patience: int = 5, min_lr: float = 1e-6) -> bool:
    """Reduce-on-plateau bookkeeping; returns True when val_loss improves.

    After `patience` consecutive non-improving epochs the learning rate is
    multiplied by `factor` (floored at `min_lr`) and the wait resets.
    """
    if not np.isfinite(val_loss):
        raise NumericError(f"validation loss is not finite: {val_loss}")
    improved = state.best_val is None or val_loss < state.best_val
    if improved:
        state.best_val = val_loss
        state.since_improve = 0
        state.sched_wait = 0
    else:
        state.since_improve += 1
        state.sched_wait += 1
        if state.sched_wait >= patience:
            state.lr = max(state.lr * factor, min_lr)
            state.sched_wait = 0
    return improved


def dataset_loss(params: mdl.ModelParams, batches: list[corpus.Batch]) -> float:
    """Frame-weighted eval-mode MSE over a batch list."""
    total_sq = 0.0
    total_frames = 0
    for batch in batches:
        pred = mdl.forward(params, batch, mode="eval")
        valid = int(batch.mask.sum())
        loss = masked_mse(pred, nm.Tensor(batch.targets), batch.mask).item()
        total_sq += loss * valid
        total_frames += valid
    if total_frames == 0:
        raise DegenerateBatchError("no valid frames in dataset")
    return total_sq / total_frames


def _epoch_rng(seed: int, epoch: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, epoch, stream]))


def initial_params(model_config: mdl.ModelConfig, cfg: TrainConfig,
                   data_dim: int) -> mdl.ModelParams:
    """Fresh or warm-started parameters for a training run."""
    cfg.validate()
    if cfg.regime == "ft":
        params = mdl.load_checkpoint(cfg.warm_start)
        if params.config.input_dim != data_dim:
            raise RegistryConflictError(
                f"warm-start checkpoint expects {params.config.input_dim}-dim features, "
                f"corpus provides {data_dim}")
        return params
    if model_config.input_dim != data_dim:
        raise ConfigError(
            f"model config expects {model_config.input_dim}-dim features, "
            f"corpus provides {data_dim}")
    return mdl.build_model(model_config, cfg.seed)


def train(model_config: mdl.ModelConfig, train_utts: list[corpus.LoadedUtterance],
          val_utts: list[corpus.LoadedUtterance], cfg: TrainConfig,
          progress=None):
    """Run one training job; returns (best params, history rows).

    Epoch 0 records the pre-update losses, so a fine-tuning run's first
    validation loss is exactly the warm-start checkpoint's. Training stops
    at `max_epochs` or once validation has not improved for
    `early_stop_patience` epochs; the returned parameters are the
    best-validation snapshot, not the final state.
    """
    cfg.validate()
    if not train_utts or not val_utts:
        raise ConfigError("training needs non-empty train and validation sets")
    params = initial_params(model_config, cfg, train_utts[0].dim)
    state = TrainState(lr=cfg.learning_rate)

    val_batches = corpus.make_batches(val_utts, cfg.batch_size, shuffle=False)
    train_eval_batches = corpus.make_batches(train_utts, cfg.batch_size, shuffle=False)

    train_loss = dataset_loss(params, train_eval_batches)
    val_loss = dataset_loss(params, val_batches)
    scheduler_step(state, val_loss, cfg.scheduler_factor, cfg.scheduler_patience,
                   cfg.min_lr)
    best_params = params.clone()
    state.history.append(HistoryRow(0, train_loss, val_loss, state.lr))
    if progress is not None:
        progress(state.history[-1])

    for epoch in range(1, cfg.max_epochs + 1):
        state.epoch = epoch
        shuffle_seed = int(_epoch_rng(cfg.seed, epoch, 1).integers(2 ** 31))
        dropout_rng = _epoch_rng(cfg.seed, epoch, 2)
        batches = corpus.make_batches(train_utts, cfg.batch_size,
                                      seed=shuffle_seed, shuffle=True)
        sq_sum = 0.0
        frame_sum = 0
        for batch in batches:
            tape = nm.GradientTape()
            pred = mdl.forward(params, batch, mode="train", tape=tape, rng=dropout_rng)
            loss = masked_mse(pred, nm.Tensor(batch.targets), batch.mask, tape)
            tape.watch(*params.tensors.values())
            grad_by_tensor = nm.backward(tape, loss)
            grads = {name: grad_by_tensor[tensor]
                     for name, tensor in params.tensors.items()}
            adam_step(params, grads, state, state.lr)
            valid = int(batch.mask.sum())
            sq_sum += loss.item() * valid
            frame_sum += valid
        train_loss = sq_sum / frame_sum
        val_loss = dataset_loss(params, val_batches)
        if scheduler_step(state, val_loss, cfg.scheduler_factor,
                          cfg.scheduler_patience, cfg.min_lr):
            best_params = params.clone()
        state.history.append(HistoryRow(epoch, train_loss, val_loss, state.lr))
        if progress is not None:
            progress(state.history[-1])
        if state.since_improve >= cfg.early_stop_patience:
            break
    return best_params, state.history


def write_history_csv(history: list[HistoryRow], path) -> None:
    """Emit epoch/train_loss/val_loss/lr rows; floats use repr for
    byte-identical reruns."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss", "lr"])
        for row in history:
            writer.writerow([row.epoch, repr(row.train_loss), repr(row.val_loss),
                             repr(row.lr)])
