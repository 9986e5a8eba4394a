"""Adam with decoupled weight decay, global-norm clipping, plateau LR schedule, early stopping."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DivergedTraining, EmptyTrainingSet, LeakageError, NonFiniteActivation, NonFiniteUpdate
from .model import ModelDims, ParamVector, backward, batch_loss, forward, init_params

log = logging.getLogger(__name__)

LR_FLOOR = 1e-6
IMPROVEMENT_EPS = 1e-6


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-5
    clip_norm: float = 1.0
    max_epochs: int = 100
    early_stop_patience: int = 15
    plateau_patience: int = 10
    plateau_factor: float = 0.5
    batch_size: int = 64
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    val_fraction: float = 0.2
    early_stop_metric: str = "val_loss"  # or "val_macro_f1"
    dtype: str = "float32"

    def __post_init__(self):
        for name in ("lr", "clip_norm", "adam_eps", "batch_size", "max_epochs"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        if not 0.0 < self.plateau_factor < 1.0:
            raise ValueError("plateau_factor must lie in (0, 1)")
        for name in ("early_stop_patience", "plateau_patience"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be an integer >= 1")
        if not (0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.early_stop_metric not in ("val_loss", "val_macro_f1"):
            raise ValueError("early_stop_metric must be val_loss or val_macro_f1")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")


@dataclass
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros_like(cls, flat: np.ndarray) -> "OptimizerState":
        return cls(np.zeros_like(flat), np.zeros_like(flat), 0)

    def copy(self) -> "OptimizerState":
        return OptimizerState(self.m.copy(), self.v.copy(), self.step)


def adam_step(
    params: np.ndarray, grads: np.ndarray, state: OptimizerState, config: TrainConfig, lr: float | None = None
) -> tuple[np.ndarray, OptimizerState]:
    """One Adam update with decoupled weight decay applied first. Pure: inputs are not mutated."""
    if not np.isfinite(grads).all():
        raise NonFiniteUpdate("non-finite gradient passed to Adam")
    lr = config.lr if lr is None else lr
    b1, b2 = config.adam_beta1, config.adam_beta2
    t = state.step + 1
    m = b1 * state.m + (1.0 - b1) * grads
    v = b2 * state.v + (1.0 - b2) * grads * grads
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    new = params - lr * config.weight_decay * params
    new = new - lr * m_hat / (np.sqrt(v_hat) + config.adam_eps)
    new = new.astype(params.dtype, copy=False)
    if not np.isfinite(new).all():
        raise NonFiniteUpdate("Adam produced non-finite parameters")
    return new, OptimizerState(m.astype(params.dtype), v.astype(params.dtype), t)


def clip_gradients(grads: np.ndarray, clip_norm: float) -> np.ndarray:
    norm = float(np.sqrt(np.sum(np.square(grads, dtype=np.float64))))
    if norm > clip_norm:
        return grads * (clip_norm / norm)
    return grads


class PlateauScheduler:
    """Halve the LR after ``patience`` epochs without an improvement of more than 1e-6."""

    def __init__(self, lr: float, patience: int = 10, factor: float = 0.5, floor: float = LR_FLOOR):
        self.lr = lr
        self.patience = patience
        self.factor = factor
        self.floor = floor
        self.best = np.inf
        self.bad_epochs = 0

    def step(self, metric: float) -> float:
        if metric < self.best - IMPROVEMENT_EPS:
            self.best = metric
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr = max(self.lr * self.factor, self.floor)
                self.bad_epochs = 0
        return self.lr


def plateau_schedule(history: Sequence[float], current_lr: float, config: TrainConfig = TrainConfig()) -> float:
    """Replay ``history`` through a fresh scheduler starting at ``current_lr``."""
    if not history:
        raise ValueError("history must be nonempty")
    sched = PlateauScheduler(current_lr, config.plateau_patience, config.plateau_factor)
    for loss in history:
        sched.step(loss)
    return sched.lr


class EarlyStopping:
    def __init__(self, patience: int = 15):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, epoch: int, metric: float) -> tuple[bool, bool]:
        """Returns ``(improved, stop)``; lower ``metric`` is better."""
        if metric < self.best - IMPROVEMENT_EPS:
            self.best = metric
            self.best_epoch = epoch
            self.bad_epochs = 0
            return True, False
        self.bad_epochs += 1
        return False, self.bad_epochs >= self.patience


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float
    stopped: bool


@dataclass
class FitResult:
    params: ParamVector
    log: list[EpochLog] = field(default_factory=list)
    best_epoch: int = 0

    def log_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "lr", "stopped"])
        for e in self.log:
            w.writerow([e.epoch, f"{e.train_loss:.8g}", f"{e.val_loss:.8g}", f"{e.lr:.8g}", int(e.stopped)])
        return buf.getvalue()


def evaluate_loss(params: ParamVector, x: np.ndarray, y: np.ndarray, batch_size: int = 256) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and probabilities in evaluation mode."""
    total = 0.0
    probs = []
    for s in range(0, len(x), batch_size):
        fw = forward(params, x[s : s + batch_size])
        total += batch_loss(fw, y[s : s + batch_size]) * len(fw.probs)
        probs.append(fw.probs)
    return total / max(len(x), 1), np.concatenate(probs)


def _macro_f1(y_true, y_pred, n_classes):
    from .evaluation import ConfusionMatrix, macro_f1

    return macro_f1(ConfusionMatrix.from_labels(y_true, y_pred, n_classes))


def train_step(params: ParamVector, state: OptimizerState, xb, yb, config: TrainConfig, lr: float, rng):
    try:
        fw = forward(params, xb, train=True, rng=rng)
    except NonFiniteActivation:
        return float("nan"), state
    loss = batch_loss(fw, yb)
    if not np.isfinite(loss):
        return loss, state
    grads = clip_gradients(backward(params, fw, yb).flat, config.clip_norm)
    new_flat, state = adam_step(params.flat, grads, state, config, lr)
    params.flat[...] = new_flat
    return loss, state


def fit(
    x_train: np.ndarray,
    y_train: np.ndarray,
    x_val: np.ndarray,
    y_val: np.ndarray,
    config: TrainConfig = TrainConfig(),
    dims: ModelDims | None = None,
    *,
    model_seed: int | None = None,
    train_folds: np.ndarray | None = None,
    val_folds: np.ndarray | None = None,
    test_fold: int | None = None,
    evaluator=None,
) -> FitResult:
    """Mini-batch training with validation-driven scheduling and early stopping.

    Returns the parameters of the best validation epoch. ``train_folds`` /
    ``val_folds`` carry each window's fold tag; any window tagged
    ``test_fold`` raises :class:`LeakageError`. ``evaluator(params) -> metric``
    replaces the validation loss when given (lower is better).
    """
    if len(x_train) == 0:
        raise EmptyTrainingSet("no training windows")
    if len(x_val) == 0 and evaluator is None:
        raise EmptyTrainingSet("no validation windows")
    if test_fold is not None:
        for tags in (train_folds, val_folds):
            if tags is None:
                raise LeakageError("fold provenance missing for training windows")
            if np.any(np.asarray(tags) == test_fold):
                raise LeakageError(f"a window from test fold {test_fold} reached training")
    dtype = np.dtype(config.dtype)
    dims = dims or ModelDims(input_dim=x_train.shape[2])
    params = init_params(config.seed if model_seed is None else model_seed, dims, dtype)
    x_train = np.asarray(x_train, dtype=dtype)
    x_val = np.asarray(x_val, dtype=dtype)
    y_train = np.asarray(y_train)
    y_val = np.asarray(y_val)
    rng = np.random.default_rng([config.seed, 7])
    state = OptimizerState.zeros_like(params.flat)
    sched = PlateauScheduler(config.lr, config.plateau_patience, config.plateau_factor)
    stopper = EarlyStopping(config.early_stop_patience)
    best = params.copy()
    result = FitResult(best)
    lr = config.lr
    bad_batches = 0
    n = len(x_train)
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        losses = []
        for s in range(0, n, config.batch_size):
            idx = order[s : s + config.batch_size]
            loss, state = train_step(params, state, x_train[idx], y_train[idx], config, lr, rng)
            if not np.isfinite(loss):
                bad_batches += 1
                if bad_batches >= 2:
                    raise DivergedTraining(f"non-finite loss twice in a row (epoch {epoch})")
                continue
            bad_batches = 0
            losses.append(loss * len(idx))
        train_loss = float(np.sum(losses) / n) if losses else float("nan")
        if evaluator is not None:
            val_loss = float(evaluator(params))
            metric = val_loss
        else:
            val_loss, probs = evaluate_loss(params, x_val, y_val)
            if config.early_stop_metric == "val_macro_f1":
                metric = -_macro_f1(y_val, probs.argmax(axis=1) + 1, dims.num_classes)
            else:
                metric = val_loss
        improved, stop = stopper.update(epoch, metric)
        if improved:
            best = params.copy()
            result.best_epoch = epoch
        lr = sched.step(metric)
        result.log.append(EpochLog(epoch, train_loss, val_loss, lr, stop))
        log.debug("epoch %d train %.4f val %.4f lr %.2e", epoch, train_loss, val_loss, lr)
        if stop:
            break
    result.params = best
    return result
