"""Cross-validated training, fine-tuning and feature extraction."""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import InsufficientData
from .model import Architecture, UNetNoSkip
from .optim import Adam, CosineSchedule, lr_at

log = logging.getLogger(__name__)

IMPROVEMENT_TOL = 1e-6


@dataclass
class TrainConfig:
    batch_size: int = 12
    lr0: float = 1e-3
    first_period: float = 20.0
    period_mult: float = 2.0
    lr_floor: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    early_stop_patience: int = 10
    max_epochs: int = 140
    folds: int = 5
    fine_tune_lr0: float = 1e-4
    fine_tune_epochs: int = 5

    @property
    def schedule(self) -> CosineSchedule:
        return CosineSchedule(self.lr0, self.first_period, self.period_mult, self.lr_floor)

    @property
    def adam(self) -> Adam:
        return Adam(self.beta1, self.beta2, self.eps)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochRecord:
    fold: int
    epoch: int
    lr: float
    train_loss: float
    val_loss: float


@dataclass
class FoldResult:
    fold: int
    model: UNetNoSkip
    train_idx: np.ndarray
    val_idx: np.ndarray
    best_val_loss: float
    best_epoch: int
    epochs_run: int
    history: list[EpochRecord] = field(default_factory=list)


@dataclass
class TrainResult:
    folds: list[FoldResult]
    best_fold: int

    @property
    def best(self) -> FoldResult:
        return self.folds[self.best_fold]

    @property
    def history(self) -> list[EpochRecord]:
        return [r for f in self.folds for r in f.history]


def stratified_folds(labels, n_folds: int, seed: int) -> np.ndarray:
    """Fold index per sample; each class is shuffled and dealt round-robin."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    fold = np.empty(len(labels), dtype=np.int64)
    offset = 0
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if len(idx) < n_folds:
            raise InsufficientData(f"class {c} has {len(idx)} samples, need >= {n_folds}")
        idx = idx[rng.permutation(len(idx))]
        # rotate the starting fold per class so fold sizes stay balanced
        fold[idx] = (np.arange(len(idx)) + offset) % n_folds
        offset += len(idx)
    return fold


def _batches(n: int, batch_size: int):
    for start in range(0, n, batch_size):
        yield slice(start, min(start + batch_size, n))


def evaluate_loss(model: UNetNoSkip, x: np.ndarray, batch_size: int = 12) -> float:
    """Eval-mode loss, averaged per element over the whole set."""
    total, count = 0.0, 0
    for sl in _batches(len(x), batch_size):
        xb = x[sl]
        total += model.eval_loss(xb, xb) * len(xb)
        count += len(xb)
    return total / count


def run_epochs(model: UNetNoSkip, x_train: np.ndarray, config: TrainConfig, rng: np.random.Generator,
               epochs: int, schedule: CosineSchedule, x_val: np.ndarray | None = None,
               fold: int = 0, patience: int | None = None, target: np.ndarray | None = None):
    """Mini-batch Adam over ``epochs`` with optional early stopping on ``x_val``.

    Returns ``(history, best_val, best_epoch)``; when validating, the model is
    left holding the parameters from its best epoch.
    """
    target = x_train if target is None else target
    adam = config.adam
    state = adam.init(model.params)
    n = len(x_train)
    n_batches = -(-n // config.batch_size)
    history = []
    best_val, best_epoch, best_state, since = np.inf, -1, None, 0
    for epoch in range(epochs):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        total = 0.0
        first_lr = None
        for b, sl in enumerate(_batches(n, config.batch_size)):
            idx = order[sl]
            lr = lr_at(epoch + b / n_batches, schedule)
            first_lr = lr if first_lr is None else first_lr
            value = model.loss_and_grad(x_train[idx], target[idx])
            adam.step(model.params, model.grads, state, lr)
            total += value * len(idx)
        train_loss = total / n
        val_loss = evaluate_loss(model, x_val, config.batch_size) if x_val is not None else float("nan")
        history.append(EpochRecord(fold, epoch, first_lr, train_loss, val_loss))
        log.info("fold %d epoch %d lr %.2e train %.5f val %.5f (%.1fs)", fold, epoch, first_lr,
                 train_loss, val_loss, time.perf_counter() - t0)
        if x_val is None:
            continue
        if val_loss < best_val - IMPROVEMENT_TOL:
            best_val, best_epoch, since = val_loss, epoch, 0
            best_state = {k: v.copy() for k, v in model.state().items()}
        else:
            since += 1
            if patience is not None and since >= patience:
                log.info("fold %d: early stop after epoch %d", fold, epoch)
                break
    if best_state is not None:
        model.load_state(best_state)
    return history, best_val, best_epoch


def train(x: np.ndarray, labels, config: TrainConfig, arch: Architecture, seed: int = 0,
          folds: list[int] | None = None, fold_seed: int | None = None) -> TrainResult:
    """Train one model per fold with early stopping; pick the lowest validation loss.

    ``x`` is ``(N, 3, S, S)``; ``labels`` stratify the folds. ``folds`` restricts
    which folds run (all by default). ``fold_seed`` decouples the fold
    assignment from ``seed``.
    """
    x = np.asarray(x, dtype=np.float32)
    labels = np.asarray(labels)
    if len(x) != len(labels):
        raise InsufficientData("one label per sample required")
    seeds = np.random.SeedSequence(seed).spawn(config.folds + 1)
    if fold_seed is None:
        fold_seed = int(seeds[0].generate_state(1)[0])
    fold_of = stratified_folds(labels, config.folds, fold_seed)
    results = []
    for k in (range(config.folds) if folds is None else folds):
        init_seed, shuffle_seed = seeds[k + 1].generate_state(2)
        tr, va = np.flatnonzero(fold_of != k), np.flatnonzero(fold_of == k)
        model = UNetNoSkip(arch, seed=int(init_seed))
        hist, best_val, best_epoch = run_epochs(
            model, x[tr], config, np.random.default_rng(int(shuffle_seed)), config.max_epochs,
            config.schedule, x_val=x[va], fold=k, patience=config.early_stop_patience)
        results.append(FoldResult(k, model, tr, va, best_val, best_epoch, len(hist), hist))
    best = int(np.argmin([r.best_val_loss for r in results]))
    return TrainResult(results, best)


def fine_tune(model: UNetNoSkip, x: np.ndarray, config: TrainConfig, seed: int = 0):
    """Continue training a copy of ``model`` for ``fine_tune_epochs`` at ``fine_tune_lr0``.

    The cosine schedule restarts from the new initial rate. Returns the tuned
    model and its per-epoch history (fold column = -1).
    """
    tuned = model.copy()
    schedule = CosineSchedule(config.fine_tune_lr0, config.first_period, config.period_mult, config.lr_floor)
    hist, _, _ = run_epochs(tuned, np.asarray(x, dtype=np.float32), config, np.random.default_rng(seed),
                            config.fine_tune_epochs, schedule, fold=-1)
    return tuned, hist


def encode(model: UNetNoSkip, x: np.ndarray, batch_size: int = 12) -> np.ndarray:
    """Bottleneck activations, ``(N, C, h, w)``; eval mode so results are deterministic."""
    x = np.asarray(x, dtype=np.float32)
    if x.ndim == 3:
        x = x[None]
    out = [model.encode(x[sl]) for sl in _batches(len(x), batch_size)]
    return np.concatenate(out, axis=0)
