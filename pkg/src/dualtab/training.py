"""Optimizer, schedule, and the seeded fit loop with early stopping."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import nd
from .embedding import ModelInputs
from .errors import ConfigError, DivergenceError
from .model import DualTabModel, ModelConfig

log = logging.getLogger(__name__)

LOSSES = ("mse", "cross_entropy")


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    batch_size: int = 256
    max_epochs: int = 200
    warmup_epochs: int = 10
    patience: int = 15
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def validate(self) -> None:
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if not 0 <= self.warmup_epochs <= self.max_epochs:
            raise ConfigError(
                f"warmup_epochs must lie in [0, max_epochs], got {self.warmup_epochs}"
            )
        if not 0 < self.patience < self.max_epochs:
            raise ConfigError(
                f"patience must lie in (0, max_epochs), got {self.patience}"
            )

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "weight_decay": self.weight_decay,
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
            "warmup_epochs": self.warmup_epochs,
            "patience": self.patience,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown train config keys: {sorted(extra)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg


def lr_schedule(epoch: int, base_lr: float, warmup_epochs: int, max_epochs: int) -> float:
    """Linear warmup to base_lr, then cosine decay to ~0 at max_epochs.

    The rate is held constant within an epoch and changes only at epoch
    boundaries.  schedule(warmup_epochs) == base_lr exactly.
    """
    if not 0 <= epoch < max_epochs:
        raise ConfigError(f"epoch {epoch} outside [0, {max_epochs})")
    if epoch < warmup_epochs:
        return base_lr * (epoch + 1) / warmup_epochs
    span = max_epochs - warmup_epochs
    if span == 0:
        return base_lr
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * (epoch - warmup_epochs) / span))


class AdamW:
    """Adam with decoupled weight decay: p *= (1 - lr*wd) before the moment update."""

    def __init__(self, params, weight_decay=0.0, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.data) for _, p in self.params]
        self._v = [np.zeros_like(p.data) for _, p in self.params]

    def step(self, lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for (name, p), m, v in zip(self.params, self._m, self._v):
            g = p.grad
            if g is None:
                g = 0.0
            elif not np.all(np.isfinite(g)):
                raise DivergenceError(f"non-finite gradient in parameter {name!r}")
            if self.weight_decay:
                p.data *= 1.0 - lr * self.weight_decay
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None


def accuracy(preds: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of matches; 2-D preds are argmaxed over the last axis first."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("accuracy of an empty batch is undefined")
    if preds.ndim == 2:
        preds = preds.argmax(axis=1)
    if preds.shape != labels.shape:
        raise ValueError(f"shape mismatch: {preds.shape} vs {labels.shape}")
    return float(np.mean(preds == labels))


def rmse(preds: np.ndarray, targets: np.ndarray) -> float:
    preds = np.asarray(preds, dtype=np.float64).reshape(-1)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    if targets.size == 0:
        raise ValueError("rmse of an empty batch is undefined")
    if preds.shape != targets.shape:
        raise ValueError(f"shape mismatch: {preds.shape} vs {targets.shape}")
    return float(np.sqrt(np.mean(np.square(preds - targets))))


@dataclass
class SplitData:
    """One split's model inputs plus its target column.

    For regression `y` is the (possibly standardized) float target the loss
    sees; for classification it holds integer class codes.
    """

    inputs: ModelInputs
    y: np.ndarray

    @property
    def n(self) -> int:
        return self.inputs.n


@dataclass
class TrainData:
    task: str
    train: SplitData
    val: SplitData
    test: SplitData
    # scale of the target standardization; RMSE in original units is
    # sigma * RMSE on the standardized scale (the map is affine)
    target_sigma: float = 1.0


@dataclass
class RunResult:
    seed: int
    best_epoch: int
    n_epochs: int
    test_metric: float
    train_losses: list = field(default_factory=list)
    val_metrics: list = field(default_factory=list)

    def to_record(self) -> dict:
        return {
            "seed": self.seed,
            "best_epoch": self.best_epoch,
            "n_epochs": self.n_epochs,
            "test_metric": self.test_metric,
        }


def spawn_rngs(seed: int):
    """Independent init/shuffle/dropout generators derived from one seed."""
    init_ss, shuffle_ss, dropout_ss = np.random.SeedSequence(seed).spawn(3)
    return (
        np.random.default_rng(init_ss),
        np.random.default_rng(shuffle_ss),
        np.random.default_rng(dropout_ss),
    )


def _loss_for_task(task: str):
    if task == "regression":
        return lambda out, y: nd.mse_loss(out, y.reshape(-1, 1))
    return nd.softmax_cross_entropy


def predict(model: DualTabModel, inputs: ModelInputs, batch_size: int = 256) -> np.ndarray:
    """Eval-mode forward over the whole split, in batches."""
    outs = []
    for start in range(0, inputs.n, batch_size):
        idx = np.arange(start, min(start + batch_size, inputs.n))
        outs.append(model.forward(inputs.take(idx), training=False).data)
    return np.concatenate(outs, axis=0)


def _val_metric(model, split: SplitData, task: str, sigma: float, batch_size: int) -> float:
    preds = predict(model, split.inputs, batch_size)
    if task == "regression":
        return sigma * rmse(preds, split.y)
    return accuracy(preds, split.y)


def _better(task: str, candidate: float, incumbent: float) -> bool:
    # strict improvement only; ties keep the earlier epoch
    if task == "regression":
        return candidate < incumbent
    return candidate > incumbent


def fit(
    model: DualTabModel,
    data: TrainData,
    config: TrainConfig,
    seed: int,
    shuffle_rng: np.random.Generator,
    dropout_rng: np.random.Generator,
) -> RunResult:
    """Train with shuffled mini-batches, per-epoch cosine schedule, and
    early stopping on the validation task metric (best checkpoint restored
    before the single test evaluation)."""
    config.validate()
    loss_fn = _loss_for_task(data.task)
    optim = AdamW(
        model.parameters(),
        weight_decay=config.weight_decay,
        beta1=config.beta1,
        beta2=config.beta2,
        eps=config.eps,
    )
    n = data.train.n
    best_metric = None
    best_epoch = -1
    best_state = None
    bad_epochs = 0
    train_losses: list[float] = []
    val_metrics: list[float] = []
    t_start = time.perf_counter()

    for epoch in range(config.max_epochs):
        lr = lr_schedule(epoch, config.learning_rate, config.warmup_epochs, config.max_epochs)
        perm = shuffle_rng.permutation(n)
        epoch_loss = 0.0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = perm[start : start + config.batch_size]
            batch = data.train.inputs.take(idx)
            yb = data.train.y[idx]
            with nd.GradientTape() as tape:
                out = model.forward(batch, rng=dropout_rng, training=True)
                loss = loss_fn(out, yb)
            value = float(loss.data)
            if not math.isfinite(value):
                raise DivergenceError(
                    f"non-finite training loss {value} at epoch {epoch}, batch {b} (seed {seed})"
                )
            tape.backward(loss)
            try:
                optim.step(lr)
            except DivergenceError as exc:
                raise DivergenceError(f"{exc} at epoch {epoch}, batch {b} (seed {seed})") from exc
            optim.zero_grad()
            epoch_loss += value * len(idx)
        train_losses.append(epoch_loss / n)

        metric = _val_metric(model, data.val, data.task, data.target_sigma, config.batch_size)
        val_metrics.append(metric)
        if best_metric is None or _better(data.task, metric, best_metric):
            best_metric = metric
            best_epoch = epoch
            best_state = {name: p.data.copy() for name, p in model.parameters()}
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                break

    for name, p in model.parameters():
        p.data = best_state[name]
    test_metric = _val_metric(model, data.test, data.task, data.target_sigma, config.batch_size)
    log.info(
        "seed %d: %d epochs, best %d, val %.6f, test %.6f (%.1fs)",
        seed, len(train_losses), best_epoch, best_metric, test_metric,
        time.perf_counter() - t_start,
    )
    return RunResult(
        seed=seed,
        best_epoch=best_epoch,
        n_epochs=len(train_losses),
        test_metric=test_metric,
        train_losses=train_losses,
        val_metrics=val_metrics,
    )


def train_one_seed(
    model_config: ModelConfig,
    space,
    data: TrainData,
    config: TrainConfig,
    seed: int,
) -> RunResult:
    """Build a freshly initialized model and fit it; the one entry point a
    multi-seed sweep calls per seed."""
    init_rng, shuffle_rng, dropout_rng = spawn_rngs(seed)
    model = DualTabModel(model_config, space, init_rng)
    return fit(model, data, config, seed, shuffle_rng, dropout_rng)
