"""Synthetic regression benchmark: informative features vs distractors.

A dataset is a deterministic function of (seed, rho): features are i.i.d.
standard normal, targets come from a fixed randomly-initialized MLP reading
only the first ``d_useful = floor(rho * d)`` columns, and the remaining
columns are pure distractors.  Targets are standardized with train-split
statistics.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

from .embedding import FeatureSpace, ModelInputs
from .errors import ConfigError, DataError
from .model import ModelConfig
from .preprocess import QuantileNormalizer
from .training import SplitData, TrainConfig, TrainData, train_one_seed

GENERATOR_HIDDEN = (64, 64, 64)

DESK_SIZES = (6_400, 1_600, 2_000)
FULL_SIZES = (64_000, 16_000, 20_000)
RHO_GRID = (0.5, 0.6, 0.7, 0.8, 0.9, 1.0)


@dataclass(frozen=True)
class SyntheticSpec:
    rho: float
    seed: int
    n_train: int = DESK_SIZES[0]
    n_val: int = DESK_SIZES[1]
    n_test: int = DESK_SIZES[2]
    d: int = 100
    hidden: tuple = GENERATOR_HIDDEN

    def __post_init__(self):
        if not 0.0 < self.rho <= 1.0:
            raise ConfigError(f"rho must lie in (0, 1], got {self.rho}")
        if self.d < 1:
            raise ConfigError(f"d must be >= 1, got {self.d}")
        if self.d_useful < 1:
            raise ConfigError(
                f"rho {self.rho} with d {self.d} leaves no informative features"
            )
        for name in ("n_train", "n_val", "n_test"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")

    @property
    def d_useful(self) -> int:
        # epsilon guard: 0.6 * 100 is 59.99999... in binary floating point,
        # and the floor must see the intended decimal product
        return math.floor(self.rho * self.d + 1e-9)

    def to_dict(self) -> dict:
        return {
            "rho": self.rho,
            "seed": self.seed,
            "n_train": self.n_train,
            "n_val": self.n_val,
            "n_test": self.n_test,
            "d": self.d,
            "hidden": list(self.hidden),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        d = dict(d)
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown synthetic spec keys: {sorted(extra)}")
        return cls(**d)


def generator_weights(seed: int, rho: float, d_useful: int, hidden=GENERATOR_HIDDEN):
    """Weight stack of the fixed target MLP; same for every split size."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, round(rho * 100)]))
    dims = [d_useful, *hidden, 1]
    return [
        rng.standard_normal((a, b)) / math.sqrt(a) for a, b in zip(dims, dims[1:])
    ], rng


def apply_generator(weights, x_useful: np.ndarray) -> np.ndarray:
    """Forward the fixed MLP: ReLU between layers, linear output, zero biases."""
    h = x_useful
    for w in weights[:-1]:
        h = np.maximum(h @ w, 0.0)
    return (h @ weights[-1]).ravel()


@dataclass
class SyntheticData:
    spec: SyntheticSpec
    X_train: np.ndarray
    X_val: np.ndarray
    X_test: np.ndarray
    y_train: np.ndarray
    y_val: np.ndarray
    y_test: np.ndarray


def generate(spec: SyntheticSpec) -> SyntheticData:
    """Draw the full dataset; the generator weights and the feature matrix
    come from one seeded stream, so regeneration is bitwise identical and a
    smaller draw is a prefix of a larger one."""
    weights, rng = generator_weights(spec.seed, spec.rho, spec.d_useful, spec.hidden)
    n_total = spec.n_train + spec.n_val + spec.n_test
    X = rng.standard_normal((n_total, spec.d))
    y_raw = apply_generator(weights, X[:, : spec.d_useful])
    mu = y_raw[: spec.n_train].mean()
    sigma = y_raw[: spec.n_train].std()
    if sigma == 0.0:
        raise DataError("degenerate generator: constant targets on the train split")
    y = (y_raw - mu) / sigma
    a, b = spec.n_train, spec.n_train + spec.n_val
    return SyntheticData(
        spec=spec,
        X_train=X[:a],
        X_val=X[a:b],
        X_test=X[b:],
        y_train=y[:a],
        y_val=y[a:b],
        y_test=y[b:],
    )


def prepare(data: SyntheticData, n_quantiles: int = 1000) -> tuple[FeatureSpace, TrainData]:
    """Quantile-normalize features (train-fitted) and wrap raw-stream inputs."""
    norm = QuantileNormalizer(n_quantiles=n_quantiles)
    norm.fit(data.X_train)

    def split(X, y):
        Xn = norm.transform(X)
        return SplitData(
            ModelInputs(num_raw=Xn, cat_raw=None, tgt_bins=None, tgt_cat=None), y
        )

    space = FeatureSpace(
        task="regression", n_numeric=data.spec.d, cat_cardinalities=(), bin_counts=()
    )
    bundle = TrainData(
        task="regression",
        train=split(data.X_train, data.y_train),
        val=split(data.X_val, data.y_val),
        test=split(data.X_test, data.y_test),
    )
    return space, bundle


def column_sensitivity(model, inputs: ModelInputs, column: int, rng) -> float:
    """Mean |prediction change| when one feature column is permuted."""
    from .training import predict

    base = predict(model, inputs)
    shuffled = ModelInputs(
        num_raw=inputs.num_raw.copy(),
        cat_raw=inputs.cat_raw,
        tgt_bins=inputs.tgt_bins,
        tgt_cat=inputs.tgt_cat,
    )
    shuffled.num_raw[:, column] = inputs.num_raw[rng.permutation(inputs.n), column]
    return float(np.mean(np.abs(predict(model, shuffled) - base)))


@dataclass(frozen=True)
class SweepCell:
    """One independent training job of the two-arm comparison."""

    rho: float
    seed: int
    assa: bool


def sweep_grid(rhos=RHO_GRID, seeds=(0, 1, 2)) -> list:
    return [
        SweepCell(rho=r, seed=s, assa=a) for r in rhos for s in seeds for a in (True, False)
    ]


def run_cell(
    cell: SweepCell,
    model_config: ModelConfig,
    train_config: TrainConfig,
    sizes=DESK_SIZES,
) -> dict:
    """Generate, prepare, and train one cell; returns a flat record."""
    cfg = ModelConfig.from_dict({**model_config.to_dict(), "assa": cell.assa})
    spec = SyntheticSpec(
        rho=cell.rho, seed=cell.seed, n_train=sizes[0], n_val=sizes[1], n_test=sizes[2]
    )
    space, data = prepare(generate(spec))
    run = train_one_seed(cfg, space, data, train_config, cell.seed)
    return {
        "rho": cell.rho,
        "seed": cell.seed,
        "assa": cell.assa,
        "test_rmse": run.test_metric,
        "best_epoch": run.best_epoch,
    }


def assa_sweep(
    model_config: ModelConfig,
    train_config: TrainConfig,
    rhos=RHO_GRID,
    seeds=(0, 1, 2),
    sizes=DESK_SIZES,
    map_fn=map,
) -> list:
    """Both arms over the (rho, seed) grid; `map_fn` lets a caller inject a
    process pool's map without this module knowing about it."""
    cells = sweep_grid(rhos, seeds)
    job = functools.partial(
        run_cell, model_config=model_config, train_config=train_config, sizes=sizes
    )
    return list(map_fn(job, cells))


def summarize_sweep(records) -> list:
    """Per-(rho, arm) mean/std of test RMSE, sorted for stable output."""
    keys = sorted({(r["rho"], r["assa"]) for r in records})
    out = []
    for rho, assa in keys:
        vals = np.array(
            [r["test_rmse"] for r in records if r["rho"] == rho and r["assa"] == assa]
        )
        out.append(
            {
                "rho": rho,
                "assa": assa,
                "mean_rmse": float(vals.mean()),
                "std_rmse": float(vals.std()),
                "n": int(vals.size),
            }
        )
    return out
