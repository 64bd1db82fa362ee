"""Feature tokenization: raw and target-aware views as per-feature vectors.

Every feature becomes a d-vector in each active stream. The raw stream
scales a learned direction by the (quantile-normalized) numeric value or
looks up a category embedding; the target-aware stream looks up a
supervised bin embedding for numerics and projects the tree-leaf target
statistic for categoricals. Streams stack on their own axis, target-aware
first, so downstream attention can mix across features or across views.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nd
from .errors import ConfigError

_TASKS = ("regression", "binclass", "multiclass")
_STREAMS = ("dual", "raw", "targeted")


@dataclass(frozen=True)
class FeatureSpace:
    """Static description of the encoded dataset a model is built for."""

    task: str
    n_numeric: int
    cat_cardinalities: tuple  # training vocab sizes, UNK excluded
    bin_counts: tuple  # supervised bin count per numeric feature
    n_classes: int = 0  # 0 for regression

    def __post_init__(self):
        if self.task not in _TASKS:
            raise ConfigError(f"unknown task '{self.task}'")
        if self.task == "regression" and self.n_classes != 0:
            raise ConfigError("regression expects n_classes == 0")
        if self.task == "binclass" and self.n_classes != 2:
            raise ConfigError("binclass expects n_classes == 2")
        if self.task == "multiclass" and self.n_classes < 3:
            raise ConfigError("multiclass expects n_classes >= 3")
        if self.n_numeric < 0:
            raise ConfigError("n_numeric must be >= 0")
        if self.n_features == 0:
            raise ConfigError("feature space has no features")
        if any(c < 1 for c in self.cat_cardinalities):
            raise ConfigError("categorical cardinalities must be >= 1")
        if len(self.bin_counts) not in (0, self.n_numeric):
            raise ConfigError(
                "bin_counts must be empty or one entry per numeric feature"
            )
        if any(b < 1 for b in self.bin_counts):
            raise ConfigError("bin counts must be >= 1")

    @property
    def n_categorical(self) -> int:
        return len(self.cat_cardinalities)

    @property
    def n_features(self) -> int:
        return self.n_numeric + self.n_categorical

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "n_numeric": self.n_numeric,
            "cat_cardinalities": list(self.cat_cardinalities),
            "bin_counts": list(self.bin_counts),
            "n_classes": self.n_classes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSpace":
        return cls(
            task=d["task"],
            n_numeric=d["n_numeric"],
            cat_cardinalities=tuple(d["cat_cardinalities"]),
            bin_counts=tuple(d["bin_counts"]),
            n_classes=d["n_classes"],
        )


@dataclass
class ModelInputs:
    """Encoded arrays a model consumes; unused views may be None.

    num_raw: [n, Fn] float64 normalized numeric values
    cat_raw: [n, Fc] int64 category codes (UNK = vocab size)
    tgt_bins: [n, Fn] int64 supervised bin indices
    tgt_cat: [n, Fc] float64 leaf statistics, or [n, Fc, K] for multiclass
    """

    num_raw: np.ndarray = None
    cat_raw: np.ndarray = None
    tgt_bins: np.ndarray = None
    tgt_cat: np.ndarray = None

    @property
    def n(self) -> int:
        for a in (self.num_raw, self.cat_raw, self.tgt_bins, self.tgt_cat):
            if a is not None:
                return a.shape[0]
        raise ConfigError("inputs hold no arrays")

    def take(self, idx) -> "ModelInputs":
        pick = lambda a: None if a is None else a[idx]
        return ModelInputs(
            num_raw=pick(self.num_raw),
            cat_raw=pick(self.cat_raw),
            tgt_bins=pick(self.tgt_bins),
            tgt_cat=pick(self.tgt_cat),
        )


def _uniform(rng, bound, shape):
    return rng.uniform(-bound, bound, size=shape)


class FeatureTokenizer:
    """Embeds inputs into D of shape [B, S, F, d] (stream axis first).

    S is 2 for dual streams (target-aware at index 0, raw at index 1) and
    1 otherwise. Parameter creation order is fixed so that a seeded rng
    yields identical weights run to run.
    """

    def __init__(self, space: FeatureSpace, d: int, streams: str, rng):
        if streams not in _STREAMS:
            raise ConfigError(f"unknown streams mode '{streams}'")
        self.space = space
        self.d = d
        self.streams = streams
        self._params = []
        bound = 1.0 / np.sqrt(d)
        fn, fc = space.n_numeric, space.n_categorical

        def make(name, shape):
            t = nd.parameter(_uniform(rng, bound, shape))
            self._params.append((name, t))
            return t

        if streams in ("dual", "targeted"):
            self.tgt_bin_tables = [
                make(f"tok.tgt_bins.{i}", (b, d))
                for i, b in enumerate(space.bin_counts)
            ]
            if fc:
                if space.task == "multiclass":
                    # leaf probability vectors hit a linear map; no bias,
                    # the codes already sum to 1
                    self.tgt_cat_maps = [
                        make(f"tok.tgt_cat.{i}", (space.n_classes, d))
                        for i in range(fc)
                    ]
                else:
                    self.tgt_cat_w = make("tok.tgt_cat_w", (fc, d))
                    self.tgt_cat_b = make("tok.tgt_cat_b", (fc, d))
        if streams in ("dual", "raw"):
            if fn:
                self.raw_num_w = make("tok.raw_num_w", (fn, d))
                self.raw_num_b = make("tok.raw_num_b", (fn, d))
            self.raw_cat_tables = [
                make(f"tok.raw_cat.{i}", (c + 1, d))  # last row is UNK
                for i, c in enumerate(space.cat_cardinalities)
            ]

    def parameters(self):
        return list(self._params)

    def _targeted(self, inputs: ModelInputs, n: int):
        space = self.space
        blocks = []
        if space.n_numeric:
            if inputs.tgt_bins is None:
                raise ConfigError("targeted stream needs tgt_bins")
            for i, table in enumerate(self.tgt_bin_tables):
                tok = nd.embedding_lookup(table, inputs.tgt_bins[:, i])
                blocks.append(nd.reshape(tok, (n, 1, self.d)))
        if space.n_categorical:
            if inputs.tgt_cat is None:
                raise ConfigError("targeted stream needs tgt_cat")
            if space.task == "multiclass":
                for i, m in enumerate(self.tgt_cat_maps):
                    tok = nd.matmul(nd.tensor(inputs.tgt_cat[:, i, :]), m)
                    blocks.append(nd.reshape(tok, (n, 1, self.d)))
            else:
                blocks.append(
                    nd.numeric_tokens(inputs.tgt_cat, self.tgt_cat_w, self.tgt_cat_b)
                )
        return nd.concat(blocks, axis=1) if len(blocks) > 1 else blocks[0]

    def _raw(self, inputs: ModelInputs, n: int):
        space = self.space
        blocks = []
        if space.n_numeric:
            if inputs.num_raw is None:
                raise ConfigError("raw stream needs num_raw")
            blocks.append(
                nd.numeric_tokens(inputs.num_raw, self.raw_num_w, self.raw_num_b)
            )
        if space.n_categorical:
            if inputs.cat_raw is None:
                raise ConfigError("raw stream needs cat_raw")
            for i, table in enumerate(self.raw_cat_tables):
                tok = nd.embedding_lookup(table, inputs.cat_raw[:, i])
                blocks.append(nd.reshape(tok, (n, 1, self.d)))
        return nd.concat(blocks, axis=1) if len(blocks) > 1 else blocks[0]

    def __call__(self, inputs: ModelInputs) -> nd.Tensor:
        n = inputs.n
        f, d = self.space.n_features, self.d
        if self.streams == "dual":
            t = nd.reshape(self._targeted(inputs, n), (n, 1, f, d))
            r = nd.reshape(self._raw(inputs, n), (n, 1, f, d))
            return nd.concat([t, r], axis=1)
        if self.streams == "targeted":
            return nd.reshape(self._targeted(inputs, n), (n, 1, f, d))
        return nd.reshape(self._raw(inputs, n), (n, 1, f, d))

    @property
    def n_streams(self) -> int:
        return 2 if self.streams == "dual" else 1
