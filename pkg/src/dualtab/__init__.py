"""Dual-stream tabular transformer with target-aware encoding.

Numeric and categorical features are embedded twice: once from raw values
and once from shallow-tree target statistics. Transformer layers attend
across features and across the two encodings, with an optional adaptive
sparse attention branch, and a small head reads out a pooled summary.
"""

from .errors import ConfigError, DataError, DivergenceError, DualtabError
from .experiment import ExperimentSpec, load_spec
from .model import DualTabModel, ModelConfig
from .training import TrainConfig, train_one_seed

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "DivergenceError",
    "DualTabModel",
    "DualtabError",
    "ExperimentSpec",
    "ModelConfig",
    "TrainConfig",
    "__version__",
    "load_spec",
    "train_one_seed",
]
