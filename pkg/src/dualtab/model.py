"""The dual-stream tabular transformer and its ablation variants.

A forward pass tokenizes features into D = [B, S, F, d] (target-aware
stream first), then runs pre-norm residual layers. The full model extends
D with two kinds of learned global tokens: per-stream dimension tokens
(attended across features, the sparse-branch site) and per-feature
encoding tokens (attended across the raw/target-aware pair). Pooled global
tokens concatenate into z of width 2d, and a LayerNorm -> ReLU -> Linear
head reads out the prediction.

Variants: "cd+ce" runs both attention families per layer (encoding first),
"cd"/"ce" keep one family and duplicate its pooled token in z, and "dfc"
flattens both streams into one sequence under a single global token. A
shared position-wise FFN closes every layer, applied to each live tensor.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import nd
from .attention import ASSAMixer, FeedForward, LayerNorm, MultiHeadAttention
from .embedding import FeatureSpace, FeatureTokenizer, ModelInputs
from .errors import ConfigError

VARIANTS = ("dfc", "cd", "ce", "cd+ce")
STREAM_MODES = ("dual", "raw", "targeted")


@dataclass
class ModelConfig:
    d_embedding: int = 192
    n_layers: int = 3
    n_heads: int = 8
    ffn_factor: float = 4.0 / 3.0
    dropout_attention: float = 0.2
    dropout_residual: float = 0.0
    dropout_ffn: float = 0.1
    variant: str = "cd+ce"
    streams: str = "dual"
    assa: bool = True

    def validate(self) -> "ModelConfig":
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant '{self.variant}'")
        if self.streams not in STREAM_MODES:
            raise ConfigError(f"unknown streams mode '{self.streams}'")
        if self.d_embedding < 1 or self.n_layers < 1 or self.n_heads < 1:
            raise ConfigError("d_embedding, n_layers and n_heads must be >= 1")
        if self.d_embedding % self.n_heads:
            raise ConfigError(
                f"d_embedding {self.d_embedding} not divisible by "
                f"{self.n_heads} heads"
            )
        if self.ffn_factor <= 0:
            raise ConfigError("ffn_factor must be > 0")
        for name in ("dropout_attention", "dropout_residual", "dropout_ffn"):
            p = getattr(self, name)
            if not 0.0 <= p < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1), got {p}")
        if self.streams != "dual" and self.variant != "cd":
            raise ConfigError(
                "single-stream models support only the 'cd' variant"
            )
        if self.assa and self.variant not in ("cd", "cd+ce"):
            raise ConfigError(
                "the sparse attention branch applies to cross-feature "
                "attention only (variants 'cd' and 'cd+ce')"
            )
        return self

    @property
    def ffn_hidden(self) -> int:
        return max(1, int(round(self.ffn_factor * self.d_embedding)))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d).validate()


class _Layer:
    """One pre-norm block; which sublayers exist depends on the variant."""

    def __init__(self, config: ModelConfig, rng, prefix: str):
        d = config.d_embedding
        self.params = []
        self.ce_ln = self.ce_attn = None
        self.cd_ln = self.cd_attn = self.mixer = None
        if config.variant in ("ce", "cd+ce"):
            self.ce_ln = LayerNorm(d)
            self.ce_attn = MultiHeadAttention(
                d, config.n_heads, config.dropout_attention, rng
            )
            self.params += self.ce_ln.parameters(f"{prefix}.ce_ln")
            self.params += self.ce_attn.parameters(f"{prefix}.ce_attn")
        if config.variant in ("cd", "cd+ce", "dfc"):
            self.cd_ln = LayerNorm(d)
            self.cd_attn = MultiHeadAttention(
                d, config.n_heads, config.dropout_attention, rng
            )
            self.params += self.cd_ln.parameters(f"{prefix}.cd_ln")
            self.params += self.cd_attn.parameters(f"{prefix}.cd_attn")
            if config.assa:
                self.mixer = ASSAMixer()
                self.params += self.mixer.parameters(f"{prefix}.assa")
        self.ffn_ln = LayerNorm(d)
        self.ffn = FeedForward(d, config.ffn_hidden, config.dropout_ffn, rng)
        self.params += self.ffn_ln.parameters(f"{prefix}.ffn_ln")
        self.params += self.ffn.parameters(f"{prefix}.ffn")


class DualTabModel:
    """Config + feature space + seeded rng -> a trainable network."""

    def __init__(self, config: ModelConfig, space: FeatureSpace, rng):
        config.validate()
        self.config = config
        self.space = space
        d = config.d_embedding
        bound = 1.0 / np.sqrt(d)

        self.tokenizer = FeatureTokenizer(space, d, config.streams, rng)
        self._params = self.tokenizer.parameters()

        s = self.tokenizer.n_streams
        f = space.n_features
        self.g_dim = self.g_enc = self.g_flat = None
        if config.variant in ("cd", "cd+ce"):
            self.g_dim = nd.parameter(rng.uniform(-bound, bound, size=(s, d)))
            self._params.append(("token.g_dim", self.g_dim))
        if config.variant in ("ce", "cd+ce"):
            self.g_enc = nd.parameter(rng.uniform(-bound, bound, size=(f, d)))
            self._params.append(("token.g_enc", self.g_enc))
        if config.variant == "dfc":
            self.g_flat = nd.parameter(rng.uniform(-bound, bound, size=(1, d)))
            self._params.append(("token.g_flat", self.g_flat))

        self.layers = []
        for i in range(config.n_layers):
            layer = _Layer(config, rng, f"layer{i}")
            self.layers.append(layer)
            self._params += layer.params

        if space.task == "regression":
            self.out_dim = 1
        elif space.task == "binclass":
            self.out_dim = 2
        else:
            self.out_dim = space.n_classes
        self.head_ln = LayerNorm(2 * d)
        self.head_w = nd.parameter(
            rng.uniform(-1 / np.sqrt(2 * d), 1 / np.sqrt(2 * d), (2 * d, self.out_dim))
        )
        self.head_b = nd.parameter(
            rng.uniform(-1 / np.sqrt(2 * d), 1 / np.sqrt(2 * d), (self.out_dim,))
        )
        self._params += self.head_ln.parameters("head.ln")
        self._params += [("head.w", self.head_w), ("head.b", self.head_b)]

        names = [n for n, _ in self._params]
        if len(set(names)) != len(names):
            raise AssertionError("duplicate parameter names")

    def parameters(self):
        return list(self._params)

    @property
    def n_parameters(self) -> int:
        return sum(t.size for _, t in self._params)

    # -- sublayers ---------------------------------------------------------

    def _residual(self, x, h, rng, training):
        return nd.add(
            x, nd.dropout(h, self.config.dropout_residual, rng, training)
        )

    def _ce_block(self, layer, d_tok, ge, rng, training, trace=None):
        b, s, f, d = d_tok.shape
        ext = nd.concat([nd.reshape(ge, (b, 1, f, d)), d_tok], axis=1)
        if trace is not None:
            trace.setdefault("D_enc", ext.shape)
        seq = nd.reshape(nd.transpose(ext, (0, 2, 1, 3)), (b * f, s + 1, d))
        h = layer.ce_attn(layer.ce_ln(seq), rng, training)
        seq = self._residual(seq, h, rng, training)
        ext = nd.transpose(nd.reshape(seq, (b, f, s + 1, d)), (0, 2, 1, 3))
        ge = nd.reshape(nd.slice_axis(ext, 1, 0, 1), (b, f, d))
        d_tok = nd.slice_axis(ext, 1, 1, s + 1)
        return d_tok, ge

    def _cd_block(self, layer, d_tok, gd, rng, training, trace=None):
        b, s, f, d = d_tok.shape
        ext = nd.concat([nd.reshape(gd, (b, s, 1, d)), d_tok], axis=2)
        if trace is not None:
            trace.setdefault("D_dim", ext.shape)
        seq = nd.reshape(ext, (b * s, f + 1, d))
        h = layer.cd_attn(layer.cd_ln(seq), rng, training, mixer=layer.mixer)
        seq = self._residual(seq, h, rng, training)
        ext = nd.reshape(seq, (b, s, f + 1, d))
        gd = nd.reshape(nd.slice_axis(ext, 2, 0, 1), (b, s, d))
        d_tok = nd.slice_axis(ext, 2, 1, f + 1)
        return d_tok, gd

    def _ffn_block(self, layer, x, rng, training):
        h = layer.ffn(layer.ffn_ln(x), rng, training)
        return self._residual(x, h, rng, training)

    # -- forward -----------------------------------------------------------

    def forward(self, inputs: ModelInputs, rng=None, training=False, trace=None):
        """Predictions [B, out_dim]; pass a trace dict to record shapes."""
        cfg = self.config
        if training and rng is None:
            raise ConfigError("training-mode forward needs an rng")
        d_tok = self.tokenizer(inputs)
        if trace is not None:
            trace["D"] = d_tok.shape
        b = d_tok.shape[0]

        if cfg.variant == "dfc":
            s, f, d = d_tok.shape[1:]
            seq = nd.concat(
                [nd.expand_batch(self.g_flat, b), nd.reshape(d_tok, (b, s * f, d))],
                axis=1,
            )
            for layer in self.layers:
                h = layer.cd_attn(layer.cd_ln(seq), rng, training)
                seq = self._residual(seq, h, rng, training)
                seq = self._ffn_block(layer, seq, rng, training)
            g = nd.reshape(nd.slice_axis(seq, 1, 0, 1), (b, d))
            z = nd.concat([g, g], axis=1)
        else:
            gd = ge = None
            if self.g_dim is not None:
                gd = nd.expand_batch(self.g_dim, b)
            if self.g_enc is not None:
                ge = nd.expand_batch(self.g_enc, b)
            for layer in self.layers:
                if layer.ce_attn is not None:
                    d_tok, ge = self._ce_block(layer, d_tok, ge, rng, training, trace)
                if layer.cd_attn is not None:
                    d_tok, gd = self._cd_block(layer, d_tok, gd, rng, training, trace)
                d_tok = self._ffn_block(layer, d_tok, rng, training)
                if gd is not None:
                    gd = self._ffn_block(layer, gd, rng, training)
                if ge is not None:
                    ge = self._ffn_block(layer, ge, rng, training)
            if gd is not None and ge is not None:
                z = nd.concat([nd.mean_axis(gd, 1), nd.mean_axis(ge, 1)], axis=1)
            elif gd is not None:
                m = nd.mean_axis(gd, 1)
                z = nd.concat([m, m], axis=1)
            else:
                m = nd.mean_axis(ge, 1)
                z = nd.concat([m, m], axis=1)

        if trace is not None:
            trace["z"] = z.shape
        hidden = nd.relu(self.head_ln(z))
        return nd.add_bias(nd.matmul(hidden, self.head_w), self.head_b)


def save_checkpoint(model: DualTabModel, path) -> None:
    """One .npz: config/space as JSON plus every named parameter array."""
    meta = json.dumps(
        {"config": model.config.to_dict(), "space": model.space.to_dict()}
    )
    arrays = {name: t.data for name, t in model.parameters()}
    np.savez(path, __meta__=np.array(meta), **arrays)


def load_checkpoint(path) -> DualTabModel:
    with np.load(path, allow_pickle=False) as blob:
        meta = json.loads(str(blob["__meta__"].item()))
        model = DualTabModel(
            ModelConfig.from_dict(meta["config"]),
            FeatureSpace.from_dict(meta["space"]),
            np.random.default_rng(0),
        )
        for name, t in model.parameters():
            arr = blob[name]
            if arr.shape != t.data.shape:
                raise ConfigError(
                    f"checkpoint parameter '{name}' has shape {arr.shape}, "
                    f"expected {t.data.shape}"
                )
            t.data = arr.astype(np.float64)
    return model
