"""Multi-head self-attention with an optional adaptive sparse branch.

The core scaled-dot-product step runs as a single fused tape node: score
computation, row softmax, the optional squared-ReLU branch with its learned
convex blend, and attention dropout all happen inside one forward/backward
pair. Fusing keeps the hot [B, h, n, n] intermediates out of the generic
op graph, which matters on CPU.

The sparse branch follows the hybrid scheme: a standard softmax matrix P
preserves global mixing while R = ReLU(S)^2 zeroes negative scores, and
the two are blended A = w1*P + w2*R with (w1, w2) = softmax(a1, a2),
a1 = a2 = 1 at init so both branches start at weight 1/2.
"""

from __future__ import annotations

import numpy as np

from . import nd
from .errors import ConfigError


class ASSAMixer:
    """Learned convex combination of the dense and sparse branches."""

    def __init__(self):
        self.a1 = nd.parameter(np.ones(1))
        self.a2 = nd.parameter(np.ones(1))

    def weights(self):
        """(w1, w2) as single-element tensors; gradients reach a1, a2."""
        w = nd.softmax_lastdim(nd.concat([self.a1, self.a2], axis=0))
        return nd.slice_axis(w, 0, 0, 1), nd.slice_axis(w, 0, 1, 2)

    def parameters(self, prefix):
        return [(f"{prefix}.a1", self.a1), (f"{prefix}.a2", self.a2)]


def attention_core(q, k, v, n_heads, dropout_p, rng, training, mix=None):
    """Fused multi-head attention over [B, n, d] projections.

    mix is None (plain softmax attention) or a (w1, w2) pair of scalar
    tensors blending softmax and squared-ReLU score matrices.
    """
    b, n, d = q.shape
    if d % n_heads:
        raise ConfigError(f"width {d} not divisible by {n_heads} heads")
    dh = d // n_heads
    scale = 1.0 / np.sqrt(dh)

    def split(a):
        return a.reshape(b, n, n_heads, dh).transpose(0, 2, 1, 3)

    def merge(a):
        return np.ascontiguousarray(a.transpose(0, 2, 1, 3)).reshape(b, n, d)

    # the [B, h, n, n] buffers dominate the cost; work in place on them
    qh = split(q.data) * scale  # fold the temperature into Q
    kh, vh = split(k.data), split(v.data)
    s = qh @ np.swapaxes(kh, -1, -2)
    if mix is not None:
        w1, w2 = mix
        c1, c2 = float(w1.data[0]), float(w2.data[0])
        f = np.maximum(s, 0.0)
    else:
        f = None
    s -= s.max(axis=-1, keepdims=True)
    p = np.exp(s, out=s)  # p aliases s from here on
    p /= p.sum(axis=-1, keepdims=True)
    if mix is not None:
        a = np.square(f)
        a *= c2
        a += c1 * p
    else:
        a = p
    if training and dropout_p > 0.0:
        keep = 1.0 - dropout_p
        mask = rng.random(a.shape, dtype=np.float32) >= dropout_p
        ad = a * mask
        ad /= keep
    else:
        mask, keep = None, 1.0
        ad = a
    out = nd.Tensor(merge(ad @ vh))

    def bwd(g):
        gh = split(g)
        g_a = gh @ np.swapaxes(vh, -1, -2)
        gv = merge(np.swapaxes(ad, -1, -2) @ gh)
        if mask is not None:
            g_a *= mask
            g_a /= keep
        if mix is not None:
            t1 = g_a * f  # shared by the w2 grad and the score grad
            gw1 = np.array([np.vdot(g_a, p)])
            gw2 = np.array([np.vdot(t1, f)])
            g_a *= c1  # g_a is now the softmax-branch gradient
            rs = np.einsum("bhij,bhij->bhi", g_a, p)
            g_s = g_a
            g_s -= rs[..., None]
            g_s *= p
            t1 *= 2.0 * c2
            g_s += t1
        else:
            rs = np.einsum("bhij,bhij->bhi", g_a, p)
            g_s = g_a
            g_s -= rs[..., None]
            g_s *= p
        gq = merge(g_s @ kh)
        gq *= scale  # undo the fold; s = (q*scale) @ k^T
        gk = merge(np.swapaxes(g_s, -1, -2) @ qh)
        if mix is not None:
            return gq, gk, gv, gw1, gw2
        return gq, gk, gv

    parents = (q, k, v) if mix is None else (q, k, v, mix[0], mix[1])
    return nd.record(out, parents, bwd)


def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class MultiHeadAttention:
    """Q/K/V/output projections around the fused attention core."""

    def __init__(self, d, n_heads, dropout_p, rng):
        if d % n_heads:
            raise ConfigError(f"width {d} not divisible by {n_heads} heads")
        self.n_heads = n_heads
        self.dropout_p = dropout_p
        self.wq = nd.parameter(_uniform(rng, d, (d, d)))
        self.wk = nd.parameter(_uniform(rng, d, (d, d)))
        self.wv = nd.parameter(_uniform(rng, d, (d, d)))
        self.wo = nd.parameter(_uniform(rng, d, (d, d)))

    def __call__(self, x, rng, training, mixer: ASSAMixer = None):
        q = nd.matmul(x, self.wq)
        k = nd.matmul(x, self.wk)
        v = nd.matmul(x, self.wv)
        mix = mixer.weights() if mixer is not None else None
        core = attention_core(
            q, k, v, self.n_heads, self.dropout_p, rng, training, mix
        )
        return nd.matmul(core, self.wo)

    def parameters(self, prefix):
        return [
            (f"{prefix}.wq", self.wq),
            (f"{prefix}.wk", self.wk),
            (f"{prefix}.wv", self.wv),
            (f"{prefix}.wo", self.wo),
        ]


class FeedForward:
    """Position-wise two-layer MLP with ReLU and inner dropout."""

    def __init__(self, d, hidden, dropout_p, rng):
        self.dropout_p = dropout_p
        self.w1 = nd.parameter(_uniform(rng, d, (d, hidden)))
        self.b1 = nd.parameter(_uniform(rng, d, (hidden,)))
        self.w2 = nd.parameter(_uniform(rng, hidden, (hidden, d)))
        self.b2 = nd.parameter(_uniform(rng, hidden, (d,)))

    def __call__(self, x, rng, training):
        h = nd.relu(nd.add_bias(nd.matmul(x, self.w1), self.b1))
        h = nd.dropout(h, self.dropout_p, rng, training)
        return nd.add_bias(nd.matmul(h, self.w2), self.b2)

    def parameters(self, prefix):
        return [
            (f"{prefix}.w1", self.w1),
            (f"{prefix}.b1", self.b1),
            (f"{prefix}.w2", self.w2),
            (f"{prefix}.b2", self.b2),
        ]


class LayerNorm:
    """Learned gain/shift over the channel axis."""

    def __init__(self, d):
        self.gain = nd.parameter(np.ones(d))
        self.bias = nd.parameter(np.zeros(d))

    def __call__(self, x):
        return nd.layernorm_lastdim(x, self.gain, self.bias)

    def parameters(self, prefix):
        return [(f"{prefix}.gain", self.gain), (f"{prefix}.bias", self.bias)]
