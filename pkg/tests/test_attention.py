"""Attention core tests: formula oracles, invariants, gradients."""

import numpy as np
import pytest

from dualtab import nd
from dualtab.attention import (
    ASSAMixer,
    FeedForward,
    LayerNorm,
    MultiHeadAttention,
    attention_core,
)
from dualtab.errors import ConfigError
from helpers import finite_diff_grad, max_rel_err


def plain_attention_oracle(q, k, v, w1=None, w2=None):
    """Single-head reference: independent dense formula, no head reshaping."""
    dh = q.shape[-1]
    s = q @ np.swapaxes(k, -1, -2) / np.sqrt(dh)
    e = np.exp(s)
    p = e / e.sum(axis=-1, keepdims=True)
    if w1 is None:
        a = p
    else:
        a = w1 * p + w2 * np.maximum(s, 0.0) ** 2
    return a @ v


class TestCoreOracle:
    def test_single_head_matches_dense_formula(self):
        rng = np.random.default_rng(0)
        q, k, v = (rng.standard_normal((2, 3, 4)) for _ in range(3))
        got = attention_core(
            nd.tensor(q), nd.tensor(k), nd.tensor(v), 1, 0.0, None, False
        ).data
        assert np.max(np.abs(got - plain_attention_oracle(q, k, v))) < 1e-10

    def test_two_heads_equal_independent_halves(self):
        rng = np.random.default_rng(1)
        q, k, v = (rng.standard_normal((2, 5, 8)) for _ in range(3))
        got = attention_core(
            nd.tensor(q), nd.tensor(k), nd.tensor(v), 2, 0.0, None, False
        ).data
        want = np.concatenate(
            [
                plain_attention_oracle(q[..., :4], k[..., :4], v[..., :4]),
                plain_attention_oracle(q[..., 4:], k[..., 4:], v[..., 4:]),
            ],
            axis=-1,
        )
        assert np.max(np.abs(got - want)) < 1e-10

    def test_mixed_branch_matches_dense_formula(self):
        rng = np.random.default_rng(2)
        q, k, v = (rng.standard_normal((1, 4, 6)) for _ in range(3))
        w1, w2 = nd.tensor([0.3]), nd.tensor([0.7])
        got = attention_core(
            nd.tensor(q), nd.tensor(k), nd.tensor(v), 1, 0.0, None, False,
            mix=(w1, w2),
        ).data
        want = plain_attention_oracle(q, k, v, 0.3, 0.7)
        assert np.max(np.abs(got - want)) < 1e-10

    def test_uniform_attention_when_scores_are_constant(self):
        # zero queries give uniform rows: the output is the mean of values
        v = np.arange(12.0).reshape(1, 3, 4)
        z = np.zeros((1, 3, 4))
        got = attention_core(
            nd.tensor(z), nd.tensor(z), nd.tensor(v), 2, 0.0, None, False
        ).data
        want = np.broadcast_to(v.mean(axis=1, keepdims=True), v.shape)
        assert np.max(np.abs(got - want)) < 1e-12

    def test_rejects_indivisible_heads(self):
        x = nd.tensor(np.zeros((1, 2, 6)))
        with pytest.raises(ConfigError):
            attention_core(x, x, x, 4, 0.0, None, False)


class TestInvariants:
    def test_softmax_rows_and_sparse_branch_fuzz(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            n = int(rng.integers(2, 8))
            d = int(rng.integers(1, 5)) * 2
            x = rng.standard_normal((1, n, d)) * rng.uniform(0.5, 5)
            s = x @ np.swapaxes(x, -1, -2) / np.sqrt(d)
            e = np.exp(s - s.max(-1, keepdims=True))
            p = e / e.sum(-1, keepdims=True)
            assert np.max(np.abs(p.sum(-1) - 1.0)) < 1e-9
            assert np.all(np.maximum(s, 0.0) ** 2 >= 0.0)

    def test_mixer_weights_sum_to_one(self):
        rng = np.random.default_rng(4)
        mixer = ASSAMixer()
        for _ in range(100):
            mixer.a1.data = rng.standard_normal(1) * 3
            mixer.a2.data = rng.standard_normal(1) * 3
            w1, w2 = mixer.weights()
            assert abs(w1.item() + w2.item() - 1.0) < 1e-12
            assert 0.0 < w1.item() < 1.0

    def test_equal_logits_give_exactly_half(self):
        mixer = ASSAMixer()  # a1 = a2 = 1 at init
        w1, w2 = mixer.weights()
        assert w1.item() == 0.5
        assert w2.item() == 0.5

    def test_growing_a2_shifts_weight_to_sparse_branch(self):
        mixer = ASSAMixer()
        mixer.a2.data = np.array([4.0])
        w1, w2 = mixer.weights()
        assert w2.item() > 0.9 > w1.item()
        assert w2.item() == pytest.approx(np.exp(3.0) / (1.0 + np.exp(3.0)))


class TestGradients:
    def check_core(self, seed, n_heads, with_mix):
        rng = np.random.default_rng(seed)
        q = nd.parameter(rng.standard_normal((2, 3, 4)))
        k = nd.parameter(rng.standard_normal((2, 3, 4)))
        v = nd.parameter(rng.standard_normal((2, 3, 4)))
        mixer = ASSAMixer() if with_mix else None
        if mixer:
            mixer.a1.data = np.array([0.4])
            mixer.a2.data = np.array([1.3])
        target = rng.standard_normal((2, 3, 4))

        def loss_fn():
            mix = mixer.weights() if mixer else None
            out = attention_core(q, k, v, n_heads, 0.0, None, False, mix=mix)
            return nd.mse_loss(out, target)

        with nd.GradientTape() as tape:
            tape.backward(loss_fn())

        params = [q, k, v] + ([mixer.a1, mixer.a2] if mixer else [])
        for p in params:
            fd = finite_diff_grad(lambda: loss_fn().item(), p)
            assert max_rel_err(p.grad, fd) < 1e-6

    def test_plain_core_single_head(self):
        self.check_core(5, 1, with_mix=False)

    def test_plain_core_two_heads(self):
        self.check_core(6, 2, with_mix=False)

    def test_mixed_core_two_heads(self):
        self.check_core(7, 2, with_mix=True)

    def test_full_block_gradcheck(self):
        rng = np.random.default_rng(8)
        init = np.random.default_rng(9)
        attn = MultiHeadAttention(6, 2, 0.0, init)
        ln = LayerNorm(6)
        ffn = FeedForward(6, 9, 0.0, init)
        x = nd.parameter(rng.standard_normal((2, 4, 6)))
        target = rng.standard_normal((2, 4, 6))

        def loss_fn():
            h = nd.add(x, attn(ln(x), None, False))
            h = nd.add(h, ffn(ln(h), None, False))
            return nd.mse_loss(h, target)

        with nd.GradientTape() as tape:
            tape.backward(loss_fn())

        params = [x, attn.wq, attn.wo, ffn.w1, ffn.b2, ln.gain, ln.bias]
        for p in params:
            fd = finite_diff_grad(lambda: loss_fn().item(), p)
            assert max_rel_err(p.grad, fd, floor=1e-6) < 1e-5


class TestDropoutAndDeterminism:
    def test_eval_mode_ignores_rng(self):
        rng = np.random.default_rng(10)
        q = nd.tensor(rng.standard_normal((1, 4, 4)))
        a = attention_core(q, q, q, 2, 0.5, np.random.default_rng(0), False).data
        b = attention_core(q, q, q, 2, 0.5, np.random.default_rng(1), False).data
        assert np.array_equal(a, b)

    def test_training_dropout_is_seed_deterministic(self):
        rng = np.random.default_rng(11)
        q = nd.tensor(rng.standard_normal((1, 6, 4)))
        a = attention_core(q, q, q, 2, 0.4, np.random.default_rng(7), True).data
        b = attention_core(q, q, q, 2, 0.4, np.random.default_rng(7), True).data
        assert np.array_equal(a, b)

    def test_dropout_changes_training_output(self):
        rng = np.random.default_rng(12)
        q = nd.tensor(rng.standard_normal((1, 6, 4)))
        a = attention_core(q, q, q, 2, 0.4, np.random.default_rng(7), True).data
        b = attention_core(q, q, q, 2, 0.0, None, True).data
        assert not np.array_equal(a, b)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(13)
        x = rng.standard_normal((1, 5, 4))
        perm = rng.permutation(5)
        out = attention_core(
            nd.tensor(x), nd.tensor(x), nd.tensor(x), 2, 0.0, None, False
        ).data
        out_p = attention_core(
            nd.tensor(x[:, perm]), nd.tensor(x[:, perm]), nd.tensor(x[:, perm]),
            2, 0.0, None, False,
        ).data
        assert np.max(np.abs(out_p - out[:, perm])) < 1e-12
