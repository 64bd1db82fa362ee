"""Dense float64 tensors with tape-based reverse-mode autodiff.

Covers exactly the op set the dual-stream model needs: batched matmul,
stable softmax, elementwise activations, layer norm, dropout, embedding
lookups, shape ops and the two fused losses. Forward values live in numpy
arrays; gradients are recorded on an explicit GradientTape and replayed in
reverse append order.

Broadcasting is deliberately restricted: binary ops require equal shapes,
matmul allows a 2-D operand against a batched one, bias adds are explicit
ops. Shape bugs should fail loudly, not broadcast silently.
"""

from __future__ import annotations

import threading

import numpy as np

__all__ = [
    "Tensor",
    "GradientTape",
    "ShapeError",
    "tensor",
    "parameter",
    "record",
    "active_tape",
    "matmul",
    "add",
    "add_bias",
    "mul",
    "mul_scalar",
    "scale_by",
    "relu",
    "square",
    "softmax_lastdim",
    "layernorm_lastdim",
    "dropout",
    "mean_axis",
    "concat",
    "slice_axis",
    "reshape",
    "transpose",
    "expand_batch",
    "embedding_lookup",
    "numeric_tokens",
    "softmax_cross_entropy",
    "mse_loss",
    "backward",
]


class ShapeError(ValueError):
    """Raised when operand shapes do not satisfy an op's contract."""


class Tensor:
    """A dense float64 array, optionally participating in the active tape.

    ``requires_grad`` marks leaf parameters; tensors produced by ops derive
    it from their parents. ``grad`` is filled by ``GradientTape.backward``.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def tensor(data) -> Tensor:
    """Constant tensor (no gradient)."""
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    """Trainable leaf tensor."""
    return Tensor(data, requires_grad=True)


_state = threading.local()


def active_tape():
    stack = getattr(_state, "tapes", None)
    return stack[-1] if stack else None


class GradientTape:
    """Append-only op recorder; one backward pass per tape.

    Each node is (output tensor, parent tensors, backward fn). The backward
    fn maps the output gradient to one gradient array per parent (or None
    for parents that need none). A tensor consumed k times accumulates the
    sum of its k contributions because every consumer node adds into the
    same ``grad`` buffer.
    """

    def __init__(self):
        self._nodes = []
        self._used = False

    def __enter__(self):
        stack = getattr(_state, "tapes", None)
        if stack is None:
            stack = _state.tapes = []
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _state.tapes.pop()
        return False

    def _append(self, out, parents, backward_fn):
        self._nodes.append((out, parents, backward_fn))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``."""
        if loss.size != 1:
            raise ValueError(
                f"backward expects a scalar loss, got shape {loss.shape}"
            )
        if self._used:
            raise RuntimeError("this tape has already been replayed")
        self._used = True
        loss.grad = np.ones_like(loss.data)
        for out, parents, backward_fn in reversed(self._nodes):
            g = out.grad
            if g is None:
                continue  # branch never reached the loss
            parent_grads = backward_fn(g)
            for p, pg in zip(parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                if p.grad is None:
                    # adopt fresh buffers; copy anything borrowed (g itself,
                    # views, broadcasts) so later accumulation cannot alias
                    if pg is g or pg.base is not None or not pg.flags.owndata:
                        p.grad = pg.copy()
                    else:
                        p.grad = pg
                else:
                    p.grad += pg
            out.grad = None  # interior grads are transient


def record(out: Tensor, parents, backward_fn) -> Tensor:
    """Register an op on the active tape (no-op when none is active)."""
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape = active_tape()
        if tape is not None:
            tape._append(out, tuple(parents), backward_fn)
    return out


def backward(loss: Tensor) -> None:
    """Replay the active tape from a scalar loss."""
    tape = active_tape()
    if tape is None:
        raise RuntimeError("backward() needs an active GradientTape")
    tape.backward(loss)


# ---------------------------------------------------------------------------
# shape helpers
# ---------------------------------------------------------------------------


def _sum_to_shape(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a gradient over broadcast leading axes back to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if g.shape[ax] != n:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _swap(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


# ---------------------------------------------------------------------------
# core ops
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product.

    Leading (batch) extents must match, except that either operand may be a
    plain 2-D matrix (the shared-weight case); inner extents must agree.
    """
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {ad.shape} x {bd.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"matmul inner extents disagree: {ad.shape} x {bd.shape}")
    if (
        ad.ndim > 2
        and bd.ndim > 2
        and ad.shape[:-2] != bd.shape[:-2]
    ):
        raise ShapeError(f"matmul batch extents disagree: {ad.shape} x {bd.shape}")
    out = Tensor(ad @ bd)

    def bwd(g):
        if a.requires_grad:
            ga = _sum_to_shape(g @ _swap(bd), ad.shape)
        else:
            ga = None
        if b.requires_grad:
            if bd.ndim == 2 and ad.ndim > 2:
                k = ad.shape[-1]
                n = g.shape[-1]
                gb = ad.reshape(-1, k).T @ g.reshape(-1, n)
            else:
                gb = _sum_to_shape(_swap(ad) @ g, bd.shape)
        else:
            gb = None
        return ga, gb

    return record(out, (a, b), bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add shapes disagree: {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data)
    return record(out, (a, b), lambda g: (g, g))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a 1-D bias along the last axis."""
    if b.ndim != 1 or b.shape[0] != x.shape[-1]:
        raise ShapeError(f"bias {b.shape} does not match last axis of {x.shape}")
    out = Tensor(x.data + b.data)

    def bwd(g):
        gb = g.reshape(-1, g.shape[-1]).sum(axis=0) if b.requires_grad else None
        return g, gb

    return record(out, (x, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul shapes disagree: {a.shape} vs {b.shape}")
    out = Tensor(a.data * b.data)
    return record(out, (a, b), lambda g: (g * b.data, g * a.data))


def mul_scalar(x: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(x.data * c)
    return record(out, (x,), lambda g: (g * c,))


def scale_by(x: Tensor, s: Tensor) -> Tensor:
    """Multiply by a single-element tensor (gradient flows to both)."""
    if s.size != 1:
        raise ShapeError(f"scale_by expects a scalar tensor, got shape {s.shape}")
    sv = s.data.reshape(())
    out = Tensor(x.data * sv)

    def bwd(g):
        gs = np.array([(g * x.data).sum()]).reshape(s.shape) if s.requires_grad else None
        return g * sv, gs

    return record(out, (x, s), bwd)


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0))
    return record(out, (x,), lambda g: (g * (out.data > 0.0),))


def square(x: Tensor) -> Tensor:
    out = Tensor(x.data * x.data)
    return record(out, (x,), lambda g: (g * (2.0 * x.data),))


def softmax_lastdim(x: Tensor) -> Tensor:
    """Row-stochastic softmax along the last axis, max-subtracted."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)

    def bwd(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot),)

    return record(out, (x,), bwd)


def layernorm_lastdim(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale+shift."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layernorm gain/bias must be ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xhat = x.data - mu
    var = np.einsum("...i,...i->...", xhat, xhat)[..., None] / d
    inv = 1.0 / np.sqrt(var + eps)
    xhat *= inv  # fresh buffer; normalize in place
    y = xhat * gain.data
    y += bias.data
    out = Tensor(y)

    def bwd(g):
        ggain = (
            np.einsum("ni,ni->i", g.reshape(-1, d), xhat.reshape(-1, d))
            if gain.requires_grad
            else None
        )
        gbias = g.reshape(-1, d).sum(axis=0) if bias.requires_grad else None
        if x.requires_grad:
            gy = g * gain.data
            m1 = gy.mean(axis=-1, keepdims=True)
            m2 = np.einsum("...i,...i->...", gy, xhat)[..., None] / d
            gx = gy  # reuse; gy is not referenced again
            gx -= m1
            gx -= xhat * m2
            gx *= inv
        else:
            gx = None
        return gx, ggain, gbias

    return record(out, (x, gain, bias), bwd)


def dropout(x: Tensor, p: float, rng, training: bool) -> Tensor:
    """Zero each element with probability p, scale survivors by 1/(1-p).

    Identity (the same tensor object) in eval mode or at p == 0.
    """
    from .errors import ConfigError

    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    mask = rng.random(x.shape, dtype=np.float32) >= p
    scale = 1.0 / (1.0 - p)
    y = x.data * mask
    y *= scale
    out = Tensor(y)

    def bwd(g):
        gm = g * mask
        gm *= scale
        return (gm,)

    return record(out, (x,), bwd)


def mean_axis(x: Tensor, axis: int) -> Tensor:
    axis = axis % x.ndim
    n = x.shape[axis]
    out = Tensor(x.data.mean(axis=axis))

    def bwd(g):
        return (np.broadcast_to(np.expand_dims(g / n, axis), x.shape),)

    return record(out, (x,), bwd)


def concat(parts, axis: int) -> Tensor:
    parts = list(parts)
    axis = axis % parts[0].ndim
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))

    def bwd(g):
        grads = []
        start = 0
        for p in parts:
            n = p.shape[axis]
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(start, start + n)
            grads.append(g[tuple(sl)] if p.requires_grad else None)
            start += n
        return grads

    return record(out, tuple(parts), bwd)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    axis = axis % x.ndim
    sl = [slice(None)] * x.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)
    out = Tensor(x.data[sl])

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[sl] = g
        return (gx,)

    return record(out, (x,), bwd)


def reshape(x: Tensor, shape) -> Tensor:
    out = Tensor(x.data.reshape(shape))
    return record(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = np.argsort(axes)
    out = Tensor(np.ascontiguousarray(x.data.transpose(axes)))
    return record(out, (x,), lambda g: (g.transpose(inv),))


def expand_batch(x: Tensor, n: int) -> Tensor:
    """Tile along a new leading axis; gradient sums over that axis."""
    out = Tensor(np.broadcast_to(x.data, (n,) + x.shape))
    return record(out, (x,), lambda g: (g.sum(axis=0),))


def embedding_lookup(table: Tensor, idx: np.ndarray) -> Tensor:
    """Gather rows of a 2-D table by integer index."""
    idx = np.asarray(idx)
    n_rows = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n_rows):
        raise ShapeError(
            f"index out of range for table with {n_rows} rows: "
            f"[{idx.min()}, {idx.max()}]"
        )
    out = Tensor(table.data[idx])

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return record(out, (table,), bwd)


def numeric_tokens(values: np.ndarray, weight: Tensor, bias: Tensor) -> Tensor:
    """Per-feature linear tokens: out[n,f,:] = values[n,f]*weight[f,:] + bias[f,:]."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or weight.shape[0] != values.shape[1]:
        raise ShapeError(
            f"numeric_tokens: values {values.shape} vs weight {weight.shape}"
        )
    out = Tensor(values[:, :, None] * weight.data[None, :, :] + bias.data[None, :, :])

    def bwd(g):
        gw = np.einsum("nf,nfd->fd", values, g) if weight.requires_grad else None
        gb = g.sum(axis=0) if bias.requires_grad else None
        return gw, gb

    return record(out, (weight, bias), bwd)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of row softmax vs integer labels."""
    labels = np.asarray(labels)
    n = logits.shape[0]
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    probs = e / e.sum(axis=-1, keepdims=True)
    picked = z[np.arange(n), labels] - np.log(e.sum(axis=-1))
    out = Tensor(-picked.mean())

    def bwd(g):
        gl = probs.copy()
        gl[np.arange(n), labels] -= 1.0
        return (gl * (float(g) / n),)

    return record(out, (logits,), bwd)


def mse_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean squared error against a constant target array."""
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"mse shapes disagree: {pred.shape} vs {target.shape}")
    diff = pred.data - target
    out = Tensor(np.mean(diff * diff))
    scale = 2.0 / diff.size
    return record(out, (pred,), lambda g: (diff * (scale * float(g)),))
