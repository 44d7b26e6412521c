"""Multi-head attention blocks built on the autodiff core.

A "single self-attention layer" is realized as one pre-norm transformer
block: layer norm -> multi-head attention -> residual, then layer norm ->
2-layer feed-forward (D -> 4D -> D, ReLU) -> residual. Cross-attention blocks
mirror that design with the residual on the query path, plus a separate norm
for keys/values.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .params import ParamStore


def _xavier_bound(fan_in, fan_out):
    return math.sqrt(6.0 / (fan_in + fan_out))


class Linear:
    def __init__(self, params: ParamStore, prefix, d_in, d_out):
        self.w = params.add_uniform(f"{prefix}.w", (d_in, d_out), _xavier_bound(d_in, d_out))
        self.b = params.add_zeros(f"{prefix}.b", (d_out,))

    def __call__(self, x):
        return T.matmul(x, self.w) + self.b


class LayerNormParams:
    def __init__(self, params: ParamStore, prefix, dim):
        self.gain = params.add_ones(f"{prefix}.gain", (dim,))
        self.bias = params.add_zeros(f"{prefix}.bias", (dim,))

    def __call__(self, x):
        return T.layer_norm(x, self.gain, self.bias)


class FeedForward:
    """Two-layer position-wise network, D -> hidden -> D with ReLU."""

    def __init__(self, params, prefix, dim, hidden):
        self.lin1 = Linear(params, f"{prefix}.lin1", dim, hidden)
        self.lin2 = Linear(params, f"{prefix}.lin2", hidden, dim)

    def __call__(self, x):
        return self.lin2(T.relu(self.lin1(x)))


class MlpHead:
    """Three-layer feed-forward map d_in -> hidden -> hidden -> d_out."""

    def __init__(self, params, prefix, d_in, hidden, d_out):
        self.lin1 = Linear(params, f"{prefix}.lin1", d_in, hidden)
        self.lin2 = Linear(params, f"{prefix}.lin2", hidden, hidden)
        self.lin3 = Linear(params, f"{prefix}.lin3", hidden, d_out)
        self.d_in = d_in

    def __call__(self, x):
        if x.shape[-1] != self.d_in:
            raise ShapeError(f"head expects input width {self.d_in}, got {x.shape[-1]}")
        return self.lin3(T.relu(self.lin2(T.relu(self.lin1(x)))))


def _split_heads(x, heads):
    # [..., S, D] -> [..., H, S, D/H]
    *batch, s, d = x.shape
    x = T.reshape(x, (*batch, s, heads, d // heads))
    nd = x.ndim
    perm = tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1)
    return T.transpose(x, perm)


def _merge_heads(x):
    # [..., H, S, D/H] -> [..., S, D]
    nd = x.ndim
    perm = tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1)
    x = T.transpose(x, perm)
    *batch, s, h, dh = x.shape
    return T.reshape(x, (*batch, s, h * dh))


def _attend(q, k, v, head_dim, key_valid):
    scores = T.scale(T.matmul(q, T.swap_last(k)), 1.0 / math.sqrt(head_dim))
    if key_valid is None:
        valid = np.ones(scores.shape)
    else:
        valid = np.broadcast_to(
            np.asarray(key_valid, dtype=np.float64)[..., None, None, :], scores.shape)
    weights = T.masked_softmax(scores, valid)
    return T.matmul(weights, v)


class AttnBlock:
    """Pre-norm self-attention block; D must be divisible by the head count."""

    def __init__(self, params: ParamStore, prefix, dim, heads):
        if dim % heads != 0:
            raise ShapeError(f"dim {dim} not divisible by heads {heads}")
        self.dim, self.heads = dim, heads
        self.head_dim = dim // heads
        self.ln_attn = LayerNormParams(params, f"{prefix}.ln_attn", dim)
        self.wq = Linear(params, f"{prefix}.q", dim, dim)
        self.wk = Linear(params, f"{prefix}.k", dim, dim)
        self.wv = Linear(params, f"{prefix}.v", dim, dim)
        self.wo = Linear(params, f"{prefix}.o", dim, dim)
        self.ln_ffn = LayerNormParams(params, f"{prefix}.ln_ffn", dim)
        self.ffn = FeedForward(params, f"{prefix}.ffn", dim, 4 * dim)

    def __call__(self, x, key_valid=None):
        """x: [... x S x D]; key_valid: {0,1} array [... x S] applied to every
        query position, or None for all-valid."""
        h = self.ln_attn(x)
        q = _split_heads(self.wq(h), self.heads)
        k = _split_heads(self.wk(h), self.heads)
        v = _split_heads(self.wv(h), self.heads)
        ctx = _merge_heads(_attend(q, k, v, self.head_dim, key_valid))
        x = x + self.wo(ctx)
        return x + self.ffn(self.ln_ffn(x))


class CrossAttnBlock:
    """Pre-norm cross-attention block; residual path carries the queries."""

    def __init__(self, params: ParamStore, prefix, dim, heads):
        if dim % heads != 0:
            raise ShapeError(f"dim {dim} not divisible by heads {heads}")
        self.dim, self.heads = dim, heads
        self.head_dim = dim // heads
        self.ln_q = LayerNormParams(params, f"{prefix}.ln_q", dim)
        self.ln_kv = LayerNormParams(params, f"{prefix}.ln_kv", dim)
        self.wq = Linear(params, f"{prefix}.q", dim, dim)
        self.wk = Linear(params, f"{prefix}.k", dim, dim)
        self.wv = Linear(params, f"{prefix}.v", dim, dim)
        self.wo = Linear(params, f"{prefix}.o", dim, dim)
        self.ln_ffn = LayerNormParams(params, f"{prefix}.ln_ffn", dim)
        self.ffn = FeedForward(params, f"{prefix}.ffn", dim, 4 * dim)

    def __call__(self, queries, kv, key_valid=None):
        """queries: [... x Lq x D]; kv: [... x S x D] used as both keys and values."""
        q = _split_heads(self.wq(self.ln_q(queries)), self.heads)
        hkv = self.ln_kv(kv)
        k = _split_heads(self.wk(hkv), self.heads)
        v = _split_heads(self.wv(hkv), self.heads)
        ctx = _merge_heads(_attend(q, k, v, self.head_dim, key_valid))
        x = queries + self.wo(ctx)
        return x + self.ffn(self.ln_ffn(x))
