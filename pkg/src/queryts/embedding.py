"""Observation tokenization and query-token aggregation.

Each observation becomes a token z = f_val(x) + phi(t), where phi is a
harmonic map with a linear first component and sine components, all with
learnable frequencies and phases. A learnable query token is prepended to
each observation set and updated by masked self-attention; its post-attention
state is the set's fixed-size summary. Aggregation happens per variable
(output [N x D]) or per patch-variable pair (output [M x N x D]).

The simpler embedding variants used for comparisons (add, concat, meanpool)
live here too so they share the tokenizer parameter structure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import AttnBlock, Linear
from .errors import ShapeError, ValidationError
from .params import ParamStore

INIT_SCHEMES = ("random_normal", "xavier", "uniform", "zero")


def init_queries(scheme, shape, seed):
    """Deterministic query-bank initializer. Xavier treats the token width
    (last extent) as both fans, so the bound is sqrt(6/(D+D))."""
    rng = np.random.default_rng(seed)
    if scheme == "random_normal":
        return rng.normal(0.0, 0.02, size=shape)
    if scheme == "xavier":
        d = shape[-1]
        bound = math.sqrt(6.0 / (d + d))
        return rng.uniform(-bound, bound, size=shape)
    if scheme == "uniform":
        return rng.uniform(-0.1, 0.1, size=shape)
    if scheme == "zero":
        return np.zeros(shape)
    raise ValidationError(f"unknown query init scheme {scheme!r}; pick one of {INIT_SCHEMES}")


class TimeEmbedder:
    """Harmonic map of a scalar timestamp to D features: component 0 is
    omega_0*t + alpha_0, components k>0 are sin(omega_k*t + alpha_k)."""

    def __init__(self, params: ParamStore, prefix, dim, seed):
        rng = np.random.default_rng(seed)
        omega = rng.normal(0.0, 1.0, size=dim)
        alpha = rng.uniform(0.0, 2.0 * math.pi, size=dim)
        omega[0], alpha[0] = 1.0, 0.0
        self.dim = dim
        self.omega = params.add(f"{prefix}.omega", omega)
        self.alpha = params.add(f"{prefix}.alpha", alpha)

    def __call__(self, times):
        """times: array [...] -> Tensor [... x D]."""
        t = T.Tensor(np.asarray(times, dtype=np.float64)[..., None])
        pre = t * self.omega + self.alpha
        linear = T.slice_axis(pre, -1, 0, 1)
        periodic = T.sin(T.slice_axis(pre, -1, 1, self.dim))
        return T.concat([linear, periodic], axis=-1)


class ValueEmbedder:
    """Linear encoder of a scalar value into D dimensions."""

    def __init__(self, params: ParamStore, prefix, dim):
        bound = math.sqrt(6.0 / (1 + dim))
        self.weight = params.add_uniform(f"{prefix}.weight", (1, dim), bound)
        self.bias = params.add_zeros(f"{prefix}.bias", (dim,))
        self.dim = dim

    def __call__(self, values):
        x = T.Tensor(np.asarray(values, dtype=np.float64)[..., None])
        return x * T.reshape(self.weight, (self.dim,)) + self.bias


class Tokenizer:
    """Shared value/time token map; masks pass through untouched."""

    def __init__(self, params, prefix, dim, seed):
        self.time_emb = TimeEmbedder(params, f"{prefix}.time", dim, seed)
        self.value_emb = ValueEmbedder(params, f"{prefix}.value", dim)
        self.dim = dim

    def __call__(self, values, times, masks):
        if np.shape(values) != np.shape(times) or np.shape(values) != np.shape(masks):
            raise ShapeError(
                f"value/time/mask shapes disagree: {np.shape(values)} "
                f"{np.shape(times)} {np.shape(masks)}")
        return self.value_emb(values) + self.time_emb(times), masks


@dataclass
class EmbeddingOutput:
    mode: str                     # "variable" | "patch"
    embeddings: object            # Tensor [.. x N x D] or [.. x M x N x D]
    patch_valid: np.ndarray | None = None   # [.. x M x N], 1 where any real observation


def aggregate_variable(tokens, masks, queries, block: AttnBlock):
    """tokens: [B x N x L x D], masks: [B x N x L], queries: [N x D].
    Returns the updated query states, [B x N x D]."""
    b, n, L, d = tokens.shape
    q = T.expand(T.reshape(queries, (1, n, 1, d)), (b, n, 1, d))
    seq = T.concat([q, tokens], axis=-2)
    valid = np.concatenate([np.ones((b, n, 1)), masks], axis=-1)
    h = block(seq, key_valid=valid)
    return T.select(h, -2, 0)


def aggregate_patch(tokens, masks, queries, block: AttnBlock):
    """tokens: [B x M x N x L x D], masks: [B x M x N x L],
    queries: [M x N x D]. Returns [B x M x N x D] plus per-pair validity;
    an all-masked pair yields the query's self-attention output."""
    b, m, n, L, d = tokens.shape
    q = T.expand(T.reshape(queries, (1, m, n, 1, d)), (b, m, n, 1, d))
    seq = T.concat([q, tokens], axis=-2)
    valid = np.concatenate([np.ones((b, m, n, 1)), masks], axis=-1)
    h = block(seq, key_valid=valid)
    patch_valid = (masks.max(axis=-1) > 0).astype(np.float64) if L else np.zeros((b, m, n))
    return T.select(h, -2, 0), patch_valid


def masked_mean(tokens, masks):
    """Average of tokens over the observation axis, ignoring mask-0 slots;
    an all-masked slot yields an exact zero vector."""
    w = T.Tensor(masks[..., None])
    total = T.tsum(tokens * w, axis=-2)
    counts = np.maximum(masks.sum(axis=-1), 1.0)
    return total * T.Tensor(1.0 / counts[..., None])


class QueryEmbedding:
    """Full query-token embedding module: tokenizer + query bank + one
    self-attention block, in variable or patch mode."""

    def __init__(self, params: ParamStore, prefix, dim, heads, num_variables,
                 num_patches=None, init_scheme="random_normal", seed=0):
        self.mode = "variable" if num_patches is None else "patch"
        self.tokenizer = Tokenizer(params, f"{prefix}.tok", dim, seed)
        shape = (num_variables, dim) if num_patches is None \
            else (num_patches, num_variables, dim)
        self.queries = params.add(f"{prefix}.queries", init_queries(init_scheme, shape, seed))
        self.block = AttnBlock(params, f"{prefix}.attn", dim, heads)

    def __call__(self, values, times, masks) -> EmbeddingOutput:
        tokens, masks = self.tokenizer(values, times, masks)
        if self.mode == "variable":
            e = aggregate_variable(tokens, masks, self.queries, self.block)
            return EmbeddingOutput("variable", e)
        e, patch_valid = aggregate_patch(tokens, masks, self.queries, self.block)
        return EmbeddingOutput("patch", e, patch_valid)


class AddEmbedding:
    """Value+time tokens followed by a masked mean per target slot."""

    def __init__(self, params, prefix, dim, seed):
        self.tokenizer = Tokenizer(params, f"{prefix}.tok", dim, seed)

    def __call__(self, values, times, masks) -> EmbeddingOutput:
        tokens, masks = self.tokenizer(values, times, masks)
        pooled = masked_mean(tokens, masks)
        return _pooled_output(pooled, masks)


class ConcatEmbedding:
    """Linear map of each (value, timestamp) pair, then a masked mean."""

    def __init__(self, params, prefix, dim, seed):
        self.lin = Linear(params, f"{prefix}.pair", 2, dim)

    def __call__(self, values, times, masks) -> EmbeddingOutput:
        pairs = T.Tensor(np.stack([values, times], axis=-1))
        tokens = self.lin(pairs)
        pooled = masked_mean(tokens, masks)
        return _pooled_output(pooled, masks)


class MeanPoolEmbedding:
    """Self-attention over observation tokens without any query token,
    then a masked mean over the observation-level outputs."""

    def __init__(self, params, prefix, dim, heads, seed):
        self.tokenizer = Tokenizer(params, f"{prefix}.tok", dim, seed)
        self.block = AttnBlock(params, f"{prefix}.attn", dim, heads)

    def __call__(self, values, times, masks) -> EmbeddingOutput:
        tokens, masks = self.tokenizer(values, times, masks)
        # all-masked sequences get a dummy all-valid mask to keep the softmax
        # defined; the masked mean zeroes their contribution exactly
        any_valid = masks.max(axis=-1, keepdims=True) > 0
        attn_valid = np.where(any_valid, masks, 1.0)
        h = self.block(tokens, key_valid=attn_valid)
        pooled = masked_mean(h, masks)
        return _pooled_output(pooled, masks)


def _pooled_output(pooled, masks):
    if pooled.ndim == 4:  # [B x M x N x D]
        return EmbeddingOutput("patch", pooled,
                               (masks.max(axis=-1) > 0).astype(np.float64))
    return EmbeddingOutput("variable", pooled)


def emit_embeddings_csv(path, instance_ids, output: EmbeddingOutput, config_hash=None):
    """One row per summary token: instance_id, n, [m,] D feature values."""
    e = output.embeddings.data
    with open(path, "w", encoding="utf-8") as fh:
        if config_hash is not None:
            fh.write(f"# config-hash: {config_hash}\n")
        d = e.shape[-1]
        cols = ",".join(f"e{k}" for k in range(d))
        if output.mode == "variable":
            fh.write(f"instance_id,variable,{cols}\n")
            for i, iid in enumerate(instance_ids):
                for n in range(e.shape[1]):
                    feats = ",".join("%.17g" % v for v in e[i, n])
                    fh.write(f"{iid},{n},{feats}\n")
        else:
            fh.write(f"instance_id,patch,variable,{cols}\n")
            for i, iid in enumerate(instance_ids):
                for m in range(e.shape[1]):
                    for n in range(e.shape[2]):
                        feats = ",".join("%.17g" % v for v in e[i, m, n])
                        fh.write(f"{iid},{m},{n},{feats}\n")
