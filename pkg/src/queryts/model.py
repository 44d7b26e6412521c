"""Hierarchical query forecaster and its classification variant.

The encoder prepends one learnable variable-identity token to each variable's
patch-token sequence and alternates patch-level self-attention (temporal,
per variable) with variable-level self-attention (across variables) for L
layers. The decoder embeds future timestamps with the same harmonic time map
used for tokenization, cross-attends them to the per-variable summary (global
context) and to the patch tokens (local context), and maps the concatenated
contexts through a three-layer head to one value per (timestamp, variable).
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .attention import AttnBlock, CrossAttnBlock, MlpHead
from .data import (PaddedBatch, assign_patches, batch_pad, patch_count,
                   rescale_times)
from .embedding import QueryEmbedding, TimeEmbedder
from .errors import ShapeError, ValidationError
from .params import ParamStore


@dataclass
class ModelConfig:
    num_variables: int
    dim: int = 64
    heads: int = 4
    layers: int = 1
    patch_size: float = 6.0
    stride: float = 6.0
    window_start: float = 0.0
    window_end: float = 48.0
    t_s: float = 24.0
    query_init: str = "random_normal"
    seed: int = 1
    learning_rate: float = 1e-3
    num_classes: int | None = None

    @property
    def num_patches(self):
        # patches tile the history window for forecasting, the full window
        # for classification (no split time)
        end = self.window_end if self.num_classes is not None else self.t_s
        return patch_count(self.window_start, end, self.patch_size, self.stride)

    @property
    def patch_window_end(self):
        return self.window_end if self.num_classes is not None else self.t_s

    def to_dict(self):
        d = asdict(self)
        if d["num_classes"] is None:
            d.pop("num_classes")
        return d

    @classmethod
    def from_dict(cls, d):
        kwargs = dict(d)
        known = {f for f in cls.__dataclass_fields__}
        kwargs = {k: v for k, v in kwargs.items() if k in known}
        for key in ("num_variables", "dim", "heads", "layers", "seed"):
            if key in kwargs:
                kwargs[key] = int(kwargs[key])
        for key in ("patch_size", "stride", "window_start", "window_end",
                    "t_s", "learning_rate"):
            if key in kwargs:
                kwargs[key] = float(kwargs[key])
        if "num_classes" in kwargs and kwargs["num_classes"] is not None:
            kwargs["num_classes"] = int(kwargs["num_classes"])
        return cls(**kwargs)


class CrossDecoder:
    """Future-time cross-attention decoder shared by every forecasting model.

    Future timestamps are embedded with a harmonic time map (either a shared
    tokenizer map or an owned one), cross-attended to the per-variable summary
    (global context, a single key) and to the per-variable local token
    sequence, and the concatenated contexts feed a three-layer head producing
    one value per (timestamp, variable).
    """

    def __init__(self, params: ParamStore, prefix, dim, heads,
                 time_emb=None, seed=0):
        self.time_emb = time_emb if time_emb is not None \
            else TimeEmbedder(params, f"{prefix}.time", dim, seed)
        self.cross_global = CrossAttnBlock(params, f"{prefix}.global", dim, heads)
        self.cross_local = CrossAttnBlock(params, f"{prefix}.local", dim, heads)
        self.out_head = MlpHead(params, f"{prefix}.out", 2 * dim, dim, 1)
        self.dim = dim

    def embed_future_queries(self, rescaled_times):
        """Future timestamps (already window-rescaled) -> query rows
        [... x Lp x D] through the harmonic time map."""
        return self.time_emb(rescaled_times)

    def __call__(self, summary, local_states, future_times, window_start, window_end):
        """summary: [B x N x D]; local_states: [B x N x K x D]; future_times:
        raw [B x Lp]. Returns predictions [B x Lp x N]."""
        b, n, d = summary.shape
        lp = future_times.shape[1]
        tq = rescale_times(future_times, window_start, window_end)
        u = self.embed_future_queries(tq)                         # [B,Lp,D]
        u = T.expand(T.unsqueeze(u, 1), (b, n, lp, d))            # [B,N,Lp,D]
        g = self.cross_global(u, T.unsqueeze(summary, -2))
        r = self.cross_local(u, local_states)
        y = self.out_head(T.concat([g, r], axis=-1))              # [B,N,Lp,1]
        return T.transpose(T.reshape(y, (b, n, lp)), (0, 2, 1))


class HierForecaster:
    """Patch-level query embedding -> hierarchical encoder -> cross-attention
    decoder. The classification variant flattens the variable summaries into
    a three-layer head instead of decoding."""

    def __init__(self, cfg: ModelConfig):
        if cfg.dim % cfg.heads != 0:
            raise ShapeError(f"dim {cfg.dim} not divisible by heads {cfg.heads}")
        if cfg.layers < 1:
            raise ValidationError("encoder needs at least one layer")
        self.cfg = cfg
        p = ParamStore(cfg.seed)
        self.params = p
        d, h = cfg.dim, cfg.heads
        m, n = cfg.num_patches, cfg.num_variables

        self.embed = QueryEmbedding(p, "embed", d, h, n, num_patches=m,
                                    init_scheme=cfg.query_init, seed=cfg.seed)
        self.var_tokens = p.add_normal("encoder.var_tokens", (n, d), std=0.02)
        self.patch_blocks = [AttnBlock(p, f"encoder.layer{i}.patch", d, h)
                             for i in range(cfg.layers)]
        self.var_blocks = [AttnBlock(p, f"encoder.layer{i}.var", d, h)
                           for i in range(cfg.layers)]
        if cfg.num_classes is None:
            # the decoder reuses the tokenizer's time map: perturbing a
            # frequency moves both history tokens and future queries
            self.decoder = CrossDecoder(p, "decoder", d, h,
                                        time_emb=self.embed.tokenizer.time_emb)
        else:
            self.clf_head = MlpHead(p, "classifier", n * d, d, cfg.num_classes)

    # -- stages -----------------------------------------------------------

    def embed_patches(self, batch: PaddedBatch):
        """batch arrays: [B x M x N x L] with raw timestamps."""
        t = rescale_times(batch.times, self.cfg.window_start, self.cfg.window_end)
        return self.embed(batch.values, t, batch.masks)

    def encode(self, patch_embeddings):
        """[B x M x N x D] -> (C [B x N x D], E [B x M x N x D])."""
        b, m, n, d = patch_embeddings.shape
        e = T.transpose(patch_embeddings, (0, 2, 1, 3))          # [B,N,M,D]
        c = T.expand(T.reshape(self.var_tokens, (1, n, 1, d)), (b, n, 1, d))
        for patch_block, var_block in zip(self.patch_blocks, self.var_blocks):
            seq = T.concat([c, e], axis=-2)                      # [B,N,1+M,D]
            seq = patch_block(seq)
            c_rows = T.select(seq, -2, 0)                        # [B,N,D]
            e = T.slice_axis(seq, -2, 1, 1 + m)
            c_rows = var_block(c_rows)                           # attention over variables
            c = T.unsqueeze(c_rows, -2)
        return T.reshape(c, (b, n, d)), T.transpose(e, (0, 2, 1, 3))

    def decode(self, summary, patch_states, future_times):
        """summary C: [B x N x D]; patch_states E: [B x M x N x D];
        future_times: raw [B x Lp]. Returns predictions [B x Lp x N]."""
        kv_local = T.transpose(patch_states, (0, 2, 1, 3))        # [B,N,M,D]
        return self.decoder(summary, kv_local, future_times,
                            self.cfg.window_start, self.cfg.window_end)

    def forward(self, batch: PaddedBatch, future_times):
        emb = self.embed_patches(batch)
        summary, patch_states = self.encode(emb.embeddings)
        return self.decode(summary, patch_states, future_times)

    def classify(self, batch: PaddedBatch):
        if self.cfg.num_classes is None:
            raise ValidationError("model was built without a classification head")
        emb = self.embed_patches(batch)
        summary, _ = self.encode(emb.embeddings)
        b, n, d = summary.shape
        return self.clf_head(T.reshape(summary, (b, n * d)))


# -- batched forecasting inputs -------------------------------------------------

@dataclass
class ForecastBatch:
    padded: PaddedBatch          # patch-partitioned history
    flat: PaddedBatch            # un-patched history (for variable-level models)
    future_times: np.ndarray     # [B x Lp] raw timestamps (0 where padded)
    targets: np.ndarray          # [B x Lp x N]
    target_mask: np.ndarray      # [B x Lp x N]
    instance_ids: list = field(default_factory=list)


def make_forecast_batch(splits, cfg: ModelConfig) -> ForecastBatch:
    """Pad a list of ForecastSplit into model-ready arrays. Each instance's
    query timestamps become one row of future times; (timestamp, variable)
    pairs present in the query set get target_mask 1."""
    grids = [assign_patches(s.history, cfg.patch_size, cfg.stride,
                            cfg.window_start, cfg.patch_window_end) for s in splits]
    padded = batch_pad([s.history for s in splits], grids)
    flat = batch_pad([s.history for s in splits])
    b = len(splits)
    n = cfg.num_variables
    uniq = [np.unique(s.query_times) for s in splits]
    lp = max(1, max(len(u) for u in uniq))
    future = np.zeros((b, lp))
    targets = np.zeros((b, lp, n))
    tmask = np.zeros((b, lp, n))
    for i, s in enumerate(splits):
        future[i, :len(uniq[i])] = uniq[i]
        pos = {t: j for j, t in enumerate(uniq[i])}
        for var, t, y in zip(s.query_vars, s.query_times, s.targets):
            j = pos[t]
            targets[i, j, var] = y
            tmask[i, j, var] = 1.0
    ids = [s.history.instance_id for s in splits]
    return ForecastBatch(padded, flat, future, targets, tmask, ids)


def masked_mse_loss(preds, targets, mask):
    """Mean squared error over target positions only."""
    total = mask.sum()
    if total == 0:
        raise ValidationError("empty target set")
    diff = preds - T.Tensor(targets)
    sq = diff * diff * T.Tensor(mask)
    return T.scale(T.tsum(sq), 1.0 / total)
