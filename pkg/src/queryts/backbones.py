"""Small patch-token and variate-token transformer backbones.

These exist to exercise the embedding-swap contract: for a fixed backbone
configuration, every embedding choice (conventional grid projection, add,
concat, meanpool, query) produces the structured input the backbone expects,
and the backbone/decoder parameter manifests are identical across choices.
All variants feed the shared cross-attention forecasting decoder.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import tensor as T
from .attention import AttnBlock, Linear
from .data import PaddedBatch, patch_count, rescale_times
from .embedding import (AddEmbedding, ConcatEmbedding, EmbeddingOutput,
                        MeanPoolEmbedding, QueryEmbedding, masked_mean)
from .errors import ShapeError, ValidationError
from .model import CrossDecoder, ForecastBatch
from .params import ParamStore

FAMILIES = ("patch_transformer", "variate_transformer")
EMBEDDINGS = ("conventional", "add", "concat", "meanpool", "query")


@dataclass
class BackboneConfig:
    family: str
    embedding: str = "conventional"
    depth: int = 1
    dim: int = 64
    heads: int = 4
    grid_slots: int = 8            # regular-grid cells per patch (or per window)
    num_variables: int = 4
    patch_size: float = 6.0
    stride: float = 6.0
    window_start: float = 0.0
    window_end: float = 48.0
    t_s: float = 24.0
    query_init: str = "random_normal"
    seed: int = 1
    learning_rate: float = 1e-3

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown backbone family {self.family!r}")
        if self.embedding not in EMBEDDINGS:
            raise ValidationError(f"unknown embedding kind {self.embedding!r}")
        if self.depth < 0:
            raise ValidationError("depth must be >= 0")

    @property
    def num_patches(self):
        return patch_count(self.window_start, self.t_s, self.patch_size, self.stride)

    @property
    def patch_window_end(self):
        # backbones only forecast: patches always tile the history window
        return self.t_s

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        kwargs = {k: v for k, v in d.items() if k in known}
        for key in ("depth", "dim", "heads", "grid_slots", "num_variables", "seed"):
            if key in kwargs:
                kwargs[key] = int(kwargs[key])
        for key in ("patch_size", "stride", "window_start", "window_end",
                    "t_s", "learning_rate"):
            if key in kwargs:
                kwargs[key] = float(kwargs[key])
        return cls(**kwargs)


# -- regular-grid placement for the conventional embedding ----------------------

def grid_from_patch_batch(batch: PaddedBatch, window_start, patch_size, slots):
    """Average observed values into ``slots`` equal cells per patch:
    [B x M x N x L] -> [B x M x N x slots], zero where a cell is empty."""
    b, m, n, L = batch.values.shape
    sums = np.zeros((b, m, n, slots))
    counts = np.zeros((b, m, n, slots))
    bi, mi, ni, li = np.nonzero(batch.masks)
    if len(bi):
        local = batch.times[bi, mi, ni, li] - (window_start + mi * patch_size)
        cell = np.clip((local / (patch_size / slots)).astype(np.int64), 0, slots - 1)
        np.add.at(sums, (bi, mi, ni, cell), batch.values[bi, mi, ni, li])
        np.add.at(counts, (bi, mi, ni, cell), 1.0)
    return sums / np.maximum(counts, 1.0)


def grid_from_flat_batch(batch: PaddedBatch, window_start, window_end, slots):
    """[B x N x L] -> [B x N x slots] over the whole history window."""
    b, n, L = batch.values.shape
    sums = np.zeros((b, n, slots))
    counts = np.zeros((b, n, slots))
    bi, ni, li = np.nonzero(batch.masks)
    if len(bi):
        width = (window_end - window_start) / slots
        cell = np.clip(((batch.times[bi, ni, li] - window_start) / width).astype(np.int64),
                       0, slots - 1)
        np.add.at(sums, (bi, ni, cell), batch.values[bi, ni, li])
        np.add.at(counts, (bi, ni, cell), 1.0)
    return sums / np.maximum(counts, 1.0)


class ConventionalEmbedding:
    """Linear projection of regular-grid values, the embedding every MTS
    backbone assumes: a per-patch (or per-window) value vector to D."""

    def __init__(self, params, prefix, cfg: BackboneConfig):
        self.cfg = cfg
        self.lin = Linear(params, f"{prefix}.proj", cfg.grid_slots, cfg.dim)

    def __call__(self, fb: ForecastBatch) -> EmbeddingOutput:
        cfg = self.cfg
        if cfg.family == "patch_transformer":
            grid = grid_from_patch_batch(fb.padded, cfg.window_start,
                                         cfg.patch_size, cfg.grid_slots)
            e = self.lin(T.Tensor(grid))
            b, m, n, _ = grid.shape
            return EmbeddingOutput("patch", e, np.ones((b, m, n)))
        grid = grid_from_flat_batch(fb.flat, cfg.window_start, cfg.t_s, cfg.grid_slots)
        return EmbeddingOutput("variable", self.lin(T.Tensor(grid)))


class _IrregularEmbedding:
    """Adapter running the irregular-input variants (add/concat/meanpool/
    query) in the structure the backbone family expects."""

    def __init__(self, params, prefix, cfg: BackboneConfig):
        self.cfg = cfg
        kind = cfg.embedding
        patches = cfg.num_patches if cfg.family == "patch_transformer" else None
        if kind == "add":
            self.module = AddEmbedding(params, prefix, cfg.dim, cfg.seed)
        elif kind == "concat":
            self.module = ConcatEmbedding(params, prefix, cfg.dim, cfg.seed)
        elif kind == "meanpool":
            self.module = MeanPoolEmbedding(params, prefix, cfg.dim, cfg.heads, cfg.seed)
        elif kind == "query":
            self.module = QueryEmbedding(params, prefix, cfg.dim, cfg.heads,
                                         cfg.num_variables, num_patches=patches,
                                         init_scheme=cfg.query_init, seed=cfg.seed)
        else:
            raise ValidationError(f"not an irregular embedding: {kind!r}")

    def __call__(self, fb: ForecastBatch) -> EmbeddingOutput:
        cfg = self.cfg
        batch = fb.padded if cfg.family == "patch_transformer" else fb.flat
        t = rescale_times(batch.times, cfg.window_start, cfg.window_end)
        return self.module(batch.values, t, batch.masks)


def build_embedding(params, prefix, cfg: BackboneConfig):
    if cfg.embedding == "conventional":
        return ConventionalEmbedding(params, prefix, cfg)
    return _IrregularEmbedding(params, prefix, cfg)


class BackboneModel:
    """Embedding -> backbone blocks -> shared cross-attention decoder.

    Parameters are namespaced embed.* / backbone.* / decoder.* so the
    plug-and-play contract is checkable from the manifest alone.
    """

    def __init__(self, cfg: BackboneConfig):
        if cfg.dim % cfg.heads != 0:
            raise ShapeError(f"dim {cfg.dim} not divisible by heads {cfg.heads}")
        self.cfg = cfg
        p = ParamStore(cfg.seed)
        self.params = p
        self.embed = build_embedding(p, "embed", cfg)
        self.blocks = [AttnBlock(p, f"backbone.block{i}", cfg.dim, cfg.heads)
                       for i in range(cfg.depth)]
        self.decoder = CrossDecoder(p, "decoder", cfg.dim, cfg.heads, seed=cfg.seed)

    def backbone_forward(self, emb: EmbeddingOutput):
        """Returns (summary [B x N x D], local token states [B x N x K x D]).
        depth 0 passes the embedding through unchanged."""
        cfg = self.cfg
        if cfg.family == "patch_transformer":
            if emb.mode != "patch":
                raise ShapeError("patch backbone fed a variable-level embedding")
            x = T.transpose(emb.embeddings, (0, 2, 1, 3))   # [B,N,M,D]
            for blk in self.blocks:
                x = blk(x)
            pv = np.transpose(emb.patch_valid, (0, 2, 1))   # [B,N,M]
            summary = masked_mean(x, pv)
            return summary, x
        if emb.mode != "variable":
            raise ShapeError("variate backbone fed a patch-level embedding")
        x = emb.embeddings                                   # [B,N,D]
        for blk in self.blocks:
            x = blk(x)
        return x, T.unsqueeze(x, -2)

    def forward(self, fb: ForecastBatch):
        emb = self.embed(fb)
        summary, local = self.backbone_forward(emb)
        return self.decoder(summary, local, fb.future_times,
                            self.cfg.window_start, self.cfg.window_end)
