"""Closed-form cost estimates and exact parameter counts.

The dominant multiply-accumulate terms for the four embedding flavors:

  conventional, variable-based:  B * N * L_v * D
  conventional, patch-based:     B * M * N * L_p * D
  query, variable-based:         B * N * ((L_v+1)^2 * D + (L_v+1) * D^2)
  query, patch-based:            B * M * N * ((L_p+1)^2 * D + (L_p+1) * D^2)

The query variants append one query token, so attention runs over sequences
of length L+1: one quadratic-in-length score term and one linear projection
term. All results are exact integers.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ValidationError


def conventional_variable_cost(b, n, l_v, d):
    _check_positive(b=b, n=n, l_v=l_v, d=d)
    return b * n * l_v * d


def conventional_patch_cost(b, m, n, l_p, d):
    _check_positive(b=b, m=m, n=n, l_p=l_p, d=d)
    return b * m * n * l_p * d


def query_variable_cost(b, n, l_v, d):
    _check_positive(b=b, n=n, l_v=l_v, d=d)
    s = l_v + 1
    return b * n * (s * s * d + s * d * d)


def query_patch_cost(b, m, n, l_p, d):
    _check_positive(b=b, m=m, n=n, l_p=l_p, d=d)
    s = l_p + 1
    return b * m * n * (s * s * d + s * d * d)


def _check_positive(**extents):
    for name, value in extents.items():
        if int(value) != value or value <= 0:
            raise ValidationError(f"extent {name} must be a positive integer, got {value}")


@dataclass
class CostReport:
    parameter_count: int
    tokenization: int
    aggregation: int
    encoder: int
    decoder: int

    @property
    def total(self):
        return self.tokenization + self.aggregation + self.encoder + self.decoder

    def rows(self):
        return [("parameters", self.parameter_count),
                ("tokenization_macs", self.tokenization),
                ("aggregation_macs", self.aggregation),
                ("encoder_macs", self.encoder),
                ("decoder_macs", self.decoder),
                ("total_macs", self.total)]


def estimate_cost(model_cfg, batch_size, seq_len, l_pred=None, param_count=0) -> CostReport:
    """Dominant-term cost of one hierarchical-forecaster forward pass.

    ``seq_len`` is the per-patch observation count L_p. Encoder attention runs
    per variable over 1+M tokens and across N variables for each of the L
    layers; the decoder cross-attends L_pred queries to 1 (global) and M
    (local) keys.
    """
    b = int(batch_size)
    n = int(model_cfg.num_variables)
    m = int(model_cfg.num_patches)
    d = int(model_cfg.dim)
    layers = int(model_cfg.layers)
    l_p = int(seq_len)
    lp = int(l_pred) if l_pred is not None else 1
    _check_positive(b=b, l_p=l_p, l_pred=lp)

    tokenization = conventional_patch_cost(b, m, n, l_p, d)
    aggregation = query_patch_cost(b, m, n, l_p, d)
    s = 1 + m
    enc_patch = b * n * (s * s * d + s * d * d)
    enc_var = b * (n * n * d + n * d * d)
    encoder = layers * (enc_patch + enc_var)
    dec_global = b * n * (lp * 1 * d + (lp + 1) * d * d)
    dec_local = b * n * (lp * m * d + (lp + m) * d * d)
    decoder = dec_global + dec_local
    return CostReport(parameter_count=int(param_count),
                      tokenization=tokenization, aggregation=aggregation,
                      encoder=encoder, decoder=decoder)
