"""Gradient verification suites behind the `grad-check` command.

Three scopes: `ops` checks every differentiable primitive on randomized
inputs; `embed` checks the tokenize->aggregate pipelines and the baseline
embeddings end to end; `model` checks the full hierarchical forecaster
forward (small geometry, every parameter). All scopes compare against central
finite differences at h=1e-5 and relative tolerance 1e-4.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import ImtsInstance, split_forecast
from .embedding import (AddEmbedding, ConcatEmbedding, MeanPoolEmbedding,
                        QueryEmbedding)
from .gradcheck import finite_diff_check
from .model import HierForecaster, ModelConfig, make_forecast_batch, masked_mse_loss
from .params import ParamStore

REL_TOL = 1e-4


@dataclass
class CheckRow:
    name: str
    max_rel_err: float
    max_abs_err: float
    passed: bool


def _merge(name, reports):
    rel = max((r.max_rel_err for r in reports), default=0.0)
    ab = max((r.max_abs_err for r in reports), default=0.0)
    return CheckRow(name, rel, ab, all(r.passed(REL_TOL) for r in reports))


def check_ops(num_seeds=20):
    """One row per primitive, worst case over random seeds."""
    rows = []
    # w is a fixed random weighting drawn once per seed, so the checked
    # function is deterministic across finite-difference evaluations
    cases = {
        "add": lambda x, w: T.tsum(T.sin(x + w)),
        "sub": lambda x, w: T.tsum(T.sin(T.sub(x, w))),
        "mul": lambda x, w: T.tsum(x * w * x),
        "scale": lambda x, w: T.tsum(T.scale(x, 1.7) * x),
        "sin": lambda x, w: T.tsum(T.sin(x) * w),
        "exp": lambda x, w: T.tsum(T.exp(T.scale(x, 0.3))),
        "log": lambda x, w: T.tsum(T.log(T.exp(x) + 1.0)),
        "relu": lambda x, w: T.tsum(T.relu(x) * w),
        "reshape": lambda x, w: T.tsum(T.sin(T.reshape(x, (-1,)))),
        "transpose": lambda x, w: T.tsum(T.sin(T.transpose(x, (1, 0)))),
        "concat": lambda x, w: T.tsum(T.sin(T.concat([x, x], axis=0))),
        "select": lambda x, w: T.tsum(T.sin(T.select(x, 0, 1))),
        "slice": lambda x, w: T.tsum(T.sin(T.slice_axis(x, 1, 1, 3))),
        "expand": lambda x, w: T.tsum(T.sin(T.expand(T.unsqueeze(x, 0), (2,) + x.shape))),
        "sum": lambda x, w: T.tsum(T.sin(T.tsum(x, axis=1))),
        "mean": lambda x, w: T.tsum(T.sin(T.tmean(x, axis=0))),
    }
    for name, fn in cases.items():
        reports = []
        for seed in range(num_seeds):
            rng = np.random.default_rng([seed, 11])
            x = T.Tensor(rng.normal(size=(3, 4)), requires_grad=True)
            w = T.Tensor(rng.normal(size=(3, 4)))
            reports.append(finite_diff_check(lambda t, f=fn, w=w: f(t, w), x))
        rows.append(_merge(name, reports))

    reports = []
    for seed in range(num_seeds):
        rng = np.random.default_rng([seed, 13])
        a = T.Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
        b = T.Tensor(rng.normal(size=(4, 5)))
        reports.append(finite_diff_check(lambda t: T.tsum(T.sin(T.matmul(t, b))), a))
        a2 = T.Tensor(rng.normal(size=(3, 4)))
        bt = T.Tensor(rng.normal(size=(4, 2)), requires_grad=True)
        reports.append(finite_diff_check(lambda t: T.tsum(T.sin(T.matmul(a2, t))), bt))
    rows.append(_merge("matmul", reports))

    reports = []
    for seed in range(num_seeds):
        rng = np.random.default_rng([seed, 17])
        scores = T.Tensor(rng.normal(size=(3, 5)), requires_grad=True)
        valid = (rng.random((3, 5)) > 0.3).astype(np.float64)
        valid[:, 0] = 1.0
        w = T.Tensor(rng.normal(size=(3, 5)))
        reports.append(finite_diff_check(
            lambda t: T.tsum(T.masked_softmax(t, valid) * w), scores))
    rows.append(_merge("masked_softmax", reports))

    reports = []
    for seed in range(num_seeds):
        rng = np.random.default_rng([seed, 19])
        x = T.Tensor(rng.normal(size=(4, 6)), requires_grad=True)
        g = T.Tensor(rng.normal(size=6), requires_grad=True)
        b = T.Tensor(rng.normal(size=6), requires_grad=True)
        w = T.Tensor(rng.normal(size=(4, 6)))
        reports.append(finite_diff_check(lambda t: T.tsum(T.layer_norm(t, g, b) * w), x))
        reports.append(finite_diff_check(lambda t: T.tsum(T.layer_norm(x, t, b) * w), g))
        reports.append(finite_diff_check(lambda t: T.tsum(T.layer_norm(x, g, t) * w), b))
    rows.append(_merge("layer_norm", reports))

    reports = []
    for seed in range(num_seeds):
        rng = np.random.default_rng([seed, 23])
        logits = T.Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        labels = rng.integers(0, 3, size=4)
        reports.append(finite_diff_check(lambda t: T.cross_entropy(t, labels), logits))
    rows.append(_merge("cross_entropy", reports))
    return rows


def _check_params(build_loss, params: ParamStore):
    return [finite_diff_check(build_loss, p) for _, p in params.items()]


def check_embeddings(num_seeds=2):
    """tokenize -> aggregate gradients at N=2, L=3, D=4, one head, both
    aggregation modes plus the three baseline embeddings."""
    rows = []
    cases = [
        ("query_variable", lambda ps, s: QueryEmbedding(ps, "m", 4, 1, 2, seed=s)),
        ("query_patch", lambda ps, s: QueryEmbedding(ps, "m", 4, 1, 2, num_patches=2, seed=s)),
        ("add", lambda ps, s: AddEmbedding(ps, "m", 4, s)),
        ("concat", lambda ps, s: ConcatEmbedding(ps, "m", 4, s)),
        ("meanpool", lambda ps, s: MeanPoolEmbedding(ps, "m", 4, 1, s)),
    ]
    for name, build in cases:
        reports = []
        for seed in range(num_seeds):
            rng = np.random.default_rng([seed, 29])
            ps = ParamStore(seed)
            module = build(ps, seed)
            # [B x M x N x L] for patch mode, [B x N x L] otherwise
            shape = (1, 2, 2, 3) if name == "query_patch" else (1, 2, 3)
            values = rng.normal(size=shape)
            times = rng.random(shape)
            masks = (rng.random(shape) > 0.25).astype(np.float64)
            masks[..., 0] = 1.0

            def loss(_):
                out = module(values, times, masks)
                return T.tsum(T.sin(out.embeddings))

            reports.extend(_check_params(loss, ps))
        rows.append(_merge(name, reports))
    return rows


def tiny_forecast_setup(seed=11):
    """Deterministic M=2, N=2, D=4, L=1, one-head, L_pred=2 geometry."""
    rng = np.random.default_rng(seed)
    values = [rng.normal(size=4), rng.normal(size=3)]
    times = [np.sort(rng.uniform(0, 48, size=4)), np.sort(rng.uniform(0, 48, size=3))]
    for t in times:  # make sure both halves are populated
        t[0] = t[0] % 24.0
        t[-1] = 24.0 + t[-1] % 24.0
    inst = ImtsInstance("tiny", values, [np.sort(t) for t in times],
                        [np.ones(4), np.ones(3)]).validate()
    split = split_forecast(inst, 24.0)
    mc = ModelConfig(num_variables=2, dim=4, heads=1, layers=1,
                     patch_size=12.0, stride=12.0, window_start=0.0,
                     window_end=48.0, t_s=24.0, seed=seed)
    model = HierForecaster(mc)
    fb = make_forecast_batch([split], mc)
    return model, fb


def check_model(seed=11):
    """Full forward gradients: one row per parameter group prefix."""
    model, fb = tiny_forecast_setup(seed)

    def loss(_):
        preds = model.forward(fb.padded, fb.future_times)
        return masked_mse_loss(preds, fb.targets, fb.target_mask)

    grouped = {}
    for name, p in model.params.items():
        prefix = name.split(".")[0]
        grouped.setdefault(prefix, []).append(finite_diff_check(loss, p))
    return [_merge(f"model.{prefix}", reports)
            for prefix, reports in sorted(grouped.items())]


def run_scope(scope):
    if scope == "ops":
        return check_ops()
    if scope == "embed":
        return check_embeddings()
    if scope == "model":
        return check_model()
    raise ValueError(f"unknown scope {scope!r}")
