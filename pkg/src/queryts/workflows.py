"""End-to-end experiment plumbing shared by the CLI and the test suite:
dataset assembly, per-seed training runs, evaluation, ablations, sparsity
sweeps, grid search, and CSV emission.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import config as C
from .backbones import BackboneConfig, BackboneModel, EMBEDDINGS, FAMILIES
from .checkpoint import save_checkpoint
from .data import (Normalizer, SyntheticConfig, assign_patches, batch_pad,
                   generate_synthetic, load_csv, remove_history, split_forecast)
from .errors import ValidationError
from .metrics import (auroc, average_precision, confusion_metrics,
                      forecast_errors, seed_aggregate)
from .model import HierForecaster, ModelConfig, make_forecast_batch
from .train import (TrainConfig, classify_loss_fn, forecast_loss_fn,
                    split_instances, train_model)

FLOAT_FMT = "%.17g"


def fmt(value):
    if isinstance(value, float):
        return FLOAT_FMT % value
    return str(value)


def write_csv(path, header, rows, cfg_hash):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# config-hash: {cfg_hash}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


# -- dataset assembly --------------------------------------------------------------

def synthetic_config(cfg) -> SyntheticConfig:
    return SyntheticConfig(
        num_instances=C.get_int(cfg, "data.num_instances"),
        num_variables=C.get_int(cfg, "data.num_variables"),
        base_rate=C.get_float(cfg, "data.base_rate"),
        missing_ratio=C.get_float(cfg, "data.missing_ratio"),
        window=C.get_float(cfg, "data.window"),
        noise_std=C.get_float(cfg, "data.noise_std"),
        coupling=C.get_float(cfg, "data.coupling"),
        class_offset=C.get_float(cfg, "data.class_offset"),
        seed=C.get_int(cfg, "data.seed"),
    )


def load_instances(cfg):
    source = C.get_choice(cfg, "data.source", ("synthetic", "csv"))
    if source == "csv":
        path = cfg["data.path"]
        if not path:
            raise ValidationError("data.source=csv requires data.path")
        return load_csv(path)
    return generate_synthetic(synthetic_config(cfg))


@dataclass
class ForecastData:
    train: list
    val: list
    test: list
    normalizer: Normalizer
    num_variables: int
    window_start: float
    window_end: float
    t_s: float


def prepare_forecast_data(cfg, removal_ratio=0.0, remove_from_train=False) -> ForecastData:
    """Instance-level split -> per-instance forecast split at t_s -> z-scored
    with training statistics. ``removal_ratio`` drops history observations
    (always from val/test; also from train when retraining for the sweep)."""
    instances = load_instances(cfg)
    if not instances:
        raise ValidationError("dataset is empty")
    t_s = C.get_float(cfg, "data.t_s")
    window = C.get_float(cfg, "data.window")
    data_seed = C.get_int(cfg, "data.seed")
    train_i, val_i, test_i = split_instances(
        instances, C.get_float(cfg, "data.test_fraction"),
        C.get_float(cfg, "data.val_fraction"), data_seed)
    norm = Normalizer.fit(train_i)
    make = lambda insts: [split_forecast(i, t_s) for i in insts]
    train, val, test = make(train_i), make(val_i), make(test_i)
    if removal_ratio > 0.0:
        rng = np.random.default_rng([data_seed, int(round(removal_ratio * 1000)), 5077])
        if remove_from_train:
            train = [remove_history(s, removal_ratio, rng) for s in train]
        val = [remove_history(s, removal_ratio, rng) for s in val]
        test = [remove_history(s, removal_ratio, rng) for s in test]
    tx = lambda splits: [norm.transform_split(s) for s in splits]
    return ForecastData(tx(train), tx(val), tx(test), norm,
                        instances[0].num_variables, 0.0, window, t_s)


@dataclass
class ClassifyData:
    train: list
    val: list
    test: list
    normalizer: Normalizer
    num_variables: int
    num_classes: int
    window_start: float
    window_end: float


def prepare_classify_data(cfg) -> ClassifyData:
    instances = load_instances(cfg)
    if any(inst.label is None for inst in instances):
        raise ValidationError("classification requires labeled instances "
                              "(synthetic: set data.class_offset > 0)")
    window = C.get_float(cfg, "data.window")
    train_i, val_i, test_i = split_instances(
        instances, C.get_float(cfg, "data.test_fraction"),
        C.get_float(cfg, "data.val_fraction"), C.get_int(cfg, "data.seed"))
    norm = Normalizer.fit(train_i)
    tx = lambda insts: [norm.transform_instance(i) for i in insts]
    classes = max(inst.label for inst in instances) + 1
    return ClassifyData(tx(train_i), tx(val_i), tx(test_i), norm,
                        instances[0].num_variables, classes, 0.0, window)


# -- model construction --------------------------------------------------------------

def model_config(cfg, seed, num_variables, num_classes=None) -> ModelConfig:
    return ModelConfig(
        num_variables=num_variables,
        dim=C.get_int(cfg, "model.dim"),
        heads=C.get_int(cfg, "model.heads"),
        layers=C.get_int(cfg, "model.layers"),
        patch_size=C.get_float(cfg, "model.patch_size"),
        stride=C.get_float(cfg, "model.stride"),
        window_start=0.0,
        window_end=C.get_float(cfg, "data.window"),
        t_s=C.get_float(cfg, "data.t_s"),
        query_init=cfg["model.query_init"],
        seed=seed,
        learning_rate=C.get_float(cfg, "train.learning_rate"),
        num_classes=num_classes,
    )


def backbone_config(cfg, seed, num_variables, embedding=None, family=None) -> BackboneConfig:
    return BackboneConfig(
        family=family or C.get_choice(cfg, "model.family", FAMILIES),
        embedding=embedding or C.get_choice(cfg, "model.embedding", EMBEDDINGS),
        depth=C.get_int(cfg, "model.layers"),
        dim=C.get_int(cfg, "model.dim"),
        heads=C.get_int(cfg, "model.heads"),
        grid_slots=C.get_int(cfg, "model.grid_slots"),
        num_variables=num_variables,
        patch_size=C.get_float(cfg, "model.patch_size"),
        stride=C.get_float(cfg, "model.stride"),
        window_start=0.0,
        window_end=C.get_float(cfg, "data.window"),
        t_s=C.get_float(cfg, "data.t_s"),
        query_init=cfg["model.query_init"],
        seed=seed,
        learning_rate=C.get_float(cfg, "train.learning_rate"),
    )


def build_forecaster(cfg, seed, num_variables, embedding=None, family=None):
    kind = C.get_choice(cfg, "model.kind", ("hier", "backbone"))
    if kind == "hier" and embedding in (None, "query") and family is None:
        mc = model_config(cfg, seed, num_variables)
        model = HierForecaster(mc)
        return model, mc, "hier", (lambda fb: model.forward(fb.padded, fb.future_times))
    bc = backbone_config(cfg, seed, num_variables, embedding, family)
    model = BackboneModel(bc)
    return model, bc, "backbone", model.forward


def train_config(cfg) -> TrainConfig:
    return TrainConfig(
        task=C.get_choice(cfg, "train.task", ("forecast", "classify")),
        epochs=C.get_int(cfg, "train.epochs"),
        patience=C.get_int(cfg, "train.patience"),
        batch_size=C.get_int(cfg, "train.batch_size"),
        learning_rate=C.get_float(cfg, "train.learning_rate"),
        seeds=tuple(C.get_list(cfg, "train.seeds", int)),
    )


# -- forecasting runs -----------------------------------------------------------------

@dataclass
class SeedRun:
    seed: int
    mse: float
    mae: float
    result: object
    model: object
    model_cfg: object
    kind: str
    predict: object


def evaluate_forecast(predict, splits, geometry_cfg, batch_size,
                      normalizer=None, denormalize=False):
    """Returns (mse, mae, trace rows). Trace rows are
    (instance_id, variable, timestamp, truth, prediction) per query."""
    preds_all, truth_all, traces = [], [], []
    for i in range(0, len(splits), batch_size):
        chunk = splits[i:i + batch_size]
        fb = make_forecast_batch(chunk, geometry_cfg)
        yhat = predict(fb).data
        for j, s in enumerate(chunk):
            uniq = {t: k for k, t in enumerate(np.unique(s.query_times))}
            for var, t, y in zip(s.query_vars, s.query_times, s.targets):
                p = yhat[j, uniq[t], var]
                if denormalize and normalizer is not None:
                    p = float(normalizer.untransform(p, var))
                    y = float(normalizer.untransform(y, var))
                preds_all.append(p)
                truth_all.append(y)
                traces.append((s.history.instance_id, int(var), float(t),
                               float(y), float(p)))
    mse, mae = forecast_errors(preds_all, truth_all)
    return mse, mae, traces


def run_forecast_seed(cfg, data: ForecastData, seed,
                      embedding=None, family=None) -> SeedRun:
    model, mcfg, kind, predict = build_forecaster(
        cfg, seed, data.num_variables, embedding, family)
    tc = train_config(cfg)
    loss_fn = forecast_loss_fn(mcfg, predict)
    result = train_model(model, loss_fn, data.train, data.val, tc, seed)
    denorm = C.get_bool(cfg, "eval.denormalize")
    mse, mae, _ = evaluate_forecast(predict, data.test, mcfg, tc.batch_size,
                                    data.normalizer, denorm)
    return SeedRun(seed, mse, mae, result, model, mcfg, kind, predict)


def mean_predictor_mse(data: ForecastData):
    """Baseline: predict the per-variable training mean everywhere. In
    normalized space that is the zero predictor over the test targets."""
    targets = np.concatenate([s.targets for s in data.test])
    if targets.size == 0:
        raise ValidationError("empty target set")
    return float((targets ** 2).mean())


# -- classification runs ----------------------------------------------------------------

def make_classify_batch(instances, mcfg: ModelConfig):
    grids = [assign_patches(inst, mcfg.patch_size, mcfg.stride,
                            mcfg.window_start, mcfg.window_end)
             for inst in instances]
    padded = batch_pad(instances, grids)
    labels = np.array([inst.label for inst in instances], dtype=np.int64)
    return padded, labels


def run_classify_seed(cfg, data: ClassifyData, seed):
    mcfg = model_config(cfg, seed, data.num_variables, num_classes=data.num_classes)
    model = HierForecaster(mcfg)
    tc = train_config(cfg)
    batch_fn = lambda insts: make_classify_batch(insts, mcfg)
    loss_fn = classify_loss_fn(batch_fn)
    result = train_model(model, loss_fn, data.train, data.val, tc, seed)
    metrics = evaluate_classify(model, data.test, mcfg, tc.batch_size, data.num_classes)
    return seed, metrics, result, model, mcfg


def evaluate_classify(model, instances, mcfg, batch_size, num_classes):
    labels, scores, hard = [], [], []
    for i in range(0, len(instances), batch_size):
        chunk = instances[i:i + batch_size]
        padded, labs = make_classify_batch(chunk, mcfg)
        logits = model.classify(padded).data
        z = logits - logits.max(axis=-1, keepdims=True)
        probs = np.exp(z) / np.exp(z).sum(axis=-1, keepdims=True)
        labels.extend(labs.tolist())
        hard.extend(np.argmax(logits, axis=-1).tolist())
        scores.extend(probs[:, min(1, num_classes - 1)].tolist())
    out = confusion_metrics(labels, hard, num_classes)
    if num_classes == 2:
        out["auroc"] = auroc(labels, scores)
        out["auprc"] = average_precision(labels, scores)
    return out


# -- multi-seed orchestration ---------------------------------------------------------

def run_forecast_all_seeds(cfg, data=None, embedding=None, family=None):
    data = data or prepare_forecast_data(cfg)
    tc = train_config(cfg)
    return [run_forecast_seed(cfg, data, s, embedding, family) for s in tc.seeds], data


def ablate(cfg, variants=("add", "concat", "meanpool", "query"), family=None):
    """Identical data/splits/seeds across embedding variants; returns
    (rows for the fixed CSV schema, per-variant per-seed MSE lists)."""
    data = prepare_forecast_data(cfg)
    tc = train_config(cfg)
    rows, per_variant = [], {}
    for variant in variants:
        runs = [run_forecast_seed(cfg, data, s, embedding=variant,
                                  family=family or cfg["model.family"])
                for s in tc.seeds]
        mses = [r.mse for r in runs]
        maes = [r.mae for r in runs]
        mse_mean, mse_std = seed_aggregate(mses)
        mae_mean, mae_std = seed_aggregate(maes)
        rows.append((variant, mse_mean, mse_std, mae_mean, mae_std))
        per_variant[variant] = {"mse": mses, "mae": maes}
    return rows, per_variant


def sparsity_sweep(cfg, ratios=(0.0, 0.25, 0.5, 0.75), retrain=False, base_runs=None):
    """MSE vs history-removal ratio. Models are trained once on the intact
    data and re-evaluated on thinned history unless ``retrain``;
    ``base_runs`` reuses already-trained intact-data models."""
    for r in ratios:
        if r >= 1.0:
            raise ValidationError("removal ratio must be < 1")
    tc = train_config(cfg)
    base = prepare_forecast_data(cfg)
    if not retrain and base_runs is None:
        base_runs, _ = run_forecast_all_seeds(cfg, base)
    rows, per_ratio = [], {}
    for ratio in ratios:
        data = base if ratio == 0.0 else prepare_forecast_data(
            cfg, removal_ratio=ratio, remove_from_train=retrain)
        if retrain:
            runs, _ = run_forecast_all_seeds(cfg, data)
            mses = [r.mse for r in runs]
        elif ratio == 0.0:
            mses = [r.mse for r in base_runs]
        else:
            mses = []
            for r in base_runs:
                mse, _, _ = evaluate_forecast(r.predict, data.test, r.model_cfg,
                                              tc.batch_size, data.normalizer,
                                              C.get_bool(cfg, "eval.denormalize"))
                mses.append(mse)
        mean, std = seed_aggregate(mses)
        rows.append((ratio, float(np.median(mses)), mean, std))
        per_ratio[ratio] = mses
    return rows, per_ratio


def grid_search(cfg):
    dims = C.get_list(cfg, "grid.dims", int)
    layer_grid = C.get_list(cfg, "grid.layers", int)
    head_grid = C.get_list(cfg, "grid.heads", int)
    rows = []
    for dim in dims:
        for layers in layer_grid:
            for heads in head_grid:
                if dim % heads != 0:
                    continue
                sub = dict(cfg)
                sub["model.dim"] = str(dim)
                sub["model.layers"] = str(layers)
                sub["model.heads"] = str(heads)
                runs, _ = run_forecast_all_seeds(sub)
                mse_mean, mse_std = seed_aggregate([r.mse for r in runs])
                mae_mean, mae_std = seed_aggregate([r.mae for r in runs])
                val_mean, _ = seed_aggregate([r.result.best_val for r in runs])
                rows.append((dim, layers, heads, val_mean,
                             mse_mean, mse_std, mae_mean, mae_std))
    return rows


def checkpoint_run(out_prefix, run: SeedRun, cfg_hash):
    save_checkpoint(out_prefix, run.kind, run.model_cfg.to_dict(),
                    run.model.params.state_arrays(), cfg_hash)
