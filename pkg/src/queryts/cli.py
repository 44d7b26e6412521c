"""Command-line interface.

Subcommands: gen, train, eval, ablate, sweep-sparsity, grad-check, cost,
emit-plots, grid-search. Every config key can come from a `key = value` file
(--config) or a `--key value` flag. Exit codes: 0 success, 1 validation
error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import shutil
import sys

import numpy as np

from . import config as C
from . import workflows as W
from .backbones import BackboneConfig, BackboneModel
from .checkpoint import load_checkpoint, save_checkpoint, MANIFEST_SUFFIX
from .costs import (conventional_patch_cost, conventional_variable_cost,
                    estimate_cost, query_patch_cost, query_variable_cost)
from .data import save_csv, write_manifest
from .embedding import emit_embeddings_csv
from .errors import NumericalError, ValidationError
from .metrics import seed_aggregate
from .model import HierForecaster, ModelConfig, make_forecast_batch
from .verify import run_scope

COMMANDS = ("gen", "train", "eval", "ablate", "sweep-sparsity", "grad-check",
            "cost", "emit-plots", "grid-search")


def _parse(argv):
    parser = argparse.ArgumentParser(
        prog="queryts",
        description="Query-token embeddings for irregular time series: "
                    "data generation, training, evaluation, and verification.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", default=None, help="key = value config file")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--checkpoint", default=None,
                        help="checkpoint prefix (eval / emit-plots)")
    parser.add_argument("--scope", default="ops", choices=("ops", "embed", "model"),
                        help="grad-check scope")
    parser.add_argument("--seed", type=int, default=None,
                        help="single seed override (emit-plots)")
    parser.add_argument("--batch", type=int, default=1, help="batch size B for cost")
    parser.add_argument("--seq-len", type=int, default=None,
                        help="per-patch observation count L_p for cost")
    args, leftover = parser.parse_known_args(argv)

    overrides = {}
    i = 0
    while i < len(leftover):
        tok = leftover[i]
        if not tok.startswith("--") or i + 1 >= len(leftover):
            raise ValidationError(f"expected --<config.key> <value> pairs, got {tok!r}")
        overrides[tok[2:]] = leftover[i + 1]
        i += 2
    return args, overrides


def _prep(args, overrides):
    cfg = C.load_config(args.config, overrides)
    os.makedirs(args.out, exist_ok=True)
    return cfg, C.config_hash(cfg)


def cmd_gen(args, cfg, h):
    instances = W.load_instances(cfg)
    csv_path = os.path.join(args.out, "dataset.csv")
    save_csv(instances, csv_path, config_hash=h)
    scfg = W.synthetic_config(cfg) if cfg["data.source"] == "synthetic" else None
    manifest = {
        "seed": cfg["data.seed"],
        "t_s": cfg["data.t_s"],
        "patch_size": cfg["model.patch_size"],
        "stride": cfg["model.stride"],
        "test_fraction": cfg["data.test_fraction"],
        "val_fraction": cfg["data.val_fraction"],
    }
    if scfg is not None:
        manifest.update(num_instances=scfg.num_instances,
                        num_variables=scfg.num_variables,
                        missing_ratio=scfg.missing_ratio, window=scfg.window)
    write_manifest(os.path.join(args.out, "dataset.manifest"), manifest)
    print(f"wrote {csv_path} ({len(instances)} instances)")
    return 0


def _metrics_rows(per_seed, columns):
    rows = [[seed] + [vals[c] for c in columns] for seed, vals in per_seed]
    agg = {c: seed_aggregate([vals[c] for _, vals in per_seed]) for c in columns}
    rows.append(["mean"] + [agg[c][0] for c in columns])
    rows.append(["std"] + [agg[c][1] for c in columns])
    return rows


def cmd_train(args, cfg, h):
    tc = W.train_config(cfg)
    if tc.task == "classify":
        data = W.prepare_classify_data(cfg)
        per_seed = []
        for seed in tc.seeds:
            _, metrics, result, model, mcfg = W.run_classify_seed(cfg, data, seed)
            _write_run_artifacts(args.out, h, seed, result, model, mcfg, "hier")
            per_seed.append((seed, metrics))
            print(f"seed {seed}: " + " ".join(f"{k}={v:.4f}" for k, v in sorted(metrics.items())))
        columns = sorted(per_seed[0][1])
    else:
        data = W.prepare_forecast_data(cfg)
        per_seed = []
        for seed in tc.seeds:
            run = W.run_forecast_seed(cfg, data, seed)
            _write_run_artifacts(args.out, h, seed, run.result, run.model,
                                 run.model_cfg, run.kind)
            per_seed.append((seed, {"mse": run.mse, "mae": run.mae,
                                    "best_val": run.result.best_val,
                                    "best_epoch": run.result.best_epoch,
                                    "stopped_epoch": run.result.stopped_epoch}))
            print(f"seed {seed}: mse={run.mse:.6f} mae={run.mae:.6f} "
                  f"best_epoch={run.result.best_epoch}")
        columns = ["mse", "mae", "best_val", "best_epoch", "stopped_epoch"]
    path = os.path.join(args.out, f"{h}_metrics.csv")
    W.write_csv(path, ["seed"] + columns, _metrics_rows(per_seed, columns), h)
    print(f"wrote {path}")
    return 0


def _write_run_artifacts(out, h, seed, result, model, mcfg, kind):
    prefix = os.path.join(out, f"{h}_s{seed}")
    save_checkpoint(prefix, kind, mcfg.to_dict(), model.params.state_arrays(), h)
    W.write_csv(prefix + "_loss.csv", ["epoch", "train_loss", "val_loss"],
                [(e, tl, vl) for e, tl, vl in result.curve], h)


def _rebuild(prefix):
    kind, cfg_dict, arrays = load_checkpoint(prefix)
    if kind == "hier":
        mcfg = ModelConfig.from_dict(cfg_dict)
        model = HierForecaster(mcfg)
        predict = lambda fb: model.forward(fb.padded, fb.future_times)
    elif kind == "backbone":
        mcfg = BackboneConfig.from_dict(cfg_dict)
        model = BackboneModel(mcfg)
        predict = model.forward
    else:
        raise ValidationError(f"unknown checkpoint kind {kind!r}")
    model.params.load_arrays(arrays)
    return model, mcfg, predict, kind


def cmd_eval(args, cfg, h):
    if not args.checkpoint:
        raise ValidationError("eval requires --checkpoint PREFIX")
    model, mcfg, predict, kind = _rebuild(args.checkpoint)
    tc = W.train_config(cfg)
    if tc.task == "classify":
        data = W.prepare_classify_data(cfg)
        metrics = W.evaluate_classify(model, data.test, mcfg, tc.batch_size,
                                      data.num_classes)
    else:
        data = W.prepare_forecast_data(cfg)
        mse, mae, _ = W.evaluate_forecast(predict, data.test, mcfg, tc.batch_size,
                                          data.normalizer,
                                          C.get_bool(cfg, "eval.denormalize"))
        metrics = {"mse": mse, "mae": mae}
    for key in sorted(metrics):
        print(f"{key}={metrics[key]:.10g}")
    path = os.path.join(args.out, f"{h}_eval.csv")
    W.write_csv(path, sorted(metrics), [[metrics[k] for k in sorted(metrics)]], h)
    return 0


def cmd_ablate(args, cfg, h):
    rows, _ = W.ablate(cfg)
    path = os.path.join(args.out, f"{h}_ablation.csv")
    W.write_csv(path, ["variant", "mse_mean", "mse_std", "mae_mean", "mae_std"], rows, h)
    for row in rows:
        print(f"{row[0]}: mse={row[1]:.6f}+-{row[2]:.6f} mae={row[3]:.6f}+-{row[4]:.6f}")
    print(f"wrote {path}")
    return 0


def cmd_sweep(args, cfg, h):
    ratios = C.get_list(cfg, "sweep.ratios", float)
    rows, _ = W.sparsity_sweep(cfg, ratios, retrain=C.get_bool(cfg, "sweep.retrain"))
    path = os.path.join(args.out, f"{h}_sparsity.csv")
    W.write_csv(path, ["ratio", "mse_median", "mse_mean", "mse_std"], rows, h)
    for row in rows:
        print(f"ratio {row[0]}: median mse {row[1]:.6f}")
    print(f"wrote {path}")
    return 0


def cmd_grad_check(args, cfg, h):
    rows = run_scope(args.scope)
    failed = [r for r in rows if not r.passed]
    for r in rows:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.name:28s} max_rel_err={r.max_rel_err:.3e} "
              f"max_abs_err={r.max_abs_err:.3e} {status}")
    if failed:
        print(f"{len(failed)} gradient check(s) FAILED: "
              + ", ".join(r.name for r in failed), file=sys.stderr)
        raise NumericalError("gradient checks failed")
    print(f"all {len(rows)} gradient checks passed")
    return 0


def cmd_cost(args, cfg, h):
    data = W.load_instances(cfg)
    n = data[0].num_variables if data else C.get_int(cfg, "data.num_variables")
    mcfg = W.model_config(cfg, seed=1, num_variables=n)
    model = HierForecaster(mcfg)
    counts = [len(inst.times[v]) for inst in data for v in range(n)]
    l_v = max(1, int(round(float(np.mean(counts)))) if counts else 1)
    l_p = args.seq_len if args.seq_len else max(1, l_v // mcfg.num_patches)
    b = args.batch
    report = estimate_cost(mcfg, b, l_p, l_pred=l_v, param_count=model.params.count())
    rows = list(report.rows())
    rows += [
        ("conventional_variable_macs", conventional_variable_cost(b, n, l_v, mcfg.dim)),
        ("conventional_patch_macs",
         conventional_patch_cost(b, mcfg.num_patches, n, l_p, mcfg.dim)),
        ("query_variable_macs", query_variable_cost(b, n, l_v, mcfg.dim)),
        ("query_patch_macs", query_patch_cost(b, mcfg.num_patches, n, l_p, mcfg.dim)),
    ]
    for name, value in rows:
        print(f"{name}={value}")
    path = os.path.join(args.out, f"{h}_cost.csv")
    W.write_csv(path, ["item", "value"], rows, h)
    return 0


def cmd_emit_plots(args, cfg, h):
    tc = W.train_config(cfg)
    seed = args.seed if args.seed is not None else tc.seeds[0]
    run_id = f"{h}_s{seed}"
    loss_path = os.path.join(args.out, f"{run_id}_loss.csv")
    prefix = args.checkpoint or os.path.join(args.out, run_id)
    have_checkpoint = os.path.exists(prefix + MANIFEST_SUFFIX)
    src_curve = prefix + "_loss.csv"
    if os.path.exists(src_curve) and os.path.abspath(src_curve) != os.path.abspath(loss_path):
        shutil.copyfile(src_curve, loss_path)
    elif not os.path.exists(loss_path):
        W.write_csv(loss_path, ["epoch", "train_loss", "val_loss"], [], h)
    print(f"wrote {loss_path}")
    if not have_checkpoint:
        return 0
    model, mcfg, predict, kind = _rebuild(prefix)
    data = W.prepare_forecast_data(cfg)
    _, _, traces = W.evaluate_forecast(predict, data.test, mcfg, tc.batch_size,
                                       data.normalizer,
                                       C.get_bool(cfg, "eval.denormalize"))
    trace_path = os.path.join(args.out, f"{run_id}_traces.csv")
    W.write_csv(trace_path, ["instance_id", "variable", "timestamp", "truth", "prediction"],
                traces, h)
    print(f"wrote {trace_path}")
    fb = make_forecast_batch(data.test, mcfg)
    if kind == "hier":
        emb = model.embed_patches(fb.padded)
    else:
        emb = model.embed(fb)
    emb_path = os.path.join(args.out, f"{run_id}_embeddings.csv")
    emit_embeddings_csv(emb_path, fb.instance_ids, emb, config_hash=h)
    print(f"wrote {emb_path}")
    return 0


def cmd_grid_search(args, cfg, h):
    rows = W.grid_search(cfg)
    path = os.path.join(args.out, f"{h}_grid.csv")
    W.write_csv(path, ["dim", "layers", "heads", "val_mse_mean",
                       "mse_mean", "mse_std", "mae_mean", "mae_std"], rows, h)
    for row in rows:
        print(f"dim={row[0]} layers={row[1]} heads={row[2]} mse={row[4]:.6f}")
    print(f"wrote {path}")
    return 0


HANDLERS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "sweep-sparsity": cmd_sweep,
    "grad-check": cmd_grad_check,
    "cost": cmd_cost,
    "emit-plots": cmd_emit_plots,
    "grid-search": cmd_grid_search,
}


def main(argv=None):
    try:
        args, overrides = _parse(argv if argv is not None else sys.argv[1:])
        cfg, h = _prep(args, overrides)
        return HANDLERS[args.command](args, cfg, h)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
