"""Plain `key = value` configuration with namespaced keys and CLI overrides.

Every key in DEFAULTS can come from a config file or a `--key value` flag,
flags winning. The config hash (sha256 prefix of the canonical key=value
listing) is stamped into every emitted CSV so outputs are traceable to the
exact configuration that produced them.
"""

from __future__ import annotations

import hashlib

from .errors import ValidationError

DEFAULTS = {
    # data: built-in synthetic benchmark (N=4, 50% missing, window 48, 24 -> 24)
    "data.source": "synthetic",        # synthetic | csv
    "data.path": "",
    "data.num_instances": "60",
    "data.num_variables": "4",
    "data.base_rate": "1.25",
    "data.missing_ratio": "0.5",
    "data.window": "48.0",
    "data.noise_std": "0.05",
    "data.coupling": "0.3",
    "data.class_offset": "0.0",
    "data.seed": "0",
    "data.t_s": "24.0",
    "data.test_fraction": "0.2",
    "data.val_fraction": "0.1",
    # model
    "model.kind": "hier",              # hier | backbone
    "model.family": "variate_transformer",
    "model.embedding": "query",
    "model.dim": "16",
    "model.heads": "2",
    "model.layers": "1",
    "model.patch_size": "6.0",
    "model.stride": "6.0",
    "model.grid_slots": "8",
    "model.query_init": "random_normal",
    "model.num_classes": "2",
    # training
    "train.task": "forecast",          # forecast | classify
    "train.epochs": "250",
    "train.patience": "50",
    "train.batch_size": "16",
    "train.learning_rate": "1e-3",
    "train.seeds": "1,2,3,4,5",
    # evaluation / sweeps / grid search
    "eval.denormalize": "false",
    "sweep.ratios": "0,0.25,0.5,0.75",
    "sweep.retrain": "false",
    "grid.dims": "32,64",
    "grid.layers": "1,2,3",
    "grid.heads": "1,2,4,8",
}


def load_config(path=None, overrides=None):
    cfg = dict(DEFAULTS)
    if path:
        for key, value in _parse_file(path).items():
            if key not in DEFAULTS:
                raise ValidationError(f"unknown config key {key!r} in {path}")
            cfg[key] = value
    for key, value in (overrides or {}).items():
        if key not in DEFAULTS:
            raise ValidationError(f"unknown config key {key!r}")
        cfg[key] = value
    return cfg


def _parse_file(path):
    entries = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{lineno}: expected key = value, got {line!r}")
            key, _, value = line.partition("=")
            entries[key.strip()] = value.strip()
    return entries


def config_hash(cfg):
    canon = "\n".join(f"{k}={cfg[k]}" for k in sorted(cfg))
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


# typed getters -----------------------------------------------------------------

def get_int(cfg, key):
    try:
        return int(cfg[key])
    except ValueError as e:
        raise ValidationError(f"{key} must be an integer, got {cfg[key]!r}") from e


def get_float(cfg, key):
    try:
        return float(cfg[key])
    except ValueError as e:
        raise ValidationError(f"{key} must be a number, got {cfg[key]!r}") from e


def get_bool(cfg, key):
    value = cfg[key].strip().lower()
    if value in ("true", "1", "yes"):
        return True
    if value in ("false", "0", "no"):
        return False
    raise ValidationError(f"{key} must be true/false, got {cfg[key]!r}")


def get_list(cfg, key, conv=float):
    raw = [s for s in cfg[key].split(",") if s.strip() != ""]
    try:
        return [conv(s.strip()) for s in raw]
    except ValueError as e:
        raise ValidationError(f"{key} has a malformed list: {cfg[key]!r}") from e


def get_choice(cfg, key, choices):
    value = cfg[key]
    if value not in choices:
        raise ValidationError(f"{key} must be one of {choices}, got {value!r}")
    return value
