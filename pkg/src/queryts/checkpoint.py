"""Checkpoints: a text manifest plus a raw little-endian float64 blob.

The manifest records the model kind, its configuration, and every parameter
name with its shape (sorted by name); the blob holds the concatenated
parameter data in the same order. Loading validates shape-for-shape.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError

MANIFEST_SUFFIX = ".manifest.txt"
BLOB_SUFFIX = ".params.bin"
FORMAT_VERSION = "1"


def save_checkpoint(prefix, kind, model_cfg: dict, arrays: dict, config_hash=None):
    names = sorted(arrays)
    with open(prefix + MANIFEST_SUFFIX, "w", encoding="utf-8") as fh:
        if config_hash is not None:
            fh.write(f"# config-hash: {config_hash}\n")
        fh.write(f"format={FORMAT_VERSION}\n")
        fh.write(f"kind={kind}\n")
        for key in sorted(model_cfg):
            fh.write(f"cfg.{key}={model_cfg[key]}\n")
        for name in names:
            shape = "x".join(str(d) for d in np.asarray(arrays[name]).shape)
            fh.write(f"param.{name}={shape}\n")
    with open(prefix + BLOB_SUFFIX, "wb") as fh:
        for name in names:
            fh.write(np.ascontiguousarray(arrays[name], dtype="<f8").tobytes())


def load_checkpoint(prefix):
    """Returns (kind, model config dict, name -> float64 array)."""
    kind = None
    cfg = {}
    shapes = []
    with open(prefix + MANIFEST_SUFFIX, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            if key == "format":
                if value != FORMAT_VERSION:
                    raise ValidationError(f"unsupported checkpoint format {value!r}")
            elif key == "kind":
                kind = value
            elif key.startswith("cfg."):
                cfg[key[4:]] = value
            elif key.startswith("param."):
                shape = tuple(int(d) for d in value.split("x")) if value else ()
                shapes.append((key[6:], shape))
            else:
                raise ValidationError(f"{prefix}{MANIFEST_SUFFIX}:{lineno}: bad line {line!r}")
    if kind is None:
        raise ValidationError(f"{prefix}{MANIFEST_SUFFIX}: missing kind")
    blob = np.fromfile(prefix + BLOB_SUFFIX, dtype="<f8")
    expected = sum(int(np.prod(s)) if s else 1 for _, s in shapes)
    if blob.size != expected:
        raise ValidationError(
            f"{prefix}{BLOB_SUFFIX}: holds {blob.size} values, manifest expects {expected}")
    arrays = {}
    offset = 0
    for name, shape in shapes:
        count = int(np.prod(shape)) if shape else 1
        arrays[name] = blob[offset:offset + count].reshape(shape).astype(np.float64)
        offset += count
    return kind, cfg, arrays
