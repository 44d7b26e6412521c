"""Irregular multivariate time series data model and plumbing.

An instance is a set of (value, timestamp, mask) triplets per variable;
observations across variables are not aligned. This module owns CSV
ingestion/emission, seeded synthetic generation, the history/future split,
patch assignment, per-variable normalization, and padded batching.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

CSV_FLOAT_FMT = "%.17g"  # 17 significant digits round-trips float64 exactly


@dataclass
class ImtsInstance:
    instance_id: str
    values: list          # per variable: float64 array [L_n]
    times: list           # per variable: float64 array [L_n], strictly increasing
    masks: list           # per variable: {0,1} array [L_n]
    label: int | None = None

    @property
    def num_variables(self):
        return len(self.values)

    def validate(self):
        for n in range(self.num_variables):
            v, t, m = self.values[n], self.times[n], self.masks[n]
            if not (len(v) == len(t) == len(m)):
                raise ValidationError(f"{self.instance_id}: ragged arrays for variable {n}")
            if len(t) > 1 and not np.all(np.diff(t) > 0):
                raise ValidationError(
                    f"{self.instance_id}: timestamps not strictly increasing for variable {n}")
            if not np.all((m == 0) | (m == 1)):
                raise ValidationError(f"{self.instance_id}: non-binary mask for variable {n}")
        return self

    def observation_count(self):
        return sum(len(v) for v in self.values)


@dataclass
class ForecastSplit:
    history: ImtsInstance
    query_vars: np.ndarray    # int [Q]
    query_times: np.ndarray   # float [Q]
    targets: np.ndarray       # float [Q]
    split_time: float


@dataclass
class PatchGrid:
    patch_size: float
    stride: float
    window_start: float
    window_end: float
    num_patches: int
    assignment: list          # per variable: int array of patch indices


@dataclass
class SyntheticConfig:
    num_instances: int = 60
    num_variables: int = 4
    base_rate: float = 1.5          # expected observations per variable per unit time
    missing_ratio: float = 0.5
    window: float = 48.0
    noise_std: float = 0.1
    coupling: float = 0.3
    frequencies: list = field(default_factory=list)   # cycles per unit time, one per variable
    phases: list = field(default_factory=list)
    amplitudes: list = field(default_factory=list)
    class_offset: float = 0.0       # >0 turns on 2-class labels (sign of the offset)
    seed: int = 0

    def __post_init__(self):
        n = self.num_variables
        if not self.frequencies:
            self.frequencies = [1.0 / (12.0 + 4.0 * k) for k in range(n)]
        if not self.phases:
            self.phases = [2.0 * math.pi * k / n for k in range(n)]
        if not self.amplitudes:
            self.amplitudes = [1.0 + 0.2 * k for k in range(n)]
        if not (len(self.frequencies) == len(self.phases) == len(self.amplitudes) == n):
            raise ValidationError("signal parameter lists must have one entry per variable")
        if not 0.0 <= self.missing_ratio < 1.0:
            raise ValidationError("missing_ratio must be in [0, 1)")
        for name in ("base_rate", "window", "noise_std", "coupling"):
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(f"{name} must be finite")


def signal_value(cfg: SyntheticConfig, n, t):
    """Noise-free signal of variable n at time t: own sinusoid plus the mean
    of the other variables' sinusoids scaled by the coupling coefficient."""
    base = [cfg.amplitudes[k] * np.sin(2.0 * math.pi * cfg.frequencies[k] * t + cfg.phases[k])
            for k in range(cfg.num_variables)]
    own = base[n]
    if cfg.num_variables == 1 or cfg.coupling == 0.0:
        return own
    others = sum(base[k] for k in range(cfg.num_variables) if k != n)
    return own + cfg.coupling * others / (cfg.num_variables - 1)


def _instance_rng(seed, index):
    # counter-based stream keyed by (seed, instance index): generation order
    # across instances cannot matter
    return np.random.Generator(np.random.Philox(key=[np.uint64(seed), np.uint64(index)]))


def generate_synthetic(cfg: SyntheticConfig):
    """Poisson-sampled sinusoid instances, fully determined by cfg.seed."""
    instances = []
    for i in range(cfg.num_instances):
        rng = _instance_rng(cfg.seed, i)
        label = None
        offset = 0.0
        if cfg.class_offset > 0.0:
            label = int(rng.integers(0, 2))
            offset = (2 * label - 1) * cfg.class_offset
        values, times, masks = [], [], []
        for n in range(cfg.num_variables):
            count = rng.poisson(cfg.base_rate * cfg.window)
            t = np.sort(rng.uniform(0.0, cfg.window, size=count))
            t = np.unique(t)  # measure-zero duplicate guard
            x = signal_value(cfg, n, t) + offset
            if cfg.noise_std > 0.0:
                x = x + rng.normal(0.0, cfg.noise_std, size=t.shape)
            if cfg.missing_ratio > 0.0 and len(t) > 0:
                keep = rng.random(len(t)) >= cfg.missing_ratio
                t, x = t[keep], x[keep]
            values.append(np.asarray(x, dtype=np.float64))
            times.append(np.asarray(t, dtype=np.float64))
            masks.append(np.ones(len(t)))
        instances.append(ImtsInstance(f"syn{i:04d}", values, times, masks, label).validate())
    return instances


# -- CSV ---------------------------------------------------------------------

CSV_HEADER = "instance_id,variable_id,timestamp,value"


def save_csv(instances, path, config_hash=None):
    with open(path, "w", encoding="utf-8") as fh:
        if config_hash is not None:
            fh.write(f"# config-hash: {config_hash}\n")
        labeled = any(inst.label is not None for inst in instances)
        fh.write(CSV_HEADER + (",label\n" if labeled else "\n"))
        for inst in instances:
            for n in range(inst.num_variables):
                for t, x in zip(inst.times[n], inst.values[n]):
                    row = (f"{inst.instance_id},{n},"
                           f"{CSV_FLOAT_FMT % t},{CSV_FLOAT_FMT % x}")
                    if labeled:
                        row += f",{inst.label if inst.label is not None else ''}"
                    fh.write(row + "\n")


def load_csv(path):
    """Parse `instance_id,variable_id,timestamp,value[,label]` rows into
    instances, grouped and sorted by timestamp. Duplicate (instance,
    variable, timestamp) rows and inconsistent labels are rejected."""
    groups: dict[str, dict[int, list]] = {}
    labels: dict[str, int] = {}
    order: list[str] = []
    with open(path, encoding="utf-8") as fh:
        header = None
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = line.split(",")
                if header[:4] != CSV_HEADER.split(","):
                    raise ValidationError(f"{path}:{lineno}: unexpected header {line!r}")
                continue
            parts = line.split(",")
            if len(parts) not in (4, 5):
                raise ValidationError(f"{path}:{lineno}: malformed row {line!r}")
            try:
                iid = parts[0]
                var = int(parts[1])
                t = float(parts[2])
                x = float(parts[3])
            except ValueError as e:
                raise ValidationError(f"{path}:{lineno}: malformed row {line!r}") from e
            if var < 0:
                raise ValidationError(f"{path}:{lineno}: negative variable_id")
            if len(parts) == 5 and parts[4] != "":
                try:
                    lab = int(parts[4])
                except ValueError as e:
                    raise ValidationError(f"{path}:{lineno}: bad label {parts[4]!r}") from e
                if iid in labels and labels[iid] != lab:
                    raise ValidationError(
                        f"{path}:{lineno}: inconsistent labels for instance {iid}")
                labels[iid] = lab
            if iid not in groups:
                groups[iid] = {}
                order.append(iid)
            groups[iid].setdefault(var, []).append((t, x, lineno))

    if not groups:
        return []
    num_vars = max(max(vars_.keys()) for vars_ in groups.values()) + 1
    instances = []
    for iid in order:
        values, times, masks = [], [], []
        for n in range(num_vars):
            rows = sorted(groups[iid].get(n, []))
            for (t1, _, l1), (t2, _, l2) in zip(rows, rows[1:]):
                if t1 == t2:
                    raise ValidationError(
                        f"{path}:{l2}: duplicate (instance,variable,timestamp)=({iid},{n},{t2})")
            times.append(np.array([r[0] for r in rows], dtype=np.float64))
            values.append(np.array([r[1] for r in rows], dtype=np.float64))
            masks.append(np.ones(len(rows)))
        instances.append(
            ImtsInstance(iid, values, times, masks, labels.get(iid)).validate())
    return instances


# -- manifest ------------------------------------------------------------------

def write_manifest(path, entries: dict):
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(entries):
            fh.write(f"{key}={entries[key]}\n")


def read_manifest(path):
    entries = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            entries[key.strip()] = value.strip()
    return entries


# -- forecasting split ----------------------------------------------------------

def split_forecast(inst: ImtsInstance, t_s) -> ForecastSplit:
    """Partition observations at the split time: strictly-before goes to
    history, at-or-after becomes (variable, timestamp, target) queries."""
    hv, ht, hm = [], [], []
    qv, qt, qy = [], [], []
    for n in range(inst.num_variables):
        before = inst.times[n] < t_s
        hv.append(inst.values[n][before])
        ht.append(inst.times[n][before])
        hm.append(inst.masks[n][before])
        after = ~before
        qv.extend([n] * int(after.sum()))
        qt.extend(inst.times[n][after])
        qy.extend(inst.values[n][after])
    if sum(len(t) for t in ht) == 0:
        raise ValidationError(f"{inst.instance_id}: no observation before t_s={t_s}")
    history = ImtsInstance(inst.instance_id, hv, ht, hm, inst.label)
    return ForecastSplit(history,
                         np.asarray(qv, dtype=np.int64),
                         np.asarray(qt, dtype=np.float64),
                         np.asarray(qy, dtype=np.float64),
                         float(t_s))


def remove_history(split: ForecastSplit, ratio, rng) -> ForecastSplit:
    """Drop a fraction of history observations uniformly at random; the
    query/target side is untouched."""
    if not 0.0 <= ratio < 1.0:
        raise ValidationError("removal ratio must be in [0, 1)")
    if ratio == 0.0:
        return split
    h = split.history
    values, times, masks = [], [], []
    for n in range(h.num_variables):
        keep = rng.random(len(h.times[n])) >= ratio
        values.append(h.values[n][keep])
        times.append(h.times[n][keep])
        masks.append(h.masks[n][keep])
    if sum(len(t) for t in times) == 0:
        # keep one observation so the split stays valid at extreme ratios
        first = next(n for n in range(h.num_variables) if len(h.times[n]))
        values[first] = h.values[first][:1]
        times[first] = h.times[first][:1]
        masks[first] = h.masks[first][:1]
    trimmed = ImtsInstance(h.instance_id, values, times, masks, h.label)
    return ForecastSplit(trimmed, split.query_vars, split.query_times,
                         split.targets, split.split_time)


# -- patching --------------------------------------------------------------------

def patch_count(window_start, window_end, patch_size, stride):
    span = window_end - window_start
    if span <= 0:
        raise ValidationError("empty patch window")
    return int(math.ceil((span - patch_size) / stride)) + 1


def assign_patches(history: ImtsInstance, patch_size, stride,
                   window_start, window_end) -> PatchGrid:
    """Map each observation to the half-open interval
    [window_start + m*stride, window_start + m*stride + patch_size)."""
    if patch_size <= 0:
        raise ValidationError("patch_size must be positive")
    if stride != patch_size:
        raise ValidationError("only non-overlapping grids (stride == patch_size) are supported")
    m_total = patch_count(window_start, window_end, patch_size, stride)
    assignment = []
    for n in range(history.num_variables):
        t = history.times[n]
        idx = np.floor((t - window_start) / stride).astype(np.int64)
        if len(idx) and (idx.min() < 0 or idx.max() >= m_total):
            raise ValidationError(
                f"{history.instance_id}: observation outside the patch window for variable {n}")
        assignment.append(idx)
    return PatchGrid(patch_size, stride, window_start, window_end, m_total, assignment)


# -- normalization ----------------------------------------------------------------

STD_FLOOR = 1e-8


class Normalizer:
    """Per-variable z-scoring with statistics from the training split only."""

    def __init__(self, mean, std):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.asarray(std, dtype=np.float64)

    @classmethod
    def fit(cls, instances):
        if not instances:
            raise ValidationError("cannot fit normalizer on an empty split")
        n_vars = instances[0].num_variables
        means, stds = np.zeros(n_vars), np.ones(n_vars)
        for n in range(n_vars):
            chunks = [inst.values[n] for inst in instances if len(inst.values[n])]
            if not chunks:
                raise ValidationError(f"variable {n} absent from the training data")
            allv = np.concatenate(chunks)
            means[n] = allv.mean()
            stds[n] = max(allv.std(), STD_FLOOR)  # population std
        return cls(means, stds)

    def transform_instance(self, inst: ImtsInstance) -> ImtsInstance:
        values = [(inst.values[n] - self.mean[n]) / self.std[n]
                  for n in range(inst.num_variables)]
        return ImtsInstance(inst.instance_id, values,
                            [t.copy() for t in inst.times],
                            [m.copy() for m in inst.masks], inst.label)

    def transform_split(self, split: ForecastSplit) -> ForecastSplit:
        targets = ((split.targets - self.mean[split.query_vars])
                   / self.std[split.query_vars])
        return ForecastSplit(self.transform_instance(split.history),
                             split.query_vars.copy(), split.query_times.copy(),
                             targets, split.split_time)

    def untransform(self, values, variable_idx):
        values = np.asarray(values, dtype=np.float64)
        return values * self.std[variable_idx] + self.mean[variable_idx]


# -- batching ----------------------------------------------------------------------

@dataclass
class PaddedBatch:
    values: np.ndarray   # [B x N x L] or [B x M x N x L]
    times: np.ndarray    # same shape
    masks: np.ndarray    # same shape; 0 marks padding


def batch_pad(instances, grids=None) -> PaddedBatch:
    """Pad per-variable observation lists to a common length.

    Without grids: [B x N x L_max]. With one PatchGrid per instance (all with
    the same patch count): [B x M x N x L_max], partitioned per patch.
    Padded slots carry value 0, timestamp 0, mask 0.
    """
    if not instances:
        raise ValidationError("empty batch")
    n_vars = instances[0].num_variables
    if any(inst.num_variables != n_vars for inst in instances):
        raise ValidationError("inconsistent variable count across batch")

    if grids is None:
        l_max = max(1, max(len(inst.times[n]) for inst in instances for n in range(n_vars)))
        b = len(instances)
        values = np.zeros((b, n_vars, l_max))
        times = np.zeros((b, n_vars, l_max))
        masks = np.zeros((b, n_vars, l_max))
        for i, inst in enumerate(instances):
            for n in range(n_vars):
                ln = len(inst.times[n])
                values[i, n, :ln] = inst.values[n]
                times[i, n, :ln] = inst.times[n]
                masks[i, n, :ln] = inst.masks[n]
        return PaddedBatch(values, times, masks)

    if len(grids) != len(instances):
        raise ValidationError("one PatchGrid per instance required")
    m = grids[0].num_patches
    if any(g.num_patches != m for g in grids):
        raise ValidationError("inconsistent patch count across batch")
    l_max = 1
    per_patch = []
    for inst, grid in zip(instances, grids):
        counts = np.zeros((m, n_vars), dtype=np.int64)
        for n in range(n_vars):
            for p in grid.assignment[n]:
                counts[p, n] += 1
        per_patch.append(counts)
        if counts.size:
            l_max = max(l_max, int(counts.max()))
    b = len(instances)
    values = np.zeros((b, m, n_vars, l_max))
    times = np.zeros((b, m, n_vars, l_max))
    masks = np.zeros((b, m, n_vars, l_max))
    for i, (inst, grid) in enumerate(zip(instances, grids)):
        cursor = np.zeros((m, n_vars), dtype=np.int64)
        for n in range(n_vars):
            for t, x, mk, p in zip(inst.times[n], inst.values[n],
                                   inst.masks[n], grid.assignment[n]):
                j = cursor[p, n]
                values[i, p, n, j] = x
                times[i, p, n, j] = t
                masks[i, p, n, j] = mk
                cursor[p, n] += 1
    return PaddedBatch(values, times, masks)


def rescale_times(times, window_start, window_end):
    """Map raw timestamps onto [0,1] over the full instance window."""
    span = window_end - window_start
    if span <= 0:
        raise ValidationError("window must have positive length")
    return (np.asarray(times, dtype=np.float64) - window_start) / span
