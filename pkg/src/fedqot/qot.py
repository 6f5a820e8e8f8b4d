"""Synthetic QoT lightpath data: generation, labelling, encoding, CSV I/O, splits.

A lightpath is labelled acceptable (1) when a proxy SNR clears the threshold of
its modulation format. The proxy accumulates ASE noise per 80 km span plus a
cubic nonlinear penalty that grows with the number of co-propagating channels.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels_py, kernels
from .errors import GenerationError, IngestionError, SchemaError, UsageError, ValidationError

log = logging.getLogger(__name__)

MODULATIONS = ("QPSK", "QAM8", "QAM16")
MAX_SPANS = 30
MAX_CHANNELS = 96
POWER_RANGE_DBM = (-4.0, 4.0)
# modulation mix of domain 0; domain k uses this rotated right by k
BASE_MODULATION_MIX = (0.5, 0.3, 0.2)
CSV_COLUMNS = ("n_spans", "launch_power_dbm", "channel_load", "modulation", "domain_id", "label")


@dataclass(frozen=True)
class LightpathSample:
    n_spans: int
    launch_power_dbm: float
    channel_load: int
    modulation: str
    domain_id: int
    label: int | None = None

    def validate(self, n_domains: int = 3) -> None:
        if not (isinstance(self.n_spans, (int, np.integer)) and 1 <= self.n_spans <= MAX_SPANS):
            raise ValidationError(f"n_spans must be an integer in 1..{MAX_SPANS}, got {self.n_spans!r}")
        lo, hi = POWER_RANGE_DBM
        if not (math.isfinite(self.launch_power_dbm) and lo <= self.launch_power_dbm <= hi):
            raise ValidationError(f"launch_power_dbm must lie in [{lo}, {hi}], got {self.launch_power_dbm!r}")
        if not (isinstance(self.channel_load, (int, np.integer)) and 1 <= self.channel_load <= MAX_CHANNELS):
            raise ValidationError(f"channel_load must be an integer in 1..{MAX_CHANNELS}, got {self.channel_load!r}")
        if self.modulation not in MODULATIONS:
            raise ValidationError(f"modulation must be one of {MODULATIONS}, got {self.modulation!r}")
        if not (isinstance(self.domain_id, (int, np.integer)) and 0 <= self.domain_id < n_domains):
            raise ValidationError(f"domain_id must lie in 0..{n_domains - 1}, got {self.domain_id!r}")
        if self.label not in (None, 0, 1):
            raise ValidationError(f"label must be 0 or 1, got {self.label!r}")

    def resolved_label(self) -> int:
        return label_qot(self) if self.label is None else int(self.label)


def snr_db(sample: LightpathSample) -> float:
    return _kernels_py.snr_db(sample.n_spans, sample.launch_power_dbm, sample.channel_load)


def label_qot(sample: LightpathSample) -> int:
    """1 if the lightpath's proxy SNR meets its modulation threshold, else 0."""
    sample.validate(n_domains=max(3, sample.domain_id + 1))
    return _kernels_py.qot_label(sample.n_spans, sample.launch_power_dbm, sample.channel_load,
                                 MODULATIONS.index(sample.modulation))


# -- schema -----------------------------------------------------------------

def fnv1a_64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for byte in data:
        h = ((h ^ byte) * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


@dataclass(frozen=True)
class FieldSpec:
    name: str
    kind: str  # "numeric" | "onehot"
    categories: tuple = ()

    @property
    def width(self) -> int:
        return 1 if self.kind == "numeric" else len(self.categories)


@dataclass(frozen=True)
class FeatureSchema:
    fields: tuple[FieldSpec, ...]

    @property
    def width(self) -> int:
        return sum(f.width for f in self.fields)

    @property
    def numeric_fields(self) -> list[str]:
        return [f.name for f in self.fields if f.kind == "numeric"]

    def to_dict(self) -> dict:
        out = []
        for f in self.fields:
            d = {"name": f.name, "kind": f.kind}
            if f.kind == "onehot":
                d["categories"] = list(f.categories)
            out.append(d)
        return {"fields": out}

    @classmethod
    def from_dict(cls, d: dict) -> FeatureSchema:
        fields = []
        for f in d["fields"]:
            if f["kind"] not in ("numeric", "onehot"):
                raise SchemaError(f"unknown field kind {f['kind']!r}")
            fields.append(FieldSpec(f["name"], f["kind"], tuple(f.get("categories", ()))))
        return cls(tuple(fields))

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    @property
    def hash(self) -> int:
        return fnv1a_64(self.to_json().encode("utf-8"))


def default_schema(n_domains: int = 3) -> FeatureSchema:
    return FeatureSchema((
        FieldSpec("n_spans", "numeric"),
        FieldSpec("launch_power_dbm", "numeric"),
        FieldSpec("channel_load", "numeric"),
        FieldSpec("modulation", "onehot", MODULATIONS),
        FieldSpec("domain_id", "onehot", tuple(range(n_domains))),
    ))


# -- datasets ---------------------------------------------------------------

@dataclass
class Dataset:
    """Encoded features (float64, normalized) with 0/1 labels."""

    schema: FeatureSchema
    features: np.ndarray
    labels: np.ndarray
    stats: dict = field(default_factory=dict)
    domains: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[1] != self.schema.width:
            raise SchemaError(f"features of shape {self.features.shape} do not match schema width {self.schema.width}")
        if self.features.shape[0] != self.labels.shape[0]:
            raise SchemaError("feature and label row counts differ")
        if not np.all(np.isfinite(self.features)):
            raise SchemaError("features contain non-finite values")

    def __len__(self):
        return self.labels.shape[0]

    def subset(self, indices) -> Dataset:
        indices = np.asarray(indices, dtype=np.int64)
        doms = None if self.domains is None else self.domains[indices]
        return Dataset(self.schema, self.features[indices], self.labels[indices], self.stats, doms)

    @classmethod
    def concat(cls, parts) -> Dataset:
        parts = list(parts)
        if not parts:
            raise UsageError("nothing to concatenate")
        schema = parts[0].schema
        if any(p.schema != schema for p in parts):
            raise SchemaError("cannot pool datasets with different schemas")
        doms = None
        if all(p.domains is not None for p in parts):
            doms = np.concatenate([p.domains for p in parts])
        return cls(schema, np.concatenate([p.features for p in parts]),
                   np.concatenate([p.labels for p in parts]), parts[0].stats, doms)


def _sample_value(sample, name):
    return getattr(sample, name)


def compute_stats(samples, schema: FeatureSchema) -> dict:
    """Population mean and standard deviation of every numeric field."""
    stats = {}
    for name in schema.numeric_fields:
        col = np.array([float(_sample_value(s, name)) for s in samples], dtype=np.float64)
        if col.size == 0:
            raise UsageError("cannot compute normalization stats from zero samples")
        stats[name] = {"mean": float(col.mean()), "std": float(col.std())}
    return stats


def encode_and_normalize(samples, schema: FeatureSchema, stats: dict | None = None):
    """Z-score numeric fields and expand one-hot fields.

    Stats computed from training samples must be passed in again when encoding
    held-out samples. Returns ``(dataset, stats)``.
    """
    samples = list(samples)
    if stats is None:
        stats = compute_stats(samples, schema)
    n = len(samples)
    x = np.zeros((n, schema.width), dtype=np.float64)
    col = 0
    for f in schema.fields:
        if f.kind == "numeric":
            if f.name not in stats:
                raise SchemaError(f"no normalization stats for field {f.name!r}")
            mean, std = stats[f.name]["mean"], stats[f.name]["std"]
            raw = np.array([float(_sample_value(s, f.name)) for s in samples], dtype=np.float64)
            if std == 0.0:
                log.warning("field %s has zero variance; encoding it as 0", f.name)
            else:
                x[:, col] = (raw - mean) / std
            col += 1
        else:
            lookup = {c: i for i, c in enumerate(f.categories)}
            for row, s in enumerate(samples):
                value = _sample_value(s, f.name)
                if value not in lookup:
                    raise SchemaError(f"row {row}: unknown category {value!r} for field {f.name!r}")
                x[row, col + lookup[value]] = 1.0
            col += f.width
    labels = np.array([s.resolved_label() for s in samples], dtype=np.int64)
    domains = np.array([s.domain_id for s in samples], dtype=np.int64)
    return Dataset(schema, x, labels, stats, domains), stats


def domain_sizes(n_samples: int, n_domains: int) -> list[int]:
    base, extra = divmod(n_samples, n_domains)
    return [base + (1 if k < extra else 0) for k in range(n_domains)]


def modulation_mix(domain_id: int) -> tuple[float, float, float]:
    k = domain_id % len(BASE_MODULATION_MIX)
    m = BASE_MODULATION_MIX
    return tuple(m[(i - k) % len(m)] for i in range(len(m)))


def generate_samples(n_samples: int, n_domains: int, seed: int) -> list[list[LightpathSample]]:
    """Class-balanced lightpaths, one list per domain; domain k uses stream ``seed ^ k``."""
    if n_domains < 1 or n_samples < n_domains:
        raise UsageError(f"need n_samples >= n_domains >= 1, got {n_samples}, {n_domains}")
    out = []
    for k, size in enumerate(domain_sizes(n_samples, n_domains)):
        p = modulation_mix(k)
        spans, power, load, mod, labels, filled, draws = kernels.generate_domain(
            int(seed) & kernels.MASK64, k, size, 100 * size, p[0], p[0] + p[1])
        if filled < size:
            raise GenerationError(
                f"domain {k}: only {filled}/{size} balanced samples after {draws} draws")
        out.append([
            LightpathSample(int(spans[i]), float(power[i]), int(load[i]), MODULATIONS[mod[i]], k, int(labels[i]))
            for i in range(size)
        ])
    return out


def generate_synthetic(n_samples: int, n_domains: int, seed: int,
                       schema: FeatureSchema | None = None) -> list[Dataset]:
    """Per-domain datasets encoded with stats pooled over all generated samples."""
    domains = generate_samples(n_samples, n_domains, seed)
    schema = schema or default_schema(n_domains)
    stats = compute_stats([s for d in domains for s in d], schema)
    return [encode_and_normalize(d, schema, stats)[0] for d in domains]


# -- csv --------------------------------------------------------------------

def save_csv(samples, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for s in samples:
            writer.writerow([s.n_spans, format(s.launch_power_dbm, ".17g"), s.channel_load,
                             s.modulation, s.domain_id, s.resolved_label()])


def _parse_int(row, name, text):
    try:
        return int(text)
    except ValueError:
        raise IngestionError(row, name, f"not an integer: {text!r}") from None


def load_csv(path, schema: FeatureSchema | None = None) -> list[LightpathSample]:
    """Read lightpaths; errors name the 1-based data row and the field."""
    schema = schema or default_schema()
    n_domains = 3
    for f in schema.fields:
        if f.name == "domain_id":
            n_domains = len(f.categories)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise IngestionError(0, "header", "file is empty")
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise IngestionError(0, missing[0], "missing column")
        idx = {c: header.index(c) for c in CSV_COLUMNS}
        samples = []
        for row_no, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise IngestionError(row_no, "*", f"expected {len(header)} cells, got {len(row)}")
            cell = {c: row[i].strip() for c, i in idx.items()}
            try:
                power = float(cell["launch_power_dbm"])
            except ValueError:
                raise IngestionError(row_no, "launch_power_dbm", f"not a number: {cell['launch_power_dbm']!r}") from None
            sample = LightpathSample(
                n_spans=_parse_int(row_no, "n_spans", cell["n_spans"]),
                launch_power_dbm=power,
                channel_load=_parse_int(row_no, "channel_load", cell["channel_load"]),
                modulation=cell["modulation"],
                domain_id=_parse_int(row_no, "domain_id", cell["domain_id"]),
                label=_parse_int(row_no, "label", cell["label"]),
            )
            try:
                sample.validate(n_domains)
            except ValidationError as exc:
                name = str(exc).split(" ", 1)[0]
                raise IngestionError(row_no, name, str(exc)) from None
            samples.append(sample)
    return samples


def save_stats(stats: dict, path) -> None:
    Path(path).write_text(canonical_json(stats) + "\n", encoding="utf-8")


def load_stats(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


# -- splitting --------------------------------------------------------------

def stratified_split_indices(labels, test_fraction: float, seed: int):
    """Sorted ``(train_idx, test_idx)``; per-class test counts by largest remainder."""
    if not 0.0 < test_fraction < 1.0:
        raise UsageError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    labels = np.asarray(labels)
    n = labels.size
    classes = sorted(set(labels.tolist()))
    members = {c: np.flatnonzero(labels == c) for c in classes}
    if n < 2 or any(m.size < 2 for m in members.values()):
        raise UsageError("dataset too small to stratify: every class needs at least 2 samples")
    total_test = int(math.floor(test_fraction * n + 0.5))
    exact = {c: test_fraction * members[c].size for c in classes}
    counts = {c: int(math.floor(exact[c])) for c in classes}
    leftover = total_test - sum(counts.values())
    for c in sorted(classes, key=lambda c: (-(exact[c] - counts[c]), c))[:max(leftover, 0)]:
        counts[c] += 1
    for c in classes:
        counts[c] = min(max(counts[c], 1), members[c].size - 1)
    test = []
    for c in classes:
        perm = kernels.permutation(members[c].size, (int(seed) ^ int(c)) & kernels.MASK64)
        test.append(members[c][perm[:counts[c]]])
    test_idx = np.sort(np.concatenate(test))
    train_mask = np.ones(n, dtype=bool)
    train_mask[test_idx] = False
    return np.flatnonzero(train_mask), test_idx


def train_test_split(dataset: Dataset, test_fraction: float, seed: int):
    train_idx, test_idx = stratified_split_indices(dataset.labels, test_fraction, seed)
    return dataset.subset(train_idx), dataset.subset(test_idx)
