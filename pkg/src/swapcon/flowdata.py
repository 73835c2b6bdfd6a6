"""Kyoto2006+-style flow records: parsing, chronological splits, sampling,
and a synthetic covariate-drift generator.

Records are held column-wise in a :class:`FlowTable`; single rows come
back as :class:`FlowRecord` when indexed with an integer.
"""

from __future__ import annotations

import csv
import datetime as dt
import gzip
import hashlib
import io
import json
import math
import os
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

NUMERIC = "numeric"
CATEGORICAL = "categorical"

BENIGN = 0
MALICIOUS = 1
LABEL_NAMES = {BENIGN: "benign", MALICIOUS: "malicious"}
LABEL_CODES = {v: k for k, v in LABEL_NAMES.items()}

UNKNOWN = "<unk>"

SPLIT_NAMES = ("pretrain", "finetune", "validation", "test_iid", "test_near", "test_far")
TEST_SPLITS = {"IID": "test_iid", "NEAR": "test_near", "FAR": "test_far"}

_EPOCH = dt.datetime(1970, 1, 1, tzinfo=dt.timezone.utc)


class FlowDataError(ValueError):
    """Raised for invalid schemas, configs or data populations."""


class InsufficientClassError(FlowDataError):
    def __init__(self, range_name: str, class_name: str, have: int, need: int):
        self.range_name = range_name
        self.class_name = class_name
        super().__init__(
            f"insufficient class population: range {range_name} has {have} "
            f"{class_name} records, need {need}"
        )


# ---------------------------------------------------------------------------
# Schema
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Column:
    name: str
    kind: str
    index: int


@dataclass(frozen=True)
class FeatureSchema:
    """Which raw fields are features, and where label/timestamp live."""

    columns: tuple[Column, ...]
    label_column: int
    timestamp_column: int
    n_fields: int = 24
    required_features: int | None = 14

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise FlowDataError(f"duplicate column names in schema: {names}")
        if self.required_features is not None and len(self.columns) != self.required_features:
            raise FlowDataError(
                f"schema marks {len(self.columns)} feature columns, expected {self.required_features}"
            )
        for c in self.columns:
            if c.kind not in (NUMERIC, CATEGORICAL):
                raise FlowDataError(f"column {c.name!r}: unknown kind {c.kind!r}")
            if c.index in (self.label_column, self.timestamp_column):
                raise FlowDataError(f"column {c.name!r} overlaps the label/timestamp field")
        idx = [c.index for c in self.columns] + [self.label_column, self.timestamp_column]
        if len(set(idx)) != len(idx):
            raise FlowDataError("schema field indices are not unique")
        if max(idx) >= self.n_fields:
            raise FlowDataError(f"schema references field {max(idx)} but n_fields={self.n_fields}")

    @property
    def feature_names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def numeric_columns(self) -> list[Column]:
        return [c for c in self.columns if c.kind == NUMERIC]

    @property
    def categorical_columns(self) -> list[Column]:
        return [c for c in self.columns if c.kind == CATEGORICAL]

    @property
    def n_features(self) -> int:
        return len(self.columns)

    def to_dict(self) -> dict:
        return {
            "columns": [[c.name, c.kind, c.index] for c in self.columns],
            "label_column": self.label_column,
            "timestamp_column": self.timestamp_column,
            "n_fields": self.n_fields,
            "required_features": self.required_features,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        return cls(
            columns=tuple(Column(n, k, int(i)) for n, k, i in d["columns"]),
            label_column=int(d["label_column"]),
            timestamp_column=int(d["timestamp_column"]),
            n_fields=int(d.get("n_fields", 24)),
            required_features=d.get("required_features", 14),
        )

    def schema_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


_KYOTO_FEATURES = [
    ("duration", NUMERIC, 0),
    ("service", CATEGORICAL, 1),
    ("src_bytes", NUMERIC, 2),
    ("dst_bytes", NUMERIC, 3),
    ("count", NUMERIC, 4),
    ("same_srv_rate", NUMERIC, 5),
    ("serror_rate", NUMERIC, 6),
    ("srv_serror_rate", NUMERIC, 7),
    ("dst_host_count", NUMERIC, 8),
    ("dst_host_srv_count", NUMERIC, 9),
    ("dst_host_same_src_port_rate", NUMERIC, 10),
    ("dst_host_serror_rate", NUMERIC, 11),
    ("dst_host_srv_serror_rate", NUMERIC, 12),
    ("flag", CATEGORICAL, 13),
]
KYOTO_LABEL_FIELD = 17
KYOTO_START_TIME_FIELD = 22


def kyoto_schema() -> FeatureSchema:
    """The 14 conventional statistical features of Kyoto2006+."""
    return FeatureSchema(
        columns=tuple(Column(*c) for c in _KYOTO_FEATURES),
        label_column=KYOTO_LABEL_FIELD,
        timestamp_column=KYOTO_START_TIME_FIELD,
    )


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FlowRecord:
    timestamp: dt.datetime
    numeric_values: tuple[float, ...]
    categorical_values: tuple[str, ...]
    label: int

    @property
    def label_name(self) -> str:
        return LABEL_NAMES[self.label]


class FlowTable:
    """Column-wise collection of flow records sharing one schema."""

    def __init__(self, schema: FeatureSchema, timestamps, numeric, categorical, labels):
        n = len(labels)
        self.schema = schema
        self.timestamps = np.asarray(timestamps, dtype="datetime64[s]").reshape(n)
        self.numeric = np.asarray(numeric, dtype=np.float64).reshape(n, len(schema.numeric_columns))
        self.categorical = np.asarray(categorical, dtype=object).reshape(
            n, len(schema.categorical_columns)
        )
        self.labels = np.asarray(labels, dtype=np.int8).reshape(n)
        if not np.all(np.isfinite(self.numeric)):
            raise FlowDataError("numeric values must be finite")

    @classmethod
    def empty(cls, schema: FeatureSchema) -> "FlowTable":
        return cls(schema, [], np.zeros((0, len(schema.numeric_columns))),
                   np.zeros((0, len(schema.categorical_columns)), dtype=object), [])

    @classmethod
    def from_records(cls, schema: FeatureSchema, records: Sequence[FlowRecord]) -> "FlowTable":
        if not records:
            return cls.empty(schema)
        ts = [np.datetime64(r.timestamp.replace(tzinfo=None), "s") for r in records]
        return cls(
            schema, ts,
            [r.numeric_values for r in records],
            [r.categorical_values for r in records],
            [r.label for r in records],
        )

    @classmethod
    def concat(cls, tables: Sequence["FlowTable"]) -> "FlowTable":
        schema = tables[0].schema
        return cls(
            schema,
            np.concatenate([t.timestamps for t in tables]),
            np.concatenate([t.numeric for t in tables]),
            np.concatenate([t.categorical for t in tables]),
            np.concatenate([t.labels for t in tables]),
        )

    def __len__(self) -> int:
        return self.labels.shape[0]

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, key):
        if isinstance(key, (int, np.integer)):
            ts = self.timestamps[key].astype(dt.datetime).replace(tzinfo=dt.timezone.utc)
            return FlowRecord(
                ts,
                tuple(float(v) for v in self.numeric[key]),
                tuple(str(v) for v in self.categorical[key]),
                int(self.labels[key]),
            )
        return self.take(np.arange(len(self))[key])

    def take(self, idx) -> "FlowTable":
        idx = np.asarray(idx, dtype=np.int64)
        return FlowTable(self.schema, self.timestamps[idx], self.numeric[idx],
                         self.categorical[idx], self.labels[idx])

    def years(self) -> np.ndarray:
        return self.timestamps.astype("datetime64[Y]").astype(np.int64) + 1970

    def column(self, name: str) -> np.ndarray:
        for j, c in enumerate(self.schema.numeric_columns):
            if c.name == name:
                return self.numeric[:, j]
        for j, c in enumerate(self.schema.categorical_columns):
            if c.name == name:
                return self.categorical[:, j]
        raise KeyError(name)

    def class_counts(self) -> tuple[int, int]:
        m = int(np.count_nonzero(self.labels == MALICIOUS))
        return len(self) - m, m

    # -- CSV -------------------------------------------------------------
    def to_csv(self, path) -> None:
        """Write a header row of schema names; ISO-8601 UTC timestamps;
        labels as ``benign``/``malicious``."""
        num_pos = {c.name: j for j, c in enumerate(self.schema.numeric_columns)}
        cat_pos = {c.name: j for j, c in enumerate(self.schema.categorical_columns)}
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["timestamp", *self.schema.feature_names, "label"])
            ts = np.datetime_as_string(self.timestamps, unit="s")
            for i in range(len(self)):
                row = [ts[i] + "Z"]
                for c in self.schema.columns:
                    if c.kind == NUMERIC:
                        row.append(repr(float(self.numeric[i, num_pos[c.name]])))
                    else:
                        row.append(self.categorical[i, cat_pos[c.name]])
                row.append(LABEL_NAMES[int(self.labels[i])])
                w.writerow(row)

    @classmethod
    def from_csv(cls, path, schema: FeatureSchema) -> "FlowTable":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            expected = ["timestamp", *schema.feature_names, "label"]
            if header != expected:
                raise FlowDataError(f"{path}: header {header} does not match schema {expected}")
            rows = list(reader)
        if not rows:
            return cls.empty(schema)
        arr = np.array(rows, dtype=object)
        ts = np.array([s.rstrip("Z") for s in arr[:, 0]], dtype="datetime64[s]")
        num_idx = [1 + k for k, c in enumerate(schema.columns) if c.kind == NUMERIC]
        cat_idx = [1 + k for k, c in enumerate(schema.columns) if c.kind == CATEGORICAL]
        numeric = arr[:, num_idx].astype(np.float64)
        categorical = arr[:, cat_idx]
        labels = np.array([LABEL_CODES[s] for s in arr[:, -1]], dtype=np.int8)
        return cls(schema, ts, numeric, categorical, labels)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def parse_label(field: str) -> int:
    v = int(float(field))
    if v == 1:
        return BENIGN
    if v < 0:
        return MALICIOUS
    raise ValueError(f"unknown label value {field!r}")


def parse_timestamp(field: str, date: dt.date | None = None) -> dt.datetime:
    """Accept ISO date-times, ``HH:MM:SS`` (needs ``date``), or epoch seconds."""
    s = field.strip()
    if re.fullmatch(r"\d{1,2}:\d{2}:\d{2}", s):
        if date is None:
            raise ValueError(f"time-of-day {s!r} without a file date")
        t = dt.time.fromisoformat(s.zfill(8))
        return dt.datetime.combine(date, t, tzinfo=dt.timezone.utc)
    if re.fullmatch(r"[+-]?\d+(\.\d+)?", s):
        return _EPOCH + dt.timedelta(seconds=float(s))
    ts = dt.datetime.fromisoformat(s.replace("Z", "+00:00"))
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=dt.timezone.utc)
    return ts.astimezone(dt.timezone.utc)


def parse_kyoto(lines: Iterable[str], schema: FeatureSchema, date: dt.date | None = None):
    """Parse tab-separated session lines.

    Returns ``(table, errors)`` where ``errors`` is a list of
    ``(line_number, message)`` with 1-based line numbers.  Blank lines are
    skipped; every other line yields either a record or an error.
    """
    num_cols = schema.numeric_columns
    cat_cols = schema.categorical_columns
    ts, nums, cats, labels = [], [], [], []
    errors: list[tuple[int, str]] = []
    for lineno, line in enumerate(lines, start=1):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) < schema.n_fields:
            errors.append((lineno, f"field count {len(fields)} < {schema.n_fields}"))
            continue
        try:
            row = [float(fields[c.index]) for c in num_cols]
            bad = [c.name for c, v in zip(num_cols, row) if not math.isfinite(v)]
            if bad:
                raise ValueError(f"non-finite value in {bad[0]}")
            label = parse_label(fields[schema.label_column])
            stamp = parse_timestamp(fields[schema.timestamp_column], date)
        except ValueError as exc:
            errors.append((lineno, str(exc)))
            continue
        nums.append(row)
        cats.append([fields[c.index].strip() for c in cat_cols])
        labels.append(label)
        ts.append(np.datetime64(stamp.replace(tzinfo=None), "s"))
    if not labels:
        return FlowTable.empty(schema), errors
    return FlowTable(schema, ts, nums, cats, labels), errors


def _file_date(path: Path) -> dt.date | None:
    m = re.search(r"(\d{4})(\d{2})(\d{2})", path.name)
    if not m:
        return None
    try:
        return dt.date(int(m.group(1)), int(m.group(2)), int(m.group(3)))
    except ValueError:
        return None


def open_text(path) -> io.TextIOBase:
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rt", encoding="utf-8", errors="replace")
    return open(path, encoding="utf-8", errors="replace")


def load_kyoto(path, schema: FeatureSchema):
    """Parse a file or a directory of daily Kyoto files (``YYYYMMDD.txt[.gz]``).

    Errors are returned as ``(file name, line number, message)``.
    """
    path = Path(path)
    if path.is_dir():
        files = sorted(p for p in path.rglob("*") if p.is_file()
                       and (p.suffix in (".txt", ".gz", ".tsv")))
    else:
        files = [path]
    tables, errors = [], []
    for f in files:
        with open_text(f) as fh:
            table, errs = parse_kyoto(fh, schema, _file_date(f))
        tables.append(table)
        errors.extend((f.name, ln, msg) for ln, msg in errs)
    tables = [t for t in tables if len(t)] or [FlowTable.empty(schema)]
    return FlowTable.concat(tables), errors


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------

@dataclass
class SplitConfig:
    iid_range: tuple[int, int] = (2006, 2010)
    near_range: tuple[int, int] = (2011, 2013)
    far_range: tuple[int, int] = (2014, 2015)
    pretrain_fraction: float = 0.9
    finetune_fraction: float = 0.9
    test_per_class: int = 5000
    seed: int = 0

    def __post_init__(self):
        self.iid_range = tuple(int(y) for y in self.iid_range)
        self.near_range = tuple(int(y) for y in self.near_range)
        self.far_range = tuple(int(y) for y in self.far_range)
        for name, (a, b) in self.ranges().items():
            if a > b:
                raise FlowDataError(f"{name} range {a}-{b} is reversed")
        if not (self.iid_range[1] < self.near_range[0] and self.near_range[1] < self.far_range[0]):
            raise FlowDataError("ranges must be disjoint and ordered IID < NEAR < FAR")
        for name in ("pretrain_fraction", "finetune_fraction"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise FlowDataError(f"{name} must lie in (0, 1), got {v}")
        if self.test_per_class < 0:
            raise FlowDataError("test_per_class must be non-negative")

    def ranges(self) -> dict[str, tuple[int, int]]:
        return {"IID": self.iid_range, "NEAR": self.near_range, "FAR": self.far_range}


@dataclass
class DatasetSplits:
    pretrain_set: FlowTable
    finetune_set: FlowTable
    validation_set: FlowTable
    test_iid: FlowTable
    test_near: FlowTable
    test_far: FlowTable

    @property
    def schema(self) -> FeatureSchema:
        return self.pretrain_set.schema

    def as_dict(self) -> dict[str, FlowTable]:
        return dict(zip(SPLIT_NAMES, (self.pretrain_set, self.finetune_set, self.validation_set,
                                      self.test_iid, self.test_near, self.test_far)))

    def tests(self) -> dict[str, FlowTable]:
        return {"IID": self.test_iid, "NEAR": self.test_near, "FAR": self.test_far}

    def save(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "schema.json", "w") as fh:
            json.dump(self.schema.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        paths = []
        for name, table in self.as_dict().items():
            p = out / f"{name}.csv"
            table.to_csv(p)
            paths.append(p)
        return paths

    @classmethod
    def load(cls, split_dir) -> "DatasetSplits":
        d = Path(split_dir)
        with open(d / "schema.json") as fh:
            schema = FeatureSchema.from_dict(json.load(fh))
        tables = [FlowTable.from_csv(d / f"{n}.csv", schema) for n in SPLIT_NAMES]
        return cls(*tables)


def _rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, *stream])


def balanced_sample(pool: FlowTable, per_class: int, seed: int, range_name: str = "pool") -> FlowTable:
    """Exactly ``per_class`` records of each class, shuffled by ``seed``."""
    return pool.take(_balanced_indices(pool, per_class, seed, range_name))


def _balanced_indices(pool: FlowTable, per_class: int, seed: int, range_name: str) -> np.ndarray:
    if per_class == 0:
        return np.zeros(0, dtype=np.int64)
    rng = _rng(seed, 1)
    chosen = []
    for cls_code in (BENIGN, MALICIOUS):
        members = np.flatnonzero(pool.labels == cls_code)
        if members.size < per_class:
            raise InsufficientClassError(range_name, LABEL_NAMES[cls_code], members.size, per_class)
        chosen.append(rng.choice(members, size=per_class, replace=False))
    idx = np.concatenate(chosen)
    rng.shuffle(idx)
    return idx


def chronological_split(records: FlowTable, cfg: SplitConfig) -> DatasetSplits:
    """Route records to IID/NEAR/FAR by year; carve train sets from IID."""
    years = records.years()
    pools = {}
    for name, (lo, hi) in cfg.ranges().items():
        pools[name] = np.flatnonzero((years >= lo) & (years <= hi))
        if pools[name].size == 0:
            raise FlowDataError(f"range {name} ({lo}-{hi}) contains no records")
    # population check up front so the first failure names the range
    for name, idx in pools.items():
        benign, malicious = records.take(idx).class_counts()
        for cname, have in (("benign", benign), ("malicious", malicious)):
            if have < cfg.test_per_class:
                raise InsufficientClassError(name, cname, have, cfg.test_per_class)

    tests = {}
    for k, name in enumerate(("IID", "NEAR", "FAR")):
        pool = records.take(pools[name])
        local = _balanced_indices(pool, cfg.test_per_class, cfg.seed + k, name)
        tests[name] = pools[name][local]

    held = np.zeros(len(records), dtype=bool)
    held[tests["IID"]] = True
    train_idx = pools["IID"][~held[pools["IID"]]]
    train_idx = train_idx[_rng(cfg.seed, 2).permutation(train_idx.size)]
    n_pre = int(round(train_idx.size * cfg.pretrain_fraction))
    rest = train_idx[n_pre:]
    n_ft = int(round(rest.size * cfg.finetune_fraction))
    return DatasetSplits(
        pretrain_set=records.take(train_idx[:n_pre]),
        finetune_set=records.take(rest[:n_ft]),
        validation_set=records.take(rest[n_ft:]),
        test_iid=records.take(tests["IID"]),
        test_near=records.take(tests["NEAR"]),
        test_far=records.take(tests["FAR"]),
    )


# ---------------------------------------------------------------------------
# Synthetic drift
# ---------------------------------------------------------------------------

@dataclass
class FeatureDrift:
    """Per-period schedule for one numeric feature.

    Shifts are in units of the feature's reference standard deviation.
    """

    name: str
    mean_shift: list[float]
    scale: list[float]


@dataclass
class NumericFeatureModel:
    name: str
    loc: float = 0.0
    std: float = 1.0
    # "identity", "exp" (heavy-tailed counters) or "logistic" (rates in (0, 1))
    transform: str = "identity"
    # how strongly the latent value pushes toward the malicious class
    weight: float = 0.0


@dataclass
class CategoricalFeatureModel:
    name: str
    symbols: list[str]
    # per-symbol push toward the malicious class
    effects: dict[str, float] = field(default_factory=dict)


@dataclass
class DriftSpec:
    numeric: list[NumericFeatureModel]
    categorical: list[CategoricalFeatureModel]
    schedules: list[FeatureDrift] = field(default_factory=list)
    # per period, per categorical feature name: symbol -> weight
    category_weights: list[dict[str, dict[str, float]]] = field(default_factory=list)
    n_periods: int = 3
    records_per_period: int | list[int] = 1000
    years: list[int] | None = None
    # concept: malicious iff sum(weight * z) + sum(effect[symbol])
    #          + sum(w * z_a * z_b) + bias > 0, evaluated on unshifted latents
    interactions: list[tuple[str, str, float]] = field(default_factory=list)
    bias: float = 0.0
    label_noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def counts(self) -> list[int]:
        if isinstance(self.records_per_period, int):
            return [self.records_per_period] * self.n_periods
        return [int(c) for c in self.records_per_period]

    def period_years(self) -> list[int]:
        return list(self.years) if self.years is not None else [2006 + p for p in range(self.n_periods)]

    def validate(self) -> None:
        errs = []
        if self.n_periods < 1:
            errs.append("n_periods must be >= 1")
        if len(self.counts()) != self.n_periods or any(c < 0 for c in self.counts()):
            errs.append("records_per_period must be non-negative, one per period")
        if self.years is not None and len(self.years) != self.n_periods:
            errs.append("years must list one year per period")
        names = {m.name for m in self.numeric}
        for s in self.schedules:
            if s.name not in names:
                errs.append(f"schedule for unknown feature {s.name!r}")
            if len(s.mean_shift) != self.n_periods or len(s.scale) != self.n_periods:
                errs.append(f"schedule {s.name!r} must have {self.n_periods} entries")
            if any(not (v > 0) for v in s.scale):
                errs.append(f"schedule {s.name!r}: scale factors must be > 0")
        if self.category_weights and len(self.category_weights) != self.n_periods:
            errs.append("category_weights must have one entry per period")
        for p, per_feat in enumerate(self.category_weights):
            for fname, weights in per_feat.items():
                vals = list(weights.values())
                if any(v < 0 for v in vals) or not any(v > 0 for v in vals):
                    errs.append(f"period {p} {fname}: weights must be >= 0 and not all zero")
        for m in self.numeric:
            if m.transform not in ("identity", "exp", "logistic"):
                errs.append(f"feature {m.name!r}: unknown transform {m.transform!r}")
        for a, b, _ in self.interactions:
            if a not in names or b not in names:
                errs.append(f"interaction ({a}, {b}) references unknown feature")
        if errs:
            raise FlowDataError("; ".join(errs))

    def schema(self) -> FeatureSchema:
        cols = [Column(m.name, NUMERIC, i) for i, m in enumerate(self.numeric)]
        off = len(cols)
        cols += [Column(m.name, CATEGORICAL, off + i) for i, m in enumerate(self.categorical)]
        n = len(cols)
        return FeatureSchema(tuple(cols), label_column=n, timestamp_column=n + 1,
                             n_fields=n + 2, required_features=None)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DriftSpec":
        d = dict(d)
        d["numeric"] = [NumericFeatureModel(**m) for m in d.get("numeric", [])]
        d["categorical"] = [CategoricalFeatureModel(**m) for m in d.get("categorical", [])]
        d["schedules"] = [FeatureDrift(**s) for s in d.get("schedules", [])]
        d["interactions"] = [tuple(t) for t in d.get("interactions", [])]
        return cls(**d)


def generate_drifted(spec: DriftSpec) -> list[tuple[int, FlowTable]]:
    """Sample each period of a covariate-drift scenario.

    Every period draws latents from the same reference distribution
    with its own seeded stream, labels them with the fixed concept, and
    only then applies that period's shift/scale and category reweighting
    to the observed values.
    """
    spec.validate()
    schema = spec.schema()
    sched = {s.name: s for s in spec.schedules}
    years = spec.period_years()
    out = []
    for p, n in enumerate(spec.counts()):
        rng = _rng(spec.seed, 100 + p)
        z = rng.standard_normal((n, len(spec.numeric)))
        score = np.full(n, spec.bias)
        for j, m in enumerate(spec.numeric):
            score += m.weight * z[:, j]
        col = {m.name: j for j, m in enumerate(spec.numeric)}
        for a, b, w in spec.interactions:
            score += w * z[:, col[a]] * z[:, col[b]]

        # reference draw of every categorical; labels use these symbols
        cats = np.empty((n, len(spec.categorical)), dtype=object)
        u_cat = rng.random((n, len(spec.categorical)))
        for j, m in enumerate(spec.categorical):
            ref = _category_probs(m, {})
            k = np.searchsorted(np.cumsum(ref), u_cat[:, j], side="right").clip(0, len(m.symbols) - 1)
            syms = np.array(m.symbols, dtype=object)[k]
            score += np.array([m.effects.get(s, 0.0) for s in syms])
            cats[:, j] = syms
        labels = (score > 0).astype(np.int8)
        if spec.label_noise > 0:
            flip = rng.random(n) < spec.label_noise
            labels = np.where(flip, 1 - labels, labels).astype(np.int8)

        # observed values: shift the latents, then map to feature units
        numeric = np.empty_like(z)
        for j, m in enumerate(spec.numeric):
            s = sched.get(m.name)
            shift, scale = (s.mean_shift[p], s.scale[p]) if s else (0.0, 1.0)
            v = m.loc + m.std * (scale * z[:, j] + shift)
            numeric[:, j] = _TRANSFORMS[m.transform](v)

        # categorical reweighting: resample a symbol with the same uniform
        # draw so an unchanged weight table reproduces the reference symbol
        weights = spec.category_weights[p] if spec.category_weights else {}
        for j, m in enumerate(spec.categorical):
            if m.name in weights:
                probs = _category_probs(m, weights[m.name])
                k = np.searchsorted(np.cumsum(probs), u_cat[:, j], side="right").clip(0, len(m.symbols) - 1)
                cats[:, j] = np.array(m.symbols, dtype=object)[k]

        start = np.datetime64(f"{years[p]:04d}-01-01T00:00:00", "s")
        span = int((np.datetime64(f"{years[p] + 1:04d}-01-01T00:00:00", "s") - start).astype(np.int64))
        ts = start + np.sort(rng.integers(0, span, size=n)).astype("timedelta64[s]")
        out.append((p, FlowTable(schema, ts, numeric, cats, labels)))
    return out


_TRANSFORMS = {
    "identity": lambda v: v,
    "exp": np.exp,
    "logistic": lambda v: 1.0 / (1.0 + np.exp(-v)),
}


def _category_probs(m: CategoricalFeatureModel, weights: dict[str, float]) -> np.ndarray:
    if weights:
        w = np.array([float(weights.get(s, 0.0)) for s in m.symbols])
    else:
        w = np.ones(len(m.symbols))
    return w / w.sum()


def drifted_table(spec: DriftSpec) -> FlowTable:
    return FlowTable.concat([t for _, t in generate_drifted(spec)])


def write_kyoto_lines(table: FlowTable, fh, n_fields: int | None = None) -> None:
    """Write a table back out in tab-separated raw form (used for fixtures)."""
    schema = table.schema
    n_fields = n_fields or schema.n_fields
    num_pos = {c.name: j for j, c in enumerate(schema.numeric_columns)}
    cat_pos = {c.name: j for j, c in enumerate(schema.categorical_columns)}
    ts = np.datetime_as_string(table.timestamps, unit="s")
    for i in range(len(table)):
        fields = ["0"] * n_fields
        for c in schema.columns:
            if c.kind == NUMERIC:
                fields[c.index] = repr(float(table.numeric[i, num_pos[c.name]]))
            else:
                fields[c.index] = str(table.categorical[i, cat_pos[c.name]])
        fields[schema.label_column] = "1" if table.labels[i] == BENIGN else "-1"
        fields[schema.timestamp_column] = ts[i]
        fh.write("\t".join(fields) + "\n")


def ensure_dir(path) -> Path:
    p = Path(path)
    os.makedirs(p, exist_ok=True)
    return p
