"""CSV ingestion with JSON column schemas, train/test splitting, synthetic
generators for the benchmark experiments, and cached dataset fetching.

File conventions: comma-separated CSV with a required header, '.' decimal,
UTF-8, numerics unquoted.  A schema file is a JSON list of column records
``{"name": ..., "kind": ..., "levels": [...]}`` where ``kind`` is one of
continuous, categorical, continuous_response, count_response, or
categorical_response, and ``levels`` lists the category labels in index
order for the categorical kinds.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import os
import urllib.request
import zipfile
from dataclasses import dataclass, field

import numpy as np

from .core import (CATEGORICAL, CATEGORICAL_RESPONSE, CONTINUOUS,
                   CONTINUOUS_RESPONSE, COUNT_RESPONSE, ColumnKind, DataSchema,
                   Dataset, categorical, categorical_response, continuous,
                   continuous_response, count_response)
from .errors import (ChecksumMismatch, InsufficientData, NetworkUnavailable,
                     ParseError, RowCountMismatch, UnknownLevel)

_KIND_BUILDERS = {
    "continuous": lambda levels: continuous(),
    "categorical": lambda levels: categorical(len(levels)),
    "continuous_response": lambda levels: continuous_response(),
    "count_response": lambda levels: count_response(),
    "categorical_response": lambda levels: categorical_response(len(levels)),
}


@dataclass
class FileSchema:
    """JSON-facing column description: kinds plus category label lists."""

    schema: DataSchema
    level_labels: dict  # covariate/schema column index -> list of labels

    @staticmethod
    def from_json(payload) -> "FileSchema":
        columns = []
        labels = {}
        response_index = -1
        for idx, rec in enumerate(payload):
            kind_name = rec["kind"]
            levels = rec.get("levels", [])
            if kind_name not in _KIND_BUILDERS:
                raise ValueError(f"unknown column kind {kind_name!r}")
            kind = _KIND_BUILDERS[kind_name](levels)
            if kind.is_response:
                response_index = idx
            if levels:
                labels[idx] = [str(v) for v in levels]
            columns.append((rec["name"], kind))
        return FileSchema(DataSchema(tuple(columns), response_index), labels)

    def to_json(self):
        out = []
        for idx, (name, kind) in enumerate(self.schema.columns):
            rec = {"name": name, "kind": kind.role}
            if idx in self.level_labels:
                rec["levels"] = list(self.level_labels[idx])
            out.append(rec)
        return out


def load_schema(path) -> FileSchema:
    with open(path, "r", encoding="utf-8") as fh:
        return FileSchema.from_json(json.load(fh))


def save_schema(fschema: FileSchema, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(fschema.to_json(), fh, indent=2, sort_keys=False)
        fh.write("\n")


# ---------------------------------------------------------------------------
# CSV round trip
# ---------------------------------------------------------------------------


def _parse_cell(text: str, kind: ColumnKind, labels, row: int, name: str) -> float:
    text = text.strip()
    if kind.role in (CONTINUOUS, CONTINUOUS_RESPONSE):
        try:
            return float(text)
        except ValueError:
            raise ParseError(row, name, f"not a real number: {text!r}")
    if kind.role == COUNT_RESPONSE:
        try:
            value = int(text)
        except ValueError:
            raise ParseError(row, name, f"not an integer count: {text!r}")
        if value < 0:
            raise ParseError(row, name, f"negative count: {value}")
        return float(value)
    if labels is None:
        raise ParseError(row, name, "categorical column without declared levels")
    try:
        return float(labels.index(text))
    except ValueError:
        raise UnknownLevel(text, name)


def load_csv(path, schema_path) -> Dataset:
    """Read a typed dataset; the header must match the schema column names
    and categorical cells are mapped through the declared level lists."""
    fschema = schema_path if isinstance(schema_path, FileSchema) \
        else load_schema(schema_path)
    schema = fschema.schema
    names = [name for name, _ in schema.columns]
    import csv as _csv
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = _csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != names:
            raise ParseError(0, ",".join(names), "header does not match schema")
        rows = []
        responses = []
        for rix, rec in enumerate(reader, start=1):
            if not rec:
                continue
            if len(rec) != len(names):
                raise ParseError(rix, names[0], f"expected {len(names)} fields")
            covs = []
            for cix, (name, kind) in enumerate(schema.columns):
                value = _parse_cell(rec[cix], kind, fschema.level_labels.get(cix),
                                    rix, name)
                if cix == schema.response_index:
                    responses.append(value)
                else:
                    covs.append(value)
            rows.append(covs)
    x = np.asarray(rows, dtype=np.float64).reshape(len(rows), schema.d)
    return Dataset(schema, x, np.asarray(responses))


def write_csv(dataset: Dataset, path, level_labels=None):
    """Inverse of :func:`load_csv`: reals via shortest round-trip repr,
    categorical cells through the label lists."""
    schema = dataset.schema
    labels = level_labels or {}
    lines = [",".join(name for name, _ in schema.columns)]
    for i in range(dataset.n):
        cells = []
        cov_j = 0
        for cix, (name, kind) in enumerate(schema.columns):
            if cix == schema.response_index:
                value = dataset.responses[i]
            else:
                value = dataset.rows[i, cov_j]
                cov_j += 1
            if kind.role in (CATEGORICAL, CATEGORICAL_RESPONSE):
                lab = labels.get(cix)
                cells.append(lab[int(value)] if lab else str(int(value)))
            elif kind.role == COUNT_RESPONSE:
                cells.append(str(int(value)))
            else:
                cells.append(repr(float(value)))
        lines.append(",".join(cells))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Train/test splits
# ---------------------------------------------------------------------------


@dataclass
class SplitPlan:
    """Replicated random subsampling: disjoint train/test index pairs for
    each (train size, replication)."""

    train_sizes: tuple
    replications: int = 10
    test_size: int = 0
    test_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.train_sizes = tuple(int(s) for s in self.train_sizes)
        if any(s <= 0 for s in self.train_sizes) or self.replications <= 0:
            raise ValueError("train sizes and replications must be positive")
        if self.test_size <= 0 and self.test_fraction <= 0.0:
            raise ValueError("need test_size or test_fraction")

    def resolved_test_size(self, n: int) -> int:
        if self.test_size > 0:
            return self.test_size
        return max(1, int(round(self.test_fraction * n)))


def make_splits(dataset: Dataset, plan: SplitPlan):
    """Yield ``(train_size, replication, train_idx, test_idx)`` with
    disjoint index sets, deterministic in the plan seed."""
    n = dataset.n
    test_n = plan.resolved_test_size(n)
    for size in plan.train_sizes:
        if size + test_n > n:
            raise InsufficientData(
                f"train {size} + test {test_n} exceeds n={n}")
    rng = np.random.default_rng(plan.seed)
    out = []
    for size in plan.train_sizes:
        for rep in range(plan.replications):
            perm = rng.permutation(n)
            out.append((size, rep, perm[:size].copy(),
                        perm[size:size + test_n].copy()))
    return out


# ---------------------------------------------------------------------------
# Synthetic generators
# ---------------------------------------------------------------------------

HETERO_NOISE_LOW = 0.1
HETERO_NOISE_HIGH = 1.0


def hetero_mean(x):
    """Smooth nonlinear mean: linear trend plus a damped sinusoid."""
    x = np.asarray(x, dtype=np.float64)
    return 1.2 * x + 0.9 * np.exp(-1.5 * x) * np.sin(5.0 * math.pi * x)


def synth_heteroscedastic(n: int, seed: int = 0) -> Dataset:
    """One uniform covariate; noise std jumps from 0.1 to 1.0 at x = 0.5."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, n)
    sd = np.where(x < 0.5, HETERO_NOISE_LOW, HETERO_NOISE_HIGH)
    y = hetero_mean(x) + sd * rng.standard_normal(n)
    schema = DataSchema((("x", continuous()), ("y", continuous_response())), 1)
    return Dataset(schema, x.reshape(-1, 1), y)


SPURIOUS_MEANS = (-2.5, 0.0, 2.5)
SPURIOUS_SD = 0.5
SPURIOUS_INTERCEPTS = (1.0, -0.5, 0.6)
SPURIOUS_SLOPES = (1.2, -1.5, 0.9)
SPURIOUS_NOISE = 0.1


def synth_spurious(n: int, num_spurious: int, seed: int = 0,
                   return_components: bool = False):
    """Three-component mixture covariates; the response is linear in the
    first covariate within each component, and every extra dimension draws
    its own independent component index."""
    rng = np.random.default_rng(seed)
    comp = rng.integers(0, 3, n)
    means = np.asarray(SPURIOUS_MEANS)
    x1 = means[comp] + SPURIOUS_SD * rng.standard_normal(n)
    y = (np.asarray(SPURIOUS_INTERCEPTS)[comp]
         + np.asarray(SPURIOUS_SLOPES)[comp] * x1
         + SPURIOUS_NOISE * rng.standard_normal(n))
    cols = [x1]
    for _ in range(num_spurious):
        cj = rng.integers(0, 3, n)
        cols.append(means[cj] + SPURIOUS_SD * rng.standard_normal(n))
    x = np.column_stack(cols)
    names = [("x1", continuous())]
    names += [(f"s{j}", continuous()) for j in range(1, num_spurious + 1)]
    schema = DataSchema(tuple(names) + (("y", continuous_response()),),
                        num_spurious + 1)
    data = Dataset(schema, x, y)
    if return_components:
        return data, comp
    return data


# ---------------------------------------------------------------------------
# Benchmark datasets
# ---------------------------------------------------------------------------

_SOLAR_ATTRIBUTES = [
    ("zurich_class", list("ABCDEFH")),
    ("spot_size", list("XRSAHK")),
    ("spot_distribution", list("XOIC")),
    ("activity", ["1", "2"]),
    ("evolution", ["1", "2", "3"]),
    ("previous_activity", ["1", "2", "3"]),
    ("historically_complex", ["1", "2"]),
    ("became_complex", ["1", "2"]),
    ("area", ["1", "2"]),
    ("largest_spot_area", ["1", "2"]),
]

_CCS_COLUMNS = ["cement", "slag", "fly_ash", "water", "superplasticizer",
                "coarse_aggregate", "fine_aggregate", "age"]


@dataclass
class _BenchmarkEntry:
    urls: tuple
    row_count: int
    build: callable  # raw payloads -> (FileSchema, csv text)


def _ccs_schema() -> FileSchema:
    cols = tuple((c, continuous()) for c in _CCS_COLUMNS)
    schema = DataSchema(cols + (("strength", continuous_response()),), 8)
    return FileSchema(schema, {})


def _solar_schema() -> FileSchema:
    cols = tuple((name, categorical(len(levels)))
                 for name, levels in _SOLAR_ATTRIBUTES)
    schema = DataSchema(cols + (("flares", count_response()),), 10)
    labels = {j: levels for j, (_, levels) in enumerate(_SOLAR_ATTRIBUTES)}
    return FileSchema(schema, labels)


def _cmb_schema() -> FileSchema:
    schema = DataSchema((("multipole", continuous()),
                         ("power", continuous_response())), 1)
    return FileSchema(schema, {})


def _build_ccs(payloads) -> str:
    raw = payloads[0]
    if raw[:2] == b"PK":  # zip around the spreadsheet
        with zipfile.ZipFile(io.BytesIO(raw)) as zf:
            inner = [n for n in zf.namelist() if n.lower().endswith((".xls", ".csv"))]
            if not inner:
                raise ParseError(0, "ccs", "archive holds no data file")
            raw = zf.read(inner[0])
    if raw[:8] == b"\xd0\xcf\x11\xe0\xa1\xb1\x1a\xe1":  # legacy spreadsheet
        try:
            import pandas as pd
            frame = pd.read_excel(io.BytesIO(raw))
        except Exception as exc:
            raise ParseError(0, "ccs",
                             f"cannot read spreadsheet ({exc}); place a CSV "
                             "conversion in the cache instead")
        rows = frame.to_numpy(dtype=np.float64)
    else:
        text = raw.decode("utf-8-sig")
        lines = [ln for ln in text.splitlines() if ln.strip()]
        start = 1 if any(c.isalpha() for c in lines[0]) else 0
        rows = np.asarray([[float(v) for v in ln.split(",")]
                           for ln in lines[start:]])
    header = ",".join(_CCS_COLUMNS + ["strength"])
    body = "\n".join(",".join(repr(float(v)) for v in row) for row in rows)
    return header + "\n" + body + "\n"


def _build_solar(payloads) -> str:
    lines = []
    for raw in payloads:
        for ln in raw.decode("utf-8").splitlines():
            fields = ln.split()
            if len(fields) != 13:
                continue  # count line or malformed row
            lines.append(fields)
    header = ",".join(name for name, _ in _SOLAR_ATTRIBUTES) + ",flares"
    out = [header]
    for fields in lines:
        flares = sum(int(v) for v in fields[10:13])
        out.append(",".join(fields[:10]) + f",{flares}")
    return "\n".join(out) + "\n"


_UCI = "https://archive.ics.uci.edu/ml/machine-learning-databases"

BENCHMARKS = {
    "ccs": _BenchmarkEntry(
        (f"{_UCI}/concrete/compressive/Concrete_Data.xls",),
        1030, _build_ccs),
    "solar": _BenchmarkEntry(
        (f"{_UCI}/solar-flare/flare.data1", f"{_UCI}/solar-flare/flare.data2"),
        1389, _build_solar),
    "cmb": _BenchmarkEntry((), 899, None),  # user-supplied file only
}

_SCHEMAS = {"ccs": _ccs_schema, "solar": _solar_schema, "cmb": _cmb_schema}


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def default_cache_dir() -> str:
    return os.environ.get("DPGLM_CACHE", os.path.join(os.getcwd(), "cache"))


def fetch_benchmarks(name: str, cache_dir=None) -> Dataset:
    """Load a benchmark dataset, downloading and caching it if needed.

    The cache layout is ``<cache>/<name>/data.csv`` plus ``checksum.txt``
    (sha256 of the CSV, pinned on first fetch and verified afterwards).
    The sky-survey dataset has no stable public source and must be placed
    in the cache by hand as ``cmb/data.csv`` with columns multipole,power.
    Row counts are validated against the documented sizes.
    """
    if name not in BENCHMARKS:
        raise ValueError(f"unknown benchmark {name!r}")
    entry = BENCHMARKS[name]
    fschema = _SCHEMAS[name]()
    cache_dir = cache_dir or default_cache_dir()
    folder = os.path.join(cache_dir, name)
    csv_path = os.path.join(folder, "data.csv")
    sum_path = os.path.join(folder, "checksum.txt")

    if not os.path.exists(csv_path):
        if not entry.urls:
            raise NetworkUnavailable(
                f"{name} must be supplied by hand at {csv_path}")
        payloads = []
        try:
            for url in entry.urls:
                with urllib.request.urlopen(url, timeout=60) as resp:
                    payloads.append(resp.read())
        except Exception as exc:
            raise NetworkUnavailable(f"cannot download {name}: {exc}")
        os.makedirs(folder, exist_ok=True)
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write(entry.build(payloads))
        with open(sum_path, "w", encoding="utf-8") as fh:
            fh.write(_sha256(csv_path) + "\n")

    if os.path.exists(sum_path):
        recorded = open(sum_path, "r", encoding="utf-8").read().strip()
        actual = _sha256(csv_path)
        if recorded and recorded != actual:
            raise ChecksumMismatch(f"{csv_path}: {actual} != recorded {recorded}")

    data = load_csv(csv_path, fschema)
    if data.n != entry.row_count:
        raise RowCountMismatch(
            f"{name}: expected {entry.row_count} rows, found {data.n}")
    return data
