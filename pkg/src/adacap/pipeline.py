"""CSV ingestion, column preprocessing rules and seeded train/test splits.

Column rules, decided on training rows only:

* one distinct value: dropped;
* two distinct values: a single 0/1 column. Numeric columns mark the larger
  value, other columns mark everything that differs from the most frequent
  value;
* three to ``max_modalities`` distinct values: one-hot;
* more distinct values: numeric columns are mean-imputed and standardised,
  other columns are dropped.

Missing cells count as their own category in the first three rules.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import ConfigError, SchemaError

DROP = "drop"
BINARY = "binary"
ONEHOT = "onehot"
NUMERIC = "numeric"

MISSING = "__missing__"
NA_VALUES = ["", "NA", "NaN"]
REGRESSION = "regression"
CLASSIFICATION = "classification"


@dataclass
class ColumnRule:
    name: str
    kind: str
    reference: object = None  # binary: value compared against
    positive_if_equal: bool = True  # binary: 1 when equal to reference (numeric max) or when different (mode)
    values: list = field(default_factory=list)  # one-hot categories in output order
    mean: float = 0.0
    std: float = 1.0

    @property
    def width(self) -> int:
        return {DROP: 0, BINARY: 1, ONEHOT: len(self.values), NUMERIC: 1}[self.kind]

    def to_dict(self) -> dict:
        out = {"name": self.name, "kind": self.kind}
        if self.kind == BINARY:
            out.update(reference=self.reference, positive_if_equal=self.positive_if_equal)
        elif self.kind == ONEHOT:
            out["values"] = self.values
        elif self.kind == NUMERIC:
            out.update(mean=self.mean, std=self.std)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> ColumnRule:
        return cls(**data)


@dataclass
class PipelineSpec:
    target: str
    task: str
    columns: list[ColumnRule]
    target_mean: float = 0.0
    target_std: float = 1.0
    classes: list | None = None  # classification: [negative, positive]
    max_modalities: int = 12

    @property
    def n_features(self) -> int:
        return sum(c.width for c in self.columns)

    def feature_names(self) -> list[str]:
        names = []
        for c in self.columns:
            if c.kind == ONEHOT:
                names += [f"{c.name}={v}" for v in c.values]
            elif c.kind != DROP:
                names.append(c.name)
        return names

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "task": self.task,
            "columns": [c.to_dict() for c in self.columns],
            "target_mean": self.target_mean,
            "target_std": self.target_std,
            "classes": self.classes,
            "max_modalities": self.max_modalities,
        }

    @classmethod
    def from_dict(cls, data: dict) -> PipelineSpec:
        data = dict(data)
        data["columns"] = [ColumnRule.from_dict(c) for c in data["columns"]]
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def inverse_target(self, y_std) -> np.ndarray:
        """Map standardised regression outputs back to target units."""
        return np.asarray(y_std) * self.target_std + self.target_mean


def read_csv(path) -> pd.DataFrame:
    """Comma-separated, header row, UTF-8; "", "NA" and "NaN" are missing."""
    try:
        return pd.read_csv(path, keep_default_na=False, na_values=NA_VALUES, encoding="utf-8")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc


@dataclass
class DatasetManifest:
    path: Path
    target_column: str
    task: str
    name: str

    @classmethod
    def load(cls, manifest_path) -> DatasetManifest:
        manifest_path = Path(manifest_path)
        data = json.loads(manifest_path.read_text())
        missing = {"path", "target_column", "task"} - set(data)
        if missing:
            raise ConfigError(f"dataset manifest lacks {sorted(missing)}")
        if data["task"] not in (REGRESSION, CLASSIFICATION):
            raise ConfigError(f"unknown task {data['task']!r}")
        path = Path(data["path"])
        if not path.is_absolute():
            path = manifest_path.parent / path
        return cls(path, data["target_column"], data["task"], data.get("name", path.stem))


def _keys(series: pd.Series) -> list:
    """Hashable, JSON-friendly cell keys with missing mapped to a sentinel."""
    numeric = pd.api.types.is_numeric_dtype(series)
    out = []
    for v in series.tolist():
        if v is None or (isinstance(v, float) and np.isnan(v)):
            out.append(MISSING)
        else:
            out.append(float(v) if numeric else str(v))
    return out


def _sort_key(v):
    # numbers before strings, the missing sentinel last
    return (v == MISSING, isinstance(v, str), v if not isinstance(v, str) else 0, v if isinstance(v, str) else "")


def _column_rule(name: str, series: pd.Series, max_modalities: int) -> ColumnRule:
    keys = _keys(series)
    counts = Counter(keys)
    n_j = len(counts)
    numeric = pd.api.types.is_numeric_dtype(series)
    if n_j <= 1:
        return ColumnRule(name, DROP)
    if n_j == 2:
        values = sorted(counts, key=_sort_key)
        finite = [v for v in values if v != MISSING]
        if numeric and finite:
            return ColumnRule(name, BINARY, reference=max(finite), positive_if_equal=True)
        top = max(counts.values())
        mode = next(v for v in values if counts[v] == top)
        return ColumnRule(name, BINARY, reference=mode, positive_if_equal=False)
    if n_j <= max_modalities:
        return ColumnRule(name, ONEHOT, values=sorted(counts, key=_sort_key))
    if numeric:
        vals = series.to_numpy(dtype=np.float64)
        vals = vals[~np.isnan(vals)]
        std = float(vals.std())
        return ColumnRule(name, NUMERIC, mean=float(vals.mean()), std=std if std > 0 else 1.0)
    return ColumnRule(name, DROP)


def drop_missing_target(table: pd.DataFrame, target: str) -> pd.DataFrame:
    if target not in table.columns:
        raise SchemaError(f"target column {target!r} not found")
    return table[table[target].notna()].reset_index(drop=True)


def fit_pipeline(table: pd.DataFrame, target: str, task: str = REGRESSION, rows=None, max_modalities: int = 12):
    """Decide a rule per feature column from ``table`` (restricted to ``rows``)."""
    if task not in (REGRESSION, CLASSIFICATION):
        raise ConfigError(f"unknown task {task!r}")
    if max_modalities < 2:
        raise ConfigError("max_modalities must be at least 2")
    if rows is not None:
        table = table.iloc[np.asarray(rows)]
    table = drop_missing_target(table, target)
    if len(table) == 0:
        raise ConfigError("no rows with a target value")
    columns = [
        _column_rule(str(name), table[name], max_modalities) for name in table.columns if name != target
    ]
    spec = PipelineSpec(target=target, task=task, columns=columns, max_modalities=max_modalities)
    y = table[target]
    if task == REGRESSION:
        if not pd.api.types.is_numeric_dtype(y):
            raise ConfigError("regression target must be numeric")
        values = y.to_numpy(dtype=np.float64)
        std = float(values.std())
        if std == 0:
            raise ConfigError("regression target has zero variance")
        spec.target_mean, spec.target_std = float(values.mean()), std
    else:
        classes = sorted(set(_keys(y)), key=_sort_key)
        if len(classes) != 2:
            raise ConfigError(f"classification target needs exactly 2 classes, found {len(classes)}")
        # the larger value (numeric) or the later label (text) is the positive class
        spec.classes = classes
    return spec


def _encode_column(rule: ColumnRule, series: pd.Series) -> np.ndarray:
    if rule.kind == NUMERIC:
        vals = pd.to_numeric(series, errors="coerce").to_numpy(dtype=np.float64)
        vals = np.where(np.isnan(vals), rule.mean, vals)
        return ((vals - rule.mean) / rule.std)[:, None]
    keys = _keys(series)
    if rule.kind == BINARY:
        equal = np.array([k == rule.reference for k in keys])
        return (equal if rule.positive_if_equal else ~equal).astype(np.float64)[:, None]
    # unseen categories leave the block all zero
    index = {v: i for i, v in enumerate(rule.values)}
    out = np.zeros((len(keys), len(rule.values)))
    for row, k in enumerate(keys):
        if k in index:
            out[row, index[k]] = 1.0
    return out


def transform(spec: PipelineSpec, table: pd.DataFrame):
    """Feature matrix and target vector (``None`` when the target column is absent).

    Rows with a missing target are removed when the target column is present.
    """
    has_target = spec.target in table.columns
    if has_target:
        table = drop_missing_target(table, spec.target)
    absent = [c.name for c in spec.columns if c.kind != DROP and c.name not in table.columns]
    if absent:
        raise SchemaError(f"columns missing from table: {absent}")
    blocks = [_encode_column(c, table[c.name]) for c in spec.columns if c.kind != DROP]
    x = np.hstack(blocks) if blocks else np.zeros((len(table), 0))
    if not has_target:
        return x, None
    if spec.task == REGRESSION:
        y = (table[spec.target].to_numpy(dtype=np.float64) - spec.target_mean) / spec.target_std
    else:
        keys = _keys(table[spec.target])
        unknown = set(keys) - set(spec.classes)
        if unknown:
            raise SchemaError(f"unseen target classes {sorted(map(str, unknown))}")
        y = np.array([float(k == spec.classes[1]) for k in keys])
    return x, y


def split(n_rows: int, ratio: float = 0.8, seed: int = 0):
    """Seeded shuffle into sorted train and test index arrays."""
    if n_rows < 5:
        raise ConfigError(f"need at least 5 rows to split, got {n_rows}")
    if not 0 < ratio < 1:
        raise ConfigError("ratio must lie in (0, 1)")
    n_train = int(round(ratio * n_rows))
    n_train = min(max(n_train, 1), n_rows - 1)
    order = np.random.default_rng(seed).permutation(n_rows)
    return np.sort(order[:n_train]), np.sort(order[n_train:])
