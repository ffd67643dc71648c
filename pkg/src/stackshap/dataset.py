"""Survey extract ingestion, outcome construction and reproducible splits.

A :class:`Dataset` is an immutable bundle of a feature matrix, optional
binary labels and per-row metadata (country, achievement level, weight and
source row id).  Every transform returns a new dataset and preserves the
source row order.
"""

from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
from scipy import stats

from .errors import (
    EmptyClassError,
    EmptyDatasetError,
    ParseError,
    SchemaError,
    StratificationError,
    ValidationError,
)

KINDS = ("binary", "discrete", "continuous")
GROUPS = ("student_family", "school")
RESERVED_COLUMNS = ("country", "level")
MISSING_TOKENS = ("", "NA")
MISSING_LEVEL = -1

_NUMBER = re.compile(r"^[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?$")
_INTEGER = re.compile(r"^[+-]?\d+$")


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str
    group: str
    labels: Optional[dict] = None

    def __post_init__(self):
        if not self.name:
            raise SchemaError("feature names must be nonempty")
        if self.kind not in KINDS:
            raise SchemaError(f"feature {self.name!r}: kind must be one of {KINDS}, got {self.kind!r}")
        if self.group not in GROUPS:
            raise SchemaError(f"feature {self.name!r}: group must be one of {GROUPS}, got {self.group!r}")


@dataclass(frozen=True)
class FeatureSchema:
    features: tuple

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        seen = set()
        for spec in self.features:
            if spec.name in seen:
                raise SchemaError(f"duplicate feature name {spec.name!r}")
            if spec.name in RESERVED_COLUMNS:
                raise SchemaError(f"feature name {spec.name!r} collides with a reserved column")
            seen.add(spec.name)

    def __len__(self):
        return len(self.features)

    def __iter__(self):
        return iter(self.features)

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    @property
    def groups(self) -> list[str]:
        return [f.group for f in self.features]

    def index(self, name: str) -> int:
        for i, spec in enumerate(self.features):
            if spec.name == name:
                return i
        raise SchemaError(f"unknown feature {name!r}")

    def __getitem__(self, name: str) -> FeatureSpec:
        return self.features[self.index(name)]

    def select(self, names: Sequence[str]) -> "FeatureSchema":
        return FeatureSchema(tuple(self[n] for n in names))

    def for_group(self, group: str) -> "FeatureSchema":
        """Restrict to one covariate group; ``"all"`` returns the schema unchanged."""
        if group == "all":
            return self
        if group not in GROUPS:
            raise SchemaError(f"unknown covariate group {group!r}")
        return FeatureSchema(tuple(f for f in self.features if f.group == group))

    def to_dict(self) -> dict:
        out = []
        for f in self.features:
            item = {"name": f.name, "kind": f.kind, "group": f.group}
            if f.labels is not None:
                item["labels"] = dict(f.labels)
            out.append(item)
        return {"features": out}

    @classmethod
    def from_dict(cls, doc: dict) -> "FeatureSchema":
        if not isinstance(doc, dict) or "features" not in doc:
            raise SchemaError("schema document must be an object with a 'features' list")
        specs = []
        for item in doc["features"]:
            unknown = set(item) - {"name", "kind", "group", "labels"}
            if unknown:
                raise SchemaError(f"unknown schema field(s) {sorted(unknown)}")
            labels = item.get("labels")
            specs.append(
                FeatureSpec(
                    name=item.get("name", ""),
                    kind=item.get("kind", ""),
                    group=item.get("group", ""),
                    labels={str(k): str(v) for k, v in labels.items()} if labels else None,
                )
            )
        return cls(tuple(specs))

    @classmethod
    def load(cls, path) -> "FeatureSchema":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix plus labels and row metadata.

    ``X`` holds NaN where the source cell was missing; ``level`` holds
    ``MISSING_LEVEL`` for a missing achievement level.  ``row_id`` is the
    zero-based row position in the source file and survives every filter.
    """

    schema: FeatureSchema
    X: np.ndarray
    country: np.ndarray
    level: np.ndarray
    y: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None
    row_id: Optional[np.ndarray] = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim != 2:
            raise ValidationError(f"X must be two-dimensional, got shape {X.shape}")
        n, j = X.shape
        if j != len(self.schema):
            raise SchemaError(f"X has {j} columns but the schema lists {len(self.schema)} features")
        country = np.asarray(self.country, dtype=object)
        level = np.asarray(self.level, dtype=np.int64)
        if country.shape != (n,) or level.shape != (n,):
            raise ValidationError("country and level must have one entry per row")
        y = None
        if self.y is not None:
            y = np.asarray(self.y)
            if y.shape != (n,):
                raise ValidationError("y must have one entry per row")
            if not np.all((y == 0) | (y == 1)):
                raise ValidationError("y must be binary (0/1)")
            y = y.astype(np.int64)
        weights = np.ones(n) if self.weights is None else np.asarray(self.weights, dtype=np.float64)
        if weights.shape != (n,) or np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ValidationError("weights must be finite, nonnegative and one per row")
        row_id = np.arange(n) if self.row_id is None else np.asarray(self.row_id, dtype=np.int64)
        for col, spec in enumerate(self.schema):
            if spec.kind == "binary":
                v = X[:, col]
                bad = ~np.isnan(v) & (v != 0) & (v != 1)
                if bad.any():
                    r = int(np.flatnonzero(bad)[0])
                    raise ValidationError(
                        f"binary feature {spec.name!r} has value {v[r]!r} outside {{0, 1}} (row {int(row_id[r])})"
                    )
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "country", _frozen(country))
        object.__setattr__(self, "level", _frozen(level))
        object.__setattr__(self, "y", None if y is None else _frozen(y))
        object.__setattr__(self, "weights", _frozen(weights))
        object.__setattr__(self, "row_id", _frozen(row_id))

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def feature_names(self) -> list[str]:
        return self.schema.names

    @property
    def missing_mask(self) -> np.ndarray:
        return np.isnan(self.X)

    @property
    def incomplete_rows(self) -> np.ndarray:
        """Boolean mask of rows with at least one missing cell (features or level)."""
        return self.missing_mask.any(axis=1) | (self.level == MISSING_LEVEL)

    @property
    def positive_rate(self) -> float:
        if self.y is None:
            raise ValidationError("dataset has no outcome; call build_outcome first")
        return float(self.y.mean()) if self.n_rows else float("nan")

    def class_counts(self) -> tuple[int, int]:
        if self.y is None:
            raise ValidationError("dataset has no outcome; call build_outcome first")
        n1 = int(self.y.sum())
        return self.n_rows - n1, n1

    def take(self, indices) -> "Dataset":
        idx = np.asarray(indices)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        return Dataset(
            schema=self.schema,
            X=self.X[idx],
            country=self.country[idx],
            level=self.level[idx],
            y=None if self.y is None else self.y[idx],
            weights=self.weights[idx],
            row_id=self.row_id[idx],
        )

    def with_y(self, y) -> "Dataset":
        return Dataset(self.schema, self.X, self.country, self.level, y, self.weights, self.row_id)

    def select_features(self, names: Sequence[str]) -> "Dataset":
        cols = [self.schema.index(n) for n in names]
        return Dataset(
            self.schema.select(names), self.X[:, cols], self.country, self.level, self.y, self.weights, self.row_id
        )

    def for_group(self, group: str) -> "Dataset":
        return self.select_features(self.schema.for_group(group).names)

    def require_both_classes(self, what: str = "operation") -> None:
        n0, n1 = self.class_counts()
        if n0 == 0 or n1 == 0:
            raise EmptyClassError(f"{what} needs both outcome classes (got {n0} negatives, {n1} positives)")


def _parse_number(cell: str, row: int, column: str) -> float:
    s = cell.strip()
    if s in MISSING_TOKENS:
        return math.nan
    if not _NUMBER.match(s):
        raise ParseError(f"row {row}, column {column!r}: cannot parse {cell!r} as a number", row, column)
    return float(s)


def load_csv(path, schema: FeatureSchema) -> Dataset:
    """Read a preprocessed extract; header must be the schema names plus ``country`` and ``level``.

    Columns may appear in any order; the returned matrix follows schema order.
    Empty cells and ``NA`` are recorded as missing (NaN); nothing is imputed.
    """
    path = Path(path)
    if not path.exists():
        raise ParseError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        known = set(schema.names) | set(RESERVED_COLUMNS)
        for h in header:
            if h not in known:
                raise SchemaError(f"column {h!r} is not in the schema")
        if len(set(header)) != len(header):
            raise SchemaError("duplicate column in header")
        missing = [c for c in list(RESERVED_COLUMNS) + schema.names if c not in header]
        if missing:
            raise SchemaError(f"header lacks column(s): {', '.join(missing)}")
        pos = {h: i for i, h in enumerate(header)}
        feat_pos = [pos[n] for n in schema.names]
        rows_x, countries, levels = [], [], []
        for r, cells in enumerate(reader):
            if not cells or (len(cells) == 1 and not cells[0].strip()):
                continue
            if len(cells) != len(header):
                raise ParseError(f"row {r}: expected {len(header)} cells, found {len(cells)}", r)
            rows_x.append([_parse_number(cells[p], r, schema.names[k]) for k, p in enumerate(feat_pos)])
            countries.append(cells[pos["country"]].strip())
            lv = cells[pos["level"]].strip()
            if lv in MISSING_TOKENS:
                levels.append(MISSING_LEVEL)
            elif _INTEGER.match(lv) and int(lv) >= 0:
                levels.append(int(lv))
            else:
                raise ParseError(f"row {r}, column 'level': {lv!r} is not a nonnegative integer", r, "level")
    X = np.array(rows_x, dtype=np.float64).reshape(len(rows_x), len(schema))
    return Dataset(schema=schema, X=X, country=np.array(countries, dtype=object), level=np.array(levels))


def _format_number(v: float) -> str:
    if math.isnan(v):
        return "NA"
    if v == int(v) and abs(v) < 1e15 and not (v == 0 and math.copysign(1.0, v) < 0):
        return str(int(v))
    return repr(float(v))


def write_csv(d: Dataset, path) -> None:
    """Write ``d`` in the format :func:`load_csv` reads; floats use shortest round-trip repr."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(RESERVED_COLUMNS) + d.feature_names)
        for i in range(d.n_rows):
            lv = "NA" if d.level[i] == MISSING_LEVEL else str(int(d.level[i]))
            w.writerow([d.country[i], lv] + [_format_number(v) for v in d.X[i]])


def build_outcome(d: Dataset, level_pos: int, level_neg: int) -> Dataset:
    """Keep rows at the two levels; y = 1 for ``level_pos`` (the lower level), 0 for ``level_neg``."""
    if level_pos == level_neg:
        raise ValidationError("level_pos and level_neg must differ")
    for lv in (level_pos, level_neg):
        if not np.any(d.level == lv):
            raise EmptyClassError(f"level {lv} does not occur in the data")
    keep = (d.level == level_pos) | (d.level == level_neg)
    sub = d.take(keep)
    return sub.with_y((sub.level == level_pos).astype(np.int64))


@dataclass(frozen=True)
class MissingReport:
    n_before: int
    rows: tuple = ()  # (source row id, tuple of missing column names)

    @property
    def n_dropped(self) -> int:
        return len(self.rows)

    @property
    def drop_rate(self) -> float:
        return self.n_dropped / self.n_before if self.n_before else 0.0

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row_index", "missing_columns"])
            for rid, cols in self.rows:
                w.writerow([rid, ";".join(cols)])


def drop_missing(d: Dataset) -> tuple[Dataset, MissingReport]:
    bad = d.incomplete_rows
    names = d.feature_names
    rows = []
    for i in np.flatnonzero(bad):
        cols = [names[c] for c in np.flatnonzero(np.isnan(d.X[i]))]
        if d.level[i] == MISSING_LEVEL:
            cols.append("level")
        rows.append((int(d.row_id[i]), tuple(cols)))
    report = MissingReport(n_before=d.n_rows, rows=tuple(rows))
    if d.n_rows and bad.all():
        raise EmptyDatasetError(f"all {d.n_rows} rows have missing values")
    return d.take(~bad), report


def _labels(d) -> np.ndarray:
    if isinstance(d, Dataset):
        if d.y is None:
            raise ValidationError("dataset has no outcome; call build_outcome first")
        return d.y
    return np.asarray(d).astype(np.int64)


def train_test_split(d: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified split; per-class test counts use largest-remainder rounding of ``N * test_fraction``."""
    if not 0 < test_fraction < 1:
        raise ValidationError("test_fraction must lie strictly between 0 and 1")
    y = _labels(d)
    n = len(y)
    n_test = int(round(n * test_fraction))
    classes = [np.flatnonzero(y == c) for c in (0, 1)]
    quota = [len(c) * test_fraction for c in classes]
    take = [int(math.floor(q)) for q in quota]
    for c in sorted((0, 1), key=lambda c: (-(quota[c] - take[c]), c))[: max(0, n_test - sum(take))]:
        take[c] += 1
    for c, members in enumerate(classes):
        if take[c] == 0 or take[c] == len(members):
            raise StratificationError(f"a {test_fraction:g} split would leave class {c} absent from one part")
    rng = np.random.default_rng(seed)
    test_mask = np.zeros(n, dtype=bool)
    for c, members in enumerate(classes):
        test_mask[rng.permutation(members)[: take[c]]] = True
    return d.take(~test_mask), d.take(test_mask)


@dataclass(frozen=True, eq=False)
class FoldAssignment:
    fold_of_row: np.ndarray
    k: int
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "fold_of_row", _frozen(np.asarray(self.fold_of_row, dtype=np.int64)))

    @property
    def n_rows(self) -> int:
        return len(self.fold_of_row)

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of_row == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of_row != fold)

    def splits(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        for f in range(self.k):
            yield self.train_indices(f), self.test_indices(f)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.fold_of_row, minlength=self.k)


def stratified_kfold(d, k: int, seed: int) -> FoldAssignment:
    """Seeded per-class shuffle followed by round-robin fold allocation.

    Negatives continue the round-robin where positives stopped, so fold
    sizes differ by at most one.  ``d`` may be a Dataset or a label vector.
    """
    if k < 2:
        raise StratificationError("k must be at least 2")
    y = _labels(d)
    rng = np.random.default_rng(seed)
    fold = np.empty(len(y), dtype=np.int64)
    offset = 0
    for c in (1, 0):
        members = np.flatnonzero(y == c)
        if len(members) < k:
            raise StratificationError(f"class {c} has {len(members)} rows, fewer than k={k}")
        fold[rng.permutation(members)] = (np.arange(len(members)) + offset) % k
        offset = (offset + len(members)) % k
    return FoldAssignment(fold, k, seed)


def undersample_majority(d: Dataset, seed: int) -> Dataset:
    d.require_both_classes("undersampling")
    n0, n1 = d.class_counts()
    if n0 == n1:
        return d
    majority = 1 if n1 > n0 else 0
    rng = np.random.default_rng(seed)
    members = np.flatnonzero(d.y == majority)
    drop = rng.choice(members, size=len(members) - min(n0, n1), replace=False)
    keep = np.ones(d.n_rows, dtype=bool)
    keep[drop] = False
    return d.take(keep)


@dataclass(frozen=True)
class GroupDifference:
    feature: str
    mean_y1: float
    mean_y0: float
    difference: float
    statistic: float
    p_value: float
    test: str
    stars: str


def significance_stars(p: float) -> str:
    if p is None or not np.isfinite(p):
        return ""
    if p <= 0.01:
        return "***"
    if p <= 0.05:
        return "**"
    if p <= 0.10:
        return "*"
    return ""


def welch_test(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """Two-sided Welch t-test of mean(a) - mean(b); NaN when both variances vanish."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) < 2 or len(b) < 2:
        return math.nan, math.nan
    if np.var(a) == 0 and np.var(b) == 0:
        return math.nan, math.nan
    res = stats.ttest_ind(a, b, equal_var=False)
    return float(res.statistic), float(res.pvalue)


def two_proportion_ztest(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """Pooled two-proportion z-test of mean(a) - mean(b)."""
    n1, n0 = len(a), len(b)
    if n1 == 0 or n0 == 0:
        return math.nan, math.nan
    p1, p0 = float(np.mean(a)), float(np.mean(b))
    pooled = (p1 * n1 + p0 * n0) / (n1 + n0)
    se = math.sqrt(pooled * (1 - pooled) * (1 / n1 + 1 / n0))
    if se == 0:
        return math.nan, math.nan
    z = (p1 - p0) / se
    return z, float(2 * stats.norm.sf(abs(z)))


def group_difference_table(d: Dataset) -> list[GroupDifference]:
    """Class-conditional means with significance stars.

    ``difference = mean_y1 - mean_y0``: the lower-achieving group (y = 1)
    minus the higher one, which is the reporting convention
    (e.g. primary repetition 0.33 vs 0.09 gives +0.24).
    """
    if d.y is None:
        raise ValidationError("group differences need an outcome")
    d.require_both_classes("group differences")
    out = []
    g1 = d.y == 1
    for col, spec in enumerate(d.schema):
        a, b = d.X[g1, col], d.X[~g1, col]
        if spec.kind == "binary":
            stat, p = two_proportion_ztest(a, b)
            test = "two_proportion_z"
        else:
            stat, p = welch_test(a, b)
            test = "welch_t"
        m1, m0 = float(a.mean()), float(b.mean())
        out.append(GroupDifference(spec.name, m1, m0, m1 - m0, stat, p, test, significance_stars(p)))
    return out


def write_group_difference_csv(rows: Sequence[GroupDifference], path, n_y1: int = None, n_y0: int = None) -> None:
    """Columns: higher level (y=0), lower level (y=1), difference."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature", "mean_y0", "mean_y1", "difference", "stars", "statistic", "p_value", "test"])
        for r in rows:
            w.writerow(
                [r.feature, _fmt(r.mean_y0), _fmt(r.mean_y1), _fmt(r.difference), r.stars,
                 _fmt(r.statistic), _fmt(r.p_value), r.test]
            )
        if n_y1 is not None:
            w.writerow(["N", n_y0, n_y1, "", "", "", "", ""])


def _fmt(v: float) -> str:
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))
