"""Tabular datasets: schema, preprocessing, splits, CSV I/O and the outlier simulator.

Records are stored column-wise (one float matrix for continuous features, one
integer matrix of category indices, one label vector); :meth:`Dataset.record`
gives a row view when a single record is needed.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import (
    DatasetTooSmall,
    ParseError,
    SchemaMismatch,
    UnknownFeature,
    ZeroVarianceFeature,
)

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"

TRAIN, VALIDATION, TEST = "train", "validation", "test"
SPLIT_FRACTIONS = (0.56, 0.14, 0.30)

CLIP_RANGE = 3.0


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str
    categories: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in (CONTINUOUS, CATEGORICAL):
            raise SchemaMismatch(f"feature {self.name!r}: unknown kind {self.kind!r}")
        object.__setattr__(self, "categories", tuple(str(c) for c in self.categories))


@dataclass(frozen=True)
class Schema:
    features: tuple[FeatureSpec, ...]
    label_name: str
    label_classes: tuple[str, str]

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        object.__setattr__(self, "label_classes", tuple(str(c) for c in self.label_classes))
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise SchemaMismatch("feature names must be unique")
        if self.label_name in names:
            raise SchemaMismatch("label column cannot also be a feature")
        for f in self.features:
            if f.kind == CATEGORICAL:
                if not f.categories:
                    raise SchemaMismatch(f"categorical feature {f.name!r} has no categories")
                if len(set(f.categories)) != len(f.categories):
                    raise SchemaMismatch(f"categorical feature {f.name!r} has duplicate categories")
        if len(self.label_classes) != 2 or self.label_classes[0] == self.label_classes[1]:
            raise SchemaMismatch("exactly two distinct label classes are required")

    @property
    def continuous(self) -> tuple[FeatureSpec, ...]:
        return tuple(f for f in self.features if f.kind == CONTINUOUS)

    @property
    def categorical(self) -> tuple[FeatureSpec, ...]:
        return tuple(f for f in self.features if f.kind == CATEGORICAL)

    @property
    def n_features(self) -> int:
        return len(self.features)

    def feature(self, name: str) -> FeatureSpec:
        for f in self.features:
            if f.name == name:
                return f
        raise UnknownFeature(name)

    def to_dict(self) -> dict:
        feats = []
        for f in self.features:
            entry = {"name": f.name, "kind": f.kind}
            if f.kind == CATEGORICAL:
                entry["categories"] = list(f.categories)
            feats.append(entry)
        return {"features": feats, "label": {"name": self.label_name, "classes": list(self.label_classes)}}

    @classmethod
    def from_dict(cls, d: dict) -> "Schema":
        feats = tuple(
            FeatureSpec(f["name"], f["kind"], tuple(f.get("categories", ()))) for f in d["features"]
        )
        return cls(feats, d["label"]["name"], tuple(d["label"]["classes"]))


@dataclass
class Record:
    continuous_values: np.ndarray
    categorical_values: np.ndarray
    label: int
    is_injected_outlier: bool = False


@dataclass
class Dataset:
    """A labelled mixed-type table.

    ``continuous`` has shape (n, #continuous) in schema order of the continuous
    features, ``categorical`` has shape (n, #categorical) holding category
    indices, ``labels`` holds class indices into ``schema.label_classes``.
    ``split`` optionally tags every row with train/validation/test.
    """

    schema: Schema
    continuous: np.ndarray
    categorical: np.ndarray
    labels: np.ndarray
    is_outlier: np.ndarray | None = None
    split: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.labels)
        self.continuous = np.asarray(self.continuous, dtype=float).reshape(n, len(self.schema.continuous))
        self.categorical = np.asarray(self.categorical, dtype=np.int64).reshape(n, len(self.schema.categorical))
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.is_outlier is None:
            self.is_outlier = np.zeros(n, dtype=bool)
        self.is_outlier = np.asarray(self.is_outlier, dtype=bool)
        if self.split is not None:
            self.split = np.asarray(self.split, dtype="<U10")
            if self.split.shape != (n,):
                raise SchemaMismatch("split tags must have one entry per record")
        if self.is_outlier.shape != (n,):
            raise SchemaMismatch("outlier flags must have one entry per record")
        if n and (self.labels.min() < 0 or self.labels.max() > 1):
            raise SchemaMismatch("label index out of range")
        for j, f in enumerate(self.schema.categorical):
            col = self.categorical[:, j]
            if n and (col.min() < 0 or col.max() >= len(f.categories)):
                raise SchemaMismatch(f"category index out of range for {f.name!r}")

    @property
    def n(self) -> int:
        return len(self.labels)

    def __len__(self) -> int:
        return self.n

    def record(self, i: int) -> Record:
        return Record(
            self.continuous[i].copy(),
            self.categorical[i].copy(),
            int(self.labels[i]),
            bool(self.is_outlier[i]),
        )

    def rows(self) -> Iterator[Record]:
        for i in range(self.n):
            yield self.record(i)

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        if index.dtype == bool:
            index = np.flatnonzero(index)
        return Dataset(
            self.schema,
            self.continuous[index],
            self.categorical[index],
            self.labels[index],
            self.is_outlier[index],
            None if self.split is None else self.split[index],
        )

    def with_split(self, assignment: "SplitAssignment") -> "Dataset":
        if len(assignment.tags) != self.n:
            raise SchemaMismatch("split assignment length does not match dataset")
        return replace(self, split=assignment.tags.copy())

    def part(self, tag: str) -> "Dataset":
        if self.split is None:
            raise ValueError("dataset has no split assignment")
        return self.subset(self.split == tag)

    def fit_mask(self) -> np.ndarray:
        """Rows used to fit preprocessing: the train split when present, else everything."""
        if self.split is None:
            return np.ones(self.n, dtype=bool)
        return self.split == TRAIN


@dataclass(frozen=True)
class SplitAssignment:
    tags: np.ndarray
    fractions: tuple[float, float, float] = SPLIT_FRACTIONS
    stratified_on_label: bool = True

    def indices(self, tag: str) -> np.ndarray:
        return np.flatnonzero(self.tags == tag)

    def sizes(self) -> dict[str, int]:
        return {t: int(np.sum(self.tags == t)) for t in (TRAIN, VALIDATION, TEST)}


@dataclass(frozen=True)
class StandardizationParams:
    names: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray
    clip: float = CLIP_RANGE

    def apply(self, dataset: Dataset) -> Dataset:
        z = (dataset.continuous - self.mean) / self.std
        return replace(dataset, continuous=np.clip(z, -self.clip, self.clip))


def standardize(dataset: Dataset, fit_mask: np.ndarray | None = None) -> tuple[Dataset, StandardizationParams]:
    """Z-score continuous features with train-split moments, then clip to [-3, 3]."""
    mask = dataset.fit_mask() if fit_mask is None else np.asarray(fit_mask, dtype=bool)
    if not mask.any():
        raise DatasetTooSmall("standardization needs a non-empty fit split")
    fit = dataset.continuous[mask]
    mean = fit.mean(axis=0)
    std = fit.std(axis=0)
    for name, s in zip((f.name for f in dataset.schema.continuous), std):
        if not s > 0:
            raise ZeroVarianceFeature(name)
    params = StandardizationParams(tuple(f.name for f in dataset.schema.continuous), mean, std)
    return params.apply(dataset), params


def _largest_remainder(targets: np.ndarray, total: int) -> np.ndarray:
    base = np.floor(targets).astype(int)
    short = total - base.sum()
    if short > 0:
        order = np.argsort(-(targets - base), kind="stable")
        base[order[:short]] += 1
    return base


def split(dataset: Dataset, seed, fractions: Sequence[float] = SPLIT_FRACTIONS) -> SplitAssignment:
    """Stratified train/validation/test assignment, deterministic in ``seed``."""
    n = dataset.n
    if n < 10:
        raise DatasetTooSmall(f"need at least 10 records to split, got {n}")
    fractions = tuple(float(f) for f in fractions)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    classes = [np.flatnonzero(dataset.labels == c) for c in (0, 1)]
    counts = np.array([len(ix) for ix in classes], dtype=float)
    train_c = _largest_remainder(counts * fractions[0], n_train)
    val_c = _largest_remainder(counts * fractions[1], n_val)
    rng = np.random.default_rng(seed)
    tags = np.empty(n, dtype="<U10")
    for ix, nt, nv in zip(classes, train_c, val_c):
        perm = rng.permutation(ix)
        tags[perm[:nt]] = TRAIN
        tags[perm[nt:nt + nv]] = VALIDATION
        tags[perm[nt + nv:]] = TEST
    return SplitAssignment(tags, fractions, True)


def quantile_bin(dataset: Dataset, feature_names: Sequence[str], n_bins: int = 5) -> Dataset:
    """Replace continuous features by categorical quantile bins fitted on the train split.

    Duplicate quantile edges are merged, so a feature may end up with fewer
    than ``n_bins`` categories.
    """
    names = list(feature_names)
    if not names:
        return dataset
    cont_names = [f.name for f in dataset.schema.continuous]
    for name in names:
        if name not in cont_names:
            raise UnknownFeature(name)
    mask = dataset.fit_mask()
    new_features = []
    binned: dict[str, tuple[np.ndarray, int]] = {}
    for f in dataset.schema.features:
        if f.name not in names:
            new_features.append(f)
            continue
        col = dataset.continuous[:, cont_names.index(f.name)]
        fit = col[mask]
        qs = np.quantile(fit, np.linspace(0, 1, n_bins + 1)[1:-1])
        inner = np.unique(qs)
        inner = inner[(inner > fit.min()) & (inner < fit.max())]
        codes = np.searchsorted(inner, col, side="left")
        k = len(inner) + 1
        binned[f.name] = (codes, k)
        new_features.append(FeatureSpec(f.name, CATEGORICAL, tuple(f"q{b + 1}" for b in range(k))))
    schema = Schema(tuple(new_features), dataset.schema.label_name, dataset.schema.label_classes)
    cont = [dataset.continuous[:, cont_names.index(f.name)] for f in schema.continuous]
    old_cat = [f.name for f in dataset.schema.categorical]
    cat = []
    for f in schema.categorical:
        if f.name in binned:
            cat.append(binned[f.name][0])
        else:
            cat.append(dataset.categorical[:, old_cat.index(f.name)])
    n = dataset.n
    return Dataset(
        schema,
        np.column_stack(cont) if cont else np.zeros((n, 0)),
        np.column_stack(cat) if cat else np.zeros((n, 0), dtype=np.int64),
        dataset.labels,
        dataset.is_outlier,
        dataset.split,
    )


# --------------------------------------------------------------------------
# Controlled outlier-injection simulator
# --------------------------------------------------------------------------

SIM_N = 6000
SIM_N_OUTLIERS = 120
SIM_N_CONTINUOUS = 6
SIM_INLIER_MEANS = (-0.8, 0.8)
SIM_OUTLIER_MEAN = 2.4
SIM_COMMON_CATEGORIES = ("A", "B", "C", "D")
SIM_RARE_CATEGORIES = ("Z", "Q", "R")
SIM_RARE_PROB = 0.9

# Logistic label model. Coefficients were chosen so that a non-private
# Naive Bayes synthesizer reaches a test AUROC of roughly 0.77.
SIM_INTERCEPT = -0.3
SIM_CONT_COEF = np.array([0.33, -0.27, 0.21, 0.18, -0.15, 0.12])
SIM_CAT_EFFECTS = (
    {"A": 0.0, "B": 0.75, "C": -0.75, "D": 1.5, "Z": 1.85, "Q": 1.85, "R": 1.85},
    {"A": 0.0, "B": -0.9, "C": 0.55, "D": 1.1, "Z": -1.85, "Q": -1.85, "R": -1.85},
    {"A": 0.0, "B": 0.55, "C": 1.1, "D": -0.55, "Z": 0.9, "Q": 0.9, "R": 0.9},
)


def simulation_schema() -> Schema:
    cats = SIM_COMMON_CATEGORIES + SIM_RARE_CATEGORIES
    feats = [FeatureSpec(f"x{j + 1}", CONTINUOUS) for j in range(SIM_N_CONTINUOUS)]
    feats += [FeatureSpec(f"c{j + 1}", CATEGORICAL, cats) for j in range(len(SIM_CAT_EFFECTS))]
    return Schema(tuple(feats), "y", ("0", "1"))


def simulate_dataset(seed) -> Dataset:
    """Mixed-type dataset with 2% injected outliers.

    Inliers: all six continuous features share one mixture component with mean
    -0.8 or +0.8 (equal weights, unit variance); each categorical feature is
    uniform over A-D. Outliers: continuous mean 2.4, and each categorical
    feature takes one of the rare values Z/Q/R with probability 0.9 (else a
    common value). Labels come from a fixed logistic model over both kinds.
    """
    rng = np.random.default_rng(seed)
    schema = simulation_schema()
    n, n_out, d = SIM_N, SIM_N_OUTLIERS, SIM_N_CONTINUOUS
    n_in = n - n_out
    n_common = len(SIM_COMMON_CATEGORIES)

    comp = rng.integers(0, 2, size=n_in)
    centers = np.asarray(SIM_INLIER_MEANS)[comp]
    x_in = centers[:, None] + rng.standard_normal((n_in, d))
    x_out = SIM_OUTLIER_MEAN + rng.standard_normal((n_out, d))

    n_cat = len(SIM_CAT_EFFECTS)
    c_in = rng.integers(0, n_common, size=(n_in, n_cat))
    rare = rng.random((n_out, n_cat)) < SIM_RARE_PROB
    rare_code = n_common + rng.integers(0, len(SIM_RARE_CATEGORIES), size=(n_out, n_cat))
    common_code = rng.integers(0, n_common, size=(n_out, n_cat))
    c_out = np.where(rare, rare_code, common_code)

    x = np.vstack([x_in, x_out])
    c = np.vstack([c_in, c_out])
    flags = np.r_[np.zeros(n_in, dtype=bool), np.ones(n_out, dtype=bool)]

    cats = schema.categorical[0].categories
    logit = SIM_INTERCEPT + x @ SIM_CONT_COEF
    for j, effects in enumerate(SIM_CAT_EFFECTS):
        table = np.array([effects[k] for k in cats])
        logit = logit + table[c[:, j]]
    y = (rng.random(n) < 1.0 / (1.0 + np.exp(-logit))).astype(np.int64)

    perm = rng.permutation(n)
    return Dataset(schema, x[perm], c[perm], y[perm], flags[perm])


# --------------------------------------------------------------------------
# CSV + JSON schema I/O
# --------------------------------------------------------------------------

@dataclass
class SchemaDecl:
    """Declared CSV layout. ``open`` allows unseen categories to be appended."""

    schema_dict: dict
    open: bool = False
    outlier_flag: str | None = None
    split_column: str | None = None

    @classmethod
    def load(cls, source) -> "SchemaDecl":
        if isinstance(source, SchemaDecl):
            return source
        if isinstance(source, dict):
            d = source
        else:
            with open(source, encoding="utf-8") as fh:
                d = json.load(fh)
        return cls(d, bool(d.get("open", False)), d.get("outlier_flag"), d.get("split_column"))


def _atomic_write_text(path: Path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def schema_path_for(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_name(p.stem + ".schema.json")


def load_csv(path, schema_decl) -> Dataset:
    decl = SchemaDecl.load(schema_decl)
    d = decl.schema_dict
    feats_decl = d["features"]
    label_name = d["label"]["name"]
    label_classes = [str(c) for c in d["label"].get("classes", [])]
    extra_cols = [c for c in (decl.outlier_flag, decl.split_column) if c]
    expected = [f["name"] for f in feats_decl] + [label_name] + extra_cols

    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaMismatch(f"{path}: empty file") from None
        if sorted(header) != sorted(expected) or len(set(header)) != len(header):
            raise SchemaMismatch(f"{path}: header {header} does not match declared columns {expected}")
        col = {name: header.index(name) for name in header}
        rows = list(reader)

    categories = {f["name"]: [str(c) for c in f.get("categories", [])] for f in feats_decl if f["kind"] == CATEGORICAL}
    cont_names = [f["name"] for f in feats_decl if f["kind"] == CONTINUOUS]
    cat_names = [f["name"] for f in feats_decl if f["kind"] == CATEGORICAL]
    unknown = [f["kind"] for f in feats_decl if f["kind"] not in (CONTINUOUS, CATEGORICAL)]
    if unknown:
        raise SchemaMismatch(f"unknown feature kind(s) {unknown}")

    n = len(rows)
    cont = np.empty((n, len(cont_names)))
    cat = np.empty((n, len(cat_names)), dtype=np.int64)
    labels = np.empty(n, dtype=np.int64)
    flags = np.zeros(n, dtype=bool)
    split_tags = np.empty(n, dtype="<U10") if decl.split_column else None
    for r, row in enumerate(rows):
        line = r + 2
        if len(row) != len(header):
            raise ParseError(line, "*", f"expected {len(header)} cells, found {len(row)}")
        for j, name in enumerate(cont_names):
            cell = row[col[name]].strip()
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(line, name, f"not a number: {cell!r}") from None
            if not math.isfinite(v):
                raise ParseError(line, name, f"non-finite value {cell!r}")
            cont[r, j] = v
        for j, name in enumerate(cat_names):
            cell = row[col[name]].strip()
            cats = categories[name]
            if cell not in cats:
                if not decl.open:
                    raise SchemaMismatch(f"line {line}: category {cell!r} not declared for {name!r}")
                cats.append(cell)
            cat[r, j] = cats.index(cell)
        cell = row[col[label_name]].strip()
        if cell not in label_classes:
            if not decl.open or len(label_classes) >= 2:
                raise SchemaMismatch(f"line {line}: label {cell!r} not among {label_classes}")
            label_classes.append(cell)
        labels[r] = label_classes.index(cell)
        if decl.outlier_flag:
            cell = row[col[decl.outlier_flag]].strip().lower()
            if cell not in ("0", "1", "true", "false"):
                raise ParseError(line, decl.outlier_flag, f"not a boolean: {cell!r}")
            flags[r] = cell in ("1", "true")
        if split_tags is not None:
            cell = row[col[decl.split_column]].strip()
            if cell not in (TRAIN, VALIDATION, TEST):
                raise ParseError(line, decl.split_column, f"unknown split tag {cell!r}")
            split_tags[r] = cell

    feats = tuple(
        FeatureSpec(f["name"], f["kind"], tuple(categories.get(f["name"], ()))) for f in feats_decl
    )
    schema = Schema(feats, label_name, tuple(label_classes))
    return Dataset(schema, cont, cat, labels, flags, split_tags)


def write_csv(dataset: Dataset, path, schema_path=None, *, include_flags: bool = False,
              include_split: bool = False) -> Path:
    """Write ``dataset`` as CSV plus a JSON schema sidecar; returns the sidecar path."""
    path = Path(path)
    schema_path = schema_path_for(path) if schema_path is None else Path(schema_path)
    s = dataset.schema
    header = [f.name for f in s.features] + [s.label_name]
    if include_flags:
        header.append("is_injected_outlier")
    if include_split and dataset.split is not None:
        header.append("split")
    cont_ix = {f.name: j for j, f in enumerate(s.continuous)}
    cat_ix = {f.name: j for j, f in enumerate(s.categorical)}

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for i in range(dataset.n):
        row = []
        for f in s.features:
            if f.kind == CONTINUOUS:
                row.append(repr(float(dataset.continuous[i, cont_ix[f.name]])))
            else:
                row.append(f.categories[dataset.categorical[i, cat_ix[f.name]]])
        row.append(s.label_classes[dataset.labels[i]])
        if include_flags:
            row.append("1" if dataset.is_outlier[i] else "0")
        if include_split and dataset.split is not None:
            row.append(str(dataset.split[i]))
        w.writerow(row)
    _atomic_write_text(path, buf.getvalue())

    decl = s.to_dict()
    if include_flags:
        decl["outlier_flag"] = "is_injected_outlier"
    if include_split and dataset.split is not None:
        decl["split_column"] = "split"
    _atomic_write_text(schema_path, json.dumps(decl, indent=2) + "\n")
    return schema_path
