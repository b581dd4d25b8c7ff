"""Labeled flow datasets: CSV IO, normalization, client partitioning, splits.

A Dataset keeps features as one float64 matrix plus an integer label vector;
class index 0 is always "Benign" when that class is present, so collapsing to
binary benign/malicious stays unambiguous downstream.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError, SchemaError
from .flows import FlowRecord
from .rng import generator

BENIGN_NAME = "Benign"


@dataclass
class LoadReport:
    rows_dropped: int = 0
    dropped_columns: list[str] = field(default_factory=list)


@dataclass
class NormStats:
    """Per-feature normalization parameters, reusable on held-out data."""

    method: str  # minmax | zscore
    a: np.ndarray  # mins or means
    b: np.ndarray  # maxs or stds

    def to_json(self) -> str:
        return json.dumps({"method": self.method, "a": self.a.tolist(), "b": self.b.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "NormStats":
        doc = json.loads(text)
        return cls(doc["method"], np.asarray(doc["a"], dtype=np.float64),
                   np.asarray(doc["b"], dtype=np.float64))


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    class_names: list[str]
    feature_names: list[str] | None = None
    norm_stats: NormStats | None = None
    load_report: LoadReport | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise DataError("features/labels shape mismatch")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise DataError("label index outside class_names")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def feature_width(self) -> int:
        return self.features.shape[1]

    def record(self, i: int) -> FlowRecord:
        label = int(self.labels[i])
        return FlowRecord(self.features[i], label, self.class_names[label])

    def subset(self, indices: np.ndarray) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.class_names,
                       self.feature_names, self.norm_stats)

    def filter_classes(self, class_indices) -> "Dataset":
        mask = np.isin(self.labels, np.asarray(list(class_indices), dtype=np.int64))
        return self.subset(np.nonzero(mask)[0])

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=len(self.class_names))


def _order_class_names(names: list[str]) -> list[str]:
    """Benign pinned to index 0 when present; remaining classes sorted."""
    benign = [n for n in names if n.lower() == BENIGN_NAME.lower()]
    rest = sorted(n for n in names if n.lower() != BENIGN_NAME.lower())
    return benign[:1] + rest


def load_flow_csv(path, label_column: str = "label",
                  feature_columns: list[str] | None = None,
                  class_names: list[str] | None = None,
                  drop_constant: bool = True) -> Dataset:
    """Load a labeled flow CSV, dropping bad rows and constant columns.

    Rows with missing or non-numeric feature values are removed and counted in
    the load report; constant-valued feature columns are dropped and named
    there. Labels are mapped to indices with Benign forced to index 0.
    """
    try:
        # round_trip parsing keeps float bits identical across save/load,
        # which the simulation-vs-networked parity guarantee relies on
        frame = pd.read_csv(path, float_precision="round_trip")
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise SchemaError(f"cannot parse CSV {path}: {exc}") from exc
    if label_column not in frame.columns:
        raise SchemaError(f"label column {label_column!r} not in {list(frame.columns)}")
    feat_cols = feature_columns or [c for c in frame.columns if c != label_column]
    missing = [c for c in feat_cols if c not in frame.columns]
    if missing:
        raise SchemaError(f"feature columns missing from CSV: {missing}")

    feats = frame[feat_cols].apply(pd.to_numeric, errors="coerce")
    good = feats.notna().all(axis=1) & frame[label_column].notna()
    report = LoadReport(rows_dropped=int((~good).sum()))
    feats = feats[good]
    labels_raw = frame.loc[good, label_column].astype(str)
    if len(feats) == 0:
        raise DataError(f"no usable rows in {path}")

    if drop_constant:
        nunique = feats.nunique(axis=0)
        constant = [c for c in feat_cols if nunique[c] <= 1]
        if constant:
            report.dropped_columns = constant
            feats = feats.drop(columns=constant)
            feat_cols = [c for c in feat_cols if c not in constant]

    observed = sorted(labels_raw.unique())
    if class_names is None:
        class_names = _order_class_names(observed)
    else:
        unknown = [n for n in observed if n not in class_names]
        if unknown:
            raise DataError(f"labels {unknown} not in supplied class_names")
    index_of = {name: i for i, name in enumerate(class_names)}
    labels = labels_raw.map(index_of).to_numpy(dtype=np.int64)

    ds = Dataset(feats.to_numpy(dtype=np.float64), labels, list(class_names),
                 feature_names=feat_cols)
    ds.load_report = report
    return ds


def save_flow_csv(dataset: Dataset, path) -> None:
    """Feature columns then `label`; floats via repr so values round-trip."""
    names = dataset.feature_names or [f"f{i}" for i in range(dataset.feature_width)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(names) + ["label"])
        for i in range(len(dataset)):
            row = [repr(float(v)) for v in dataset.features[i]]
            row.append(dataset.class_names[dataset.labels[i]])
            writer.writerow(row)


def normalize(dataset: Dataset, method: str = "minmax") -> tuple[Dataset, NormStats]:
    """Fit normalization stats on `dataset` and return the transformed copy."""
    if len(dataset) == 0:
        raise DataError("cannot normalize an empty dataset")
    x = dataset.features
    if method == "minmax":
        stats = NormStats("minmax", x.min(axis=0), x.max(axis=0))
    elif method == "zscore":
        stats = NormStats("zscore", x.mean(axis=0), x.std(axis=0))
    else:
        raise ConfigError(f"unknown normalization method {method!r}")
    return apply_normalization(dataset, stats), stats


def apply_normalization(dataset: Dataset, stats: NormStats) -> Dataset:
    x = dataset.features
    if x.shape[1] != len(stats.a):
        raise DataError("normalization stats width differs from dataset")
    if stats.method == "minmax":
        span = stats.b - stats.a
        out = np.where(span > 0, (x - stats.a) / np.where(span > 0, span, 1.0), 0.0)
    elif stats.method == "zscore":
        std = np.maximum(stats.b, 1e-9)
        out = (x - stats.a) / std
    else:
        raise ConfigError(f"unknown normalization method {stats.method!r}")
    new = Dataset(out, dataset.labels.copy(), dataset.class_names,
                  dataset.feature_names, stats)
    return new


def partition(dataset: Dataset, num_clients: int, scheme: str = "iid",
              alpha: float = 0.5, seed: int = 0) -> list[Dataset]:
    """Split into disjoint client shards: balanced IID or Dirichlet label-skew."""
    if num_clients < 1:
        raise ConfigError("num_clients must be >= 1")
    if num_clients > len(dataset):
        raise DataError(f"cannot split {len(dataset)} samples across {num_clients} clients")
    rng = generator(seed, 0x5A)
    if scheme == "iid":
        perm = rng.permutation(len(dataset))
        parts = np.array_split(perm, num_clients)
    elif scheme == "dirichlet":
        parts = [[] for _ in range(num_clients)]
        for c in range(len(dataset.class_names)):
            idx = np.nonzero(dataset.labels == c)[0]
            if len(idx) == 0:
                continue
            idx = rng.permutation(idx)
            props = rng.dirichlet(np.full(num_clients, alpha))
            cuts = np.floor(np.cumsum(props) * len(idx)).astype(int)
            cuts[-1] = len(idx)
            start = 0
            for k, end in enumerate(cuts):
                parts[k].extend(idx[start:end])
                start = end
        parts = [np.asarray(sorted(p), dtype=np.int64) for p in parts]
        # a very skewed draw can leave a client empty; take from the largest
        for k in range(num_clients):
            while len(parts[k]) == 0:
                donor = int(np.argmax([len(p) for p in parts]))
                parts[k] = parts[donor][-1:]
                parts[donor] = parts[donor][:-1]
    else:
        raise ConfigError(f"unknown partition scheme {scheme!r}")
    return [dataset.subset(p) for p in parts]


def stratified_split(dataset: Dataset, fractions, seed: int = 0) -> tuple[Dataset, ...]:
    """Per-class proportional split, deterministic per seed."""
    fracs = np.asarray(fractions, dtype=np.float64)
    if len(fracs) == 0 or np.any(fracs < 0) or abs(fracs.sum() - 1.0) > 1e-9:
        raise DataError(f"fractions must be nonnegative and sum to 1, got {fractions}")
    rng = generator(seed, 0x57)
    pieces = [[] for _ in fracs]
    cum = np.cumsum(fracs)
    for c in range(len(dataset.class_names)):
        idx = np.nonzero(dataset.labels == c)[0]
        if len(idx) == 0:
            continue
        idx = rng.permutation(idx)
        cuts = np.round(cum * len(idx)).astype(int)
        cuts[-1] = len(idx)
        start = 0
        for k, end in enumerate(cuts):
            pieces[k].extend(idx[start:end])
            start = end
    return tuple(dataset.subset(np.asarray(sorted(p), dtype=np.int64)) for p in pieces)
