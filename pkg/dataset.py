"""Tabular dataset loading, splits, standardization and batching."""
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
CLASSIFICATION_TASKS = ("binclass", "multiclass")
DEFAULT_CATEGORICAL_THRESHOLD = 20


class DataError(ValueError):
    """Raised for unreadable or inconsistent tabular data."""


@dataclass(frozen=True)
class FeatureMeta:
    """Per-feature statistics gathered on the train split."""

    name: str
    kind: str
    train_unique_count: int
    train_mean: float
    train_std: float


@dataclass(frozen=True)
class Dataset:
    """Feature matrix, labels, task and split assignment.

    ``split`` and ``feature_meta`` stay ``None`` / empty until
    :func:`assign_splits` runs.
    """

    features: np.ndarray
    labels: np.ndarray
    task: str
    feature_names: Tuple[str, ...]
    split: Optional[np.ndarray] = None
    feature_meta: Tuple[FeatureMeta, ...] = ()

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def is_classification(self) -> bool:
        return self.task in CLASSIFICATION_TASKS

    @property
    def n_classes(self) -> int:
        if not self.is_classification:
            return 1
        return int(self.labels.max()) + 1

    def indices(self, split: str) -> np.ndarray:
        """Row indices tagged with ``split``, ascending."""
        if self.split is None:
            raise DataError("Dataset has no split assignment yet")
        if split not in SPLITS:
            raise DataError(f"Unknown split '{split}'")
        return np.flatnonzero(self.split == split)

    def rows(self, split: str) -> Tuple[np.ndarray, np.ndarray]:
        idx = self.indices(split)
        return self.features[idx], self.labels[idx]


def _freeze(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.setflags(write=False)
    return array


def from_arrays(
    features: np.ndarray,
    labels: np.ndarray,
    task: str,
    feature_names: Optional[Sequence[str]] = None,
) -> Dataset:
    """Build a Dataset from in-memory arrays (classification labels are re-coded to 0..C-1)."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise DataError("features must be a 2-D matrix")
    if not np.all(np.isfinite(features)):
        raise DataError("features contain missing or non-finite entries")
    if len(labels) != features.shape[0]:
        raise DataError("labels and features disagree on the number of rows")
    if task in CLASSIFICATION_TASKS:
        _, codes = np.unique(np.asarray(labels), return_inverse=True)
        labels = codes.astype(np.int64)
    elif task == "regression":
        labels = np.asarray(labels, dtype=np.float64)
        if not np.all(np.isfinite(labels)):
            raise DataError("regression labels contain missing or non-finite entries")
    else:
        raise DataError(f"Unknown task '{task}'")
    if feature_names is None:
        feature_names = [f"x{j}" for j in range(features.shape[1])]
    return Dataset(
        features=_freeze(features),
        labels=_freeze(labels),
        task=task,
        feature_names=tuple(feature_names),
    )


def load_csv(path: str, task: str, label_column: str) -> Dataset:
    """Read a comma-separated file with a header row.

    Args:
        path: CSV file
        task: binclass, multiclass or regression
        label_column: header name of the label column

    Returns:
        Dataset whose features keep the file's column order
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"Dataset file not found: {path}")
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    if label_column not in frame.columns:
        raise DataError(f"Label column '{label_column}' not found in {path.name}")

    feature_names = [c for c in frame.columns if c != label_column]
    columns = []
    for name in feature_names:
        raw = frame[name].str.strip()
        parsed = pd.to_numeric(raw, errors="coerce")
        bad = np.flatnonzero(parsed.isna().to_numpy())
        if bad.size:
            row = int(bad[0])
            # +2: one for the header line, one for 1-based numbering
            raise DataError(
                f"Cannot parse value '{raw.iloc[row]}' at row {row} (line {row + 2}), column '{name}'"
            )
        columns.append(parsed.to_numpy(dtype=np.float64))
    features = np.column_stack(columns) if columns else np.zeros((len(frame), 0))

    raw_labels = frame[label_column].str.strip()
    if (raw_labels == "").any():
        row = int(np.flatnonzero((raw_labels == "").to_numpy())[0])
        raise DataError(f"Missing label at row {row}, column '{label_column}'")
    if task == "regression":
        parsed = pd.to_numeric(raw_labels, errors="coerce")
        if parsed.isna().any():
            row = int(np.flatnonzero(parsed.isna().to_numpy())[0])
            raise DataError(f"Cannot parse label '{raw_labels.iloc[row]}' at row {row}, column '{label_column}'")
        labels = parsed.to_numpy(dtype=np.float64)
    else:
        numeric = pd.to_numeric(raw_labels, errors="coerce")
        labels = numeric.to_numpy() if not numeric.isna().any() else raw_labels.to_numpy()

    dataset = from_arrays(features, labels, task, feature_names)
    logger.info(f"Loaded {path.name}: {dataset.n_rows} rows, {dataset.n_features} features, task={task}")
    return dataset


# ── Splits ────────────────────────────────────────────────────────────────────

def _ratio_assignment(n: int, fractions: Sequence[float], seed: int) -> np.ndarray:
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise DataError("split fractions must be three positive numbers")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError(f"split fractions must sum to 1, got {sum(fractions)}")
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise DataError(f"fractions {tuple(fractions)} leave an empty split for {n} rows")
    order = np.random.default_rng(seed).permutation(n)
    split = np.empty(n, dtype="<U5")
    split[order[:n_train]] = "train"
    split[order[n_train:n_train + n_val]] = "val"
    split[order[n_train + n_val:]] = "test"
    return split


def read_index_file(path: str) -> np.ndarray:
    """One zero-based row index per line; blank lines ignored."""
    values = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                values.append(int(line))
            except ValueError as e:
                raise DataError(f"{path}:{lineno}: '{line}' is not a row index") from e
    return np.asarray(values, dtype=np.int64)


def _index_assignment(n: int, index_sets: Sequence[np.ndarray]) -> np.ndarray:
    if len(index_sets) != 3:
        raise DataError("index mode needs exactly three index lists (train, val, test)")
    split = np.full(n, "", dtype="<U5")
    for name, idx in zip(SPLITS, index_sets):
        idx = np.asarray(idx, dtype=np.int64)
        if idx.size == 0:
            raise DataError(f"{name} index list is empty")
        if idx.min() < 0 or idx.max() >= n:
            raise DataError(f"{name} index list has rows outside [0, {n})")
        if np.unique(idx).size != idx.size:
            raise DataError(f"{name} index list repeats a row")
        taken = split[idx] != ""
        if taken.any():
            row = int(idx[np.flatnonzero(taken)[0]])
            raise DataError(f"Row {row} appears in both {split[row]} and {name} index lists")
        split[idx] = name
    missing = np.flatnonzero(split == "")
    if missing.size:
        raise DataError(f"Index lists do not cover {missing.size} row(s), first missing row {missing[0]}")
    return split


def assign_splits(
    dataset: Dataset,
    fractions: Optional[Sequence[float]] = None,
    seed: int = 0,
    index_sets: Optional[Sequence[np.ndarray]] = None,
    categorical_threshold: int = DEFAULT_CATEGORICAL_THRESHOLD,
) -> Dataset:
    """Tag every row train/val/test and compute train-split feature metadata.

    Exactly one of ``fractions`` (ratio mode) or ``index_sets`` (fixed split)
    must be given.
    """
    if (fractions is None) == (index_sets is None):
        raise DataError("pass either fractions or index_sets")
    if index_sets is not None:
        split = _index_assignment(dataset.n_rows, index_sets)
    else:
        split = _ratio_assignment(dataset.n_rows, fractions, seed)

    train = dataset.features[split == "train"]
    if dataset.is_classification:
        train_labels = dataset.labels[split == "train"]
        if np.unique(train_labels).size < 2:
            logger.warning("Train split holds a single class")
    meta = []
    for j, name in enumerate(dataset.feature_names):
        column = train[:, j]
        unique = int(np.unique(column).size)
        meta.append(FeatureMeta(
            name=name,
            kind="categorical" if unique < categorical_threshold else "numerical",
            train_unique_count=unique,
            train_mean=float(column.mean()),
            train_std=float(column.std()),
        ))
    return replace(dataset, split=_freeze(split), feature_meta=tuple(meta))


def split_from_files(dataset: Dataset, paths: Sequence[str], **kwargs) -> Dataset:
    return assign_splits(dataset, index_sets=[read_index_file(p) for p in paths], **kwargs)


# ── Standardization ───────────────────────────────────────────────────────────

@dataclass(frozen=True)
class Standardizer:
    """Train-split means and population standard deviations."""

    mean: np.ndarray
    std: np.ndarray
    label_mean: Optional[float] = None
    label_std: Optional[float] = None

    def transform(self, features: np.ndarray) -> np.ndarray:
        centered = np.asarray(features, dtype=np.float64) - self.mean
        scale = np.where(self.std > 0, self.std, 1.0)
        # constant features map to 0
        return np.where(self.std > 0, centered / scale, 0.0)

    def inverse_transform(self, standardized: np.ndarray) -> np.ndarray:
        return np.asarray(standardized, dtype=np.float64) * self.std + self.mean

    def transform_labels(self, labels: np.ndarray) -> np.ndarray:
        if self.label_mean is None:
            return labels
        scale = self.label_std if self.label_std > 0 else 1.0
        return (np.asarray(labels, dtype=np.float64) - self.label_mean) / scale

    def inverse_labels(self, standardized: np.ndarray) -> np.ndarray:
        if self.label_mean is None:
            return standardized
        scale = self.label_std if self.label_std > 0 else 1.0
        return np.asarray(standardized, dtype=np.float64) * scale + self.label_mean


def fit_standardizer(dataset: Dataset) -> Standardizer:
    """Compute feature (and, for regression, label) statistics on train rows only."""
    train_x, train_y = dataset.rows("train")
    if train_x.shape[0] == 0:
        raise DataError("train split is empty")
    label_mean = label_std = None
    if dataset.task == "regression":
        label_mean = float(train_y.mean())
        label_std = float(train_y.std())
    return Standardizer(
        mean=_freeze(train_x.mean(axis=0)),
        std=_freeze(train_x.std(axis=0)),
        label_mean=label_mean,
        label_std=label_std,
    )


def standardize(dataset: Dataset, standardizer: Standardizer) -> Dataset:
    """Dataset copy with standardized features and (regression) labels."""
    return replace(
        dataset,
        features=_freeze(standardizer.transform(dataset.features)),
        labels=_freeze(standardizer.transform_labels(dataset.labels)),
    )


# ── Batching ──────────────────────────────────────────────────────────────────

_BATCH_BRACKETS = ((1000, 64), (5000, 128), (10000, 256), (50000, 512))


def batch_size_rule(n_train: int) -> int:
    """Batch size by number of training rows."""
    if n_train < 1:
        raise DataError("n_train must be positive")
    for limit, size in _BATCH_BRACKETS:
        if n_train < limit:
            return size
    return 1024


def iterate_batches(
    dataset: Dataset,
    split: str,
    batch_size: int,
    seed: int = 0,
    shuffle: bool = True,
    epoch: int = 0,
) -> List[np.ndarray]:
    """Row-index batches covering ``split`` once; the last batch may be short."""
    idx = dataset.indices(split)
    return batch_indices(idx, batch_size, seed=seed, shuffle=shuffle, epoch=epoch)


def batch_indices(
    idx: np.ndarray,
    batch_size: int,
    seed: int = 0,
    shuffle: bool = True,
    epoch: int = 0,
) -> List[np.ndarray]:
    if batch_size < 1:
        raise DataError("batch_size must be positive")
    if shuffle:
        idx = idx[np.random.default_rng([seed, epoch]).permutation(idx.size)]
    return [idx[start:start + batch_size] for start in range(0, idx.size, batch_size)]
