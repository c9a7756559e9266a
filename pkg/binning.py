"""Per-feature binning: boundaries, bin indices, one-hot targets and ablations."""
import hashlib
import json
import logging
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

METHODS = ("quantile", "equal_width", "per_value")
ABLATIONS = ("shuffle_order", "bin_averages", "per_value")
FORMAT_VERSION = 1


class BinningError(ValueError):
    """Raised for invalid bin requests or unreadable binning documents."""


@dataclass(frozen=True)
class FeatureBins:
    """Fitted bins of one feature.

    ``boundaries`` has ``effective_bin_count - 1`` strictly increasing entries;
    bin ``t`` covers ``[b_{t-1}, b_t)`` with open ends at both extremes.
    ``values`` is the sorted distinct-value table of ``per_value`` bins.
    """

    boundaries: np.ndarray
    kind: str
    values: Optional[np.ndarray] = None

    @property
    def effective_bin_count(self) -> int:
        if self.values is not None:
            return int(self.values.size)
        return int(self.boundaries.size) + 1


@dataclass(frozen=True)
class BinningSpec:
    method: str
    n_bins: int
    features: Tuple[FeatureBins, ...]

    @property
    def n_features(self) -> int:
        return len(self.features)

    @property
    def effective_bin_counts(self) -> List[int]:
        return [f.effective_bin_count for f in self.features]

    @property
    def n_classes(self) -> int:
        """Width of one-hot targets: the largest per-feature bin count."""
        return max(self.effective_bin_counts) if self.features else 1

    def transform(self, features: np.ndarray) -> np.ndarray:
        """Bin indices (1-based) for every column of ``features``."""
        features = np.asarray(features, dtype=np.float64)
        if features.shape[1] != self.n_features:
            raise BinningError(
                f"spec has {self.n_features} features, matrix has {features.shape[1]}"
            )
        return np.column_stack(
            [assign_bins(features[:, j], bins) for j, bins in enumerate(self.features)]
        ).astype(np.int64)

    def targets(self, features: np.ndarray) -> "BinnedTargets":
        return BinnedTargets(indices=self.transform(features), n_classes=self.n_classes)


@dataclass(frozen=True)
class BinnedTargets:
    """Bin indices ``t`` (N x d) and, after the bin-average ablation, real targets."""

    indices: np.ndarray
    n_classes: int
    values: Optional[np.ndarray] = None

    @property
    def recon_targets(self) -> np.ndarray:
        if self.values is not None:
            return self.values
        return self.indices.astype(np.float64)

    def one_hot(self) -> np.ndarray:
        return one_hot(self.indices, self.n_classes)

    def take(self, rows: np.ndarray) -> "BinnedTargets":
        values = None if self.values is None else self.values[rows]
        return BinnedTargets(indices=self.indices[rows], n_classes=self.n_classes, values=values)


# ── Fitting ───────────────────────────────────────────────────────────────────

def _check_request(column: np.ndarray, n_bins: int) -> np.ndarray:
    if n_bins < 2:
        raise BinningError(f"number of bins must be at least 2, got {n_bins}")
    column = np.asarray(column, dtype=np.float64).ravel()
    if column.size == 0:
        raise BinningError("cannot fit bins on an empty column")
    return column


def _distinct_value_bins(distinct: np.ndarray) -> FeatureBins:
    # each distinct value opens its own bin
    return FeatureBins(boundaries=distinct[1:].copy(), kind="distinct")


def fit_quantile_bins(train_column: np.ndarray, n_bins: int) -> FeatureBins:
    """Boundaries at the empirical t/T quantiles of the train column.

    The boundary for level ``q`` is the sorted value at zero-based position
    ``ceil(q * n)``, so every bin holds ``ceil(t n / T) - ceil((t-1) n / T)``
    values when the column is all distinct. Columns with fewer than ``T``
    distinct values get one bin per value.
    """
    column = _check_request(train_column, n_bins)
    distinct = np.unique(column)
    if distinct.size < n_bins:
        return _distinct_value_bins(distinct)
    ordered = np.sort(column)
    n = ordered.size
    positions = [min(-(-t * n // n_bins), n - 1) for t in range(1, n_bins)]
    boundaries = np.unique(ordered[positions])
    # a boundary at the minimum would leave bin 1 empty
    boundaries = boundaries[boundaries > ordered[0]]
    return FeatureBins(boundaries=boundaries, kind="quantile")


def fit_equal_width_bins(train_column: np.ndarray, n_bins: int) -> FeatureBins:
    """Evenly spaced boundaries between the train minimum and maximum."""
    column = _check_request(train_column, n_bins)
    low, high = float(column.min()), float(column.max())
    if high == low:
        return FeatureBins(boundaries=np.empty(0), kind="equal_width")
    return FeatureBins(boundaries=np.linspace(low, high, n_bins + 1)[1:-1], kind="equal_width")


def fit_per_value_bins(train_column: np.ndarray) -> FeatureBins:
    column = np.asarray(train_column, dtype=np.float64).ravel()
    if column.size == 0:
        raise BinningError("cannot fit bins on an empty column")
    distinct = np.unique(column)
    return FeatureBins(boundaries=distinct[1:].copy(), kind="per_value", values=distinct)


def fit_binning(train_features: np.ndarray, n_bins: int, method: str = "quantile") -> BinningSpec:
    """Fit one FeatureBins per column."""
    if method not in METHODS:
        raise BinningError(f"Unknown binning method '{method}'")
    if method != "per_value" and n_bins < 2:
        raise BinningError(f"number of bins must be at least 2, got {n_bins}")
    train_features = np.asarray(train_features, dtype=np.float64)
    fitted = []
    for j in range(train_features.shape[1]):
        column = train_features[:, j]
        if method == "quantile":
            fitted.append(fit_quantile_bins(column, n_bins))
        elif method == "equal_width":
            fitted.append(fit_equal_width_bins(column, n_bins))
        else:
            fitted.append(fit_per_value_bins(column))
    spec = BinningSpec(method=method, n_bins=int(n_bins), features=tuple(fitted))
    logger.debug("Fitted %s bins, effective counts %s", method, spec.effective_bin_counts)
    return spec


# ── Assignment ────────────────────────────────────────────────────────────────

def assign_bins(column: np.ndarray, bins: FeatureBins) -> np.ndarray:
    """1-based bin index per value; values beyond the train range clamp to the end bins."""
    column = np.asarray(column, dtype=np.float64)
    if bins.values is not None:
        return _nearest_value_bins(column, bins.values)
    return np.searchsorted(bins.boundaries, column, side="right").astype(np.int64) + 1


def _nearest_value_bins(column: np.ndarray, values: np.ndarray) -> np.ndarray:
    right = np.clip(np.searchsorted(values, column, side="left"), 0, values.size - 1)
    left = np.clip(right - 1, 0, values.size - 1)
    # ties go to the lower value
    use_left = np.abs(column - values[left]) <= np.abs(values[right] - column)
    return np.where(use_left, left, right).astype(np.int64) + 1


def one_hot(indices: np.ndarray, n_classes: int) -> np.ndarray:
    """One-hot along a new trailing axis of width ``n_classes``; indices are 1-based."""
    indices = np.asarray(indices)
    if indices.size and (indices.min() < 1 or indices.max() > n_classes):
        raise BinningError(f"bin index outside [1, {n_classes}]")
    encoded = np.zeros(indices.shape + (n_classes,), dtype=np.float64)
    np.put_along_axis(encoded, (indices - 1)[..., None].astype(np.int64), 1.0, axis=-1)
    return encoded


# ── Ablations ─────────────────────────────────────────────────────────────────

def permute_bin_labels(targets: BinnedTargets, permutations: Sequence[np.ndarray]) -> BinnedTargets:
    """Relabel bins per feature: old index ``t`` becomes ``perm[t - 1]``."""
    relabeled = np.empty_like(targets.indices)
    for j, perm in enumerate(permutations):
        perm = np.asarray(perm, dtype=np.int64)
        relabeled[:, j] = perm[targets.indices[:, j] - 1]
    return replace(targets, indices=relabeled, values=None)


def ablate(
    targets: BinnedTargets,
    spec: BinningSpec,
    which: str,
    seed: int = 0,
    features: Optional[np.ndarray] = None,
) -> BinnedTargets:
    """Remove one property of bin targets.

    Args:
        targets: bin targets produced by ``spec`` for the rows of ``features``
        spec: the fitted binning
        which: shuffle_order, bin_averages or per_value
        seed: permutation seed for shuffle_order
        features: raw values behind ``targets``; required for bin_averages and per_value

    Returns:
        Modified targets
    """
    if which not in ABLATIONS:
        raise BinningError(f"Unknown ablation '{which}'")
    if which == "shuffle_order":
        rng = np.random.default_rng(seed)
        perms = [rng.permutation(count) + 1 for count in spec.effective_bin_counts]
        return permute_bin_labels(targets, perms)

    if features is None:
        raise BinningError(f"ablation '{which}' needs the raw feature values")
    features = np.asarray(features, dtype=np.float64)
    if which == "bin_averages":
        averaged = np.empty(targets.indices.shape, dtype=np.float64)
        for j in range(targets.indices.shape[1]):
            column, index = features[:, j], targets.indices[:, j]
            sums = np.bincount(index, weights=column)
            counts = np.bincount(index)
            means = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
            averaged[:, j] = means[index]
        return replace(targets, values=averaged)

    refit = fit_binning(features, spec.n_bins, method="per_value")
    return refit.targets(features)


# ── Serialization ─────────────────────────────────────────────────────────────

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def dumps(spec: BinningSpec) -> str:
    """Text document with every boundary at 17 significant digits."""
    document = {
        "format": "tabbin-binning",
        "version": FORMAT_VERSION,
        "method": spec.method,
        "n_bins": spec.n_bins,
        "features": [
            {
                "kind": bins.kind,
                "boundaries": [_fmt(b) for b in bins.boundaries],
                "values": None if bins.values is None else [_fmt(v) for v in bins.values],
            }
            for bins in spec.features
        ],
    }
    return json.dumps(document, indent=2) + "\n"


def loads(text: str) -> BinningSpec:
    try:
        document = json.loads(text)
        if document.get("format") != "tabbin-binning":
            raise BinningError("not a binning document")
        if document.get("version") != FORMAT_VERSION:
            raise BinningError(f"unsupported binning format version {document.get('version')}")
        features = []
        for entry in document["features"]:
            values = entry.get("values")
            features.append(FeatureBins(
                boundaries=np.array([float(b) for b in entry["boundaries"]], dtype=np.float64),
                kind=entry["kind"],
                values=None if values is None else np.array([float(v) for v in values]),
            ))
        return BinningSpec(method=document["method"], n_bins=int(document["n_bins"]), features=tuple(features))
    except (KeyError, TypeError, json.JSONDecodeError) as e:
        raise BinningError(f"malformed binning document: {e}") from e


def save(spec: BinningSpec, path: str) -> str:
    """Write the document; returns its SHA-256."""
    text = dumps(spec)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return spec_hash(text)


def load(path: str) -> BinningSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return loads(fh.read())


def spec_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
