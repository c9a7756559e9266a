"""Downstream evaluation: probing, fine-tuning, grids, ranks, bin probe, PCA."""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import log_softmax, softmax
from scipy.stats import kendalltau, pearsonr, rankdata

from binning import BinnedTargets
from dataset import Dataset, Standardizer, batch_indices, batch_size_rule
from network import LrSchedule, MlpNetwork, MlpSpec, OptimizerState, adamw_step, cosine_lr, init_params
from training import encode

logger = logging.getLogger(__name__)


class DegenerateLabelsError(ValueError):
    """Raised when the train split cannot support a supervised head."""


class GridFailure(RuntimeError):
    """Raised when grid cells failed."""


@dataclass(frozen=True)
class ProbeConfig:
    lr: float = 0.01
    epochs: int = 100
    n_seeds: int = 10
    frozen: bool = True
    weight_decay: float = 1e-5
    batch_size: Optional[int] = None


@dataclass
class RunReport:
    """Per-seed downstream metrics and their mean / population std."""

    metric: str
    per_seed: List[float]
    val_per_seed: List[float]
    per_seed_original: Optional[List[float]] = None
    provenance: Dict[str, str] = field(default_factory=dict)

    @property
    def mean(self) -> float:
        return float(np.mean(self.per_seed))

    @property
    def std(self) -> float:
        return float(np.std(self.per_seed))

    @property
    def val_mean(self) -> float:
        return float(np.mean(self.val_per_seed))

    @property
    def direction(self) -> str:
        return "max" if self.metric == "accuracy" else "min"

    def to_dict(self) -> Dict:
        data = {
            "metric": self.metric,
            "per_seed": list(self.per_seed),
            "mean": self.mean,
            "std": self.std,
            "val_per_seed": list(self.val_per_seed),
            "val_mean": self.val_mean,
        }
        if self.per_seed_original is not None:
            data["per_seed_original"] = list(self.per_seed_original)
            data["mean_original"] = float(np.mean(self.per_seed_original))
            data["std_original"] = float(np.std(self.per_seed_original))
        data["provenance"] = dict(self.provenance)
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> "RunReport":
        return cls(
            metric=data["metric"],
            per_seed=list(data["per_seed"]),
            val_per_seed=list(data["val_per_seed"]),
            per_seed_original=data.get("per_seed_original"),
            provenance=dict(data.get("provenance", {})),
        )


# ── Supervised heads ──────────────────────────────────────────────────────────

def _supervised_loss(task: str, output: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """Softmax cross-entropy for classification, mean squared error for regression."""
    n = output.shape[0]
    if task == "regression":
        diff = output[:, 0] - labels
        return float(np.mean(diff * diff)), (2.0 * diff / n)[:, None]
    log_probs = log_softmax(output, axis=1)
    loss = -np.mean(log_probs[np.arange(n), labels])
    grad = softmax(output, axis=1)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


def _head_spec(dataset: Dataset, rep_dim: int) -> MlpSpec:
    return MlpSpec(rep_dim, (), dataset.n_classes if dataset.is_classification else 1)


def _seed_pair(seed: int) -> Tuple[int, int]:
    """(head init seed, encoder init seed) for one repetition."""
    head, enc = np.random.SeedSequence([seed, 7]).spawn(2)
    return int(head.generate_state(1)[0]), int(enc.generate_state(1)[0])


def _check_labels(dataset: Dataset):
    if dataset.is_classification:
        _, train_y = dataset.rows("train")
        if np.unique(train_y).size < 2:
            raise DegenerateLabelsError("train split holds a single class")


def fit_supervised(
    head: MlpNetwork,
    inputs: np.ndarray,
    labels: np.ndarray,
    task: str,
    epochs: int,
    lr: float,
    weight_decay: float,
    seed: int,
    encoder: Optional[MlpNetwork] = None,
    batch_size: Optional[int] = None,
):
    """Train ``head`` (and ``encoder`` when given) in place with AdamW + cosine annealing.

    Without an encoder, ``inputs`` are fixed representations.
    """
    n = inputs.shape[0]
    batch_size = batch_size or batch_size_rule(n)
    modules = [head] if encoder is None else [encoder, head]
    params = [p for m in modules for p in m.parameters()]
    grads = [g for m in modules for g in m.gradients()]
    state = OptimizerState.for_params(params, base_lr=lr, weight_decay=weight_decay)
    schedule = LrSchedule(lr, epochs * -(-n // batch_size))
    rows_all = np.arange(n)
    step = 0
    for epoch in range(epochs):
        for rows in batch_indices(rows_all, batch_size, seed=seed, shuffle=True, epoch=epoch):
            for m in modules:
                m.zero_grad()
            x = inputs[rows]
            if encoder is not None:
                x, enc_cache = encoder.forward(x)
            out, head_cache = head.forward(x)
            _, grad = _supervised_loss(task, out, labels[rows])
            dx = head.backward(head_cache, grad)
            if encoder is not None:
                encoder.backward(enc_cache, dx)
            adamw_step(state, params, grads, cosine_lr(schedule, step))
            step += 1


def _predict(head: MlpNetwork, representations: np.ndarray) -> np.ndarray:
    out, _ = head.forward(representations)
    return out


def _score(dataset: Dataset, output: np.ndarray, labels: np.ndarray,
           standardizer: Optional[Standardizer]) -> Tuple[float, Optional[float]]:
    """(metric, metric in original label units or None)."""
    if dataset.is_classification:
        return float(np.mean(np.argmax(output, axis=1) == labels)), None
    pred = output[:, 0]
    rmse = float(np.sqrt(np.mean((pred - labels) ** 2)))
    if standardizer is None or standardizer.label_mean is None:
        return rmse, rmse
    original = standardizer.inverse_labels(pred) - standardizer.inverse_labels(labels)
    return rmse, float(np.sqrt(np.mean(original ** 2)))


def _run_seeds(fn: Callable[[int], Tuple[float, float, Optional[float]]], n_seeds: int,
               threads: int) -> List[Tuple[float, float, Optional[float]]]:
    """Results keyed by seed, merged in seed order whatever the completion order."""
    if threads <= 1:
        return [fn(s) for s in range(n_seeds)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n_seeds)))


def _report(dataset: Dataset, results: list) -> RunReport:
    metric = "accuracy" if dataset.is_classification else "rmse"
    original = None if dataset.is_classification else [r[2] for r in results]
    return RunReport(
        metric=metric,
        per_seed=[r[0] for r in results],
        val_per_seed=[r[1] for r in results],
        per_seed_original=original,
    )


def linear_probe(
    encoder: MlpNetwork,
    dataset: Dataset,
    probe: ProbeConfig = ProbeConfig(),
    standardizer: Optional[Standardizer] = None,
    threads: int = 1,
) -> RunReport:
    """Affine heads on frozen representations, one per seed, scored on test rows.

    Args:
        encoder: frozen encoder; never modified
        dataset: standardized dataset with splits
        probe: head optimizer settings and seed count
        standardizer: used to report regression RMSE in original units
        threads: seeds evaluated concurrently

    Returns:
        RunReport with one test and one validation metric per seed
    """
    _check_labels(dataset)
    z = encode(encoder, dataset.features)
    train, val, test = (dataset.indices(s) for s in ("train", "val", "test"))
    spec = _head_spec(dataset, z.shape[1])

    def one_seed(seed: int):
        head = init_params(spec, _seed_pair(seed)[0])
        fit_supervised(head, z[train], dataset.labels[train], dataset.task, probe.epochs,
                       probe.lr, probe.weight_decay, seed, batch_size=probe.batch_size)
        test_metric, test_original = _score(dataset, _predict(head, z[test]), dataset.labels[test], standardizer)
        val_metric, _ = _score(dataset, _predict(head, z[val]), dataset.labels[val], standardizer)
        return test_metric, val_metric, test_original

    report = _report(dataset, _run_seeds(one_seed, probe.n_seeds, threads))
    logger.info(f"Linear probe: {report.metric} {report.mean:.4f} ± {report.std:.4f} over {probe.n_seeds} seeds")
    return report


def _train_jointly(encoder_factory: Callable[[int], MlpNetwork], dataset: Dataset, epochs: int, lr: float,
                   n_seeds: int, weight_decay: float, standardizer: Optional[Standardizer],
                   threads: int, batch_size: Optional[int]) -> RunReport:
    _check_labels(dataset)
    train, val, test = (dataset.indices(s) for s in ("train", "val", "test"))

    def one_seed(seed: int):
        head_seed, enc_seed = _seed_pair(seed)
        encoder = encoder_factory(enc_seed)
        head = init_params(_head_spec(dataset, encoder.spec.output_dim), head_seed)
        fit_supervised(head, dataset.features[train], dataset.labels[train], dataset.task, epochs,
                       lr, weight_decay, seed, encoder=encoder, batch_size=batch_size)

        def predict(rows):
            return _predict(head, encode(encoder, dataset.features[rows]))

        test_metric, test_original = _score(dataset, predict(test), dataset.labels[test], standardizer)
        val_metric, _ = _score(dataset, predict(val), dataset.labels[val], standardizer)
        return test_metric, val_metric, test_original

    return _report(dataset, _run_seeds(one_seed, n_seeds, threads))


def finetune(
    encoder: MlpNetwork,
    dataset: Dataset,
    epochs: int = 100,
    lr: float = 1e-3,
    n_seeds: int = 10,
    weight_decay: float = 1e-5,
    standardizer: Optional[Standardizer] = None,
    threads: int = 1,
    batch_size: Optional[int] = None,
) -> RunReport:
    """Pretrained encoder plus a fresh head, trained jointly with a fresh optimizer per seed."""
    if epochs not in (50, 100):
        logger.warning(f"Fine-tuning for {epochs} epochs; the reference protocol uses 50 or 100")
    report = _train_jointly(lambda _: encoder.copy(), dataset, epochs, lr, n_seeds, weight_decay,
                            standardizer, threads, batch_size)
    logger.info(f"Fine-tune: {report.metric} {report.mean:.4f} ± {report.std:.4f}")
    return report


def supervised_baseline(
    encoder_spec: MlpSpec,
    dataset: Dataset,
    epochs: int = 100,
    lr: float = 1e-3,
    n_seeds: int = 10,
    weight_decay: float = 1e-5,
    standardizer: Optional[Standardizer] = None,
    threads: int = 1,
    batch_size: Optional[int] = None,
) -> RunReport:
    """Encoder trained from scratch together with its head."""
    report = _train_jointly(lambda s: init_params(encoder_spec, s), dataset, epochs, lr, n_seeds,
                            weight_decay, standardizer, threads, batch_size)
    logger.info(f"Supervised baseline: {report.metric} {report.mean:.4f} ± {report.std:.4f}")
    return report


# ── Grid search ───────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class GridCell:
    objective: str
    corruption_mode: str = "none"
    mask_prob: float = 0.0
    # None for objectives that do not use bins
    n_bins: Optional[int] = None

    @property
    def name(self) -> str:
        bins = f"T{self.n_bins}" if self.n_bins is not None else "T-"
        return f"{self.objective}_{self.corruption_mode}_pm{self.mask_prob:g}_{bins}"

    def sort_key(self) -> Tuple[int, float]:
        return (self.n_bins or 0, self.mask_prob)


def expand_grid(
    objectives: Sequence[str],
    corruption_modes: Sequence[str],
    mask_probs: Sequence[float],
    n_bins_values: Sequence[int],
) -> List[GridCell]:
    """Cartesian product without cells that differ only in unused settings."""
    cells: List[GridCell] = []
    for objective in objectives:
        binned = objective in ("BinRecon", "BinXent")
        for mode in corruption_modes:
            probs = [0.0] if mode == "none" else list(mask_probs)
            for p_m in probs:
                for n_bins in (n_bins_values if binned else [None]):
                    cell = GridCell(objective, mode, float(p_m), None if n_bins is None else int(n_bins))
                    if cell not in cells:
                        cells.append(cell)
    return cells


@dataclass
class GridResult:
    cell: GridCell
    report: Optional[RunReport] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.report is not None


@dataclass
class GridReport:
    results: List[GridResult]
    best: Optional[GridResult]

    @property
    def failures(self) -> List[GridResult]:
        return [r for r in self.results if not r.ok]

    def rows(self) -> List[Dict]:
        rows = []
        for r in self.results:
            rows.append({
                "cell": r.cell.name,
                "objective": r.cell.objective,
                "corruption_mode": r.cell.corruption_mode,
                "mask_prob": r.cell.mask_prob,
                "n_bins": r.cell.n_bins,
                "metric": r.report.metric if r.ok else None,
                "val_mean": r.report.val_mean if r.ok else None,
                "test_mean": r.report.mean if r.ok else None,
                "test_std": r.report.std if r.ok else None,
                "status": "ok" if r.ok else "failed",
                "error": r.error,
            })
        return rows


def select_best(results: Sequence[GridResult]) -> Optional[GridResult]:
    """Best validation metric; ties go to fewer bins, then lower masking probability."""
    done = [r for r in results if r.ok]
    if not done:
        return None
    sign = 1.0 if done[0].report.direction == "max" else -1.0
    return min(done, key=lambda r: (-sign * r.report.val_mean,) + r.cell.sort_key())


def grid_search(
    cells: Sequence[GridCell],
    evaluate: Callable[[GridCell], RunReport],
    threads: int = 1,
) -> GridReport:
    """Evaluate every cell; a failing cell is recorded and the grid carries on."""
    if not cells:
        raise ValueError("grid is empty")

    def run(cell: GridCell) -> GridResult:
        try:
            return GridResult(cell=cell, report=evaluate(cell))
        except Exception as e:
            logger.error(f"Grid cell {cell.name} failed: {e}")
            return GridResult(cell=cell, error=str(e))

    if threads <= 1:
        results = [run(c) for c in cells]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, cells))
    best = select_best(results)
    if best is not None:
        for r in results:
            if r.ok and best.report.direction == "max":
                assert best.report.val_mean >= r.report.val_mean
            elif r.ok:
                assert best.report.val_mean <= r.report.val_mean
        logger.info(f"Best cell {best.cell.name}: validation {best.report.metric} {best.report.val_mean:.4f}")
    return GridReport(results=results, best=best)


# ── Rank aggregation ──────────────────────────────────────────────────────────

@dataclass
class RankTable:
    methods: List[str]
    datasets: List[str]
    metrics: np.ndarray
    ranks: np.ndarray

    @property
    def average_ranks(self) -> np.ndarray:
        return self.ranks.mean(axis=1)

    def rows(self) -> List[Dict]:
        rows = []
        for i, method in enumerate(self.methods):
            row = {"method": method}
            for j, name in enumerate(self.datasets):
                row[name] = float(self.metrics[i, j])
                row[f"{name}_rank"] = float(self.ranks[i, j])
            row["average_rank"] = float(self.average_ranks[i])
            rows.append(row)
        return rows


def rank_aggregate(
    metrics: np.ndarray,
    directions: Sequence[str],
    methods: Optional[Sequence[str]] = None,
    datasets: Optional[Sequence[str]] = None,
) -> RankTable:
    """Per-dataset ranks (1 = best, ties share the mean rank) averaged over datasets."""
    metrics = np.asarray(metrics, dtype=np.float64)
    n_methods, n_datasets = metrics.shape
    if len(directions) != n_datasets:
        raise ValueError("one direction per dataset is required")
    if np.isnan(metrics).any():
        i, j = np.argwhere(np.isnan(metrics))[0]
        raise ValueError(f"missing metric for method {i}, dataset {j}")
    ranks = np.empty_like(metrics)
    for j, direction in enumerate(directions):
        if direction not in ("max", "min"):
            raise ValueError(f"direction must be 'max' or 'min', got {direction}")
        column = -metrics[:, j] if direction == "max" else metrics[:, j]
        ranks[:, j] = rankdata(column, method="average")
    return RankTable(
        methods=list(methods or [f"m{i}" for i in range(n_methods)]),
        datasets=list(datasets or [f"d{j}" for j in range(n_datasets)]),
        metrics=metrics,
        ranks=ranks,
    )


# ── Bin prediction probe ──────────────────────────────────────────────────────

@dataclass
class BinProbeResult:
    mse: float
    reference_mse: Optional[float] = None

    @property
    def relative_increase(self) -> Optional[float]:
        """Percent change of the error against the reference encoder."""
        if self.reference_mse is None:
            return None
        return (self.mse - self.reference_mse) / self.reference_mse * 100.0

    def to_dict(self) -> Dict:
        return {"mse": self.mse, "reference_mse": self.reference_mse,
                "relative_increase_pct": self.relative_increase}


def bin_prediction_error(encoder: MlpNetwork, dataset: Dataset, targets: BinnedTargets) -> float:
    """Test MSE of a least-squares affine map from representations to bin indices."""
    z = encode(encoder, dataset.features)
    train, test = dataset.indices("train"), dataset.indices("test")
    design = np.hstack([z, np.ones((z.shape[0], 1))])
    y = targets.indices.astype(np.float64)
    coef, *_ = np.linalg.lstsq(design[train], y[train], rcond=None)
    residual = design[test] @ coef - y[test]
    return float(np.mean(residual ** 2))


def bin_prediction_probe(
    encoder: MlpNetwork,
    dataset: Dataset,
    targets: BinnedTargets,
    reference: Optional[MlpNetwork] = None,
) -> BinProbeResult:
    """Bin-index regression error of ``encoder``, relative to a BinRecon-trained reference."""
    mse = bin_prediction_error(encoder, dataset, targets)
    reference_mse = None
    if reference is not None:
        reference_mse = mse if reference is encoder else bin_prediction_error(reference, dataset, targets)
    result = BinProbeResult(mse=mse, reference_mse=reference_mse)
    if reference_mse is not None:
        logger.info(f"Bin prediction MSE {mse:.5f} vs reference {reference_mse:.5f} "
                    f"({result.relative_increase:+.1f}%)")
    return result


# ── PCA ───────────────────────────────────────────────────────────────────────

@dataclass
class PcaResult:
    coordinates: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray
    total_variance: float

    @property
    def explained_variance_ratio(self) -> np.ndarray:
        if self.total_variance == 0:
            return np.zeros_like(self.explained_variance)
        return self.explained_variance / self.total_variance


def pca_project(representations: np.ndarray, components: int = 2, tol: float = 1e-12) -> PcaResult:
    """Project mean-centered rows onto the leading principal axes.

    Each axis is signed so its largest-magnitude coordinate is positive.
    Axes beyond the numerical rank are returned as zeros.
    """
    data = np.asarray(representations, dtype=np.float64)
    n, k = data.shape
    if n < 2:
        raise ValueError("PCA needs at least two rows")
    centered = data - data.mean(axis=0)
    _, singular, vt = np.linalg.svd(centered, full_matrices=False)
    variances = singular ** 2 / (n - 1)
    total = float(np.sum(centered ** 2) / (n - 1))

    axes = np.zeros((components, k))
    explained = np.zeros(components)
    limit = tol * max(total, 1.0)
    for c in range(min(components, vt.shape[0])):
        if variances[c] <= limit:
            continue
        axis = vt[c]
        if axis[np.argmax(np.abs(axis))] < 0:
            axis = -axis
        axes[c] = axis
        explained[c] = variances[c]
    return PcaResult(coordinates=centered @ axes.T, components=axes,
                     explained_variance=explained, total_variance=total)


# ── Bin-count dependency ──────────────────────────────────────────────────────

def normalize_sweep(metrics: Sequence[float], direction: str) -> np.ndarray:
    """Rescale so the best setting scores 1 and the worst 0 (all 1 when every value ties)."""
    values = np.asarray(metrics, dtype=np.float64)
    best = values.max() if direction == "max" else values.min()
    worst = values.min() if direction == "max" else values.max()
    if best == worst:
        return np.ones_like(values)
    return (values - worst) / (best - worst)


def bin_count_dependency(n_bins: Sequence[int], metrics: Sequence[float], direction: str) -> Dict:
    """Pearson r² and Kendall τ between bin count and normalized performance."""
    normalized = normalize_sweep(metrics, direction)
    result = {"n_bins": [int(t) for t in n_bins], "normalized": normalized.tolist(),
              "pearson_r2": None, "kendall_tau": None}
    if len(n_bins) >= 2 and np.ptp(normalized) > 0 and np.ptp(np.asarray(n_bins)) > 0:
        r, _ = pearsonr(np.asarray(n_bins, dtype=np.float64), normalized)
        tau, _ = kendalltau(n_bins, normalized)
        result["pearson_r2"] = float(r ** 2)
        result["kendall_tau"] = float(tau)
    return result
