"""`ablate` command: retrain with one property of the bin targets removed and compare."""
import logging
import os
from typing import Dict, List, Optional

import numpy as np

import binning
from binning import BinnedTargets, BinningSpec
from commands.common import (
    PreparedData,
    banner,
    bin_targets,
    echo_config,
    ensure_output_dir,
    fit_spec,
    prepare_data,
    run_pretraining,
    with_overrides,
    write_pretrain_artifacts,
)
from commands.evaluate import evaluate_encoder
from config import ConfigError, ExperimentConfig
from evaluation import RunReport
from utils.reports import create_provenance, read_json, write_csv, write_json, write_run_report

logger = logging.getLogger(__name__)

WHICH = ("shuffle_order", "bin_averages", "per_value", "equal_width")
BASELINE_DIR = "baseline"
REPORT_NAME = "report_probe"


def relative_change(baseline: float, ablated: float) -> float:
    """Signed percent change of the ablated metric against the baseline."""
    if baseline == 0:
        return 0.0 if ablated == 0 else float(np.sign(ablated) * np.inf)
    return (ablated - baseline) / abs(baseline) * 100.0


def ablated_targets(which: str, spec: BinningSpec, prepared: PreparedData, seed: int) -> BinnedTargets:
    """Targets for every row with the train rows ablated; other rows are never trained on."""
    full = bin_targets(spec, prepared)
    train = prepared.raw.indices("train")
    changed = binning.ablate(full.take(train), spec, which, seed=seed, features=prepared.raw.features[train])
    indices = full.indices.copy()
    indices[train] = changed.indices
    values = None
    if changed.values is not None:
        values = np.zeros(full.indices.shape, dtype=np.float64)
        values[train] = changed.values
    return BinnedTargets(indices=indices, n_classes=max(changed.n_classes, full.n_classes), values=values)


def _train_and_probe(config: ExperimentConfig, prepared: PreparedData, directory: str,
                     spec: BinningSpec, targets: BinnedTargets, which: Optional[str] = None) -> RunReport:
    """Pretrain on ``targets`` and probe; ``which`` names the ablation behind them, if any."""
    cfg = with_overrides(config, output_dir=directory)
    os.makedirs(directory, exist_ok=True)
    echo_config(cfg)
    digest = binning.save(spec, os.path.join(directory, "binning.json"))
    result = run_pretraining(cfg, prepared, spec, targets=targets, log_every=0)
    write_pretrain_artifacts(result, directory, cfg, digest)
    report = evaluate_encoder(cfg, prepared, result.encoder, "probe")
    report.provenance = create_provenance(cfg.config_hash(), dataset_path=cfg.dataset_path, binning_hash=digest)
    if which is not None:
        report.provenance["ablation"] = which
    write_run_report(report, directory, REPORT_NAME)
    return report


def baseline_report(config: ExperimentConfig, prepared: PreparedData, root: str) -> RunReport:
    """Reuse the unablated run under ``baseline/`` when it was made with this config, otherwise run it."""
    directory = os.path.join(root, BASELINE_DIR)
    report_path = os.path.join(directory, f"{REPORT_NAME}.json")
    if os.path.isfile(report_path):
        stored = RunReport.from_dict(read_json(report_path))
        expected = with_overrides(config, output_dir=directory).config_hash()
        recorded = stored.provenance.get("config")
        if recorded == expected:
            logger.info(f"Using existing baseline report {report_path}")
            return stored
        logger.warning(f"Baseline report {report_path} was made with config {recorded}, "
                       f"current config is {expected}; retraining the baseline")
    else:
        logger.info("No baseline report found; training the unablated run first")
    spec = fit_spec(config, prepared)
    return _train_and_probe(config, prepared, directory, spec, bin_targets(spec, prepared))


def comparison_rows(which: str, baseline: RunReport, ablated: RunReport) -> List[Dict]:
    change = relative_change(baseline.mean, ablated.mean)
    worse = ablated.mean < baseline.mean if baseline.direction == "max" else ablated.mean > baseline.mean
    return [
        {"run": "baseline", "metric": baseline.metric, "mean": baseline.mean, "std": baseline.std,
         "relative_change_pct": 0.0, "degraded": False},
        {"run": which, "metric": ablated.metric, "mean": ablated.mean, "std": ablated.std,
         "relative_change_pct": change, "degraded": bool(worse)},
    ]


def run(config: ExperimentConfig, which: str) -> List[Dict]:
    if which not in WHICH:
        raise ConfigError(f"ablation must be one of {WHICH}, got '{which}'")
    if not config.needs_binning():
        raise ConfigError("ablations need a BinRecon or BinXent objective in `losses`")
    if which == "bin_averages" and not any(entry["kind"] == "BinRecon" for entry in config.losses):
        raise ConfigError("bin_averages only changes BinRecon targets; add a BinRecon entry to `losses`")
    banner(f"tabbin - ablate ({which})", config)
    prepared = prepare_data(config)
    root = ensure_output_dir(config)
    echo_config(config)

    baseline = baseline_report(config, prepared, root)
    if which in ("equal_width", "per_value"):
        spec = fit_spec(config, prepared, method=which)
        targets = bin_targets(spec, prepared)
    else:
        spec = fit_spec(config, prepared)
        targets = ablated_targets(which, spec, prepared, config.seed)
    ablated = _train_and_probe(config, prepared, os.path.join(root, which), spec, targets, which=which)

    rows = comparison_rows(which, baseline, ablated)
    write_json({"which": which, "rows": rows}, os.path.join(root, "ablation.json"))
    write_csv(rows, os.path.join(root, "ablation.csv"))
    logger.info(f"Ablation {which}: {baseline.metric} {baseline.mean:.4f} -> {ablated.mean:.4f} "
                f"({rows[1]['relative_change_pct']:+.2f}%)")
    return rows
