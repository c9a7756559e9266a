"""`grid` command: pretrain + probe every cell of a hyperparameter grid."""
import logging
import os
from collections import defaultdict
from typing import Dict, List

import binning
from commands.common import (
    PreparedData,
    banner,
    echo_config,
    ensure_output_dir,
    fit_spec,
    prepare_data,
    run_pretraining,
    with_overrides,
    write_pretrain_artifacts,
)
from commands.evaluate import evaluate_encoder
from config import COMBINED_CORRUPTION_MODES, COMBINED_GRID, ExperimentConfig
from evaluation import GridCell, GridFailure, GridReport, RunReport, bin_count_dependency, expand_grid, grid_search
from utils.reports import create_provenance, read_json, write_csv, write_json, write_run_report

logger = logging.getLogger(__name__)

REPORT_NAME = "report_probe"


def grid_cells(config: ExperimentConfig) -> List[GridCell]:
    grid = dict(config.grid)
    if config.grid_preset == "combined":
        grid.update(COMBINED_GRID)
        if all(mode == "none" for mode in grid.get("corruption_modes", ["none"])):
            grid["corruption_modes"] = list(COMBINED_CORRUPTION_MODES)
    return expand_grid(
        objectives=grid.get("objectives", ["BinRecon"]),
        corruption_modes=grid.get("corruption_modes", ["none"]),
        mask_probs=grid.get("mask_prob", []),
        n_bins_values=grid.get("n_bins", []),
    )


def cell_config(config: ExperimentConfig, cell: GridCell, directory: str) -> ExperimentConfig:
    return with_overrides(
        config,
        losses=[{"kind": cell.objective, "weight": 1.0}],
        corruption_mode=cell.corruption_mode,
        mask_prob=cell.mask_prob,
        n_bins=cell.n_bins if cell.n_bins is not None else config.n_bins,
        output_dir=directory,
        binning_path=None,
        checkpoint_path=None,
    )


def evaluate_cell(config: ExperimentConfig, prepared: PreparedData, cell: GridCell,
                  root: str, resume: bool) -> RunReport:
    """Pretrain and probe one cell inside its own sub-directory."""
    directory = os.path.join(root, cell.name)
    report_path = os.path.join(directory, f"{REPORT_NAME}.json")
    if resume and os.path.isfile(report_path):
        logger.info(f"Skipping completed cell {cell.name}")
        return RunReport.from_dict(read_json(report_path))

    cfg = cell_config(config, cell, directory)
    os.makedirs(directory, exist_ok=True)
    echo_config(cfg)
    spec, digest = None, None
    if cfg.needs_binning():
        spec = fit_spec(cfg, prepared)
        digest = binning.save(spec, os.path.join(directory, "binning.json"))

    result = run_pretraining(cfg, prepared, spec, log_every=0)
    write_pretrain_artifacts(result, directory, cfg, digest)
    # cells may already run in parallel, so probe seeds stay serial
    report = evaluate_encoder(with_overrides(cfg, threads=1), prepared, result.encoder, "probe")
    report.provenance = create_provenance(cfg.config_hash(), dataset_path=cfg.dataset_path, binning_hash=digest)
    write_run_report(report, directory, REPORT_NAME)
    return report


def bin_sweeps(report: GridReport) -> List[Dict]:
    """Bin-count dependency per (objective, corruption, p_m) with more than one T evaluated."""
    groups = defaultdict(list)
    for r in report.results:
        if r.ok and r.cell.n_bins is not None:
            groups[(r.cell.objective, r.cell.corruption_mode, r.cell.mask_prob)].append(r)
    sweeps = []
    for (objective, mode, p_m), results in sorted(groups.items()):
        if len(results) < 2:
            continue
        results.sort(key=lambda r: r.cell.n_bins)
        stats = bin_count_dependency(
            [r.cell.n_bins for r in results],
            [r.report.val_mean for r in results],
            results[0].report.direction,
        )
        stats.update({"objective": objective, "corruption_mode": mode, "mask_prob": p_m})
        sweeps.append(stats)
    return sweeps


def run(config: ExperimentConfig, resume: bool = False) -> GridReport:
    banner("tabbin - grid search", config)
    cells = grid_cells(config)
    prepared = prepare_data(config)
    root = ensure_output_dir(config)
    echo_config(config)
    threads = config.resolved_threads()
    logger.info(f"Grid has {len(cells)} cell(s), running on {threads} thread(s)")

    report = grid_search(
        cells,
        lambda cell: evaluate_cell(config, prepared, cell, root, resume),
        threads=threads,
    )

    write_csv(report.rows(), os.path.join(root, "grid.csv"))
    if report.best is not None:
        best = cell_config(config, report.best.cell, os.path.join(root, report.best.cell.name))
        write_json({
            "cell": report.best.cell.name,
            "metric": report.best.report.metric,
            "val_mean": report.best.report.val_mean,
            "test_mean": report.best.report.mean,
            "test_std": report.best.report.std,
            "config": best.to_dict(),
        }, os.path.join(root, "best_config.json"))
    sweeps = bin_sweeps(report)
    if sweeps:
        write_json({"sweeps": sweeps}, os.path.join(root, "bin_sweep.json"))

    if report.failures:
        names = ", ".join(r.cell.name for r in report.failures)
        raise GridFailure(f"{len(report.failures)} of {len(cells)} grid cell(s) failed: {names}")
    return report
