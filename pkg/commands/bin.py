"""`bin` command: fit the binning on the train split and save it."""
import logging
from typing import List

import binning
from binning import BinningSpec
from commands.common import PreparedData, banner, binning_path, echo_config, ensure_output_dir, fit_spec, prepare_data
from config import ExperimentConfig

logger = logging.getLogger(__name__)


def summary_lines(spec: BinningSpec, prepared: PreparedData) -> List[str]:
    """One line per feature: name, kind and effective bin count."""
    lines = [f"{'feature':<24} {'kind':<12} {'bins':>5}"]
    for meta, bins in zip(prepared.raw.feature_meta, spec.features):
        lines.append(f"{meta.name:<24} {meta.kind:<12} {bins.effective_bin_count:>5}")
    return lines


def run(config: ExperimentConfig) -> BinningSpec:
    banner("tabbin - fit binning", config)
    prepared = prepare_data(config)
    spec = fit_spec(config, prepared)
    ensure_output_dir(config)
    path = binning_path(config)
    digest = binning.save(spec, path)
    echo_config(config)

    logger.info(f"Wrote {spec.method} binning (T={spec.n_bins}) to {path}, sha256 {digest[:12]}")
    for line in summary_lines(spec, prepared):
        print(line)
    return spec
