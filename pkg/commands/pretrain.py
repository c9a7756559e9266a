"""`pretrain` command: self-supervised training of the encoder and decoders."""
import logging

from commands.common import (
    banner,
    current_binning_hash,
    echo_config,
    ensure_output_dir,
    load_spec,
    prepare_data,
    run_pretraining,
    write_pretrain_artifacts,
)
from config import ExperimentConfig
from training import PretrainResult

logger = logging.getLogger(__name__)


def run(config: ExperimentConfig) -> PretrainResult:
    banner("tabbin - pretrain", config)
    prepared = prepare_data(config)
    spec = load_spec(config) if config.needs_binning() else None
    binning_hash = current_binning_hash(config) if spec is not None else None

    result = run_pretraining(config, prepared, spec)
    directory = ensure_output_dir(config)
    write_pretrain_artifacts(result, directory, config, binning_hash)
    echo_config(config)
    if result.log:
        logger.info(f"Pretraining finished: final total loss {result.log[-1].total:.6f}")
    else:
        logger.info("Pretraining ran for 0 epochs; encoder left at its initialization")
    return result
