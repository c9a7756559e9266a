"""Helpers shared by the sub-commands: data preparation, artifact paths, model loading."""
import logging
import os
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

import binning
from binning import BinnedTargets, BinningSpec
from config import Config, ConfigError, ExperimentConfig
from dataset import Dataset, Standardizer, assign_splits, fit_standardizer, load_csv, read_index_file, standardize
from network import MlpNetwork, MlpSpec, init_params
from objectives import LossSpec
from training import PretrainResult, SslRunConfig, build_corruption, pretrain
from utils.checkpoint import load_checkpoint, save_checkpoint
from utils.reports import check_binning_hash, read_json, write_json

logger = logging.getLogger(__name__)

BINNING_FILE = "binning.json"
CHECKPOINT_FILE = "checkpoint.tbck"
PRETRAIN_FILE = "pretrain.json"
TRAIN_LOG_FILE = "train_log.txt"
CONFIG_FILE = "config.json"


@dataclass(frozen=True)
class PreparedData:
    """Raw dataset with splits, its standardizer, and the standardized copy."""

    raw: Dataset
    standardizer: Standardizer
    data: Dataset

    def raw_train_features(self) -> np.ndarray:
        return self.raw.rows("train")[0]


def banner(title: str, config: ExperimentConfig):
    logger.info("=" * 60)
    logger.info(title)
    logger.info(f"Dataset     : {config.dataset_path}")
    logger.info(f"Output dir  : {output_dir(config)}")
    logger.info(f"Seed        : {config.seed}")
    logger.info("=" * 60)


# ── Paths ─────────────────────────────────────────────────────────────────────

def output_dir(config: ExperimentConfig) -> str:
    return config.output_dir or Config.OUTPUT_DIR


def ensure_output_dir(config: ExperimentConfig) -> str:
    directory = output_dir(config)
    os.makedirs(directory, exist_ok=True)
    return directory


def binning_path(config: ExperimentConfig) -> str:
    return config.binning_path or os.path.join(output_dir(config), BINNING_FILE)


def checkpoint_path(config: ExperimentConfig) -> str:
    return config.checkpoint_path or os.path.join(output_dir(config), CHECKPOINT_FILE)


def echo_config(config: ExperimentConfig):
    """Write the resolved config next to the other artifacts."""
    path = os.path.join(ensure_output_dir(config), CONFIG_FILE)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(config.to_json())


# ── Data ──────────────────────────────────────────────────────────────────────

def prepare_data(config: ExperimentConfig) -> PreparedData:
    """Load the CSV, assign splits, fit the standardizer on train rows."""
    config.require_dataset()
    raw = load_csv(config.dataset_path, config.task, config.label_column)
    if config.split_mode == "index_files":
        if len(config.split_index_files) != 3:
            raise ConfigError("split_index_files needs three paths (train, val, test)")
        raw = assign_splits(
            raw,
            index_sets=[read_index_file(p) for p in config.split_index_files],
            categorical_threshold=config.categorical_threshold,
        )
    else:
        raw = assign_splits(
            raw,
            fractions=config.split_fractions,
            seed=config.split_seed,
            categorical_threshold=config.categorical_threshold,
        )
    return prepare_split_dataset(raw)


def prepare_split_dataset(raw: Dataset) -> PreparedData:
    standardizer = fit_standardizer(raw)
    return PreparedData(raw=raw, standardizer=standardizer, data=standardize(raw, standardizer))


# ── Models ────────────────────────────────────────────────────────────────────

def encoder_spec(config: ExperimentConfig, n_features: int) -> MlpSpec:
    dims = [int(w) for w in config.encoder_dims]
    return MlpSpec(n_features, tuple(dims[:-1]), dims[-1])


def ssl_run_config(config: ExperimentConfig, prepared: PreparedData,
                   spec: Optional[BinningSpec]) -> SslRunConfig:
    return SslRunConfig(
        encoder_spec=encoder_spec(config, prepared.data.n_features),
        loss_spec=LossSpec.from_config(config.losses),
        corruption=build_corruption(
            config.corruption_mode, float(config.mask_prob), prepared.data.rows("train")[0]
        ),
        binning=spec,
        decoder_hidden=None if config.decoder_dims is None else tuple(config.decoder_dims),
        head_embedding_dim=config.head_embedding_dim,
        epochs=config.epochs,
        base_lr=config.lr,
        weight_decay=config.weight_decay,
        batch_size=config.batch_size,
        seed=config.seed,
    )


def fit_spec(config: ExperimentConfig, prepared: PreparedData, method: Optional[str] = None) -> BinningSpec:
    """Bins fitted on the raw train features."""
    return binning.fit_binning(prepared.raw_train_features(), int(config.n_bins), method or config.bin_method)


def bin_targets(spec: BinningSpec, prepared: PreparedData) -> BinnedTargets:
    """Targets for every row, computed from raw feature values."""
    return spec.targets(prepared.raw.features)


def load_spec(config: ExperimentConfig) -> BinningSpec:
    path = binning_path(config)
    if not os.path.isfile(path):
        raise ConfigError(f"Binning file {path} not found; run the `bin` command first")
    return binning.load(path)


def current_binning_hash(config: ExperimentConfig) -> Optional[str]:
    path = binning_path(config)
    if not os.path.isfile(path):
        return None
    with open(path, "r", encoding="utf-8") as fh:
        return binning.spec_hash(fh.read())


def run_pretraining(config: ExperimentConfig, prepared: PreparedData, spec: Optional[BinningSpec],
                    targets: Optional[BinnedTargets] = None, log_every: int = 1) -> PretrainResult:
    """Build the run config and train; bin targets come from ``spec`` unless given."""
    run_config = ssl_run_config(config, prepared, spec)
    if targets is None and spec is not None and run_config.loss_spec.needs_binning:
        targets = bin_targets(spec, prepared)
    return pretrain(run_config, prepared.data, targets=targets, log_every=log_every)


def write_pretrain_artifacts(result: PretrainResult, directory: str, config: ExperimentConfig,
                             binning_hash: Optional[str]):
    """Checkpoint, epoch log and a small summary document."""
    os.makedirs(directory, exist_ok=True)
    save_checkpoint(result.networks, os.path.join(directory, CHECKPOINT_FILE))
    with open(os.path.join(directory, TRAIN_LOG_FILE), "w", encoding="utf-8", newline="\n") as fh:
        for record in result.log:
            fh.write(record.format_line(with_time=False) + "\n")
    final = result.log[-1] if result.log else None
    write_json({
        "config_hash": config.config_hash(),
        "binning_hash": binning_hash,
        "losses": [entry["kind"] for entry in config.losses],
        "epochs": config.epochs,
        "final_losses": final.losses if final else {},
        "final_total": final.total if final else None,
        "encoder_checksum": result.encoder.checksum(),
    }, os.path.join(directory, PRETRAIN_FILE))


def load_encoder(config: ExperimentConfig, n_features: int, path: Optional[str] = None) -> MlpNetwork:
    """Encoder weights from a checkpoint, refusing a binning file it was not trained with."""
    path = path or checkpoint_path(config)
    if not os.path.isfile(path):
        raise ConfigError(f"Checkpoint {path} not found; run the `pretrain` command first")
    summary_path = os.path.join(os.path.dirname(path) or ".", PRETRAIN_FILE)
    current = current_binning_hash(config)
    if os.path.isfile(summary_path) and current is not None:
        check_binning_hash(read_json(summary_path).get("binning_hash"), current, path)
    encoder = init_params(encoder_spec(config, n_features), 0)
    load_checkpoint(path, expected=[encoder])
    return encoder


def with_overrides(config: ExperimentConfig, **changes) -> ExperimentConfig:
    updated = replace(config, **changes)
    updated.validate()
    return updated
