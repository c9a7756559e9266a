"""`eval` command: downstream evaluation of a pretrained encoder."""
import logging
import os

from commands.common import (
    PreparedData,
    banner,
    bin_targets,
    binning_path,
    checkpoint_path,
    current_binning_hash,
    encoder_spec,
    ensure_output_dir,
    fit_spec,
    load_encoder,
    load_spec,
    prepare_data,
)
from config import ConfigError, ExperimentConfig
from evaluation import (
    ProbeConfig,
    RunReport,
    bin_prediction_probe,
    finetune,
    linear_probe,
    pca_project,
    supervised_baseline,
)
from training import encode
from utils.reports import create_provenance, write_csv, write_json, write_run_report

logger = logging.getLogger(__name__)

MODES = ("probe", "finetune", "bin_error", "pca", "supervised")


def probe_config(config: ExperimentConfig) -> ProbeConfig:
    return ProbeConfig(lr=config.probe_lr, epochs=config.probe_epochs, n_seeds=config.probe_seeds,
                       weight_decay=config.weight_decay)


def provenance(config: ExperimentConfig, with_checkpoint: bool = True) -> dict:
    return create_provenance(
        config.config_hash(),
        dataset_path=config.dataset_path,
        binning_hash=current_binning_hash(config),
        checkpoint_path=checkpoint_path(config) if with_checkpoint else None,
    )


def evaluate_encoder(config: ExperimentConfig, prepared: PreparedData, encoder, mode: str) -> RunReport:
    """Probe or fine-tune ``encoder`` with the config's downstream settings."""
    threads = config.resolved_threads()
    if mode == "probe":
        return linear_probe(encoder, prepared.data, probe_config(config), prepared.standardizer, threads)
    if mode == "finetune":
        return finetune(encoder, prepared.data, epochs=config.finetune_epochs, lr=config.finetune_lr,
                        n_seeds=config.probe_seeds, weight_decay=config.weight_decay,
                        standardizer=prepared.standardizer, threads=threads)
    raise ConfigError(f"Unknown evaluation mode '{mode}'")


def _bin_error(config: ExperimentConfig, prepared: PreparedData, directory: str) -> dict:
    encoder = load_encoder(config, prepared.data.n_features)
    targets = bin_targets(load_spec(config), prepared)
    reference = None
    if config.reference_checkpoint:
        reference = load_encoder(config, prepared.data.n_features, config.reference_checkpoint)
    result = bin_prediction_probe(encoder, prepared.data, targets, reference)
    document = result.to_dict()
    document["provenance"] = provenance(config)
    write_json(document, os.path.join(directory, "report_bin_error.json"))
    write_csv([result.to_dict()], os.path.join(directory, "report_bin_error.csv"))
    return document


def _pca(config: ExperimentConfig, prepared: PreparedData, directory: str) -> dict:
    encoder = load_encoder(config, prepared.data.n_features)
    if not 0 <= config.pca_feature < prepared.data.n_features:
        raise ConfigError(f"pca_feature {config.pca_feature} is not a feature index")
    if os.path.isfile(binning_path(config)):
        spec = load_spec(config)
    else:
        spec = fit_spec(config, prepared)
    indices = bin_targets(spec, prepared).indices[:, config.pca_feature]
    result = pca_project(encode(encoder, prepared.data.features))
    rows = [
        {"pc1": float(c[0]), "pc2": float(c[1]), "bin_index": int(t)}
        for c, t in zip(result.coordinates, indices)
    ]
    write_csv(rows, os.path.join(directory, "pca.csv"), columns=["pc1", "pc2", "bin_index"])
    document = {
        "explained_variance": result.explained_variance.tolist(),
        "explained_variance_ratio": result.explained_variance_ratio.tolist(),
        "total_variance": result.total_variance,
        "feature": prepared.raw.feature_names[config.pca_feature],
        "provenance": provenance(config),
    }
    write_json(document, os.path.join(directory, "report_pca.json"))
    return document


def run(config: ExperimentConfig, mode: str):
    if mode not in MODES:
        raise ConfigError(f"eval mode must be one of {MODES}, got '{mode}'")
    banner(f"tabbin - eval ({mode})", config)
    prepared = prepare_data(config)
    directory = ensure_output_dir(config)

    if mode == "bin_error":
        return _bin_error(config, prepared, directory)
    if mode == "pca":
        return _pca(config, prepared, directory)
    if mode == "supervised":
        report = supervised_baseline(
            encoder_spec(config, prepared.data.n_features), prepared.data,
            epochs=config.supervised_epochs, lr=config.supervised_lr, n_seeds=config.probe_seeds,
            weight_decay=config.weight_decay, standardizer=prepared.standardizer,
            threads=config.resolved_threads(),
        )
        report.provenance = provenance(config, with_checkpoint=False)
    else:
        encoder = load_encoder(config, prepared.data.n_features)
        report = evaluate_encoder(config, prepared, encoder, mode)
        report.provenance = provenance(config)

    write_run_report(report, directory, f"report_{mode}")
    logger.info(f"{mode}: {report.metric} mean {report.mean:.4f}, std {report.std:.4f} "
                f"over {len(report.per_seed)} seeds")
    return report
