"""Report writers and provenance hashes for experiment artifacts."""
import hashlib
import json
import logging
import os
from typing import Dict, List, Optional

import pandas as pd

logger = logging.getLogger(__name__)


class ProvenanceError(ValueError):
    """Raised when an artifact was produced from different inputs than the current run."""


def file_hash(path: str) -> str:
    """SHA-256 of a file's bytes."""
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def create_provenance(
    config_hash: str,
    dataset_path: Optional[str] = None,
    binning_hash: Optional[str] = None,
    checkpoint_path: Optional[str] = None,
) -> Dict[str, str]:
    """Hashes of every input a report depends on.

    Args:
        config_hash: hash of the resolved experiment config
        dataset_path: CSV the dataset was read from
        binning_hash: hash of the binning document used for targets
        checkpoint_path: encoder checkpoint that was evaluated

    Returns:
        Mapping of input name to SHA-256
    """
    provenance = {"config": config_hash}
    if dataset_path and os.path.isfile(dataset_path):
        provenance["dataset"] = file_hash(dataset_path)
    if binning_hash:
        provenance["binning"] = binning_hash
    if checkpoint_path and os.path.isfile(checkpoint_path):
        provenance["checkpoint"] = file_hash(checkpoint_path)
    return provenance


def check_binning_hash(recorded: Optional[str], current: str, artifact: str):
    """Refuse to pair an artifact with a binning document it was not trained on."""
    if recorded is not None and recorded != current:
        raise ProvenanceError(
            f"{artifact} was produced with binning {recorded}, but the binning file now hashes to {current}; "
            f"rerun `pretrain` after `bin`"
        )


def write_json(data: Dict, path: str):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(data, indent=2, sort_keys=True) + "\n")
    logger.debug("Wrote %s", path)


def read_json(path: str) -> Dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def write_csv(rows: List[Dict], path: str, columns: Optional[List[str]] = None):
    frame = pd.DataFrame(rows, columns=columns)
    frame.to_csv(path, index=False, lineterminator="\n", float_format="%.10g")
    logger.debug("Wrote %d row(s) to %s", len(frame), path)


def report_rows(report) -> List[Dict]:
    """Flat rows of a RunReport: one per seed, then mean and std."""
    rows = []
    for seed, (test, val) in enumerate(zip(report.per_seed, report.val_per_seed)):
        row = {"seed": str(seed), "metric": report.metric, "test": test, "val": val}
        if report.per_seed_original is not None:
            row["test_original"] = report.per_seed_original[seed]
        rows.append(row)
    summary = report.to_dict()
    for name in ("mean", "std"):
        row = {"seed": name, "metric": report.metric, "test": summary[name],
               "val": summary["val_mean"] if name == "mean" else None}
        if report.per_seed_original is not None:
            row["test_original"] = summary[f"{name}_original"]
        rows.append(row)
    return rows


def write_run_report(report, directory: str, name: str):
    """``<name>.json`` and ``<name>.csv`` side by side."""
    write_json(report.to_dict(), os.path.join(directory, f"{name}.json"))
    write_csv(report_rows(report), os.path.join(directory, f"{name}.csv"))
