"""Shared fixtures: small datasets, CSV files and experiment configs."""
import json

import numpy as np
import pandas as pd
import pytest

from dataset import Dataset, assign_splits, from_arrays
from utils.synthetic import make_irregular_dataset


def write_dataset_csv(dataset: Dataset, path, label_column: str = "target"):
    frame = pd.DataFrame(np.asarray(dataset.features), columns=list(dataset.feature_names))
    frame[label_column] = np.asarray(dataset.labels)
    frame.to_csv(path, index=False)
    return str(path)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_regression() -> Dataset:
    return make_irregular_dataset(n=200, d=4, seed=3)


@pytest.fixture
def small_binclass() -> Dataset:
    return make_irregular_dataset(n=200, d=4, task="binclass", seed=3)


@pytest.fixture
def separable_binclass() -> Dataset:
    """One feature, classes on either side of a gap around 0."""
    gen = np.random.default_rng(7)
    labels = gen.integers(0, 2, size=200)
    magnitude = gen.uniform(1.0, 2.0, size=200)
    features = np.where(labels == 1, magnitude, -magnitude)[:, None]
    return assign_splits(from_arrays(features, labels, "binclass"), fractions=(0.6, 0.2, 0.2), seed=0)


@pytest.fixture
def csv_path(tmp_path) -> str:
    """Regression CSV with three continuous features and one 3-valued column."""
    data = make_irregular_dataset(n=150, d=3, seed=11)
    frame = pd.DataFrame(np.asarray(data.features), columns=["x0", "x1", "x2"])
    frame["level"] = np.arange(150) % 3
    frame["target"] = np.asarray(data.labels)
    path = tmp_path / "data.csv"
    frame.to_csv(path, index=False)
    return str(path)


@pytest.fixture
def config_path(tmp_path, csv_path) -> str:
    """Tiny experiment config so CLI tests finish quickly."""
    config = {
        "dataset_path": csv_path,
        "task": "regression",
        "n_bins": 4,
        "encoder_dims": [8],
        "epochs": 2,
        "lr": 1e-3,
        "probe_epochs": 3,
        "probe_seeds": 2,
        "finetune_epochs": 2,
        "supervised_epochs": 2,
        "output_dir": str(tmp_path / "run"),
    }
    path = tmp_path / "experiment.json"
    path.write_text(json.dumps(config))
    return str(path)
