"""Synthetic datasets whose target is a sum of per-feature step functions."""
import logging

import numpy as np

from dataset import Dataset, assign_splits, from_arrays

logger = logging.getLogger(__name__)


def step_targets(features: np.ndarray, steps: int, rng: np.random.Generator) -> np.ndarray:
    """Sum over features of a piecewise-constant function with ``steps`` levels."""
    n, d = features.shape
    total = np.zeros(n)
    for j in range(d):
        cuts = np.sort(rng.uniform(0.0, 1.0, size=steps - 1))
        levels = rng.normal(0.0, 1.0, size=steps)
        total += levels[np.searchsorted(cuts, features[:, j], side="right")]
    return total


def make_irregular_dataset(
    n: int = 4000,
    d: int = 8,
    steps: int = 5,
    noise: float = 0.1,
    task: str = "regression",
    seed: int = 0,
) -> Dataset:
    """Uniform features on [0, 1] with an irregular, split-ready target.

    The classification variant thresholds the same target at its median.
    """
    if task not in ("regression", "binclass"):
        raise ValueError(f"synthetic suite supports regression and binclass, got '{task}'")
    if steps < 2:
        raise ValueError("steps must be at least 2")
    rng = np.random.default_rng(seed)
    features = rng.uniform(0.0, 1.0, size=(n, d))
    target = step_targets(features, steps, rng) + rng.normal(0.0, noise, size=n)
    if task == "binclass":
        target = (target > np.median(target)).astype(np.int64)
    dataset = from_arrays(features, target, task, [f"x{j}" for j in range(d)])
    logger.debug("Generated irregular %s dataset: n=%d d=%d seed=%d", task, n, d, seed)
    return assign_splits(dataset, fractions=(0.8, 0.1, 0.1), seed=seed)
