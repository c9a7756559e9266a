"""Masking corruption of input batches."""
from dataclasses import dataclass
from typing import Optional

import numpy as np

MODES = ("none", "constant", "random")


class CorruptionError(ValueError):
    """Raised for invalid corruption settings or mismatched shapes."""


@dataclass(frozen=True)
class CorruptedBatch:
    corrupted: np.ndarray
    mask: np.ndarray
    original: np.ndarray


def sample_mask(n: int, d: int, p_m: float, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. Bernoulli(p_m) matrix of 0.0 / 1.0 entries."""
    if not 0.0 <= p_m <= 1.0:
        raise CorruptionError(f"masking probability must lie in [0, 1], got {p_m}")
    return (rng.random((n, d)) < p_m).astype(np.float64)


def build_replacement(
    batch: np.ndarray,
    mode: str,
    constant_vector: Optional[np.ndarray],
    rng: np.random.Generator,
) -> np.ndarray:
    """Values that masked entries are swapped for.

    ``constant`` broadcasts ``constant_vector``; ``random`` copies, for every
    (row, column), the same column of a uniformly drawn row of the batch.
    The donor row may be the row itself.
    """
    n, d = batch.shape
    if mode == "constant":
        if constant_vector is None or len(constant_vector) != d:
            raise CorruptionError("constant mode needs a constant vector of length d")
        return np.broadcast_to(np.asarray(constant_vector, dtype=np.float64), (n, d)).copy()
    if mode == "random":
        if n < 1:
            raise CorruptionError("random replacement needs at least one row")
        donors = rng.integers(0, n, size=(n, d))
        return batch[donors, np.arange(d)]
    raise CorruptionError(f"Unknown replacement mode '{mode}'")


def corrupt(batch: np.ndarray, mask: np.ndarray, replacement: np.ndarray) -> CorruptedBatch:
    """``(1 - m) * x + m * x_bar`` computed as a select, so unmasked entries stay bit-exact."""
    if not (batch.shape == mask.shape == replacement.shape):
        raise CorruptionError(
            f"shape mismatch: batch {batch.shape}, mask {mask.shape}, replacement {replacement.shape}"
        )
    corrupted = np.where(mask.astype(bool), replacement, batch)
    return CorruptedBatch(corrupted=corrupted, mask=mask, original=batch)


@dataclass(frozen=True)
class CorruptionConfig:
    p_m: float = 0.0
    mode: str = "none"
    constant_vector: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise CorruptionError(f"Unknown corruption mode '{self.mode}'")
        if not 0.0 <= self.p_m <= 1.0:
            raise CorruptionError(f"masking probability must lie in [0, 1], got {self.p_m}")

    @property
    def is_identity(self) -> bool:
        return self.mode == "none" or self.p_m == 0.0

    def apply(self, batch: np.ndarray, rng: np.random.Generator) -> CorruptedBatch:
        """Fresh mask and replacement for one training step."""
        if self.is_identity:
            return CorruptedBatch(corrupted=batch, mask=np.zeros_like(batch), original=batch)
        mask = sample_mask(batch.shape[0], batch.shape[1], self.p_m, rng)
        replacement = build_replacement(batch, self.mode, self.constant_vector, rng)
        return corrupt(batch, mask, replacement)
