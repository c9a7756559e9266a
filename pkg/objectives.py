"""Self-supervised losses, their gradients, and weighted multi-loss combination."""
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from scipy.special import expit, log_softmax, softmax

KINDS = ("ValueRecon", "MaskXent", "BinRecon", "BinXent")
BINNED_KINDS = ("BinRecon", "BinXent")


class LossError(ValueError):
    """Raised for mismatched shapes or malformed targets."""


@dataclass(frozen=True)
class LossEntry:
    kind: str
    weight: float = 1.0
    decoder_id: int = 0


@dataclass(frozen=True)
class LossSpec:
    """Losses optimized together; each entry owns one decoder."""

    entries: Tuple[LossEntry, ...]

    def __post_init__(self):
        if not self.entries:
            raise LossError("a loss spec needs at least one entry")
        for entry in self.entries:
            if entry.kind not in KINDS:
                raise LossError(f"Unknown loss kind '{entry.kind}'")
            if not np.isfinite(entry.weight) or entry.weight < 0:
                raise LossError(f"loss weight must be finite and non-negative, got {entry.weight}")

    @classmethod
    def from_config(cls, losses: Sequence[dict]) -> "LossSpec":
        return cls(tuple(
            LossEntry(kind=item["kind"], weight=float(item.get("weight", 1.0)), decoder_id=i)
            for i, item in enumerate(losses)
        ))

    @property
    def kinds(self) -> List[str]:
        return [e.kind for e in self.entries]

    @property
    def weights(self) -> List[float]:
        return [e.weight for e in self.entries]

    @property
    def needs_binning(self) -> bool:
        return any(kind in BINNED_KINDS for kind in self.kinds)

    @property
    def needs_mask(self) -> bool:
        return "MaskXent" in self.kinds


def _check_shapes(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise LossError(f"shape mismatch: targets {a.shape}, predictions {b.shape}")


def loss_value_recon(x: np.ndarray, x_hat: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean over samples of the squared Euclidean distance."""
    _check_shapes(x, x_hat)
    n = x.shape[0]
    diff = x_hat - x
    return float(np.sum(diff * diff) / n), 2.0 * diff / n


def loss_bin_recon(t: np.ndarray, t_hat: np.ndarray) -> Tuple[float, np.ndarray]:
    """ValueRecon with bin indices (or ablated bin targets) as the reconstruction target."""
    return loss_value_recon(np.asarray(t, dtype=np.float64), t_hat)


def loss_mask_xent(m: np.ndarray, logits: np.ndarray) -> Tuple[float, np.ndarray]:
    """Binary cross-entropy of mask detection, summed over features and averaged over samples."""
    _check_shapes(m, logits)
    if np.any((m != 0) & (m != 1)):
        raise LossError("mask targets must be 0 or 1")
    n = m.shape[0]
    # softplus(l) - m * l, written to avoid overflow
    per_entry = np.maximum(logits, 0.0) - m * logits + np.log1p(np.exp(-np.abs(logits)))
    return float(per_entry.sum() / n), (expit(logits) - m) / n


def loss_bin_xent(u: np.ndarray, logits: np.ndarray) -> Tuple[float, np.ndarray]:
    """Softmax cross-entropy per (sample, feature) slot, averaged over N * d."""
    _check_shapes(u, logits)
    if u.ndim != 3:
        raise LossError(f"expected (N, d, T) targets, got shape {u.shape}")
    if np.any((u != 0) & (u != 1)) or np.any(u.sum(axis=-1) != 1):
        raise LossError("bin targets must be one-hot along the last axis")
    n, d = u.shape[:2]
    log_probs = log_softmax(logits, axis=-1)
    loss = -np.sum(u * log_probs) / (n * d)
    return float(loss), (softmax(logits, axis=-1) - u) / (n * d)


def combine(
    losses: Sequence[Tuple[float, np.ndarray]],
    weights: Sequence[float],
) -> Tuple[float, List[np.ndarray]]:
    """Weighted sum of loss values; each decoder's gradient scaled by its weight."""
    if len(losses) != len(weights):
        raise LossError(f"{len(losses)} losses but {len(weights)} weights")
    total = 0.0
    grads = []
    for (value, grad), w in zip(losses, weights):
        total += w * value
        grads.append(w * grad)
    return total, grads


def decoder_output_dim(kind: str, n_features: int, embedding_dim: int) -> int:
    """Width of the decoder trunk output for a loss kind."""
    if kind == "BinXent":
        return n_features * embedding_dim
    return n_features


def evaluate_loss(kind: str, prediction: np.ndarray, clean: np.ndarray, mask: np.ndarray,
                  recon_targets: np.ndarray = None, one_hot_targets: np.ndarray = None) -> Tuple[float, np.ndarray]:
    """Dispatch one loss kind against the targets of a batch."""
    if kind == "ValueRecon":
        return loss_value_recon(clean, prediction)
    if kind == "MaskXent":
        return loss_mask_xent(mask, prediction)
    if kind == "BinRecon":
        return loss_bin_recon(recon_targets, prediction)
    if kind == "BinXent":
        return loss_bin_xent(one_hot_targets, prediction)
    raise LossError(f"Unknown loss kind '{kind}'")
