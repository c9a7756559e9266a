"""Self-supervised pretraining loop."""
import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from binning import BinnedTargets, BinningSpec
from corruption import CorruptionConfig
from dataset import Dataset, batch_indices, batch_size_rule
from network import (
    Decoder,
    LrSchedule,
    MlpNetwork,
    MlpSpec,
    OptimizerState,
    PerFeatureHead,
    adamw_step,
    cosine_lr,
    init_params,
)
from objectives import LossSpec, combine, decoder_output_dim, evaluate_loss

logger = logging.getLogger(__name__)


class NonFiniteLossError(RuntimeError):
    """Raised when a loss turns NaN or infinite; carries where it happened."""

    def __init__(self, epoch: int, batch: int, kind: str, value: float):
        self.epoch = epoch
        self.batch = batch
        self.kind = kind
        self.value = value
        super().__init__(f"non-finite {kind} loss ({value}) at epoch {epoch}, batch {batch}")


@dataclass
class SslRunConfig:
    """Everything one pretraining run needs besides the data."""

    encoder_spec: MlpSpec
    loss_spec: LossSpec
    corruption: CorruptionConfig = field(default_factory=CorruptionConfig)
    binning: Optional[BinningSpec] = None
    # None: mirror the encoder's hidden widths
    decoder_hidden: Optional[Tuple[int, ...]] = None
    head_embedding_dim: int = 8
    epochs: int = 1000
    base_lr: float = 1e-4
    weight_decay: float = 1e-5
    batch_size: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if self.loss_spec.needs_binning and self.binning is None:
            raise ValueError("BinRecon/BinXent objectives need a fitted binning spec")

    @property
    def decoder_hidden_dims(self) -> Tuple[int, ...]:
        if self.decoder_hidden is not None:
            return tuple(self.decoder_hidden)
        return tuple(reversed(self.encoder_spec.hidden_dims))


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    losses: Dict[str, float]
    total: float
    wall_time: float

    def format_line(self, with_time: bool = True) -> str:
        parts = [f"epoch={self.epoch}", f"lr={self.lr:.6e}"]
        parts += [f"{kind}={value:.6f}" for kind, value in self.losses.items()]
        parts.append(f"total={self.total:.6f}")
        if with_time:
            parts.append(f"wall_time={self.wall_time:.3f}s")
        return " ".join(parts)


@dataclass
class PretrainResult:
    encoder: MlpNetwork
    decoders: List[Decoder]
    log: List[EpochRecord]

    @property
    def networks(self) -> list:
        """Encoder, then every decoder module, in checkpoint order."""
        return [self.encoder] + [m for dec in self.decoders for m in dec.modules]


def _seed_of(seq: np.random.SeedSequence) -> int:
    return int(seq.generate_state(1)[0])


def build_decoders(config: SslRunConfig, n_features: int, n_classes: int,
                   seeds: Sequence[np.random.SeedSequence]) -> List[Decoder]:
    decoders = []
    rep_dim = config.encoder_spec.output_dim
    for entry, seq in zip(config.loss_spec.entries, seeds):
        trunk_seed, head_seed = (_seed_of(s) for s in seq.spawn(2))
        out_dim = decoder_output_dim(entry.kind, n_features, config.head_embedding_dim)
        trunk = init_params(MlpSpec(rep_dim, config.decoder_hidden_dims, out_dim), trunk_seed)
        head = None
        if entry.kind == "BinXent":
            head = PerFeatureHead.init(config.head_embedding_dim, n_classes, head_seed)
        decoders.append(Decoder(trunk, head, n_features=n_features))
    return decoders


def _loss_names(loss_spec: LossSpec) -> List[str]:
    kinds = loss_spec.kinds
    return [k if kinds.count(k) == 1 else f"{k}_{i}" for i, k in enumerate(kinds)]


def build_corruption(mode: str, p_m: float, train_features: np.ndarray) -> CorruptionConfig:
    """Constant replacement uses train means of the (standardized) features."""
    return CorruptionConfig(p_m=p_m, mode=mode, constant_vector=train_features.mean(axis=0))


def pretrain(
    config: SslRunConfig,
    dataset: Dataset,
    targets: Optional[BinnedTargets] = None,
    log_every: int = 1,
) -> PretrainResult:
    """Train encoder and decoders on the train rows of a standardized dataset.

    Args:
        config: network, loss, corruption and optimizer settings
        dataset: standardized dataset with splits assigned
        targets: bin targets for every row of ``dataset`` (binned losses only)
        log_every: emit an INFO line every this many epochs

    Returns:
        Trained networks and one log record per epoch
    """
    if config.loss_spec.needs_binning and targets is None:
        raise ValueError("binned objectives need bin targets")
    train_rows = dataset.indices("train")
    features = dataset.features
    n_features = dataset.n_features
    if config.encoder_spec.input_dim != n_features:
        raise ValueError(f"encoder expects {config.encoder_spec.input_dim} inputs, dataset has {n_features}")

    root = np.random.SeedSequence(config.seed)
    encoder_seq, corruption_seq, *decoder_seqs = root.spawn(2 + len(config.loss_spec.entries))
    encoder = init_params(config.encoder_spec, _seed_of(encoder_seq))
    n_classes = targets.n_classes if targets is not None else 1
    decoders = build_decoders(config, n_features, n_classes, decoder_seqs)
    rng = np.random.default_rng(corruption_seq)

    params = encoder.parameters() + [p for dec in decoders for p in dec.parameters()]
    grads = encoder.gradients() + [g for dec in decoders for g in dec.gradients()]
    state = OptimizerState.for_params(params, base_lr=config.base_lr, weight_decay=config.weight_decay)

    batch_size = config.batch_size or batch_size_rule(train_rows.size)
    steps_per_epoch = -(-train_rows.size // batch_size)
    schedule = LrSchedule(config.base_lr, config.epochs * steps_per_epoch)
    entries = config.loss_spec.entries
    weights = config.loss_spec.weights
    logger.info(
        f"Pretraining {'+'.join(config.loss_spec.kinds)} for {config.epochs} epochs, "
        f"{steps_per_epoch} steps/epoch, batch {batch_size}, corruption {config.corruption.mode}"
        f"(p_m={config.corruption.p_m})"
    )

    log: List[EpochRecord] = []
    step = 0
    for epoch in range(config.epochs):
        started = time.perf_counter()
        sums = np.zeros(len(entries))
        total_sum = 0.0
        lr = cosine_lr(schedule, step)
        batches = batch_indices(train_rows, batch_size, seed=config.seed, shuffle=True, epoch=epoch)
        for b, rows in enumerate(batches):
            clean = features[rows]
            batch = config.corruption.apply(clean, rng)
            batch_targets = targets.take(rows) if targets is not None else None

            encoder.zero_grad()
            for dec in decoders:
                dec.zero_grad()
            z, cache = encoder.forward(batch.corrupted)

            terms = []
            for i, (entry, dec) in enumerate(zip(entries, decoders)):
                prediction = dec.forward(z)
                value, grad = evaluate_loss(
                    entry.kind,
                    prediction,
                    clean,
                    batch.mask,
                    recon_targets=batch_targets.recon_targets if batch_targets is not None else None,
                    one_hot_targets=batch_targets.one_hot() if entry.kind == "BinXent" else None,
                )
                if not np.isfinite(value):
                    raise NonFiniteLossError(epoch + 1, b, entry.kind, value)
                sums[i] += value
                terms.append((value, grad))
            total, scaled = combine(terms, weights)
            total_sum += total

            dz = np.zeros_like(z)
            for dec, grad in zip(decoders, scaled):
                dz += dec.backward(grad)
            encoder.backward(cache, dz)

            lr = cosine_lr(schedule, step)
            adamw_step(state, params, grads, lr)
            step += 1

        n_batches = max(len(batches), 1)
        record = EpochRecord(
            epoch=epoch + 1,
            lr=lr,
            losses={name: float(s / n_batches) for name, s in zip(_loss_names(config.loss_spec), sums)},
            total=total_sum / n_batches,
            wall_time=time.perf_counter() - started,
        )
        log.append(record)
        if log_every and (epoch + 1) % log_every == 0:
            logger.info(record.format_line())

    return PretrainResult(encoder=encoder, decoders=decoders, log=log)


def encode(encoder: MlpNetwork, features: np.ndarray) -> np.ndarray:
    """Representations z for every row; the encoder is not modified."""
    z, _ = encoder.forward(features)
    return z
