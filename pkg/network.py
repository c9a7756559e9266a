"""Dense networks with hand-written backpropagation, AdamW and cosine annealing."""
import hashlib
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)


class ShapeError(ValueError):
    """Raised when array shapes do not fit a network."""


class NonFiniteGradientError(RuntimeError):
    """Raised when an optimizer step sees NaN or infinite gradients."""


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_grad(pre: np.ndarray) -> np.ndarray:
    return np.where(pre > 0, 1.0, 0.0)


# ── MLP ───────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class MlpSpec:
    """Affine layers ``input -> hidden... -> output``; ReLU after each hidden layer."""

    input_dim: int
    hidden_dims: Tuple[int, ...]
    output_dim: int

    def __post_init__(self):
        dims = (self.input_dim,) + tuple(self.hidden_dims) + (self.output_dim,)
        if any(int(w) < 1 for w in dims):
            raise ShapeError(f"all layer widths must be positive, got {dims}")

    @property
    def dims(self) -> Tuple[int, ...]:
        return (self.input_dim,) + tuple(self.hidden_dims) + (self.output_dim,)

    @property
    def depth(self) -> int:
        return len(self.dims) - 1


@dataclass
class ForwardCache:
    inputs: np.ndarray
    # input to every layer, and the pre-activation of every hidden layer
    layer_inputs: List[np.ndarray] = field(default_factory=list)
    pre_activations: List[np.ndarray] = field(default_factory=list)


class MlpNetwork:
    """Weights (fan_in x fan_out), biases and their gradient buffers."""

    def __init__(self, spec: MlpSpec, weights: List[np.ndarray], biases: List[np.ndarray]):
        self.spec = spec
        self.weights = weights
        self.biases = biases
        for i, (w, b) in enumerate(zip(weights, biases)):
            expected = (spec.dims[i], spec.dims[i + 1])
            if w.shape != expected or b.shape != (expected[1],):
                raise ShapeError(
                    f"layer {i}: expected weight {expected} and bias ({expected[1]},), "
                    f"got {w.shape} and {b.shape}"
                )
        self.weight_grads = [np.zeros_like(w) for w in weights]
        self.bias_grads = [np.zeros_like(b) for b in biases]

    @property
    def layers(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        return list(zip(self.weights, self.biases))

    def parameters(self) -> List[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def gradients(self) -> List[np.ndarray]:
        return [g for pair in zip(self.weight_grads, self.bias_grads) for g in pair]

    def zero_grad(self):
        for g in self.gradients():
            g.fill(0.0)

    def copy(self) -> "MlpNetwork":
        return MlpNetwork(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for p in self.parameters():
            digest.update(np.ascontiguousarray(p, dtype="<f8").tobytes())
        return digest.hexdigest()

    def forward(self, batch: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
        """Output rows for ``batch`` plus the cache backward needs."""
        batch = np.asarray(batch, dtype=np.float64)
        if batch.ndim != 2 or batch.shape[1] != self.spec.input_dim:
            raise ShapeError(f"expected batch width {self.spec.input_dim}, got shape {batch.shape}")
        cache = ForwardCache(inputs=batch)
        h = batch
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            cache.layer_inputs.append(h)
            pre = h @ w + b
            if i < last:
                cache.pre_activations.append(pre)
                h = relu(pre)
            else:
                h = pre
        return h, cache

    def backward(self, cache: ForwardCache, upstream: np.ndarray) -> np.ndarray:
        """Accumulate parameter gradients; returns the gradient w.r.t. the inputs."""
        n = cache.inputs.shape[0]
        if upstream.shape != (n, self.spec.output_dim):
            raise ShapeError(
                f"upstream gradient {upstream.shape} does not match cached batch ({n}, {self.spec.output_dim})"
            )
        grad = upstream
        for i in reversed(range(len(self.weights))):
            if i < len(self.weights) - 1:
                grad = grad * relu_grad(cache.pre_activations[i])
            self.weight_grads[i] += cache.layer_inputs[i].T @ grad
            self.bias_grads[i] += grad.sum(axis=0)
            grad = grad @ self.weights[i].T
        return grad


def init_params(spec: MlpSpec, seed: int) -> MlpNetwork:
    """Weights uniform in [-sqrt(1/fan_in), sqrt(1/fan_in)], biases zero."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.dims[:-1], spec.dims[1:]):
        bound = math.sqrt(1.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpNetwork(spec, weights, biases)


def forward(net: MlpNetwork, batch: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
    return net.forward(batch)


def backward(net: MlpNetwork, cache: ForwardCache, upstream: np.ndarray) -> np.ndarray:
    return net.backward(cache, upstream)


# ── Per-feature head ──────────────────────────────────────────────────────────

class PerFeatureHead:
    """One affine map E -> T shared by every (sample, feature) embedding."""

    def __init__(self, weight: np.ndarray, bias: np.ndarray):
        if weight.ndim != 2 or bias.shape != (weight.shape[1],):
            raise ShapeError(f"head weight {weight.shape} and bias {bias.shape} disagree")
        self.weight = weight
        self.bias = bias
        self.weight_grad = np.zeros_like(weight)
        self.bias_grad = np.zeros_like(bias)

    @classmethod
    def init(cls, embedding_dim: int, n_classes: int, seed: int) -> "PerFeatureHead":
        rng = np.random.default_rng(seed)
        bound = math.sqrt(1.0 / embedding_dim)
        return cls(rng.uniform(-bound, bound, size=(embedding_dim, n_classes)), np.zeros(n_classes))

    @property
    def embedding_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def n_classes(self) -> int:
        return self.weight.shape[1]

    @property
    def layers(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        return [(self.weight, self.bias)]

    def parameters(self) -> List[np.ndarray]:
        return [self.weight, self.bias]

    def gradients(self) -> List[np.ndarray]:
        return [self.weight_grad, self.bias_grad]

    def zero_grad(self):
        self.weight_grad.fill(0.0)
        self.bias_grad.fill(0.0)

    def forward(self, embeddings: np.ndarray) -> np.ndarray:
        if embeddings.ndim != 3 or embeddings.shape[2] != self.embedding_dim:
            raise ShapeError(f"expected (N, d, {self.embedding_dim}) embeddings, got {embeddings.shape}")
        return embeddings @ self.weight + self.bias

    def backward(self, embeddings: np.ndarray, upstream: np.ndarray) -> np.ndarray:
        """Shared-weight gradient is the sum of per-slot outer products."""
        expected = embeddings.shape[:2] + (self.n_classes,)
        if upstream.shape != expected:
            raise ShapeError(f"upstream gradient {upstream.shape}, expected {expected}")
        self.weight_grad += np.einsum("nde,ndt->et", embeddings, upstream)
        self.bias_grad += upstream.sum(axis=(0, 1))
        return upstream @ self.weight.T


# ── Decoder ───────────────────────────────────────────────────────────────────

class Decoder:
    """MLP trunk, optionally followed by a per-feature head.

    With a head the trunk emits ``d * E`` values per row, reshaped to
    ``(d, E)`` before the shared affine map.
    """

    def __init__(self, trunk: MlpNetwork, head: Optional[PerFeatureHead] = None, n_features: int = 0):
        self.trunk = trunk
        self.head = head
        self.n_features = n_features
        self._trunk_cache: Optional[ForwardCache] = None
        self._embeddings: Optional[np.ndarray] = None
        if head is not None and trunk.spec.output_dim != n_features * head.embedding_dim:
            raise ShapeError("trunk output width must equal d * embedding_dim")

    @property
    def modules(self) -> list:
        return [self.trunk] if self.head is None else [self.trunk, self.head]

    def parameters(self) -> List[np.ndarray]:
        return [p for m in self.modules for p in m.parameters()]

    def gradients(self) -> List[np.ndarray]:
        return [g for m in self.modules for g in m.gradients()]

    def zero_grad(self):
        for m in self.modules:
            m.zero_grad()

    def forward(self, z: np.ndarray) -> np.ndarray:
        out, self._trunk_cache = self.trunk.forward(z)
        if self.head is None:
            return out
        self._embeddings = out.reshape(out.shape[0], self.n_features, self.head.embedding_dim)
        return self.head.forward(self._embeddings)

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        if self.head is not None:
            grad = self.head.backward(self._embeddings, upstream)
            upstream = grad.reshape(grad.shape[0], -1)
        return self.trunk.backward(self._trunk_cache, upstream)


# ── Optimizer and schedule ────────────────────────────────────────────────────

@dataclass
class OptimizerState:
    """AdamW moments for a fixed list of parameter arrays."""

    first_moments: List[np.ndarray]
    second_moments: List[np.ndarray]
    base_lr: float = 1e-4
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], **kwargs) -> "OptimizerState":
        return cls(
            first_moments=[np.zeros_like(p) for p in params],
            second_moments=[np.zeros_like(p) for p in params],
            **kwargs,
        )


def adamw_step(state: OptimizerState, params: Sequence[np.ndarray], grads: Sequence[np.ndarray], lr: float):
    """One in-place AdamW update with decoupled weight decay."""
    if len(params) != len(grads) or len(params) != len(state.first_moments):
        raise ShapeError("parameters, gradients and optimizer moments disagree in count")
    if lr < 0:
        raise ValueError(f"learning rate must be non-negative, got {lr}")
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient in parameter {i}; step aborted")

    state.step += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** state.step
    correction2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.first_moments, state.second_moments):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"parameter {p.shape} and gradient {g.shape} disagree")
        p *= 1.0 - lr * state.weight_decay
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)


@dataclass(frozen=True)
class LrSchedule:
    base_lr: float
    total_steps: int


def cosine_lr(schedule: LrSchedule, step: int) -> float:
    """Cosine annealing from base_lr at step 0 to 0 at total_steps."""
    if schedule.total_steps <= 0:
        return schedule.base_lr
    step = min(max(step, 0), schedule.total_steps)
    return schedule.base_lr * 0.5 * (1.0 + math.cos(math.pi * step / schedule.total_steps))


# ── Gradient check ────────────────────────────────────────────────────────────

def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-2) -> float:
    """Largest ``|a - n| / max(|a|, |n|, floor)`` over all entries.

    Entries whose magnitude is below ``floor`` are compared on absolute error
    scaled by ``floor``: a bound ``tol`` on the result means ``|a - n| <= tol * floor``
    for them and ``|a - n| <= tol * max(|a|, |n|)`` for the rest.
    """
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale)) if analytic.size else 0.0


def numeric_gradient(loss_fn: Callable[[], float], param: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of ``loss_fn`` w.r.t. every entry of ``param`` (perturbed in place)."""
    grad = np.zeros_like(param)
    flat = param.reshape(-1)
    out = grad.reshape(-1)
    for k in range(flat.size):
        original = flat[k]
        flat[k] = original + h
        plus = loss_fn()
        flat[k] = original - h
        minus = loss_fn()
        flat[k] = original
        out[k] = (plus - minus) / (2.0 * h)
    return grad


def gradient_check(
    loss_fn: Callable[[], float],
    params: Sequence[np.ndarray],
    analytic_grads: Sequence[np.ndarray],
    h: float = 1e-5,
) -> float:
    """Worst relative error between analytic gradients and central differences."""
    worst = 0.0
    for p, g in zip(params, analytic_grads):
        worst = max(worst, relative_error(g, numeric_gradient(loss_fn, p, h)))
    return worst
