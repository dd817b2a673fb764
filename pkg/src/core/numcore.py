"""
Deterministic numeric core: dense layers with hand-derived gradients,
activations, the MSE loss, the Adam optimizer and a seeded random stream.

Matrices are float64 numpy arrays with rows as samples.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from src.models import Activation
from src.utils.errors import DimensionError, DomainError, TrainingError

logger = logging.getLogger(__name__)

Matrix = np.ndarray


class Rng:
    """
    Seeded pseudo-random stream. Identical seeds (and fork tags) give
    bit-identical sample streams.
    """

    def __init__(self, seed: int, spawn_key: Sequence[int] = ()):
        self.seed = int(seed)
        self.spawn_key = tuple(int(tag) for tag in spawn_key)
        sequence = np.random.SeedSequence(self.seed, spawn_key=self.spawn_key)
        self.generator = np.random.Generator(np.random.PCG64(sequence))

    def fork(self, *tags: int) -> "Rng":
        """Independent child stream keyed by integer tags"""
        return Rng(self.seed, self.spawn_key + tuple(tags))

    def normal(self, size) -> np.ndarray:
        return self.generator.standard_normal(size)

    def uniform(self, low: float, high: float, size=None) -> np.ndarray:
        return self.generator.uniform(low, high, size)

    def integers(self, low: int, high: int, size=None):
        return self.generator.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def random(self, size=None):
        return self.generator.random(size)


def check_finite(name: str, array: np.ndarray) -> None:
    if not np.all(np.isfinite(array)):
        raise TrainingError(f"Non-finite values in {name}", parameter=name)


def _activate(activation: Activation, z: Matrix) -> Matrix:
    if activation == Activation.RELU:
        return np.maximum(z, 0.0)
    if activation == Activation.TANH:
        return np.tanh(z)
    return z


def _activation_grad(activation: Activation, z: Matrix, upstream: Matrix) -> Matrix:
    if activation == Activation.RELU:
        return upstream * (z > 0.0)
    if activation == Activation.TANH:
        t = np.tanh(z)
        return upstream * (1.0 - t * t)
    return upstream


@dataclass
class DenseLayer:
    weights: Matrix
    bias: np.ndarray
    activation: Activation = Activation.IDENTITY

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[1],):
            raise DimensionError(
                f"Inconsistent layer shapes: weights {self.weights.shape}, bias {self.bias.shape}"
            )

    @property
    def in_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[1]

    @classmethod
    def initialize(
        cls, in_dim: int, out_dim: int, activation: Activation, rng: Rng
    ) -> "DenseLayer":
        """Uniform Glorot initialization, zero bias"""
        limit = np.sqrt(6.0 / (in_dim + out_dim))
        weights = rng.uniform(-limit, limit, size=(in_dim, out_dim))
        return cls(weights, np.zeros(out_dim), activation)


@dataclass
class LayerGradients:
    grad_weights: Matrix
    grad_bias: np.ndarray
    grad_input: Optional[Matrix]


def _as_batch(inputs) -> Matrix:
    array = np.asarray(inputs, dtype=np.float64)
    return array.reshape(1, -1) if array.ndim == 1 else array


def _checked_pre_activation(layer: DenseLayer, x: Matrix) -> Matrix:
    if x.shape[1] != layer.in_dim:
        raise DimensionError(
            f"Layer expects {layer.in_dim} input columns, got {x.shape[1]}"
        )
    return x @ layer.weights + layer.bias


def dense_forward(layer: DenseLayer, inputs: Matrix) -> Matrix:
    return _activate(layer.activation, _checked_pre_activation(layer, _as_batch(inputs)))


def dense_backward(
    layer: DenseLayer,
    inputs: Matrix,
    upstream_grad: Matrix,
    pre_activation: Optional[Matrix] = None,
    input_grad: bool = True,
) -> LayerGradients:
    """
    Gradients of a scalar loss w.r.t. the layer's weights, bias and input,
    given dL/d(output) as upstream_grad. A pre_activation cached by the
    forward pass is reused instead of recomputed.
    """
    x = _as_batch(inputs)
    upstream = _as_batch(upstream_grad)
    if x.shape[1] != layer.in_dim or upstream.shape != (x.shape[0], layer.out_dim):
        raise DimensionError(
            f"Backward shapes do not match layer {layer.in_dim}x{layer.out_dim}: "
            f"input {x.shape}, upstream {upstream.shape}"
        )
    z = pre_activation if pre_activation is not None else x @ layer.weights + layer.bias
    grad_z = _activation_grad(layer.activation, z, upstream)
    return LayerGradients(
        grad_weights=x.T @ grad_z,
        grad_bias=grad_z.sum(axis=0),
        grad_input=grad_z @ layer.weights.T if input_grad else None,
    )


class LayerStack:
    """
    Feed-forward stack of dense layers. Parameters are exposed by name
    (`<prefix>.<i>.weights` / `<prefix>.<i>.bias`) for the optimizer.
    """

    def __init__(self, layers: List[DenseLayer], prefix: str = "layer"):
        if not layers:
            raise DimensionError("A layer stack needs at least one layer")
        for previous, current in zip(layers, layers[1:]):
            if previous.out_dim != current.in_dim:
                raise DimensionError(
                    f"Layer widths do not chain: {previous.out_dim} -> {current.in_dim}"
                )
        self.layers = layers
        self.prefix = prefix

    @classmethod
    def build(
        cls,
        in_dim: int,
        hidden_sizes: Sequence[int],
        out_dim: int,
        rng: Rng,
        output_activation: Activation = Activation.IDENTITY,
        hidden_activation: Activation = Activation.RELU,
        prefix: str = "layer",
    ) -> "LayerStack":
        widths = [in_dim] + list(hidden_sizes) + [out_dim]
        layers = []
        for index, (fan_in, fan_out) in enumerate(zip(widths, widths[1:])):
            is_output = index == len(widths) - 2
            activation = output_activation if is_output else hidden_activation
            layers.append(DenseLayer.initialize(fan_in, fan_out, activation, rng))
        return cls(layers, prefix)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def forward(self, inputs: Matrix) -> Tuple[Matrix, List[Tuple[Matrix, Matrix]]]:
        """Returns the output and the per-layer (input, pre-activation) pairs needed by backward"""
        cache = []
        h = _as_batch(inputs)
        for layer in self.layers:
            z = _checked_pre_activation(layer, h)
            cache.append((h, z))
            h = _activate(layer.activation, z)
        return h, cache

    def backward(
        self,
        cache: List[Tuple[Matrix, Matrix]],
        upstream_grad: Matrix,
        input_grad: bool = True,
    ) -> Tuple[Dict[str, Matrix], Optional[Matrix]]:
        """Parameter gradients, and dL/d(input) unless input_grad is off"""
        grads: Dict[str, Matrix] = {}
        upstream = upstream_grad
        for index in reversed(range(len(self.layers))):
            inputs, z = cache[index]
            result = dense_backward(
                self.layers[index], inputs, upstream, z, input_grad=input_grad or index > 0
            )
            grads[f"{self.prefix}.{index}.weights"] = result.grad_weights
            grads[f"{self.prefix}.{index}.bias"] = result.grad_bias
            upstream = result.grad_input
        return grads, upstream

    def parameters(self) -> Dict[str, Matrix]:
        params: Dict[str, Matrix] = {}
        for index, layer in enumerate(self.layers):
            params[f"{self.prefix}.{index}.weights"] = layer.weights
            params[f"{self.prefix}.{index}.bias"] = layer.bias
        return params

    def assign(self, params: Dict[str, Matrix]) -> None:
        for index, layer in enumerate(self.layers):
            layer.weights = params[f"{self.prefix}.{index}.weights"]
            layer.bias = params[f"{self.prefix}.{index}.bias"]

    def parameter_count(self) -> int:
        return sum(layer.weights.size + layer.bias.size for layer in self.layers)


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    state: AdamState, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]
) -> Dict[str, np.ndarray]:
    """
    One Adam update with bias correction. Returns new parameter arrays and
    advances `state` in place.
    """
    for name, grad in grads.items():
        if name not in params or np.shape(params[name]) != np.shape(grad):
            raise DimensionError(f"Gradient for {name} does not match its parameter")
        check_finite(name, grad)

    state.step_count += 1
    t = state.step_count
    correction1 = 1.0 - state.beta1**t
    correction2 = 1.0 - state.beta2**t

    updated = {}
    for name, value in params.items():
        grad = grads.get(name)
        if grad is None:
            updated[name] = value
            continue
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(value, dtype=np.float64)
            v = np.zeros_like(value, dtype=np.float64)
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        state.first_moment[name] = m
        state.second_moment[name] = v
        m_hat = m / correction1
        v_hat = v / correction2
        new_value = value - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
        check_finite(name, new_value)
        updated[name] = new_value
    return updated


def mse_loss(pred: Matrix, target: Matrix) -> Tuple[float, Matrix]:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"Prediction shape {pred.shape} != target shape {target.shape}")
    if pred.size == 0:
        raise DomainError("MSE of an empty batch is undefined")
    diff = pred - target
    loss = float(np.mean(diff * diff))
    return loss, 2.0 * diff / pred.size


def minibatches(n: int, batch_size: int, rng: Optional[Rng]) -> Iterator[np.ndarray]:
    """Index batches over n rows; shuffled when an rng is given"""
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]
