"""
Fully connected network with reverse-mode gradients, written against a flat
parameter vector.

Layer weights and biases are views into ``ParameterStore.values`` (and the
matching slices of ``ParameterStore.grad``), so the optimizer updates one
contiguous array in place. Everything runs in float64.
"""
import logging
from typing import List, Optional, Tuple

import numpy as np
from scipy import special

from app.core.exceptions import ConfigurationError, DomainError, ShapeError, StateError
from app.core.losses import EvidentialGrad
from app.models.configs import Activation, HeadKind, MlpConfig, TrainConfig
from app.models.predictions import EvidentialOutput

logger = logging.getLogger(__name__)

# Keeps the Gaussian head variance away from zero when softplus underflows
SIGMA2_FLOOR = 1e-6


def softplus(x: np.ndarray) -> np.ndarray:
    """log(1 + e^x) without overflow"""
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


class ParameterStore:
    """Flat trainable parameters, gradient accumulator and Adam moments"""

    def __init__(self, size: int):
        self.values = np.zeros(size, dtype=np.float64)
        self.grad = np.zeros(size, dtype=np.float64)
        self.m = np.zeros(size, dtype=np.float64)
        self.v = np.zeros(size, dtype=np.float64)
        self.step = 0

    @classmethod
    def from_values(cls, values: np.ndarray) -> "ParameterStore":
        store = cls(len(values))
        store.values[:] = np.asarray(values, dtype=np.float64)
        return store

    def __len__(self) -> int:
        return self.values.shape[0]

    def zero_grad(self) -> None:
        self.grad.fill(0.0)


class Adam:
    """Adam with bias correction, updating a ParameterStore in place"""

    def __init__(self, learning_rate: float, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon

    def step(self, store: ParameterStore) -> ParameterStore:
        store.step += 1
        g = store.grad

        store.m *= self.beta1
        store.m += (1.0 - self.beta1) * g
        store.v *= self.beta2
        store.v += (1.0 - self.beta2) * (g * g)

        bias1 = 1.0 - self.beta1 ** store.step
        bias2 = 1.0 - self.beta2 ** store.step
        denom = np.sqrt(store.v / bias2) + self.epsilon
        store.values -= (self.learning_rate / bias1) * store.m / denom

        store.zero_grad()
        return store


def dropout_mask(rng: np.random.Generator, shape, p: float) -> np.ndarray:
    """Inverted-dropout mask: 0 with probability p, else 1 / (1 - p)"""
    return (rng.random(shape) >= p) / (1.0 - p)


def adam_step(store: ParameterStore, cfg: TrainConfig) -> ParameterStore:
    """One Adam update from the accumulated gradient, then clear it"""
    return Adam(cfg.learning_rate).step(store)


class Mlp:
    """
    Multilayer perceptron whose last layer feeds an evidential, Gaussian or
    point head.

    Raw output columns are grouped by parameter: for the evidential head
    [gamma | nu | alpha | beta], each block ``targets`` wide; for the Gaussian
    head [mu | sigma2].
    """

    def __init__(
        self,
        config: MlpConfig,
        store: Optional[ParameterStore] = None,
        rng: Optional[np.random.Generator] = None
    ):
        """
        Args:
            config: Architecture description
            store: Existing parameters (e.g. from a checkpoint); initialized when omitted
            rng: Generator for the initial weights; required when ``store`` is omitted

        Raises:
            ShapeError: If ``store`` does not match the architecture
        """
        self.config = config
        sizes = config.layer_sizes
        self.shapes: List[Tuple[int, int]] = list(zip(sizes[:-1], sizes[1:]))
        size = sum(fan_in * fan_out + fan_out for fan_in, fan_out in self.shapes)

        fresh = store is None
        if fresh:
            if rng is None:
                raise ConfigurationError("A seeded generator is needed to initialize a new network")
            store = ParameterStore(size)
        elif len(store) != size:
            raise ShapeError(f"Parameter vector has {len(store)} entries, architecture needs {size}")
        self.store = store
        self._bind_views()
        if fresh:
            self._initialize(rng)

        self._cache = None

    def _bind_views(self) -> None:
        self.weights, self.biases = [], []
        self.weight_grads, self.bias_grads = [], []
        offset = 0
        for fan_in, fan_out in self.shapes:
            w_end = offset + fan_in * fan_out
            self.weights.append(self.store.values[offset:w_end].reshape(fan_in, fan_out))
            self.weight_grads.append(self.store.grad[offset:w_end].reshape(fan_in, fan_out))
            b_end = w_end + fan_out
            self.biases.append(self.store.values[w_end:b_end])
            self.bias_grads.append(self.store.grad[w_end:b_end])
            offset = b_end

    def _initialize(self, rng: np.random.Generator) -> None:
        # Glorot uniform, zero biases
        for weight, (fan_in, fan_out) in zip(self.weights, self.shapes):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weight[...] = rng.uniform(-limit, limit, size=weight.shape)

    @property
    def parameter_count(self) -> int:
        return len(self.store)

    # Forward / backward ------------------------------------------------------

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(1, -1)
        if x.ndim != 2 or x.shape[1] != self.config.input_dim:
            raise ShapeError(f"Expected inputs with {self.config.input_dim} features, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise DomainError("Inputs contain NaN or Inf")
        return x

    def _activate(self, z: np.ndarray) -> np.ndarray:
        if self.config.activation is Activation.TANH:
            return np.tanh(z)
        return np.maximum(z, 0.0)

    def _activation_grad(self, z: np.ndarray, out: np.ndarray) -> np.ndarray:
        if self.config.activation is Activation.TANH:
            return 1.0 - out * out
        return (z > 0).astype(np.float64)

    def forward(self, x: np.ndarray, dropout_rng: Optional[np.random.Generator] = None) -> np.ndarray:
        """
        Raw (pre-head) outputs; records activations for ``backward``

        Args:
            x: Inputs, shape (n, input_dim) or (input_dim,)
            dropout_rng: When given and dropout_p > 0, hidden units are dropped
                with inverted scaling using masks drawn from this generator

        Returns:
            Array of shape (n, output_dim)
        """
        h = self._check_input(x)
        p = self.config.dropout_p
        use_dropout = dropout_rng is not None and p > 0

        layer_inputs, pre_activations, activations, masks = [], [], [], []
        last = len(self.weights) - 1
        for index, (weight, bias) in enumerate(zip(self.weights, self.biases)):
            layer_inputs.append(h)
            z = h @ weight + bias
            if index == last:
                h = z
                break
            a = self._activate(z)
            pre_activations.append(z)
            activations.append(a)
            if use_dropout:
                mask = dropout_mask(dropout_rng, a.shape, p)
                masks.append(mask)
                a = a * mask
            else:
                masks.append(None)
            h = a

        self._cache = (layer_inputs, pre_activations, activations, masks)
        return h

    def backward(self, grad_output: np.ndarray) -> None:
        """
        Accumulate d(loss)/d(parameters) into the store's gradient

        Args:
            grad_output: d(loss)/d(raw outputs), shape (n, output_dim), for the
                inputs of the most recent ``forward``

        Raises:
            StateError: If no forward pass is pending
        """
        if self._cache is None:
            raise StateError("backward called without a preceding forward pass")
        layer_inputs, pre_activations, activations, masks = self._cache
        self._cache = None

        g = np.asarray(grad_output, dtype=np.float64)
        if g.shape != (layer_inputs[0].shape[0], self.config.output_dim):
            raise ShapeError(f"Output gradient has shape {g.shape}")

        for index in range(len(self.weights) - 1, -1, -1):
            self.weight_grads[index] += layer_inputs[index].T @ g
            self.bias_grads[index] += g.sum(axis=0)
            if index == 0:
                break
            g = g @ self.weights[index].T
            hidden = index - 1
            if masks[hidden] is not None:
                g = g * masks[hidden]
            g = g * self._activation_grad(pre_activations[hidden], activations[hidden])

    # Heads -------------------------------------------------------------------

    def _require_head(self, head: HeadKind) -> None:
        if self.config.head is not head:
            raise ConfigurationError(f"Network has a {self.config.head.value} head, not {head.value}")

    def forward_evidential(self, x: np.ndarray, dropout_rng: Optional[np.random.Generator] = None) -> EvidentialOutput:
        """NIG parameters per target: gamma linear, softplus on nu and beta, softplus + 1 on alpha"""
        self._require_head(HeadKind.EVIDENTIAL)
        return evidential_head(self.forward(x, dropout_rng), self.config.targets)

    def forward_gaussian(self, x: np.ndarray, dropout_rng: Optional[np.random.Generator] = None):
        """(mu, sigma2) per target, sigma2 through softplus"""
        self._require_head(HeadKind.GAUSSIAN)
        return gaussian_head(self.forward(x, dropout_rng), self.config.targets)

    def forward_point(self, x: np.ndarray) -> np.ndarray:
        self._require_head(HeadKind.POINT)
        return self.forward(x)


def evidential_head(raw: np.ndarray, targets: int) -> EvidentialOutput:
    t = targets
    return EvidentialOutput(
        gamma=raw[:, :t],
        nu=softplus(raw[:, t:2 * t]),
        alpha=softplus(raw[:, 2 * t:3 * t]) + 1.0,
        beta=softplus(raw[:, 3 * t:]),
    )


def evidential_head_backward(raw: np.ndarray, grad: EvidentialGrad, targets: int) -> np.ndarray:
    """Chain loss gradients on (gamma, nu, alpha, beta) through the head activations"""
    t = targets
    slope = special.expit(raw[:, t:])  # softplus' on the nu | alpha | beta blocks
    return np.concatenate(
        [grad.gamma, grad.nu * slope[:, :t], grad.alpha * slope[:, t:2 * t], grad.beta * slope[:, 2 * t:]],
        axis=1,
    )


def gaussian_head(raw: np.ndarray, targets: int) -> Tuple[np.ndarray, np.ndarray]:
    return raw[:, :targets], softplus(raw[:, targets:]) + SIGMA2_FLOOR


def gaussian_head_backward(raw: np.ndarray, d_mu: np.ndarray, d_sigma2: np.ndarray, targets: int) -> np.ndarray:
    return np.concatenate([d_mu, d_sigma2 * special.expit(raw[:, targets:])], axis=1)
