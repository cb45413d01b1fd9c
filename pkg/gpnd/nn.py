"""
GPND — Dense Network Core
Fully connected networks in float64 numpy: initialization, forward pass with
a tape, exact reverse-mode gradients, and the Adam optimizer.

Randomness always comes from numpy ``Generator(PCG64(seed))``, so the same
seed and call sequence yield bit-identical parameters.
"""

import hashlib
import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import expit

from gpnd.config import ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON, LEAKY_SLOPE, SEED_MASK
from gpnd.errors import ConfigError, DimensionError, NumericError

log = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "leaky_relu", "sigmoid", "tanh", "identity")
_KAIMING = ("relu", "leaky_relu")


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator for a 64-bit unsigned seed."""
    if not 0 <= int(seed) <= SEED_MASK:
        raise ConfigError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.Generator(np.random.PCG64(int(seed)))


# ─── Types ────────────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class DenseLayer:
    weight: np.ndarray      # (out, in)
    bias: np.ndarray        # (out,)
    activation: str

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass(frozen=True, eq=False)
class DenseNetwork:
    """Chain of affine + activation layers.  Treat as an immutable value."""

    layers: tuple[DenseLayer, ...]

    def __post_init__(self):
        if not self.layers:
            raise ConfigError("a network needs at least one layer")
        for k, layer in enumerate(self.layers):
            if layer.activation not in ACTIVATIONS:
                raise ConfigError(f"layer {k}: unknown activation {layer.activation!r}")
            if layer.bias.shape != (layer.out_dim,):
                raise DimensionError(f"layer {k}: bias shape {layer.bias.shape} != ({layer.out_dim},)")
            if k and self.layers[k - 1].out_dim != layer.in_dim:
                raise DimensionError(
                    f"layer {k}: input dim {layer.in_dim} does not chain with "
                    f"previous output dim {self.layers[k - 1].out_dim}"
                )

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def spec(self) -> list[tuple[int, int, str]]:
        return [(l.in_dim, l.out_dim, l.activation) for l in self.layers]

    def parameters(self) -> list[np.ndarray]:
        """Flat parameter list: [W0, b0, W1, b1, ...]."""
        params = []
        for layer in self.layers:
            params.extend((layer.weight, layer.bias))
        return params

    def with_parameters(self, params: list[np.ndarray]) -> "DenseNetwork":
        """New network with the same spec and the given parameters."""
        if len(params) != 2 * len(self.layers):
            raise DimensionError(f"expected {2 * len(self.layers)} parameter arrays, got {len(params)}")
        layers = []
        for k, layer in enumerate(self.layers):
            w = np.asarray(params[2 * k], dtype=np.float64)
            b = np.asarray(params[2 * k + 1], dtype=np.float64)
            if w.shape != layer.weight.shape or b.shape != layer.bias.shape:
                raise DimensionError(f"layer {k}: parameter shapes do not match the network")
            layers.append(DenseLayer(w, b, layer.activation))
        return DenseNetwork(tuple(layers))

    def fingerprint(self) -> str:
        """Hex digest of the spec and every parameter byte."""
        h = hashlib.sha256(repr(self.spec).encode("ascii"))
        for p in self.parameters():
            h.update(np.ascontiguousarray(p, dtype="<f8").tobytes())
        return h.hexdigest()


class Tape(NamedTuple):
    """Per-layer inputs, pre- and post-activations recorded by ``forward``."""

    inputs: tuple[np.ndarray, ...]
    pre: tuple[np.ndarray, ...]
    outputs: tuple[np.ndarray, ...]
    batched: bool


@dataclass
class AdamState:
    learning_rate: float
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    epsilon: float = ADAM_EPSILON


# ─── Public API ───────────────────────────────────────────────────────────────

def init_network(
    spec: list[tuple[int, int, str]],
    seed: int | np.random.Generator,
) -> DenseNetwork:
    """Build a network from (in, out, activation) triples.

    Weights: Kaiming-uniform (fan-in) for relu / leaky_relu layers,
    Xavier-uniform for sigmoid / tanh / identity.  Biases start at zero.
    """
    if not spec:
        raise ConfigError("network spec is empty")
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    layers = []
    for k, (fan_in, fan_out, activation) in enumerate(spec):
        if fan_in < 1 or fan_out < 1:
            raise ConfigError(f"layer {k}: dimensions must be >= 1, got ({fan_in}, {fan_out})")
        if activation not in ACTIVATIONS:
            raise ConfigError(f"layer {k}: unknown activation {activation!r}")
        if activation in _KAIMING:
            slope = LEAKY_SLOPE if activation == "leaky_relu" else 0.0
            bound = np.sqrt(6.0 / ((1.0 + slope**2) * fan_in))
        else:
            bound = np.sqrt(6.0 / (fan_in + fan_out))
        weight = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        layers.append(DenseLayer(weight, np.zeros(fan_out), activation))
    return DenseNetwork(tuple(layers))


def forward(net: DenseNetwork, x: np.ndarray) -> tuple[np.ndarray, Tape]:
    """Run ``x`` (shape (in,) or (batch, in)) through the network."""
    x = np.asarray(x, dtype=np.float64)
    batched = x.ndim == 2
    h = x if batched else x.reshape(1, -1)
    if h.ndim != 2 or h.shape[1] != net.in_dim:
        raise DimensionError(f"input has shape {x.shape}, network expects last dim {net.in_dim}")
    if not np.all(np.isfinite(h)):
        raise NumericError("non-finite network input")

    inputs, pre, outputs = [], [], []
    for layer in net.layers:
        inputs.append(h)
        a = h @ layer.weight.T + layer.bias
        pre.append(a)
        h = _activate(a, layer.activation)
        outputs.append(h)
    out = h if batched else h[0]
    return out, Tape(tuple(inputs), tuple(pre), tuple(outputs), batched)


def backward(
    net: DenseNetwork,
    tape: Tape,
    output_gradient: np.ndarray,
) -> tuple[list[np.ndarray], np.ndarray]:
    """Gradients of ``sum(output * output_gradient)``.

    Returns parameter gradients aligned with ``net.parameters()`` (summed over
    the batch) and the gradient with respect to the input.
    """
    if len(tape.inputs) != len(net.layers):
        raise DimensionError(f"tape has {len(tape.inputs)} layers, network has {len(net.layers)}")
    for k, layer in enumerate(net.layers):
        if tape.inputs[k].shape[1] != layer.in_dim or tape.outputs[k].shape[1] != layer.out_dim:
            raise DimensionError(f"tape does not match network at layer {k}")

    g = np.asarray(output_gradient, dtype=np.float64)
    g = g if tape.batched else g.reshape(1, -1)
    if g.shape != tape.outputs[-1].shape:
        raise DimensionError(f"output gradient shape {g.shape} != {tape.outputs[-1].shape}")

    grads: list[np.ndarray] = [None] * (2 * len(net.layers))
    for k in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[k]
        delta = g * _activation_derivative(tape.pre[k], tape.outputs[k], layer.activation)
        grads[2 * k] = delta.T @ tape.inputs[k]
        grads[2 * k + 1] = delta.sum(axis=0)
        g = delta @ layer.weight
    input_gradient = g if tape.batched else g[0]
    return grads, input_gradient


def init_adam(params: list[np.ndarray], learning_rate: float) -> AdamState:
    """Fresh optimizer state with zero moments."""
    if learning_rate <= 0:
        raise ConfigError(f"learning rate must be > 0, got {learning_rate}")
    return AdamState(
        learning_rate=float(learning_rate),
        first_moment=[np.zeros_like(p, dtype=np.float64) for p in params],
        second_moment=[np.zeros_like(p, dtype=np.float64) for p in params],
    )


def adam_step(
    state: AdamState,
    params: list[np.ndarray],
    grads: list[np.ndarray],
) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update.  Inputs are left untouched."""
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise DimensionError("parameter, gradient and moment lists differ in length")
    for p, g, m in zip(params, grads, state.first_moment):
        if p.shape != g.shape or p.shape != m.shape:
            raise DimensionError(f"shape mismatch in adam step: {p.shape} / {g.shape} / {m.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient rejected by adam step")

    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1**t
    correction2 = 1.0 - b2**t
    new_params, first, second = [], [], []
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / correction1
        v_hat = v / correction2
        new_params.append(p - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon))
        first.append(m)
        second.append(v)

    new_state = AdamState(
        learning_rate=state.learning_rate,
        first_moment=first,
        second_moment=second,
        step_count=t,
        beta1=b1,
        beta2=b2,
        epsilon=state.epsilon,
    )
    return new_params, new_state


# ─── Internal helpers ─────────────────────────────────────────────────────────

def _activate(pre: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(pre, 0.0)
    if activation == "leaky_relu":
        return np.where(pre > 0, pre, LEAKY_SLOPE * pre)
    if activation == "sigmoid":
        return expit(pre)
    if activation == "tanh":
        return np.tanh(pre)
    return pre


def _activation_derivative(pre: np.ndarray, post: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return (pre > 0).astype(np.float64)
    if activation == "leaky_relu":
        return np.where(pre > 0, 1.0, LEAKY_SLOPE)
    if activation == "sigmoid":
        return post * (1.0 - post)
    if activation == "tanh":
        return 1.0 - post * post
    return np.ones_like(pre)
