"""Spiking layers and networks.

A spiking layer is a dense synapse, a batch norm over all (timestep, batch)
rows jointly, and a leaky integrate-and-fire unit evaluated per timestep.
One neuron update is

    x      = i + lambda * x_prev          (decay and accumulate)
    y      = relu(x - tau)                (fire above threshold)
    p      = 1 where y > 0 else 0         (spike gate)
    x_next = x * (1 - p * tau_p / tau)    (post-spike penalty)

The gate p is a step function and is held constant in backward; gradients
flow through the x and y paths only.  The penalty is applied in the
multiplicative closed form so that with tau=1.0, tau_p=1.5 a spike gives
x_next == -0.5 * x exactly in floating point.

A network runs its layers in sequence over T timesteps and returns the
spiking activation tensor: output-layer post-synaptic values arranged as
timesteps x classes x batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormState, Tensor
from .errors import ConfigError, NumericError, ShapeError

NUM_CLASSES = 10

# Spiking layer counts per role; explicit widths override these.
ROLE_LAYER_COUNTS = {"teacher": 6, "ta": 4, "student": 2}

# Hidden widths per role, excluding input and class extents.
DEFAULT_HIDDEN = {
    "teacher": (400, 300, 200, 100, 50),
    "ta": (300, 150, 50),
    "student": (100,),
}


@dataclass(frozen=True)
class NeuronConfig:
    """Thresholds and decay of the integrate-and-fire unit."""

    tau: float = 1.0
    tau_p: float = 1.5
    lambda_decay: float = 0.9

    def __post_init__(self):
        if self.tau <= 0 or self.tau_p <= 0:
            raise ConfigError(f"thresholds must be positive, got tau={self.tau}, tau_p={self.tau_p}")
        if not 0.0 <= self.lambda_decay < 1.0:
            raise ConfigError(f"lambda_decay must be in [0, 1), got {self.lambda_decay}")


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture description: layer widths, timestep count, neuron config."""

    widths: tuple
    timesteps: int
    neuron: NeuronConfig = field(default_factory=NeuronConfig)
    role: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2:
            raise ConfigError("a network needs at least input and output widths")
        if any(w < 1 for w in self.widths):
            raise ConfigError(f"widths must be positive, got {self.widths}")
        if self.timesteps < 1:
            raise ConfigError(f"timesteps must be >= 1, got {self.timesteps}")

    @property
    def num_layers(self) -> int:
        return len(self.widths) - 1

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    @property
    def num_classes(self) -> int:
        return self.widths[-1]


def spec_for_role(role: str, input_dim: int, timesteps: int,
                  neuron: NeuronConfig | None = None, widths=None,
                  num_classes: int = NUM_CLASSES) -> NetworkSpec:
    """Build a NetworkSpec from a role tag, or from explicit widths."""
    if widths is not None:
        return NetworkSpec(tuple(widths), timesteps, neuron or NeuronConfig(), role)
    if role not in DEFAULT_HIDDEN:
        raise ConfigError(f"unknown role {role!r}, expected teacher|ta|student")
    full = (input_dim,) + DEFAULT_HIDDEN[role] + (num_classes,)
    assert len(full) - 1 == ROLE_LAYER_COUNTS[role]
    return NetworkSpec(full, timesteps, neuron or NeuronConfig(), role)


def neuron_step(i_t: Tensor, x_prev: Tensor, cfg: NeuronConfig):
    """One integrate-and-fire update; returns (y_t, x_next)."""
    x = i_t + x_prev * cfg.lambda_decay
    if not np.isfinite(x.data).all():
        raise NumericError("non-finite membrane value")
    y = (x - cfg.tau).relu()
    keep = np.where(y.data > 0, 1.0 - cfg.tau_p / cfg.tau, 1.0)
    x_next = x * keep
    return y, x_next


class SpikingLayer:
    """Dense synapse + batch norm + integrate-and-fire state for one layer."""

    def __init__(self, in_dim: int, out_dim: int, cfg: NeuronConfig, rng: np.random.Generator):
        bound = math.sqrt(1.0 / in_dim)
        self.weight = Tensor(rng.uniform(-bound, bound, size=(in_dim, out_dim)), requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True)
        self.bn_gamma = Tensor(np.ones(out_dim), requires_grad=True)
        self.bn_beta = Tensor(np.zeros(out_dim), requires_grad=True)
        self.bn_state = BatchNormState(out_dim)
        self.config = cfg
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.membrane: np.ndarray | None = None  # None means reset

    def parameters(self):
        return [self.weight, self.bias, self.bn_gamma, self.bn_beta]

    def reset_state(self):
        self.membrane = None


def layer_forward(spikes_in: Tensor, layer: SpikingLayer, train: bool) -> Tensor:
    """Run one layer over a [t, b, n] spike tensor, returning [t, b, m].

    The synapse and batch norm act on all (t * b) rows at once; the membrane
    recurrence then walks the timesteps.  The final membrane is kept on the
    layer until reset_state.
    """
    t, b, n = spikes_in.shape
    if n != layer.in_dim:
        raise ShapeError(f"layer expects width {layer.in_dim}, got {n}")
    flat = spikes_in.reshape((t * b, n))
    pre = ad.linear(flat, layer.weight, layer.bias)
    post = ad.batchnorm(pre, layer.bn_gamma, layer.bn_beta, layer.bn_state, train=train)
    i_seq = post.reshape((t, b, layer.out_dim))

    if layer.membrane is None:
        x = Tensor(np.zeros((b, layer.out_dim)))
    else:
        if layer.membrane.shape[0] != b:
            raise ShapeError(
                f"membrane batch extent {layer.membrane.shape[0]} vs input batch {b}; reset_state first"
            )
        x = Tensor(layer.membrane)

    ys = []
    for step in range(t):
        try:
            y, x = neuron_step(i_seq[step], x, layer.config)
        except NumericError as e:
            raise NumericError(f"timestep {step}: {e}") from None
        ys.append(y)
    layer.membrane = x.data
    return ad.stack(ys)


class SpikingNetwork:
    """A stack of spiking layers built from a NetworkSpec."""

    def __init__(self, spec: NetworkSpec, seed: int = 0):
        self.spec = spec
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        self.layers = [
            SpikingLayer(spec.widths[i], spec.widths[i + 1], spec.neuron, rng)
            for i in range(spec.num_layers)
        ]

    @property
    def timesteps(self) -> int:
        return self.spec.timesteps

    @property
    def num_classes(self) -> int:
        return self.spec.num_classes

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def reset_state(self):
        for layer in self.layers:
            layer.reset_state()

    def forward(self, data: Tensor, train: bool) -> Tensor:
        return network_forward(data, self, train)

    def features(self, data: Tensor) -> np.ndarray:
        """Time-averaged penultimate-layer activations, eval mode, [b, width]."""
        with ad.no_grad():
            self.reset_state()
            h = data
            for layer in self.layers[:-1]:
                h = layer_forward(h, layer, train=False)
            self.reset_state()
        return h.data.mean(axis=0)


def network_forward(data: Tensor, net: SpikingNetwork, train: bool) -> Tensor:
    """Forward a [t, b, input_dim] tensor, returning the [t, c, b] activation tensor."""
    h = data
    for index, layer in enumerate(net.layers):
        try:
            h = layer_forward(h, layer, train)
        except NumericError as e:
            raise NumericError(f"layer {index}: {e}") from None
    return ad.transpose(h, (0, 2, 1))


def classify_logits(sat: Tensor) -> Tensor:
    """Time-mean of the activation tensor, log-softmaxed over classes: [b, c]."""
    scores = sat.mean(axis=0)  # [c, b]
    return ad.log_softmax(scores.transpose((1, 0)), axis=1)


def reset_state(net: SpikingNetwork) -> None:
    net.reset_state()
