"""Dense feed-forward network up to (and including) the last hidden layer.

The output layer is deliberately absent: its weights are produced in closed
form by :mod:`adacap.tikhonov`. ``depth`` counts hidden layers, so depth 1 is
a single hidden layer of width ``width`` on top of the inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, ShapeError

SELU_ALPHA = 1.6732632423543772
SELU_SCALE = 1.0507009873554805

ACTIVATIONS = ("relu", "selu")


@dataclass
class MlpParams:
    layers: list[tuple[np.ndarray, np.ndarray]]
    depth: int
    width: int
    activation: str = "relu"
    log_lambda: float | None = None

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.depth < 1 or self.width < 1:
            raise ValueError("depth and width must be positive")
        if len(self.layers) != self.depth:
            raise ShapeError(f"expected {self.depth} layers, got {len(self.layers)}")
        for i, (w, b) in enumerate(self.layers):
            if w.ndim != 2 or w.shape[1] != self.width or b.shape != (self.width,):
                raise ShapeError(f"layer {i + 1} has inconsistent shapes {w.shape}, {b.shape}")
            if i > 0 and w.shape[0] != self.width:
                raise ShapeError(f"layer {i + 1} must be {self.width}x{self.width}")

    @property
    def n_features(self) -> int:
        return self.layers[0][0].shape[0]

    @property
    def lam(self) -> float:
        if self.log_lambda is None:
            raise ValueError("log_lambda has not been initialised")
        return float(np.exp(self.log_lambda))

    def arrays(self) -> list[np.ndarray]:
        """Flat list ``[W1, b1, W2, b2, ...]`` of the live arrays (no copies)."""
        return [a for pair in self.layers for a in pair]

    def copy(self) -> MlpParams:
        return MlpParams(
            layers=[(w.copy(), b.copy()) for w, b in self.layers],
            depth=self.depth,
            width=self.width,
            activation=self.activation,
            log_lambda=self.log_lambda,
        )

    def to_dict(self) -> dict:
        return {
            "depth": self.depth,
            "width": self.width,
            "activation": self.activation,
            "log_lambda": self.log_lambda,
            "layers": [{"w": w.tolist(), "b": b.tolist()} for w, b in self.layers],
        }

    @classmethod
    def from_dict(cls, data: dict) -> MlpParams:
        layers = [
            (np.asarray(layer["w"], dtype=np.float64), np.asarray(layer["b"], dtype=np.float64))
            for layer in data["layers"]
        ]
        return cls(
            layers=layers,
            depth=int(data["depth"]),
            width=int(data["width"]),
            activation=data["activation"],
            log_lambda=data["log_lambda"],
        )


@dataclass
class ForwardTape:
    """Everything ``backward`` needs: inputs, pre-activations and activations.

    ``activations[0]`` is the input batch itself and ``activations[-1]`` the
    last hidden layer.
    """

    pre_activations: list[np.ndarray] = field(default_factory=list)
    activations: list[np.ndarray] = field(default_factory=list)

    @property
    def a_last(self) -> np.ndarray:
        return self.activations[-1]


def init_params(d: int, width: int, depth: int, activation: str = "relu", seed: int = 0) -> MlpParams:
    """Glorot-uniform weights and zero biases, reproducible from ``seed``."""
    if d < 1 or width < 1 or depth < 1:
        raise ValueError("d, width and depth must all be >= 1")
    rng = np.random.default_rng(seed)
    layers = []
    fan_in = d
    for _ in range(depth):
        bound = np.sqrt(6.0 / (fan_in + width))
        w = rng.uniform(-bound, bound, size=(fan_in, width))
        layers.append((w, np.zeros(width)))
        fan_in = width
    return MlpParams(layers=layers, depth=depth, width=width, activation=activation)


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    return SELU_SCALE * np.where(z > 0, z, SELU_ALPHA * np.expm1(np.minimum(z, 0.0)))


def _activate_grad(z: np.ndarray, kind: str) -> np.ndarray:
    # ReLU subgradient at exactly 0 is taken as 0
    if kind == "relu":
        return (z > 0).astype(z.dtype)
    return SELU_SCALE * np.where(z > 0, 1.0, SELU_ALPHA * np.exp(np.minimum(z, 0.0)))


def forward(params: MlpParams, x) -> ForwardTape:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"expected a 2-d batch, got shape {x.shape}")
    if x.shape[1] != params.n_features:
        raise ShapeError(f"batch has {x.shape[1]} features, network expects {params.n_features}")
    if not np.all(np.isfinite(x)):
        raise InputError("input batch contains non-finite values")
    tape = ForwardTape(activations=[x])
    a = x
    for w, b in params.layers:
        z = a @ w + b
        a = _activate(z, params.activation)
        tape.pre_activations.append(z)
        tape.activations.append(a)
    return tape


def backward(tape: ForwardTape, params: MlpParams, upstream) -> list[tuple[np.ndarray, np.ndarray]]:
    """Gradients of ``<upstream, A_last>`` with respect to every ``(W, b)``."""
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != tape.a_last.shape:
        raise ShapeError(f"upstream shape {g.shape} does not match last hidden layer {tape.a_last.shape}")
    grads = [None] * params.depth
    for i in range(params.depth - 1, -1, -1):
        gz = g * _activate_grad(tape.pre_activations[i], params.activation)
        grads[i] = (tape.activations[i].T @ gz, gz.sum(axis=0))
        if i > 0:
            g = gz @ params.layers[i][0].T
    return grads
