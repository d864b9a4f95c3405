"""Forward pass with trace, stable logistic loss, and exact layerwise
gradients by reverse accumulation.

Losses carry a parallel log-space channel because instrumented runs push
the mean loss far below 1e-12, where ratios like log(1/J) must stay
accurate. Per-sample quantities are reduced in a fixed left-to-right
order so repeated runs are bit-identical.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .activations import Activation
from .linalg import ShapeMismatchError, WeightStack, stack_axpy

# above this margin, log1p(exp(-z)) collapses to exp(-z) at double precision
_ASYMPTOTIC_MARGIN = 40.0


@dataclass(frozen=True)
class Dataset:
    """Unit-norm inputs with +-1 labels."""

    inputs: np.ndarray  # n x p
    labels: np.ndarray  # n, entries in {-1, +1}

    def __post_init__(self):
        inputs = np.array(self.inputs, dtype=np.float64, copy=True)
        labels = np.array(self.labels, dtype=np.float64, copy=True)
        if inputs.ndim != 2 or inputs.shape[0] == 0:
            raise ValueError("inputs must be a nonempty n x p array")
        if labels.shape != (inputs.shape[0],):
            raise ShapeMismatchError("labels must be one per input row")
        if not np.all(np.isin(labels, (-1.0, 1.0))):
            raise ValueError("labels must be -1 or +1")
        norms = np.linalg.norm(inputs, axis=1)
        if np.any(norms == 0.0):
            raise ValueError("zero input vector cannot be normalized")
        if np.any(np.abs(norms - 1.0) > 1e-12):
            inputs = inputs / norms[:, None]
        inputs.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def p(self) -> int:
        return self.inputs.shape[1]

    @classmethod
    def from_json_file(cls, path: str | Path) -> "Dataset":
        """Load {"p": int, "samples": [{"x": [...], "y": +-1}, ...]}.

        Inputs are renormalized to the unit sphere; a deviation beyond
        1e-6 is surfaced as a warning rather than silently absorbed.
        """
        with open(path) as fh:
            doc = json.load(fh)
        return cls.from_json_dict(doc, origin=str(path))

    @classmethod
    def from_json_dict(cls, doc: dict, origin: str = "<inline>") -> "Dataset":
        p = int(doc["p"])
        xs, ys = [], []
        for i, sample in enumerate(doc["samples"]):
            x = np.asarray(sample["x"], dtype=np.float64)
            if x.shape != (p,):
                raise ValueError(f"{origin}: sample {i} has {x.size} coords, expected {p}")
            xs.append(x)
            ys.append(float(sample["y"]))
        inputs = np.stack(xs)
        deviation = float(np.max(np.abs(np.linalg.norm(inputs, axis=1) - 1.0)))
        if deviation > 1e-6:
            warnings.warn(
                f"{origin}: inputs deviate from unit norm by up to {deviation:.3g}; renormalizing",
                stacklevel=2,
            )
        return cls(inputs=inputs, labels=np.asarray(ys))

    def to_json_dict(self) -> dict:
        return {
            "p": self.p,
            "samples": [
                {"x": list(map(float, x)), "y": int(y)}
                for x, y in zip(self.inputs, self.labels)
            ],
        }


@dataclass(frozen=True)
class ForwardTrace:
    """Everything one forward pass produces, per layer."""

    u: tuple[np.ndarray, ...]  # pre-activations, L vectors
    x: tuple[np.ndarray, ...]  # post-activations, L vectors
    sigma_diag: tuple[np.ndarray, ...]  # activation derivatives at u
    output: float


@dataclass(frozen=True)
class LossValue:
    """A loss together with its natural log, kept accurate independently."""

    value: float
    log_value: float

    @classmethod
    def from_value(cls, value: float) -> "LossValue":
        if value < 0:
            raise ValueError("loss values are nonnegative")
        return cls(value=float(value), log_value=math.log(value) if value > 0 else -math.inf)

    @classmethod
    def from_margin(cls, z: float) -> "LossValue":
        """Stable log1p(exp(-z)) with a dedicated asymptotic log channel."""
        if z >= 0.0:
            value = math.log1p(math.exp(-z))
        else:
            value = -z + math.log1p(math.exp(z))
        if z > _ASYMPTOTIC_MARGIN:
            # value == exp(-z)*(1 - exp(-z)/2 + ...); expand the log directly
            log_value = -z - 0.5 * math.exp(-z)
        else:
            log_value = math.log(value)
        return cls(value=value, log_value=log_value)

    @classmethod
    def mean(cls, parts: Sequence["LossValue"]) -> "LossValue":
        """Arithmetic mean; value channel is a left-to-right sum."""
        if not parts:
            raise ValueError("cannot average an empty loss list")
        total = 0.0
        for part in parts:
            total += part.value
        logs = np.array([part.log_value for part in parts])
        m = float(np.max(logs))
        if math.isinf(m):
            log_mean = -math.inf
        else:
            log_mean = m + math.log(float(np.sum(np.exp(logs - m)))) - math.log(len(parts))
        return cls(value=total / len(parts), log_value=log_mean)

    def log_inverse(self) -> float:
        """log(1/J), taken from the log channel."""
        return -self.log_value


def forward(V: WeightStack, act: Activation, x: np.ndarray) -> ForwardTrace:
    """Forward pass keeping pre/post-activations and derivative diagonals."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (V.p,):
        raise ShapeMismatchError(f"input has shape {x.shape}, expected ({V.p},)")
    us, xs, sigmas = [], [], []
    cur = x
    for W in V.hidden:
        u = W @ cur
        cur = np.asarray(act.value(u))
        us.append(u)
        xs.append(cur)
        sigmas.append(np.asarray(act.deriv(u)))
    output = float(V.outer[0] @ cur)
    return ForwardTrace(u=tuple(us), x=tuple(xs), sigma_diag=tuple(sigmas), output=output)


def sample_loss(V: WeightStack, act: Activation, x: np.ndarray, y: float) -> LossValue:
    if y not in (-1.0, 1.0, -1, 1):
        raise ValueError(f"label must be -1 or +1, got {y}")
    f = forward(V, act, x).output
    return LossValue.from_margin(float(y) * f)


def total_loss(V: WeightStack, act: Activation, data: Dataset) -> LossValue:
    return LossValue.mean(
        [sample_loss(V, act, x, y) for x, y in zip(data.inputs, data.labels)]
    )


def g_factor(V: WeightStack, act: Activation, x: np.ndarray, y: float) -> float:
    """Per-sample gradient weight 1/(1 + exp(y*f)); always in (0, 1)."""
    if y not in (-1.0, 1.0, -1, 1):
        raise ValueError(f"label must be -1 or +1, got {y}")
    z = float(y) * forward(V, act, x).output
    return _stable_g(z)


def _stable_g(z: float) -> float:
    if z >= 0.0:
        e = math.exp(-z)
        return e / (1.0 + e)
    return 1.0 / (1.0 + math.exp(z))


def output_gradient(
    V: WeightStack, act: Activation, x: np.ndarray, trace: ForwardTrace | None = None
) -> WeightStack:
    """Gradient of the network output f (not the loss) at one input.

    Reverse accumulation over the trace: with b_l the sensitivity of f to
    the layer-l pre-activation, the layer-l block is the outer product
    b_l x_{l-1}^T and the outer-layer block is x_L itself.
    """
    if trace is None:
        trace = forward(V, act, x)
    L = V.depth
    grads: list[np.ndarray] = [np.empty(0)] * (L + 1)
    grads[L] = trace.x[L - 1][None, :].copy()
    b = trace.sigma_diag[L - 1] * V.outer[0]
    for layer in range(L - 1, -1, -1):
        below = x if layer == 0 else trace.x[layer - 1]
        grads[layer] = np.outer(b, below)
        if layer > 0:
            b = trace.sigma_diag[layer - 1] * (V.hidden[layer].T @ b)
    return WeightStack.from_layers(grads)


def gradient(V: WeightStack, act: Activation, data: Dataset) -> WeightStack:
    """Exact loss gradient, accumulated per sample in a fixed order."""
    return loss_and_gradient(V, act, data)[1]


def loss_and_gradient(
    V: WeightStack, act: Activation, data: Dataset
) -> tuple[LossValue, WeightStack]:
    """Loss and its exact gradient from one shared set of forward traces.

    Identical in value to calling total_loss and gradient separately; the
    fused form exists because instrumented training needs both every step.
    """
    L = V.depth
    acc = [np.zeros((V.p, V.p)) for _ in range(L)] + [np.zeros((1, V.p))]
    losses = []
    for x, y in zip(data.inputs, data.labels):
        trace = forward(V, act, x)
        z = float(y) * trace.output
        losses.append(LossValue.from_margin(z))
        scale = -float(y) * _stable_g(z)
        sample_grad = output_gradient(V, act, x, trace)
        for block, contrib in zip(acc, sample_grad.layers()):
            block += scale * contrib
    n = data.n
    grad = WeightStack.from_layers([block / n for block in acc])
    return LossValue.mean(losses), grad


def grad_dot_weights(grad: WeightStack, V: WeightStack) -> float:
    """Inner product grad . V, the alignment functional monitors need."""
    total = 0.0
    for g, w in zip(grad.layers(), V.layers()):
        total += float(np.dot(g.ravel(), w.ravel()))
    return total


def gd_step(V: WeightStack, alpha: float, grad: WeightStack) -> WeightStack:
    if not alpha > 0:
        raise ValueError("step size must be positive")
    return stack_axpy(V, -alpha, grad)
