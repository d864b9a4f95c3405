"""Dense stacked-parameter arithmetic and norms.

A network's trainable parameters live in a WeightStack: L square hidden
matrices of side p plus a 1 x p outer row. All operations are pure and
return new objects; arrays inside a stack are frozen on construction so
stacks can be shared across threads safely.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, NamedTuple, Sequence

import numpy as np


class ShapeMismatchError(ValueError):
    """Raised when two stacks (or a stack and data) disagree on shape."""


def _freeze(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=np.float64, copy=True, order="C")
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class WeightStack:
    """All trainable parameters: L hidden p x p matrices and one 1 x p row."""

    hidden: tuple[np.ndarray, ...]
    outer: np.ndarray

    def __post_init__(self):
        hidden = tuple(_freeze(m) for m in self.hidden)
        outer = _freeze(self.outer)
        if len(hidden) < 1:
            raise ValueError("a stack needs at least one hidden layer")
        if outer.ndim != 2 or outer.shape[0] != 1:
            raise ValueError(f"outer layer must be 1 x p, got {outer.shape}")
        p = outer.shape[1]
        if p < 1:
            raise ValueError("width must be at least 1")
        for i, m in enumerate(hidden):
            if m.shape != (p, p):
                raise ShapeMismatchError(
                    f"hidden layer {i} has shape {m.shape}, expected ({p}, {p})"
                )
        for i, m in enumerate((*hidden, outer)):
            if not np.all(np.isfinite(m)):
                raise ValueError(f"non-finite entries in layer {i}")
        object.__setattr__(self, "hidden", hidden)
        object.__setattr__(self, "outer", outer)

    @property
    def p(self) -> int:
        return self.outer.shape[1]

    @property
    def depth(self) -> int:
        """Number of hidden layers L."""
        return len(self.hidden)

    @property
    def n_layers(self) -> int:
        return len(self.hidden) + 1

    def layers(self) -> Iterator[np.ndarray]:
        yield from self.hidden
        yield self.outer

    def same_shape(self, other: "WeightStack") -> bool:
        return self.depth == other.depth and self.p == other.p

    @classmethod
    def from_layers(cls, layers: Sequence[np.ndarray]) -> "WeightStack":
        """Build from L+1 matrices; the last one is the outer row."""
        if len(layers) < 2:
            raise ValueError("need at least one hidden layer plus the outer row")
        return cls(hidden=tuple(layers[:-1]), outer=np.asarray(layers[-1]))

    @classmethod
    def zeros(cls, p: int, L: int) -> "WeightStack":
        return cls(
            hidden=tuple(np.zeros((p, p)) for _ in range(L)),
            outer=np.zeros((1, p)),
        )


@dataclass(frozen=True)
class StackNorms:
    """Collective and per-layer norms of a stack."""

    frobenius: float
    per_layer_frobenius: tuple[float, ...]
    per_layer_operator: tuple[float, ...]
    operator_converged: bool = True


class PowerIterationResult(NamedTuple):
    value: float
    converged: bool
    iterations: int


def _require_same_shape(a: WeightStack, b: WeightStack) -> None:
    if not a.same_shape(b):
        raise ShapeMismatchError(
            f"stack shapes differ: (p={a.p}, L={a.depth}) vs (p={b.p}, L={b.depth})"
        )


def frobenius_norm(stack: WeightStack) -> float:
    """Square root of the sum of squared entries across all L+1 matrices."""
    total = 0.0
    for m in stack.layers():
        total += float(np.dot(m.ravel(), m.ravel()))
    return float(np.sqrt(total))


def stack_dot(a: WeightStack, b: WeightStack) -> float:
    """Entrywise dot product over all layers."""
    _require_same_shape(a, b)
    total = 0.0
    for ma, mb in zip(a.layers(), b.layers()):
        total += float(np.dot(ma.ravel(), mb.ravel()))
    return total


def stack_axpy(y: WeightStack, alpha: float, x: WeightStack) -> WeightStack:
    """y + alpha * x, leaving both inputs untouched."""
    _require_same_shape(y, x)
    return WeightStack(
        hidden=tuple(my + alpha * mx for my, mx in zip(y.hidden, x.hidden)),
        outer=y.outer + alpha * x.outer,
    )


def stack_scale(a: WeightStack, c: float) -> WeightStack:
    return WeightStack(hidden=tuple(c * m for m in a.hidden), outer=c * a.outer)


def operator_norm(
    m: np.ndarray, rel_tol: float = 1e-10, max_iters: int = 10_000
) -> PowerIterationResult:
    """Largest singular value by power iteration on the smaller Gram matrix.

    The start vector is all-ones plus a tiny fixed-seed perturbation, so
    repeated calls are bit-identical and the iteration cannot start
    orthogonal to the top singular direction. Non-convergence within
    max_iters is reported through the `converged` flag, never silently.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] == 0 or m.shape[1] == 0:
        raise ValueError(f"need a nonempty 2-d matrix, got shape {m.shape}")
    if rel_tol <= 0:
        raise ValueError("rel_tol must be positive")
    gram = m @ m.T if m.shape[0] <= m.shape[1] else m.T @ m
    k = gram.shape[0]
    rng = np.random.default_rng(0x5EED)
    v = np.ones(k) + 1e-3 * rng.standard_normal(k)
    v /= np.linalg.norm(v)
    lam_prev = -np.inf
    for it in range(1, max_iters + 1):
        w = gram @ v
        lam = float(v @ w)
        wn = float(np.linalg.norm(w))
        if wn == 0.0:
            return PowerIterationResult(0.0, True, it)
        v = w / wn
        if abs(lam - lam_prev) <= rel_tol * max(abs(lam), 1e-300):
            return PowerIterationResult(float(np.sqrt(max(lam, 0.0))), True, it)
        lam_prev = lam
    return PowerIterationResult(float(np.sqrt(max(lam_prev, 0.0))), False, max_iters)


def stack_norms(
    stack: WeightStack, rel_tol: float = 1e-10, max_iters: int = 10_000
) -> StackNorms:
    """Frobenius plus per-layer Frobenius and operator norms."""
    per_f = tuple(float(np.linalg.norm(m)) for m in stack.layers())
    results = [operator_norm(m, rel_tol, max_iters) for m in stack.layers()]
    return StackNorms(
        frobenius=float(np.sqrt(sum(f * f for f in per_f))),
        per_layer_frobenius=per_f,
        per_layer_operator=tuple(r.value for r in results),
        operator_converged=all(r.converged for r in results),
    )


def product_operator_bound(stack: WeightStack) -> float:
    """max{ ||V||^(L+1) / (L+1)^((L+1)/2), ||V|| } for the collective norm."""
    f = frobenius_norm(stack)
    k = stack.n_layers
    return max(f**k / k ** (k / 2.0), f)
