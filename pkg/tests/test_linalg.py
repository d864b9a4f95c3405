import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from boundbench.linalg import (
    PowerIterationResult,
    ShapeMismatchError,
    WeightStack,
    frobenius_norm,
    operator_norm,
    product_operator_bound,
    stack_axpy,
    stack_dot,
    stack_norms,
    stack_scale,
)


def random_stack(p, L, rng, scale=1.0):
    return WeightStack(
        hidden=tuple(scale * rng.standard_normal((p, p)) for _ in range(L)),
        outer=scale * rng.standard_normal((1, p)),
    )


# ---------------------------------------------------------------------------
# frobenius_norm


def test_frobenius_zero_stack():
    assert frobenius_norm(WeightStack.zeros(p=2, L=1)) == 0.0


def test_frobenius_single_entry():
    hidden = np.zeros((2, 2))
    hidden[0, 1] = 3.0
    stack = WeightStack(hidden=(hidden,), outer=np.zeros((1, 2)))
    assert frobenius_norm(stack) == 3.0


def test_frobenius_matches_scalar_loop_oracle():
    rng = np.random.default_rng(7)
    stack = random_stack(5, 3, rng)
    total = 0.0
    for m in stack.layers():
        for v in m.ravel():
            total += float(v) * float(v)
    expected = math.sqrt(total)
    assert abs(frobenius_norm(stack) - expected) <= 1e-14 * expected


# ---------------------------------------------------------------------------
# operator_norm


def test_operator_norm_diagonal():
    result = operator_norm(np.diag([3.0, 1.0]))
    assert result.converged
    assert result.value == pytest.approx(3.0, rel=1e-10)


def test_operator_norm_identity():
    result = operator_norm(np.eye(4))
    assert result.converged
    assert result.value == pytest.approx(1.0, rel=1e-12)


def test_operator_norm_vs_svd_oracle():
    rng = np.random.default_rng(11)
    m = rng.standard_normal((8, 8))
    expected = float(np.linalg.svd(m, compute_uv=False)[0])
    result = operator_norm(m)
    assert result.converged
    assert abs(result.value - expected) <= 1e-8 * expected


def test_operator_norm_rectangular_and_zero():
    rng = np.random.default_rng(12)
    m = rng.standard_normal((1, 6))
    assert operator_norm(m).value == pytest.approx(float(np.linalg.norm(m)), rel=1e-10)
    assert operator_norm(np.zeros((3, 3))).value == 0.0


def test_operator_norm_flags_non_convergence():
    # nearly degenerate top pair forces many iterations
    m = np.diag([1.0, 1.0 - 1e-12, 0.5])
    result = operator_norm(m, rel_tol=1e-300, max_iters=3)
    assert isinstance(result, PowerIterationResult)
    assert not result.converged


def test_operator_norm_rejects_bad_inputs():
    with pytest.raises(ValueError):
        operator_norm(np.zeros((0, 2)))
    with pytest.raises(ValueError):
        operator_norm(np.eye(2), rel_tol=0.0)


# ---------------------------------------------------------------------------
# stack_dot / stack_axpy


def test_stack_dot_unit_entries():
    p, L = 3, 2
    ones = WeightStack(
        hidden=tuple(np.ones((p, p)) for _ in range(L)), outer=np.ones((1, p))
    )
    k = L * p * p + p
    assert stack_dot(ones, ones) == k


def test_stack_dot_disjoint_one_hot():
    a_h = np.zeros((2, 2))
    a_h[0, 0] = 1.0
    b_h = np.zeros((2, 2))
    b_h[1, 1] = 1.0
    a = WeightStack(hidden=(a_h,), outer=np.zeros((1, 2)))
    b = WeightStack(hidden=(b_h,), outer=np.zeros((1, 2)))
    assert stack_dot(a, b) == 0.0


def test_stack_dot_matches_flatten_oracle():
    rng = np.random.default_rng(21)
    a = random_stack(4, 2, rng)
    b = random_stack(4, 2, rng)
    flat_a = np.concatenate([m.ravel() for m in a.layers()])
    flat_b = np.concatenate([m.ravel() for m in b.layers()])
    expected = float(flat_a @ flat_b)
    assert abs(stack_dot(a, b) - expected) <= 1e-14 * abs(expected)


def test_stack_dot_shape_mismatch():
    a = WeightStack.zeros(2, 1)
    b = WeightStack.zeros(3, 1)
    with pytest.raises(ShapeMismatchError):
        stack_dot(a, b)


def test_stack_axpy_alpha_zero_copies():
    rng = np.random.default_rng(22)
    y = random_stack(3, 2, rng)
    x = random_stack(3, 2, rng)
    out = stack_axpy(y, 0.0, x)
    for my, mo in zip(y.layers(), out.layers()):
        np.testing.assert_array_equal(my, mo)


def test_stack_axpy_self_cancellation():
    rng = np.random.default_rng(23)
    y = random_stack(3, 1, rng)
    out = stack_axpy(y, -1.0, y)
    assert frobenius_norm(out) == 0.0


def test_stack_axpy_entrywise_oracle_and_purity():
    rng = np.random.default_rng(24)
    y = random_stack(3, 2, rng)
    x = random_stack(3, 2, rng)
    y_before = [m.copy() for m in y.layers()]
    out = stack_axpy(y, 0.7, x)
    for my, mx, mo in zip(y.layers(), x.layers(), out.layers()):
        for idx in np.ndindex(my.shape):
            assert abs(mo[idx] - (my[idx] + 0.7 * mx[idx])) <= 1e-15
    for before, after in zip(y_before, y.layers()):
        np.testing.assert_array_equal(before, after)


# ---------------------------------------------------------------------------
# stack norms and invariants


def test_stack_norms_consistency():
    rng = np.random.default_rng(31)
    stack = random_stack(4, 2, rng)
    norms = stack_norms(stack)
    assert norms.operator_converged
    sq = sum(f * f for f in norms.per_layer_frobenius)
    assert norms.frobenius**2 == pytest.approx(sq, rel=1e-12)
    for op, fro in zip(norms.per_layer_operator, norms.per_layer_frobenius):
        assert op <= fro * (1 + 1e-10)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_triangle_inequality(seed):
    rng = np.random.default_rng(seed)
    a = random_stack(3, 2, rng, scale=float(rng.uniform(0.1, 10)))
    b = random_stack(3, 2, rng, scale=float(rng.uniform(0.1, 10)))
    lhs = frobenius_norm(stack_axpy(a, 1.0, b))
    assert lhs <= frobenius_norm(a) + frobenius_norm(b) + 1e-12


def test_product_of_operator_norms_bounded_by_collective_norm():
    # every contiguous run of layers obeys the collective-norm product bound
    for seed in range(60):
        rng = np.random.default_rng(9000 + seed)
        p = int(rng.integers(2, 8))
        L = int(rng.integers(1, 5))
        stack = random_stack(p, L, rng)
        floor = math.sqrt(L + 0.5)
        if frobenius_norm(stack) < floor:
            stack = stack_scale(stack, 1.001 * floor / frobenius_norm(stack))
        bound = product_operator_bound(stack)
        ops = [operator_norm(m).value for m in stack.layers()]
        for i in range(len(ops)):
            for j in range(i + 1, len(ops) + 1):
                prod = float(np.prod(ops[i:j]))
                assert prod <= bound + 1e-10 * max(bound, 1.0)


# ---------------------------------------------------------------------------
# construction rules


def test_stack_requires_square_hidden_layers():
    with pytest.raises(ShapeMismatchError):
        WeightStack(hidden=(np.zeros((2, 3)),), outer=np.zeros((1, 2)))


def test_stack_requires_hidden_layer():
    with pytest.raises(ValueError):
        WeightStack(hidden=(), outer=np.zeros((1, 2)))


def test_stack_rejects_non_finite():
    bad = np.zeros((2, 2))
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        WeightStack(hidden=(bad,), outer=np.zeros((1, 2)))


def test_stack_arrays_frozen():
    stack = WeightStack.zeros(2, 1)
    with pytest.raises(ValueError):
        stack.hidden[0][0, 0] = 1.0
