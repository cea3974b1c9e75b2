import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlsls.operators import (
    CAUSAL,
    STRICTLY_CAUSAL,
    ComponentOperator,
    DimensionError,
    LinearCausalKernel,
    Sequence,
    StrictnessError,
    add,
    check_strictness,
    compose,
    delay,
    evaluate,
    identity,
    invert_causal,
    kernel_compose,
    lp_norm,
    pointwise,
    running_lp_norms,
    scale,
    stack,
    subtract,
    truncate,
    zero,
)

from _factories import random_causal_operator, random_kernel, random_sequence, random_unit_operator


def scalar(*vals):
    return Sequence(np.array(vals, dtype=float).reshape(-1, 1))


def flat(seq):
    return seq.values.ravel().tolist()


def one_tap_operator(horizon=5):
    """``A_t(x) = x_t + 0.5 x_{t-1}``."""
    return ComponentOperator(
        lambda t, h: h[0] + (0.5 * h[1] if t >= 1 else 0.0), 1, 1, horizon, CAUSAL
    )


class TestSequence:
    def test_shape_and_immutability(self):
        s = Sequence(np.ones((4, 2)))
        assert (s.dim, s.horizon) == (2, 3)
        with pytest.raises(ValueError):
            s.values[0, 0] = 5.0

    def test_one_dimensional_input_is_scalar_channel(self):
        assert Sequence([1.0, 2.0, 3.0]).dim == 1

    def test_impulse(self):
        s = Sequence.impulse(2, 4, at=2, direction=[1.0, -1.0])
        assert np.array_equal(s.values[2], [1.0, -1.0])
        assert s.max_abs() == 1.0
        assert np.count_nonzero(s.values) == 2

    def test_arithmetic(self):
        a, b = scalar(1, 2), scalar(3, 5)
        assert flat(a + b) == [4, 7]
        assert flat(b - a) == [2, 3]
        assert flat(2 * a) == [2, 4]
        assert flat(-a) == [-1, -2]

    def test_mismatched_sum_raises(self):
        with pytest.raises(DimensionError):
            scalar(1, 2) + Sequence(np.ones((2, 2)))


class TestEvaluate:
    def test_identity(self):
        assert flat(evaluate(identity(1, 2), scalar(1, 2, 3))) == [1, 2, 3]

    def test_delay(self):
        assert flat(evaluate(delay(1, 2), scalar(1, 2, 3))) == [0, 1, 2]

    def test_component_by_hand(self):
        assert flat(evaluate(one_tap_operator(2), scalar(1, 0, 0))) == [1, 0.5, 0]

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            evaluate(identity(2, 3), scalar(1, 2))

    def test_horizon_too_long(self):
        with pytest.raises(DimensionError):
            evaluate(identity(1, 1), scalar(1, 2, 3))

    def test_shorter_input_keeps_its_horizon(self):
        assert evaluate(delay(1, 10), scalar(1, 2)).horizon == 1

    def test_component_matches_stream(self):
        rng = np.random.default_rng(3)
        op = random_causal_operator(rng, 2, 3, 6)
        x = random_sequence(rng, 2, 6)
        y = evaluate(op, x)
        hist = x.values[::-1]
        assert np.allclose(op.component(6, hist), y.values[6], atol=1e-14)


class TestArithmetic:
    def test_compose_identity(self):
        rng = np.random.default_rng(0)
        op = random_causal_operator(rng, 2, 2, 10)
        x = random_sequence(rng, 2, 10)
        assert evaluate(compose(identity(2, 10), op), x) == evaluate(op, x)

    def test_compose_delays(self):
        assert flat(evaluate(compose(delay(1, 2), delay(1, 2)), scalar(1, 2, 3))) == [0, 0, 1]

    def test_compose_scaled_delay(self):
        op = compose(scale(identity(1, 2), 2.0), delay(1, 2))
        assert flat(evaluate(op, scalar(1, 2, 3))) == [0, 2, 4]

    def test_compose_strictness_flag(self):
        assert compose(delay(1, 3), identity(1, 3)).strictness == STRICTLY_CAUSAL
        assert compose(identity(1, 3), identity(1, 3)).strictness == CAUSAL

    def test_compose_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            compose(identity(2, 3), identity(3, 3))

    def test_add_zero(self):
        rng = np.random.default_rng(1)
        op = random_causal_operator(rng, 2, 2, 8)
        x = random_sequence(rng, 2, 8)
        assert evaluate(add(op, zero(2, 2, 8)), x) == evaluate(op, x)

    def test_identity_minus_identity(self):
        x = random_sequence(np.random.default_rng(2), 3, 5)
        assert evaluate(subtract(identity(3, 5), identity(3, 5)), x).max_abs() == 0.0

    def test_add_delay_identity(self):
        assert flat(evaluate(add(delay(1, 2), identity(1, 2)), scalar(1, 2, 3))) == [1, 3, 5]

    def test_add_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            add(identity(2, 3), zero(2, 1, 3))

    def test_stack(self):
        op = stack(identity(1, 2), delay(1, 2))
        assert evaluate(op, scalar(1, 2, 3)).values.tolist() == [[1, 0], [2, 1], [3, 2]]

    def test_left_distributivity(self):
        rng = np.random.default_rng(4)
        A = random_causal_operator(rng, 2, 2, 12)
        B = random_causal_operator(rng, 2, 2, 12)
        C = random_causal_operator(rng, 2, 2, 12)
        x = random_sequence(rng, 2, 12)
        lhs = evaluate(compose(add(A, B), C), x)
        rhs = evaluate(add(compose(A, C), compose(B, C)), x)
        assert np.allclose(lhs.values, rhs.values, atol=1e-13)

    def test_pointwise(self):
        op = pointwise(np.abs, 1, 1, 2)
        assert flat(evaluate(op, scalar(-1, 2, -3))) == [1, 2, 3]


class TestCausality:
    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), t=st.integers(0, 9))
    def test_prefix_determines_output(self, seed, t):
        rng = np.random.default_rng(seed)
        op = random_causal_operator(rng, 2, 2, 10)
        x = random_sequence(rng, 2, 10)
        y_vals = np.array(x.values)
        y_vals[t + 1 :] = rng.standard_normal(y_vals[t + 1 :].shape)
        ox, oy = evaluate(op, x), evaluate(op, Sequence(y_vals))
        assert np.array_equal(ox.values[: t + 1], oy.values[: t + 1])

    def test_strict_ignores_current_sample(self):
        op = compose(random_causal_operator(np.random.default_rng(5), 2, 2, 10), delay(2, 10))
        assert check_strictness(op, samples=5) <= 1e-12

    def test_strictness_violation_detected(self):
        with pytest.raises(StrictnessError):
            check_strictness(identity(2, 5))

    def test_minus_identity_check(self):
        op = random_unit_operator(np.random.default_rng(6), 2, 10)
        assert check_strictness(op, minus_identity=True) <= 1e-12


class TestInversion:
    def test_identity_inverse(self):
        x = random_sequence(np.random.default_rng(0), 2, 5)
        assert evaluate(invert_causal(identity(2, 5)), x) == x

    def test_one_tap_inverse(self):
        inv = invert_causal(one_tap_operator(2))
        b = evaluate(inv, scalar(1, 0, 0))
        assert flat(b) == [1, -0.5, 0.25]
        assert flat(evaluate(one_tap_operator(2), b)) == [1, 0, 0]

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_round_trip(self, seed):
        rng = np.random.default_rng(seed)
        a = random_unit_operator(rng, 3, 20)
        inv = invert_causal(a)
        s = random_sequence(rng, 3, 20)
        assert np.max(np.abs(evaluate(a, evaluate(inv, s)).values - s.values)) <= 1e-10
        assert np.max(np.abs(evaluate(inv, evaluate(a, s)).values - s.values)) <= 1e-10

    def test_non_square_rejected(self):
        with pytest.raises(DimensionError):
            invert_causal(zero(2, 3, 4))

    def test_non_unit_feedthrough_rejected(self):
        with pytest.raises(StrictnessError):
            invert_causal(scale(identity(1, 4), 2.0))


class TestTruncation:
    def test_truncate_at_zero(self):
        assert flat(truncate(scalar(1, 2, 3), 0)) == [1, 0, 0]

    def test_beyond_horizon_is_copy(self):
        s = scalar(1, 2, 3)
        assert truncate(s, 10) == s

    def test_negative_tau(self):
        with pytest.raises(ValueError):
            truncate(scalar(1.0), -1)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), tau=st.integers(0, 12))
    def test_idempotent_linear_and_splits_norm(self, seed, tau):
        rng = np.random.default_rng(seed)
        s, r = random_sequence(rng, 2, 10), random_sequence(rng, 2, 10)
        ts = truncate(s, tau)
        assert truncate(ts, tau) == ts
        assert np.allclose(truncate(s + 2.0 * r, tau).values, (ts + 2.0 * truncate(r, tau)).values)
        for p in (1, 2):
            lhs = lp_norm(s, p) ** p
            rhs = lp_norm(ts, p) ** p + lp_norm(s - ts, p) ** p
            assert lhs == pytest.approx(rhs, rel=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), tau=st.integers(0, 10), p=st.sampled_from([1, 2, np.inf]))
    def test_truncating_input_bounds_truncated_output(self, seed, tau, p):
        rng = np.random.default_rng(seed)
        Q = random_causal_operator(rng, 2, 2, 10)
        x = random_sequence(rng, 2, 10)
        lhs = lp_norm(truncate(evaluate(Q, x), tau), p)
        rhs = lp_norm(evaluate(Q, truncate(x, tau)), p)
        assert lhs <= rhs + 1e-12


class TestNorms:
    def test_scalar_l1(self):
        assert lp_norm(scalar(3, 4), p=1, vec_norm=2) == 7.0

    def test_zero(self):
        for p in (1, 2, np.inf):
            assert lp_norm(Sequence.zeros(3, 4), p) == 0.0

    def test_vector_sup(self):
        assert lp_norm(Sequence([[3.0, 4.0], [0.0, 0.0]]), p=np.inf, vec_norm=2) == 5.0

    def test_running_norms_end_at_full_norm(self):
        s = random_sequence(np.random.default_rng(7), 2, 9)
        for p in (1, 2, np.inf):
            run = running_lp_norms(s, p)
            assert run[-1] == pytest.approx(lp_norm(s, p), rel=1e-12)
            assert np.all(np.diff(run) >= 0)

    def test_invalid_order(self):
        with pytest.raises(ValueError):
            lp_norm(scalar(1.0), p=3)


class TestLinearKernel:
    def test_apply_matches_operator(self):
        rng = np.random.default_rng(8)
        K = random_kernel(rng, 2, 3, 9, fir=4)
        x = random_sequence(rng, 3, 9)
        assert np.allclose(K.apply(x).values, evaluate(K.as_operator(), x).values, atol=1e-14)

    def test_apply_matches_dense(self):
        rng = np.random.default_rng(9)
        K = random_kernel(rng, 2, 2, 6)
        x = random_sequence(rng, 2, 6)
        assert np.allclose(K.dense() @ x.values.ravel(), K.apply(x).values.ravel(), atol=1e-13)

    def test_absent_blocks_zeroed(self):
        K = LinearCausalKernel(np.ones((3, 3, 1, 1)))
        assert K.block(0, 2).item() == 0.0 and K.block(1, 2).item() == 1.0

    def test_fir_cutoff(self):
        K = LinearCausalKernel(np.ones((5, 2, 1, 1)), fir_horizon=2)
        assert K.block(4, 3).item() == 0.0
        with pytest.raises(ValueError):
            LinearCausalKernel(np.ones((5, 3, 1, 1)), fir_horizon=2)

    def test_identity_leading_checked(self):
        with pytest.raises(ValueError):
            LinearCausalKernel(np.zeros((2, 1, 1, 1)), identity_leading=True)

    def test_composition_matches_operators(self):
        rng = np.random.default_rng(10)
        A, B = random_kernel(rng, 2, 3, 7, fir=3), random_kernel(rng, 3, 2, 7, fir=2)
        x = random_sequence(rng, 2, 7)
        lhs = kernel_compose(A, B).apply(x)
        rhs = A.apply(B.apply(x))
        assert np.allclose(lhs.values, rhs.values, atol=1e-13)
        assert kernel_compose(A, B).fir_horizon == 4

    def test_shift_is_delay(self):
        K = LinearCausalKernel.shift(np.array([[2.0]]), 3)
        assert flat(K.apply(scalar(1, 2, 3, 4))) == [0, 2, 4, 6]
        assert K.is_strict()

    def test_identity_kernel_declares_unit_feedthrough(self):
        K = LinearCausalKernel.identity(2, 4) + random_kernel(np.random.default_rng(11), 2, 2, 4) * 0.0
        assert K.as_operator().unit_feedthrough
