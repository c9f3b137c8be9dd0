import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from orl.core import (
    DimensionError,
    OfflinePredictionSet,
    Trajectory,
    as_state,
    corrected_prediction,
    exceeds_residual_bound,
    residual,
    squared_loss,
    stack_regressors,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)
# Squares of these stay normal doubles, so "zero iff equal" is testable exactly.
representable = finite.filter(lambda x: x == 0.0 or abs(x) > 1e-100)


class TestResidual:
    def test_elementwise(self):
        np.testing.assert_array_equal(residual([3, 4], [1, 1]), [2, 3])

    def test_identity_is_zero(self):
        r = np.array([0.3, -2.0, 7.5])
        np.testing.assert_array_equal(residual(r, r), np.zeros(3))

    def test_scalar_case(self):
        np.testing.assert_array_equal(residual([0.5], [-0.5]), [1.0])

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            residual([1, 2], [1, 2, 3])


class TestStackRegressors:
    def test_oldest_first_scalar(self):
        np.testing.assert_array_equal(stack_regressors([[1.0], [2.0]], 2), [1, 2])

    def test_p_one_is_latest(self):
        hist = [[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]
        np.testing.assert_array_equal(stack_regressors(hist, 1), [5, 6])

    def test_two_dim(self):
        np.testing.assert_array_equal(stack_regressors([[1, 0], [0, 1]], 2), [1, 0, 0, 1])

    def test_short_history_zero_pads_older_blocks(self):
        np.testing.assert_array_equal(stack_regressors([[7.0, 8.0]], 3), [0, 0, 0, 0, 7, 8])

    def test_empty_history_needs_n(self):
        np.testing.assert_array_equal(stack_regressors([], 2, n=3), np.zeros(6))
        with pytest.raises(ValueError):
            stack_regressors([], 2)

    def test_rejects_p_below_one(self):
        with pytest.raises(ValueError):
            stack_regressors([[1.0]], 0)

    def test_rejects_ragged_history(self):
        with pytest.raises(DimensionError):
            stack_regressors([[1.0, 2.0], [3.0]], 2)

    @given(n=st.integers(1, 4), p=st.integers(1, 5), length=st.integers(0, 8))
    def test_length_is_np(self, n, p, length):
        rng = np.random.default_rng(n * 100 + p * 10 + length)
        hist = list(rng.standard_normal((length, n)))
        assert stack_regressors(hist, p, n=n).shape == (n * p,)


class TestCorrectedPrediction:
    def test_zero_correction_returns_offline(self):
        r_off = np.array([10.0, -3.0])
        np.testing.assert_array_equal(corrected_prediction(np.zeros(2), r_off), r_off)

    def test_scalar(self):
        np.testing.assert_array_equal(corrected_prediction([1.0], [2.0]), [3.0])

    def test_cancels_to_zero(self):
        r_off = np.array([1.5, -2.5])
        np.testing.assert_array_equal(corrected_prediction(-r_off, r_off), [0.0, 0.0])

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            corrected_prediction([1.0], [1.0, 2.0])


class TestSquaredLoss:
    def test_equal_is_zero(self):
        assert squared_loss([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_three_four_five(self):
        assert squared_loss([3, 4], [0, 0]) == 25.0

    def test_scalar(self):
        assert squared_loss([1.0], [-1.0]) == 4.0

    @given(arrays(np.float64, 3, elements=representable), arrays(np.float64, 3, elements=representable))
    def test_symmetric_nonnegative(self, a, b):
        assert squared_loss(a, b) == squared_loss(b, a)
        assert squared_loss(a, b) >= 0.0
        assert (squared_loss(a, b) == 0.0) == bool(np.all(a == b))

    @settings(max_examples=200)
    @given(
        arrays(np.float64, 2, elements=finite),
        arrays(np.float64, 2, elements=finite),
        arrays(np.float64, 2, elements=finite),
    )
    def test_prediction_and_residual_losses_agree(self, r, r_off, e_hat):
        lhs = squared_loss(r, corrected_prediction(e_hat, r_off))
        d = residual(r, r_off) - e_hat
        rhs = float(d @ d)
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12 * max(1.0, float(r @ r)))


class TestTypes:
    def test_trajectory_indexing(self):
        traj = Trajectory(-1, np.array([[0.0, 1.0], [2.0, 3.0], [4.0, 5.0]]))
        assert traj.n == 2 and traj.end_time == 1 and len(traj) == 3
        np.testing.assert_array_equal(traj.times, [-1, 0, 1])
        np.testing.assert_array_equal(traj.at(0), [2.0, 3.0])
        np.testing.assert_array_equal(traj.window(0, 1), [[2, 3], [4, 5]])
        with pytest.raises(IndexError):
            traj.at(2)

    def test_trajectory_rejects_nan(self):
        with pytest.raises(ValueError):
            Trajectory(0, np.array([[np.nan]]))

    def test_offline_set_shape(self):
        off = OfflinePredictionSet(np.zeros((3, 11, 2)))
        assert (off.N, off.T, off.n) == (3, 10, 2)
        with pytest.raises(DimensionError):
            OfflinePredictionSet(np.zeros((3, 11)))

    def test_as_state(self):
        np.testing.assert_array_equal(as_state(2.0), [2.0])
        with pytest.raises(ValueError):
            as_state([1.0, np.inf])
        with pytest.raises(DimensionError):
            as_state([[1.0]])

    def test_residual_bound(self):
        assert not exceeds_residual_bound(np.array([3.0, 4.0]), 5.0)
        assert exceeds_residual_bound(np.array([3.0, 4.0]), 4.99)
        assert not exceeds_residual_bound(np.array([1e9]), None)
