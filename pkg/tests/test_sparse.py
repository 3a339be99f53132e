from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from spdarts import autodiff as ad
from spdarts.sparse import (MixPlan, TemperaturePair, clamp_probability, entropy, ies, p_schedule,
                            sample_indicators, select_distribution, softmax_jacobian, softmax_t,
                            softmax_t_node)

rows = arrays(np.float64, st.integers(2, 6), elements=st.floats(-20, 20))


def schedule_oracle(p_low, p_up, total, warmup, i):
    """Exact rational evaluation of the piecewise-linear schedule."""
    if i < warmup:
        return Fraction(0)
    return Fraction(p_low) + (Fraction(p_up) - Fraction(p_low)) * Fraction(i - warmup, total - warmup)


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(softmax_t([0.0, 0.0, 0.0], 1.0), [1 / 3] * 3, rtol=1e-15)

    def test_ln2(self):
        np.testing.assert_allclose(softmax_t([np.log(2.0), 0.0], 1.0), [2 / 3, 1 / 3], rtol=1e-15)

    def test_sparse_temperature_saturates(self):
        y = softmax_t([1.0, 0.0, 0.0], 1e-3)
        assert y[0] >= 1 - 1e-12
        assert np.all(y[1:] <= 1e-12)

    def test_no_overflow_at_small_t(self):
        y = softmax_t([900.0, -900.0], 1e-3)
        np.testing.assert_array_equal(y, [1.0, 0.0])

    @pytest.mark.parametrize("t", [0.0, -1.0])
    def test_bad_temperature(self, t):
        with pytest.raises(ValueError):
            softmax_t([1.0, 2.0], t)
        with pytest.raises(ValueError):
            softmax_jacobian([0.5, 0.5], t)

    @settings(max_examples=200, deadline=None)
    @given(rows, st.floats(1e-3, 1e3))
    def test_normalized_and_argmax_invariant(self, row, t):
        y = softmax_t(row, t)
        assert abs(y.sum() - 1.0) <= 1e-9
        # ties between distinct-looking rows can collapse at tiny t, so compare maximal sets
        assert y[np.argmax(row)] == y.max()

    @settings(max_examples=200, deadline=None)
    @given(rows, st.floats(1e-2, 1e2), st.floats(1.01, 100))
    def test_entropy_monotone_in_temperature(self, row, t1, ratio):
        h1 = entropy(softmax_t(row, t1))
        h2 = entropy(softmax_t(row, t1 * ratio))
        assert h1 <= h2 + 1e-12


class TestJacobian:
    def test_half_half(self):
        np.testing.assert_allclose(softmax_jacobian([0.5, 0.5], 1.0), [[0.25, -0.25], [-0.25, 0.25]],
                                   rtol=1e-15)

    @pytest.mark.parametrize("t", [1e-3, 1.0, 10.0])
    def test_one_hot_is_zero(self, t):
        np.testing.assert_array_equal(softmax_jacobian([1.0, 0.0], t), 0.0)

    @settings(max_examples=100, deadline=None)
    @given(rows, st.floats(1e-3, 1e2))
    def test_rows_sum_to_zero(self, row, t):
        J = softmax_jacobian(softmax_t(row, t), t)
        np.testing.assert_allclose(J.sum(axis=1), 0.0, atol=1e-12 / min(t, 1.0))

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, st.integers(2, 6), elements=st.floats(-3, 3)), st.floats(0.1, 5))
    def test_matches_autodiff_and_finite_differences(self, row, t):
        y = softmax_t(row, t)
        J = softmax_jacobian(y, t)
        for i in range(len(row)):
            x = ad.parameter(row)
            ad.backward(ad.take(softmax_t_node(x, t), i))
            np.testing.assert_allclose(x.grad, J[i], atol=1e-8)
            h = 1e-6
            fd = [(softmax_t(row + h * e, t)[i] - softmax_t(row - h * e, t)[i]) / (2 * h)
                  for e in np.eye(len(row))]
            np.testing.assert_allclose(fd, J[i], atol=1e-4)

    def test_saturation_bound(self):
        rng = np.random.default_rng(0)
        for t in (1e-3, 1e-2, 1.0):
            for _ in range(200):
                z = rng.normal(size=4)
                z[rng.integers(4)] += 40.0  # logit margin > 30 -> max prob > 1 - 1e-9
                row = t * z
                y = softmax_t(row, t)
                assert y.max() >= 1 - 1e-9
                assert np.abs(softmax_jacobian(y, t)).max() <= 1e-9 / t


class TestSelect:
    temps = TemperaturePair(1e-3, 1.0)

    def test_sparse_branch(self):
        y = select_distribution([1.0, 0.0], 1, self.temps)
        assert y[0] >= 1 - 1e-12

    def test_smooth_branch_logistic(self):
        np.testing.assert_allclose(select_distribution([1.0, 0.0], 0, self.temps), [0.7311, 0.2689], atol=5e-5)

    @pytest.mark.parametrize("phi", [0, 1])
    def test_flat_row(self, phi):
        np.testing.assert_array_equal(select_distribution([0.0, 0.0], phi, self.temps), [0.5, 0.5])

    def test_bad_indicator(self):
        with pytest.raises(ValueError):
            select_distribution([0.0, 0.0], 2, self.temps)

    def test_temperature_order(self):
        with pytest.raises(ValueError):
            TemperaturePair(1e-2, 1e-3)


class TestSchedule:
    plan = MixPlan(0.0, 1.0, 50, 1)

    def test_warmup(self):
        assert p_schedule(self.plan, 0) == 0.0

    def test_end(self):
        assert p_schedule(self.plan, 50) == 1.0

    def test_midpoint(self):
        assert p_schedule(self.plan, 25) == pytest.approx(24 / 49, abs=1e-15)
        assert round(p_schedule(self.plan, 25), 5) == 0.48980

    @pytest.mark.parametrize("i", [-1, 51])
    def test_out_of_range(self, i):
        with pytest.raises(ValueError):
            p_schedule(self.plan, i)

    @settings(max_examples=300, deadline=None)
    @given(st.floats(0, 1), st.floats(0, 1), st.integers(2, 200), st.data())
    def test_matches_rational_oracle(self, a, b, total, data):
        p_low, p_up = min(a, b), max(a, b)
        warmup = data.draw(st.integers(0, total - 1))
        i = data.draw(st.integers(0, total))
        got = p_schedule(MixPlan(p_low, p_up, total, warmup), i)
        assert abs(got - float(schedule_oracle(p_low, p_up, total, warmup, i))) <= 1e-15

    def test_clamp(self):
        assert clamp_probability(1.2) == 1.0
        assert clamp_probability(-0.1) == 0.0
        assert clamp_probability(0.3) == 0.3


class TestIndicators:
    def test_extremes(self):
        np.testing.assert_array_equal(sample_indicators(0.0, 8, 1), 0)
        np.testing.assert_array_equal(sample_indicators(1.0, 8, 1), 1)

    def test_same_seed_same_flags(self):
        a = sample_indicators(0.5, 100, (3, 7))
        np.testing.assert_array_equal(a, sample_indicators(0.5, 100, (3, 7)))
        assert not np.array_equal(a, sample_indicators(0.5, 100, (3, 8)))

    @pytest.mark.parametrize("p", [0.1, 0.5, 0.9])
    def test_binomial_bounds(self, p):
        n = 10_000
        mean = sample_indicators(p, n, 11).mean()
        assert abs(mean - p) <= 3 * np.sqrt(p * (1 - p) / n)

    @pytest.mark.parametrize("p", [-0.01, 1.01])
    def test_out_of_range(self, p):
        with pytest.raises(ValueError):
            sample_indicators(p, 4, 0)


class TestIES:
    def test_one_hot(self):
        A = np.full((6, 4), -1000.0)
        A[np.arange(6), [0, 1, 2, 3, 0, 1]] = 1000.0
        assert ies(A) <= 1e-6

    def test_uniform(self):
        assert abs(ies(np.zeros((6, 5))) - 6 * np.log(5)) <= 1e-9

    def test_binary(self):
        assert ies(np.zeros((1, 2))) == pytest.approx(0.69315, abs=1e-5)

    def test_entropy_zero_log_zero(self):
        assert entropy([1.0, 0.0]) == 0.0

    @settings(max_examples=300, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(2, 5)), elements=st.floats(-1e3, 1e3)))
    def test_bounds(self, A):
        v = ies(A)
        assert 0.0 <= v <= A.shape[0] * np.log(A.shape[1])
