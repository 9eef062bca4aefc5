import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from moelab.errors import InputError, ParameterError
from moelab.perf import PerfParams, cost_per_token, step_time, throughput_ratio


class TestStepTime:
    def test_perfect_balance_floor(self):
        p = PerfParams(gamma=0.010)
        assert step_time(1.0, p) == pytest.approx(0.010)

    def test_affine(self):
        p = PerfParams(gamma=0.010, t_comm=0.001, t_offload=0.001)
        assert step_time(2.0, p) == pytest.approx(0.022)

    def test_below_one_rejected(self):
        with pytest.raises(InputError):
            step_time(0.99, PerfParams())

    def test_regression_recovers_coefficients(self):
        p = PerfParams(gamma=0.0137, t_comm=0.003, t_offload=0.002)
        xs = np.linspace(1.0, 4.0, 100)
        ys = np.array([step_time(x, p) for x in xs])
        slope, intercept = np.polyfit(xs, ys, 1)
        assert slope == pytest.approx(p.gamma, abs=1e-9)
        assert intercept == pytest.approx(p.constant_term, abs=1e-9)

    @given(st.floats(1.0, 10.0), st.floats(1.0, 10.0))
    def test_strictly_increasing(self, a, b):
        p = PerfParams(gamma=0.5, t_comm=0.1)
        if a < b:
            assert step_time(a, p) < step_time(b, p)


class TestThroughputRatio:
    def test_equal_is_one(self):
        assert throughput_ratio(1.7, 1.7, PerfParams()) == pytest.approx(1.0)

    def test_c_zero_reduces_to_imbalance_ratio(self):
        # ratio interpretation of the headline imbalance improvement
        p = PerfParams(gamma=1.0)
        assert throughput_ratio(1.0, 1.63, p) == pytest.approx(1.63, abs=1e-12)

    def test_large_constant_dominates(self):
        p = PerfParams(gamma=1e-6, t_comm=10.0)
        assert throughput_ratio(1.0, 5.0, p) == pytest.approx(1.0, abs=1e-5)

    @given(st.floats(1.0, 8.0), st.floats(1.0, 8.0), st.floats(1.0, 8.0))
    def test_monotonicity(self, i_policy, i_base, i_base2):
        p = PerfParams(gamma=0.7, t_comm=0.2)
        r1 = throughput_ratio(i_policy, i_base, p)
        r2 = throughput_ratio(i_policy, i_base2, p)
        if i_base < i_base2:
            assert r1 <= r2
        better = throughput_ratio(min(i_policy, i_base), i_base, p)
        assert better >= throughput_ratio(max(i_policy, i_base), i_base, p)


class TestCostPerToken:
    def test_zero(self):
        assert cost_per_token(0.0, PerfParams(gpu_price=10, gpu_count=4)) == 0.0

    def test_unit_conversion(self):
        p = PerfParams(gpu_price=3.6, gpu_count=1)
        assert cost_per_token(1.0, p) == pytest.approx(0.001)

    def test_linear_in_each_argument(self):
        base = cost_per_token(2.0, PerfParams(gpu_price=1.0, gpu_count=2))
        assert cost_per_token(4.0, PerfParams(gpu_price=1.0, gpu_count=2)) \
            == pytest.approx(2 * base)
        assert cost_per_token(2.0, PerfParams(gpu_price=2.0, gpu_count=2)) \
            == pytest.approx(2 * base)
        assert cost_per_token(2.0, PerfParams(gpu_price=1.0, gpu_count=4)) \
            == pytest.approx(2 * base)

    def test_doubling_imbalance_doubles_cost_when_c_zero(self):
        p = PerfParams(gamma=0.004, gpu_price=2.0, gpu_count=8)
        c1 = cost_per_token(step_time(1.2, p), p)
        c2 = cost_per_token(step_time(2.4, p), p)
        assert c2 == pytest.approx(2 * c1)


class TestParams:
    def test_validation(self):
        with pytest.raises(ParameterError):
            PerfParams(gamma=0.0)
        with pytest.raises(ParameterError):
            PerfParams(t_comm=-1.0)
        with pytest.raises(ParameterError):
            PerfParams(gpu_count=0)
