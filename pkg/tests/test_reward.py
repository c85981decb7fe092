import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ehsecrecy import reward as R
from ehsecrecy.errors import DomainError
from ehsecrecy.models import FadingModel
from ehsecrecy.numerics import exp_integral_ei

from oracles import t_con_quad, t_stat_nested, t_var_quad

RAYLEIGH = FadingModel.gamma(1.0, 1.0)
gains = st.floats(min_value=0.0, max_value=20.0)
powers = st.floats(min_value=0.0, max_value=40.0)


class TestRatePair:
    @given(gains, gains, st.sampled_from(["variable", "constant"]))
    def test_zero_power(self, g, h, coding):
        assert R.rate_pair(g, h, 0.0, coding) == 0.0

    def test_direct_values(self):
        assert R.rate_pair(2, 1, 1, "variable") == pytest.approx(math.log2(3) - 1, rel=1e-14)
        assert R.rate_pair(1, 2, 1, "variable") == 0.0
        assert R.rate_pair(1, 2, 1, "constant") == pytest.approx(1 - math.log2(3), rel=1e-14)

    def test_domain(self):
        with pytest.raises(DomainError):
            R.rate_pair(1, 1, -1)
        with pytest.raises(DomainError):
            R.rate_pair(1, 1, 1, "fixed")

    @given(gains, gains, powers)
    def test_variable_dominates_constant(self, g, h, rho):
        v = R.rate_pair(g, h, rho, "variable")
        c = R.rate_pair(g, h, rho, "constant")
        assert v >= c - 1e-15
        assert v >= 0.0
        if g <= h:
            assert v == 0.0

    @given(st.floats(0.01, 20.0), st.floats(0.0, 20.0), st.floats(0.0, 30.0))
    def test_concave_nondecreasing(self, g, h, rho):
        if g <= h:
            return
        d = 1e-2
        f = [R.rate_pair(g, h, rho + k * d) for k in range(3)]
        assert f[1] >= f[0] and f[2] >= f[1]
        assert f[2] - 2 * f[1] + f[0] <= 1e-12


class TestCTotal:
    def test_zero(self):
        assert R.c_total([0, 0], [1, 2], [0.5, 0.1]) == 0.0

    def test_additive(self):
        one = R.c_total([1.3], [2.0], [0.4])
        assert R.c_total([1.3, 1.3], [2.0, 2.0], [0.4, 0.4]) == pytest.approx(2 * one, rel=1e-15)

    def test_good_bad_single_active(self):
        B, G = 1 / 30, 3 / 30
        x = 4.0
        assert R.c_total([x, 0.0], [G, B], [B, B]) == pytest.approx(R.rate_pair(G, B, x), rel=1e-15)

    def test_dimension_mismatch(self):
        with pytest.raises(DomainError):
            R.c_total([1], [1, 2], [1, 2])


class TestTCon:
    def test_zero_power(self):
        assert R.t_con(1.0, 0.0, RAYLEIGH) == 0.0

    def test_unit_example(self):
        expected = 1.0 + math.e * exp_integral_ei(-1.0) / math.log(2)
        assert R.t_con(1.0, 1.0, RAYLEIGH) == pytest.approx(expected, rel=1e-9)
        assert R.t_con(1.0, 1.0, RAYLEIGH) == pytest.approx(0.1396526, abs=1e-7)

    def test_can_be_negative(self):
        assert R.t_con(0.1, 1.0, RAYLEIGH) < 0

    @pytest.mark.parametrize("g,rho,m,mean", [(0.5, 2.0, 1, 1.0), (2.0, 0.3, 3, 1.5),
                                              (1.2, 10.0, 5, 1.0), (0.0, 4.0, 2, 0.5)])
    def test_against_quadrature_oracle(self, g, rho, m, mean):
        model = FadingModel.gamma(m, mean)
        assert R.t_con(g, rho, model) == pytest.approx(t_con_quad(g, rho, m, mean), rel=1e-8, abs=1e-12)

    def test_discrete_eavesdropper(self, good_bad):
        g, rho = 0.05, 3.0
        expected = sum(p * math.log2((1 + g * rho) / (1 + h * rho))
                       for h, p in zip(good_bad.support, good_bad.probs))
        assert R.t_con(g, rho, good_bad) == pytest.approx(expected, rel=1e-14)


class TestTVar:
    def test_zero_cases(self):
        assert R.t_var(1.0, 0.0, RAYLEIGH) == 0.0
        assert R.t_var(0.0, 3.0, RAYLEIGH) == 0.0

    def test_bounded(self):
        v = R.t_var(1.0, 1.0, RAYLEIGH)
        assert 0.0 < v < 1.0

    @pytest.mark.parametrize("g,rho,m,mean", [(1.0, 1.0, 1, 1.0), (2.0, 0.3, 3, 1.5),
                                              (0.4, 10.0, 5, 1.0), (3.0, 25.0, 1, 2.0)])
    def test_against_quadrature_oracle(self, g, rho, m, mean):
        model = FadingModel.gamma(m, mean)
        assert R.t_var(g, rho, model) == pytest.approx(t_var_quad(g, rho, m, mean), rel=1e-9)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.0, 6.0), st.floats(0.0, 30.0), st.sampled_from([1.0, 2.0, 5.0]))
    def test_dominates_t_con(self, g, rho, m):
        model = FadingModel.gamma(m, 1.0)
        assert R.t_var(g, rho, model) >= R.t_con(g, rho, model) - 1e-12
        assert R.t_var(g, rho, model) >= 0.0


class TestTStat:
    def test_equal_models_give_zero(self):
        for rho in (0.0, 0.5, 3.0, 30.0):
            assert R.t_stat(rho, RAYLEIGH, RAYLEIGH) == 0.0
        m5 = FadingModel.gamma(5.0, 1.0)
        assert R.t_stat(2.0, m5, FadingModel.gamma(5.0, 1.0)) == 0.0

    def test_zero_power(self):
        assert R.t_stat(0.0, FadingModel.gamma(1, 2), RAYLEIGH) == 0.0

    def test_positive_with_stronger_legitimate_link(self):
        val = R.t_stat(1.0, FadingModel.gamma(1, 2), RAYLEIGH)
        assert val > 0
        assert val == pytest.approx(t_stat_nested(1.0, 1, 2.0, 1, 1.0), rel=1e-7)

    def test_is_average_of_t_con(self):
        legit = FadingModel.gamma(2.0, 1.5)
        eave = FadingModel.gamma(1.0, 1.0)
        rho = 2.0
        averaged = legit.expect(lambda g: R.t_con(g, rho, eave) * 1.0)
        assert R.t_stat(rho, legit, eave) == pytest.approx(averaged, rel=1e-8)


class TestDerivativeIdentities:
    def test_simple_values(self):
        assert R.d2_t_con(0.0, 0.0) == pytest.approx(1 / math.log(2), rel=1e-15)
        assert R.d2_t_var(80.0, 1.0, RAYLEIGH) == pytest.approx(R.d2_t_con(80.0, 1.0), rel=1e-14)

    def test_needs_gamma_model(self, good_bad):
        with pytest.raises(DomainError):
            R.d2_t_var(1.0, 1.0, good_bad)

    @pytest.mark.parametrize("m", [1.0, 3.0])
    def test_mixed_finite_difference_at_unit_point(self, m):
        model = FadingModel.gamma(m, 1.0)
        g = rho = 1.0
        d = 1e-3

        def mixed(f):
            return (f(g + d, rho + d) - f(g + d, rho - d) - f(g - d, rho + d) + f(g - d, rho - d)) / (4 * d * d)

        fd_con = mixed(lambda a, b: R.t_con(a, b, model))
        fd_var = mixed(lambda a, b: R.t_var(a, b, model))
        assert fd_con == pytest.approx(R.d2_t_con(g, rho), rel=1e-4)
        assert fd_var == pytest.approx(R.d2_t_var(g, rho, model), rel=1e-4)


class TestRewardKernel:
    def test_statistical_uses_constant_coding(self):
        from ehsecrecy.models import SystemConfig
        k = R.RewardKernel.from_config(SystemConfig.default(csi="statistical", coding="variable"))
        assert k.coding == "constant"

    def test_dispatch(self):
        k = R.RewardKernel("variable", "partial", (RAYLEIGH,), (RAYLEIGH,))
        assert k.carrier_reward(0, 1.0, 2.0) == R.t_var(1.0, 2.0, RAYLEIGH)
        k = R.RewardKernel("constant", "partial", (RAYLEIGH,), (RAYLEIGH,))
        assert k.reward([2.0], [1.0]) == R.t_con(1.0, 2.0, RAYLEIGH)
        k = R.RewardKernel("variable", "full", (RAYLEIGH,), (RAYLEIGH,))
        with pytest.raises(DomainError):
            k.carrier_reward(0, 1.0, 1.0)

    def test_invalid_modes(self):
        with pytest.raises(DomainError):
            R.RewardKernel("variable", "psychic", (), ())
