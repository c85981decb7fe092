import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ehsecrecy.errors import DomainError
from ehsecrecy.models import ArrivalProcess, FadingModel, SystemConfig
from ehsecrecy.powersplit import (RewardTable, build_reward_table, cached_reward_table,
                                  load_table, save_table, split_full_csi, split_partial_csi,
                                  split_uniform, table_key)
from ehsecrecy.reward import RewardKernel, c_total, rate_pair

from oracles import full_csi_grid_best, simplex_grid

RAYLEIGH = FadingModel.gamma(1.0, 1.0)


def small(**kw):
    return SystemConfig.default(arrivals=ArrivalProcess.bernoulli(0.5, 1), **kw)


class TestUniform:
    def test_even_split(self):
        assert split_uniform(6.0, 3).rho_vec == (2.0, 2.0, 2.0)

    def test_domain(self):
        with pytest.raises(DomainError):
            split_uniform(1.0, 0)


class TestFullCSI:
    def test_single_carrier_takes_all(self):
        res = split_full_csi(3.0, [2.0], [1.0])
        assert res.rho_vec == pytest.approx((3.0,), rel=1e-15)
        assert res.achieved_reward == pytest.approx(rate_pair(2, 1, 3), rel=1e-14)

    def test_no_useful_carrier(self):
        res = split_full_csi(4.0, [1.0, 0.5], [1.0, 2.0])
        assert res.rho_vec == (0.0, 0.0)
        assert res.achieved_reward == 0.0
        assert res.unallocated == 4.0

    def test_symmetric_carriers_split_evenly(self):
        res = split_full_csi(5.0, [2.0, 2.0], [0.5, 0.5])
        assert res.rho_vec[0] == pytest.approx(2.5, rel=1e-9)
        assert res.rho_vec[1] == pytest.approx(2.5, rel=1e-9)

    def test_zero_eavesdropper_is_water_filling(self):
        g = [1.0, 0.25]
        res = split_full_csi(10.0, g, [0.0, 0.0])
        # Classic water-filling: rho_r = mu - 1/g_r, with mu = (10 + 1 + 4) / 2
        assert res.rho_vec == pytest.approx((6.5, 3.5), rel=1e-9)

    def test_better_carrier_gets_more(self):
        res = split_full_csi(2.0, [3.0, 1.5], [0.5, 0.5])
        assert res.rho_vec[0] > res.rho_vec[1]

    def test_stationarity(self):
        g, h = [2.0, 1.2, 4.0], [0.5, 0.1, 3.0]
        res = split_full_csi(3.0, g, h)
        slopes = [g[r] / (1 + g[r] * p) - h[r] / (1 + h[r] * p)
                  for r, p in enumerate(res.rho_vec) if p > 0]
        assert max(slopes) - min(slopes) < 1e-8
        assert slopes[0] == pytest.approx(res.eta, rel=1e-8)

    @settings(max_examples=150, deadline=None)
    @given(st.integers(2, 3), st.floats(0.01, 30.0),
           st.lists(st.floats(0.0, 5.0), min_size=6, max_size=6))
    def test_constraints(self, N, x, gains):
        g, h = gains[:N], gains[3:3 + N]
        res = split_full_csi(x, g, h)
        if any(gr > hr for gr, hr in zip(g, h)):
            assert abs(sum(res.rho_vec) - x) <= 1e-9 * x
        for r in range(N):
            assert res.rho_vec[r] >= 0.0
            if g[r] <= h[r]:
                assert res.rho_vec[r] == 0.0

    def test_beats_grid_on_random_instances(self):
        rng = np.random.default_rng(11)
        for _ in range(40):
            N = int(rng.integers(2, 4))
            g = rng.exponential(1.0, N)
            h = rng.exponential(1.0, N)
            x = float(rng.uniform(0.1, 20.0))
            res = split_full_csi(x, list(g), list(h))
            assert res.achieved_reward >= full_csi_grid_best(x, g, h, 200) - 1e-9

    def test_domain(self):
        with pytest.raises(DomainError):
            split_full_csi(-1.0, [1.0], [0.0])
        with pytest.raises(DomainError):
            split_full_csi(1.0, [1.0, 2.0], [0.0])


def _grid_partial(x, g, kernel, steps):
    best = -math.inf
    for frac in simplex_grid(kernel.N, steps):
        rho = frac * x
        best = max(best, kernel.reward(list(rho), g))
    return best


class TestPartialCSI:
    @pytest.mark.parametrize("coding", ["variable", "constant"])
    @pytest.mark.parametrize("g", [(0.5, 2.0), (1.0, 1.0), (3.0, 0.2)])
    def test_matches_grid(self, coding, g):
        kernel = RewardKernel(coding, "partial", (RAYLEIGH,) * 2, (RAYLEIGH,) * 2)
        res = split_partial_csi(4.0, list(g), kernel)
        assert sum(res.rho_vec) == pytest.approx(4.0, rel=1e-12)
        assert res.achieved_reward >= _grid_partial(4.0, list(g), kernel, 100) - 1e-8
        assert res.achieved_reward == pytest.approx(kernel.reward(list(res.rho_vec), list(g)),
                                                    rel=1e-12)

    def test_symmetric_gains_split_evenly(self):
        kernel = RewardKernel("variable", "partial", (RAYLEIGH,) * 2, (RAYLEIGH,) * 2)
        res = split_partial_csi(3.0, [1.5, 1.5], kernel)
        assert res.rho_vec == pytest.approx((1.5, 1.5), abs=1e-6)

    def test_nonconcave_uses_grid(self, good_bad):
        # A two-point eavesdropper makes the variable-rate reward non-concave.
        kernel = RewardKernel("variable", "partial", (good_bad,) * 2, (good_bad,) * 2)
        g = [0.07, 0.2]
        res = split_partial_csi(6.0, g, kernel)
        assert res.achieved_reward >= _grid_partial(6.0, g, kernel, 400) - 1e-7

    def test_statistical_equal_models(self):
        kernel = RewardKernel("constant", "statistical", (RAYLEIGH,) * 2, (RAYLEIGH,) * 2)
        assert split_partial_csi(2.0, [0, 0], kernel).achieved_reward == 0.0

    def test_single_carrier(self):
        kernel = RewardKernel("constant", "partial", (RAYLEIGH,), (RAYLEIGH,))
        res = split_partial_csi(2.0, [1.3], kernel)
        assert res.rho_vec == (2.0,)


class TestRewardTable:
    @pytest.fixture(scope="class")
    @classmethod
    def table(cls, default_config):
        return build_reward_table(default_config)

    def test_shape_and_zero_budget(self, table, default_config):
        assert table.values.shape == (31, 225)
        assert table.rho.shape == (31, 225, 1)
        assert np.all(table.values[0] == 0.0)

    def test_full_csi_rows_concave_nondecreasing(self, table):
        d1 = np.diff(table.values, axis=0)
        assert np.all(d1 >= -1e-12)
        assert np.all(np.diff(d1, axis=0) <= 1e-12)

    def test_split_accessor(self, table):
        res = table.split(4, 17)
        assert res.achieved_reward == table.values[4, 17]
        assert res.unallocated == pytest.approx(4 - sum(res.rho_vec))

    def test_optimal_beats_uniform_good_bad(self, good_bad):
        cfg = small(e_max=4, n=2, legit=(good_bad,) * 2, eave=(good_bad,) * 2)
        opt = build_reward_table(cfg)
        uni = build_reward_table(cfg, splitter="uniform")
        assert np.all(opt.values >= uni.values - 1e-12)

    def test_parallel_matches_serial(self):
        cfg = small(e_max=5, n=3)
        a = build_reward_table(cfg)
        b = build_reward_table(cfg, workers=2)
        assert np.array_equal(a.values, b.values)

    def test_unknown_splitter(self, default_config):
        with pytest.raises(DomainError):
            build_reward_table(default_config, splitter="random")


class TestCache:
    def test_round_trip(self, tmp_path):
        cfg = small(e_max=4, n=3)
        table = build_reward_table(cfg)
        key = table_key(cfg, "optimal")
        path = tmp_path / "t.tbl"
        save_table(path, table, key)
        back = load_table(path, key)
        assert np.array_equal(back.values, table.values)
        assert np.array_equal(back.rho, table.rho)
        assert load_table(path, table_key(cfg, "uniform")) is None
        assert load_table(tmp_path / "missing.tbl", key) is None

    def test_key_depends_on_content(self):
        a = small(e_max=4)
        assert table_key(a, "optimal") == table_key(small(e_max=4), "optimal")
        assert table_key(a, "optimal") != table_key(a.with_(e_max=5), "optimal")

    def test_cached_builder_reuses_file(self, tmp_path):
        cfg = small(e_max=3, n=2)
        first = cached_reward_table(cfg, cache_dir=tmp_path)
        files = list(tmp_path.iterdir())
        assert len(files) == 1
        second = cached_reward_table(cfg, cache_dir=tmp_path)
        assert np.array_equal(first.values, second.values)

    def test_truncated_file_ignored(self, tmp_path):
        cfg = small(e_max=3, n=2)
        table = build_reward_table(cfg)
        key = table_key(cfg, "optimal")
        path = tmp_path / "t.tbl"
        save_table(path, table, key)
        path.write_bytes(path.read_bytes()[:-8])
        assert load_table(path, key) is None
