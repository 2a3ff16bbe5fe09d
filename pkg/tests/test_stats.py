import math

import numpy as np
import pytest
from scipy.special import kolmogorov

from levelsim.stats import (
    THREE_SE,
    StatsError,
    TestReport,
    binomial_ci,
    chi_square_samples,
    chi_square_two_sample,
    chi_square_vectors,
    exact_report,
    kolmogorov_sf,
    ks_test,
    mean_report,
    mean_with_se,
    tolerance_report,
    uniform_cdf,
)


class TestKolmogorov:
    @pytest.mark.parametrize("x", [0.2, 0.5, 0.8, 0.99, 1.0, 1.2, 1.63, 2.5])
    def test_series_matches_reference(self, x):
        assert kolmogorov_sf(x) == pytest.approx(kolmogorov(x), abs=1e-10)

    def test_edges(self):
        assert kolmogorov_sf(0.0) == 1.0
        assert kolmogorov_sf(10.0) < 1e-80


class TestKS:
    def test_empty(self):
        with pytest.raises(StatsError):
            ks_test([], uniform_cdf(1.0))

    def test_constant_sample(self):
        rep = ks_test(np.full(1000, 0.5), uniform_cdf(1.0))
        assert rep.statistic >= 0.5 and rep.p_value < 1e-10

    def test_calibration(self):
        p = []
        for seed in range(200):
            rep = ks_test(np.random.default_rng(seed).random(10_000), uniform_cdf(1.0))
            assert 0.0 <= rep.statistic <= 1.0
            p.append(rep.p_value)
        frac = np.mean(np.array(p) < 0.05)
        assert abs(frac - 0.05) < 3 * math.sqrt(0.05 * 0.95 / 200)
        assert ks_test(p, uniform_cdf(1.0)).passed


class TestChiSquare:
    def test_identical(self):
        rep = chi_square_two_sample([10, 20, 30], [10, 20, 30])
        assert rep.statistic == 0.0 and rep.p_value == 1.0

    def test_all_zero(self):
        with pytest.raises(StatsError):
            chi_square_two_sample([0, 0], [1, 2])

    def test_shape_mismatch(self):
        with pytest.raises(StatsError):
            chi_square_two_sample([1, 2], [1, 2, 3])

    def test_power(self):
        rng = np.random.default_rng(0)
        assert chi_square_samples(rng.poisson(5, 10_000), rng.poisson(8, 10_000)).p_value < 1e-6

    def test_calibration(self):
        p = []
        for seed in range(200):
            rng = np.random.default_rng(seed)
            p.append(chi_square_samples(rng.poisson(5, 10_000), rng.poisson(5, 10_000)).p_value)
        assert ks_test(p, uniform_cdf(1.0)).passed

    def test_unequal_sample_sizes(self):
        p = []
        for seed in range(200):
            rng = np.random.default_rng(1000 + seed)
            p.append(chi_square_samples(rng.poisson(3, 4000), rng.poisson(3, 9000)).p_value)
        assert ks_test(p, uniform_cdf(1.0)).passed

    def test_vectors(self):
        rng = np.random.default_rng(2)
        x = rng.poisson(2, size=(3000, 2))
        y = rng.poisson(2, size=(3000, 2))
        assert chi_square_vectors(x, y).passed
        assert not chi_square_vectors(x, rng.poisson(3, size=(3000, 2))).passed


class TestEstimators:
    def test_constant_sample(self):
        assert mean_with_se([2.0, 2.0, 2.0]) == (2.0, 0.0)

    def test_binomial_ci(self):
        lo, hi = binomial_ci(500, 1000)
        assert lo == pytest.approx(0.5 - 3 * math.sqrt(0.25 / 1000))
        assert (lo, hi) == pytest.approx((0.4526, 0.5474), abs=1e-4)
        assert binomial_ci(0, 100)[0] == 0.0
        with pytest.raises(StatsError):
            binomial_ci(1, 0)

    def test_mean_report_threshold(self):
        assert mean_report("m", [1.0, 1.1, 0.9, 1.0], 1.0).threshold == THREE_SE
        assert not mean_report("m", np.random.default_rng(0).normal(1.0, 0.1, 1000), 1.1).passed


class TestReportRow:
    def test_pass_rule(self):
        assert TestReport("x", 1.0, 0.01, 0.001).passed
        assert not TestReport("x", 1.0, 0.001, 0.001).passed
        with pytest.raises(StatsError):
            TestReport("x", 1.0, 1.5)

    def test_row(self):
        row = TestReport("x", 0.1, 0.5, 0.001, "10").row()
        assert row == ("x", "0.10000000000000001", "0.5", "0.001", "true", "10")

    def test_tolerance_and_exact(self):
        assert tolerance_report("t", 1.04, 1.0, 0.05, 1).passed
        assert not tolerance_report("t", 1.06, 1.0, 0.05, 1).passed
        assert exact_report("e", 0, 5).passed and not exact_report("e", 1, 5).passed
