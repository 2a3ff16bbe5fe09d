import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from levelsim import oracle
from levelsim.errors import SimulationOverflow
from levelsim.levels import LevelDomainError, LevelParams
from levelsim.oracle import (
    BDRates,
    PoissonIntensity,
    classical_bd_survival,
    feller_moments,
    gillespie_bd,
    gillespie_custom,
    harris_params,
    parent_pointer_ancestors,
    poisson_identities_check,
    subcritical_extinction_prob,
    survival_prob,
)
from levelsim.stats import binomial_report, chi_square_samples, mean_report
from levelsim.streams import replicate_rng


class TestGillespie:
    def test_zero_is_absorbing(self):
        assert gillespie_bd(BDRates(1.0, 1.0), 0, 5.0, np.random.default_rng(0)) == 0

    def test_mean(self):
        rng = np.random.default_rng(1)
        x = [gillespie_bd(BDRates(1.5, 1.0), 4, 1.0, rng) for _ in range(20_000)]
        assert mean_report("bd_mean", x, 4 * math.exp(0.5)).passed

    def test_extinction_frequency(self):
        rng = np.random.default_rng(2)
        x = np.array([gillespie_bd(BDRates(1.0, 2.0), 1, 1.0, rng) for _ in range(20_000)])
        assert binomial_report("bd_surv", int(np.sum(x > 0)), x.size, classical_bd_survival(1.0, 2.0, 1.0)).passed

    def test_custom_reproduces_bd_bitwise(self):
        for i in range(200):
            a = gillespie_bd(BDRates(1.0, 0.7), 3, [0.5, 1.0], replicate_rng(0, i))
            b = gillespie_custom(BDRates(1.0, 0.7).transitions(), 3, [0.5, 1.0], replicate_rng(0, i)).counts[:, 0]
            assert np.array_equal(a, b)

    def test_overflow_reported(self):
        res = gillespie_custom(BDRates(5.0, 0.0).transitions(), 10, 10.0, np.random.default_rng(0), max_events=50)
        assert res.overflow
        with pytest.raises(SimulationOverflow):
            gillespie_bd(BDRates(5.0, 0.0), 10, 10.0, np.random.default_rng(0), max_events=50)

    def test_nonextinction_single_never_dies(self):
        trans = oracle.nonextinction_transitions(LevelParams(1.0, -1.0, 1.0))
        rates = [fn(np.array([1])) for fn, _ in trans]
        assert rates[1] == 0.0

    def test_symmetric_multitype_lumps(self):
        rates = np.array([[0.5, 0.5], [0.5, 0.5]])
        trans = oracle.multitype_transitions(rates, np.array([0.3, 0.3]), 1.0)
        e = [gillespie_custom(trans, [2, 2], 1.0, replicate_rng(3, i)).counts[0].sum() for i in range(4000)]
        o = [gillespie_bd(BDRates(1.0, 0.7), 4, 1.0, replicate_rng(4, i)) for i in range(4000)]
        assert chi_square_samples(e, o).passed

    def test_catastrophe_chain_mean(self):
        # each catastrophe halves the mean: E N(t) = n0 exp((lam - mu - gamma/2) t)
        p = LevelParams(1.0, 0.5, 1.0)
        rng = np.random.default_rng(5)
        x = [oracle.catastrophe_bd_sample(p, 5, 1.0, 1.0, [(1.0, 2.0)], rng) for _ in range(20_000)]
        assert mean_report("cat_mean", x, 5 * math.exp(0.5 - 0.5)).passed


class TestClosedForms:
    def test_survival_at_zero(self):
        assert survival_prob(3, 0.0, LevelParams(1.0, 0.5, 1.0)) == 1.0

    def test_survival_reference_value(self):
        assert survival_prob(1, 1.0, LevelParams(1.0, -1.0, 1.0)) == pytest.approx(1 / (2 * math.e - 1), rel=1e-14)

    def test_survival_critical(self):
        assert survival_prob(1, 2.0, LevelParams(1.0, 0.0, 1.0)) == pytest.approx(1 / 3, rel=1e-14)

    @settings(max_examples=200, deadline=None)
    @given(a=st.floats(0.05, 3.0), r=st.floats(0.1, 5.0), frac=st.floats(-2.0, 0.999),
           t=st.floats(0.01, 5.0), n0=st.integers(1, 6))
    def test_matches_classical_birth_death(self, a, r, frac, t, n0):
        b = frac * r * a
        if abs(b) < 1e-9:
            b = 0.0
        p = LevelParams(a, b, r)
        got = survival_prob(n0, t, p)
        assert got == pytest.approx(classical_bd_survival(r * a, r * a - b, t, n0), rel=1e-9, abs=1e-14)

    def test_survival_monotone(self):
        p = LevelParams(1.0, -0.3, 1.0)
        s = [survival_prob(2, t, p) for t in np.linspace(0, 5, 30)]
        assert all(x >= y for x, y in zip(s, s[1:]))
        assert survival_prob(3, 1.0, p) > survival_prob(2, 1.0, p)

    def test_harris(self):
        assert harris_params(LevelParams(1.0, 0.5, 1.0)) == (0.5, 0.5)
        assert harris_params(LevelParams(1.0, 0.9999, 1.0))[0] == pytest.approx(1.0, abs=1e-3)
        with pytest.raises(LevelDomainError):
            harris_params(LevelParams(1.0, 0.0, 1.0))

    def test_feller(self):
        assert feller_moments(1.0, 1.0, 1.0, 0.0) == (1.0, 2.0)
        assert feller_moments(2.0, 1.0, 0.0, 0.3)[1] == 0.0
        assert feller_moments(1.5, 0.0, 1.0, 0.3) == (1.5, 0.0)
        # b -> 0 agrees with the critical formula
        assert feller_moments(1.0, 1.0, 1.0, 1e-8)[1] == pytest.approx(2.0, rel=1e-6)

    def test_subcritical_extinction(self):
        assert subcritical_extinction_prob(1.5, 2.0, 20.0, 5) > 0.999


class TestPoissonIdentities:
    def test_passes_for_poisson(self):
        rep = poisson_identities_check(PoissonIntensity(2.0, 0.0, 1.0), lambda x: 0.3 * x, lambda x: x,
                                       20_000, np.random.default_rng(0))
        assert rep.passed, rep.line()

    def test_detects_non_poisson(self):
        class Fixed(PoissonIntensity):
            def sample(self, rng):
                return rng.random(2)  # always two points: not Poisson

        rep = poisson_identities_check(Fixed(2.0), lambda x: 0.5 + 0 * x, lambda x: 1 + 0 * x,
                                       20_000, np.random.default_rng(0))
        assert not rep.passed


class TestParentPointers:
    def test_small_tree(self):
        parents = {1: None, 2: None, 3: 1, 4: 3}
        birth = {1: 0.0, 2: 0.0, 3: 0.5, 4: 0.8}
        death = {1: 0.9, 2: 0.6, 3: math.inf, 4: math.inf}
        assert parent_pointer_ancestors(parents, birth, death, 0.1, 1.0) == [1]
        assert parent_pointer_ancestors(parents, birth, death, 0.85, 1.0) == [3, 4]
