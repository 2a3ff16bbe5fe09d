import math

import numpy as np
import pytest

from levelsim import engine, oracle
from levelsim.engine import ceiling_model, init_uniform, run_replicate, scalar_model
from levelsim.errors import ConfigError
from levelsim.levels import LevelDomainError, OffspringRates
from levelsim.stats import binomial_report, chi_square_samples, chi_square_vectors, mean_report
from levelsim.streams import map_replicates, replicate_rng
from levelsim.variants import (
    CatastropheSpec,
    EngineConfig,
    EnvironmentSpec,
    ImmigrationSpec,
    MultitypeSpec,
    Variants,
    catastrophe_event,
    condition_extinction,
    condition_nonextinction,
    environment_run,
    immigration_events,
    multi_offspring_birth,
    multitype_birth,
    stationary_law,
)


def _counts(rng, rep, cfg, n0, t):
    obs, _ = run_replicate(cfg, n0, [t], rng)
    return obs[0].count


class TestConditioning:
    def test_nonextinction_needs_nonpositive_b(self):
        with pytest.raises(LevelDomainError):
            condition_nonextinction(scalar_model(1.0, 0.5, 1.0))

    def test_immortal_particle_stays_at_zero(self):
        cfg = condition_nonextinction(scalar_model(1.0, -0.5, 1.0))
        for i in range(50):
            _, state = run_replicate(cfg, 0, [2.0], replicate_rng(1, i))
            immortal = [p for p in state.particles.values() if p.immortal]
            assert len(immortal) == 1 and immortal[0].level == 0.0

    def test_immortal_alone_never_dies(self):
        res = oracle.gillespie_custom(oracle.nonextinction_transitions(scalar_model(0.0, -1.0, 1.0).levels),
                                      [1], [5.0], np.random.default_rng(0))
        assert res.counts[0, 0] == 1

    def test_extinction_domain(self):
        with pytest.raises(LevelDomainError):
            condition_extinction(scalar_model(1.0, -0.5, 1.0))
        with pytest.raises(LevelDomainError):
            condition_extinction(scalar_model(1.0, 1.0, 1.0))

    def test_extinction_parameters(self):
        cfg = condition_extinction(scalar_model(1.0, 0.5, 2.0))
        p = cfg.model.levels
        assert (p.a, p.b, p.r) == (1.0, -0.5, 1.5)
        assert cfg.level_shift == 0.5

    def test_extinction_is_certain(self):
        cfg = condition_extinction(scalar_model(1.0, 0.5, 2.0))
        counts = map_replicates(_counts, 3000, 2, "ext", 1, (cfg, 5, 20.0))
        assert np.mean(np.asarray(counts) == 0) >= 0.999


class TestImmigration:
    def test_rate_scales_with_r(self):
        assert ImmigrationSpec(2.0).rate(3.0) == 6.0

    def test_zero_rate_is_base_model(self):
        base = EngineConfig(scalar_model(1.0, 0.5, 1.0))
        imm = EngineConfig(scalar_model(1.0, 0.5, 1.0), Variants(immigration=ImmigrationSpec(0.0)))
        a = [_counts(replicate_rng(3, i), i, base, 5, 1.0) for i in range(200)]
        b = [_counts(replicate_rng(3, i), i, imm, 5, 1.0) for i in range(200)]
        assert a == b

    def test_arrivals_are_poisson(self):
        rng = np.random.default_rng(4)
        counts = []
        for _ in range(5000):
            n = 0
            for t, level, _ in immigration_events(ImmigrationSpec(1.5), 2.0, rng):
                if t > 1.0:
                    break
                assert 0 <= level < 2.0
                n += 1
            counts.append(n)
        assert mean_report("arrivals", counts, 3.0).passed

    def test_ceiling_mass_approaches_equilibrium(self):
        # y0 = 0, b = -1: mean mass m(t) solves m' = -m + nu, so m(1) = nu (1 - e^{-1})
        nu = 2.0
        cfg = EngineConfig(ceiling_model(1.0, -1.0, window=5.0), Variants(immigration=ImmigrationSpec(nu)))
        x = [run_replicate(cfg, 0, [1.0], replicate_rng(5, i))[0][0].mass for i in range(2000)]
        assert mean_report("immigration_mass", x, nu * (1 - math.exp(-1))).passed


class TestMultitype:
    spec = MultitypeSpec([[0.5, 0.5], [0.3, 0.4]], [0.2, -0.1])

    def test_validation(self):
        with pytest.raises(ConfigError):
            MultitypeSpec([[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0])  # reducible
        with pytest.raises(ConfigError):
            MultitypeSpec([[1.0, -1.0], [1.0, 1.0]], [0.0, 0.0])

    def test_swap_balance(self):
        rng = np.random.default_rng(6)
        swaps = sum(multitype_birth(0, 0.3, self.spec, 1.0, rng).swapped for _ in range(100_000))
        assert binomial_report("swap", swaps, 100_000, 0.5).passed

    def test_child_type_law(self):
        rng = np.random.default_rng(7)
        births = [multitype_birth(1, 0.2, self.spec, 1.0, rng) for _ in range(20_000)]
        new_type = [b.child_type if not b.swapped else b.parent_type for b in births]
        assert binomial_report("type", sum(t == 0 for t in new_type), len(new_type), 0.3 / 0.7).passed

    def test_joint_counts_match_oracle(self):
        cfg = EngineConfig(scalar_model(1.0, 0.0, 1.0), Variants(multitype=self.spec))
        e, o = [], []
        for i in range(3000):
            rng = replicate_rng(8, i, "e")
            state = init_uniform(4, cfg, rng)
            engine.advance(state, 1.0, cfg)
            e.append(np.bincount([p.location for p in state.particles.values()], minlength=2))
            rng = replicate_rng(8, i, "o")
            start = np.bincount(rng.choice(2, size=4, p=self.spec.stationary), minlength=2)
            o.append(oracle.gillespie_custom(oracle.multitype_transitions(self.spec.rates, self.spec.b, 1.0),
                                             start, 1.0, rng).counts[0])
        assert chi_square_vectors(np.array(e), np.array(o)).passed

    def test_identical_types_match_base(self):
        same = MultitypeSpec([[0.5, 0.5], [0.5, 0.5]], [0.5, 0.5])
        cfg = EngineConfig(scalar_model(1.0, 0.5, 1.0), Variants(multitype=same))
        e = map_replicates(_counts, 3000, 9, "mt", 1, (cfg, 5, 1.0))
        b = map_replicates(_counts, 3000, 9, "base", 1, (EngineConfig(scalar_model(1.0, 0.5, 1.0)), 5, 1.0))
        assert chi_square_samples(e, b).passed


class TestMultiOffspring:
    def test_two_children_per_event(self):
        rng = np.random.default_rng(10)
        sizes = {len(multi_offspring_birth(0.4, OffspringRates([0.0, 1.0]), 1.0, rng)) for _ in range(2000)}
        assert sizes == {0, 2}

    def test_children_above_parent(self):
        rng = np.random.default_rng(11)
        for _ in range(500):
            for v in multi_offspring_birth(0.6, OffspringRates([0.2, 0.3, 0.1]), 1.0, rng):
                assert 0.6 <= v < 1.0

    def test_binary_matches_base_law(self):
        cfg = EngineConfig(scalar_model(1.0, 0.5, 1.0), Variants(offspring=OffspringRates([1.0])))
        e = map_replicates(_counts, 3000, 12, "mo", 1, (cfg, 5, 1.0))
        o = [oracle.gillespie_bd(oracle.BDRates(1.0, 0.5), 5, 1.0, replicate_rng(12, i, "o")) for i in range(3000)]
        assert chi_square_samples(e, o).passed

    def test_three_offspring_match_oracle(self):
        rates = [0.2, 0.1, 0.1]
        cfg = EngineConfig(scalar_model(0.0, 0.0, 1.0), Variants(offspring=OffspringRates(rates)))
        e = map_replicates(_counts, 3000, 13, "mo3", 1, (cfg, 4, 1.0))
        trans = oracle.multioffspring_transitions(rates, 0.0, 1.0)
        o = [oracle.gillespie_custom(trans, [4], 1.0, replicate_rng(13, i, "o")).counts[0, 0] for i in range(3000)]
        assert chi_square_samples(e, o).passed


class TestCatastrophe:
    def test_rho_below_one_rejected(self):
        with pytest.raises(ConfigError):
            CatastropheSpec(1.0, [(1.0, 0.5)])
        with pytest.raises(ConfigError):
            CatastropheSpec(1.0, [(0.5, 2.0)])

    def _state(self, n, seed):
        return init_uniform(n, scalar_model(1.0, 0.0, 1.0), np.random.default_rng(seed))

    def test_rho_one_is_identity(self):
        state = self._state(50, 0)
        before = state.levels().copy()
        rho, killed = catastrophe_event(state, CatastropheSpec(1.0, [(1.0, 1.0)]), 1.0, np.random.default_rng(1))
        assert killed == [] and np.array_equal(state.levels(), before)

    def test_survival_is_inverse_rho(self):
        state = self._state(100_000, 2)
        _, killed = catastrophe_event(state, CatastropheSpec(1.0, [(1.0, 2.0)]), 1.0, np.random.default_rng(3))
        assert binomial_report("surv", 100_000 - len(killed), 100_000, 0.5).passed

    def test_multiplicative(self):
        s1, s2 = self._state(200, 4), self._state(200, 4)
        rng = np.random.default_rng(0)
        catastrophe_event(s1, CatastropheSpec(1.0, [(1.0, 2.0)]), 10.0, rng)
        catastrophe_event(s1, CatastropheSpec(1.0, [(1.0, 3.0)]), 10.0, rng)
        catastrophe_event(s2, CatastropheSpec(1.0, [(1.0, 6.0)]), 10.0, rng)
        assert np.allclose(np.sort(s1.levels()), np.sort(s2.levels()), rtol=1e-15)


class TestEnvironment:
    def test_two_state_cbar_by_hand(self):
        # Q h = b with b = (beta, -beta), q = 2: h = (-beta/(2q), beta/(2q)), cbar = beta^2/(2q)
        beta, q = 1.5, 2.0
        spec = EnvironmentSpec([[-q, q], [q, -q]], [1.0, 1.0], [beta, -beta])
        assert np.allclose(spec.h0, [-beta / (2 * q), beta / (2 * q)])
        assert spec.cbar == pytest.approx(beta**2 / (2 * q), rel=1e-12)
        assert np.allclose(spec.pi, [0.5, 0.5])

    def test_nonzero_mean_drift_rejected(self):
        with pytest.raises(ConfigError):
            EnvironmentSpec([[-1.0, 1.0], [1.0, -1.0]], [1.0, 1.0], [1.0, 0.0])

    def test_flat_environment_has_no_noise(self):
        spec = EnvironmentSpec([[-1.0, 1.0], [1.0, -1.0]], [1.0, 1.0], [0.0, 0.0])
        assert spec.cbar == 0.0 and spec.abar == 1.0

    def test_stationary_law(self):
        Q = np.array([[-2.0, 2.0, 0.0], [1.0, -3.0, 2.0], [0.0, 1.0, -1.0]])
        pi = stationary_law(Q)
        assert np.allclose(pi @ Q, 0.0, atol=1e-12) and pi.sum() == pytest.approx(1.0)

    def test_prelimit_runs(self):
        spec = EnvironmentSpec([[-1.0, 1.0], [1.0, -1.0]], [1.0, 1.0], [0.5, -0.5], speedup=4.0)
        model = scalar_model(1.0, 0.0, 5.0)
        counts = environment_run(spec, model, [0.5, 1.0], np.random.default_rng(0), mode="prelimit", n0=10)
        assert counts.shape == (2,) and np.all(counts >= 0)

    def test_prelimit_check(self):
        spec = EnvironmentSpec([[-1.0, 1.0], [1.0, -1.0]], [0.1, 0.1], [2.0, -2.0], speedup=4.0)
        with pytest.raises(ConfigError):
            Variants(environment=spec).check(scalar_model(0.1, 0.0, 1.0))

    def test_unknown_mode(self):
        spec = EnvironmentSpec([[-1.0, 1.0], [1.0, -1.0]], [1.0, 1.0], [0.0, 0.0])
        with pytest.raises(ConfigError):
            environment_run(spec, ceiling_model(1.0, 0.0, window=1.0), [1.0], np.random.default_rng(0), mode="x")


def test_exclusive_variants():
    with pytest.raises(ConfigError):
        Variants(multitype=MultitypeSpec([[0.5, 0.5], [0.5, 0.5]], [0.0, 0.0]),
                 offspring=OffspringRates([1.0])).check(scalar_model(1.0, 0.0, 1.0))
