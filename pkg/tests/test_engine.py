import csv
import math

import numpy as np
import pytest

from levelsim import engine, oracle
from levelsim._kernel import simulate_counts
from levelsim.engine import (
    Motion,
    ancestors_at,
    alive_at,
    ceiling_model,
    init_poisson_levels,
    init_uniform,
    motion_step,
    observe_count,
    observe_normalized,
    run_replicate,
    scalar_model,
)
from levelsim.errors import ConfigError, SimulationOverflow, StateError, UnsupportedError
from levelsim.levels import LevelDomainError
from levelsim.stats import chi_square_samples, exponential_cdf, ks_test, mean_report, uniform_cdf
from levelsim.streams import map_replicates, replicate_rng
from levelsim.variants import EngineConfig


def _counts(rng, rep, cfg, n0, times):
    obs, _ = run_replicate(cfg, n0, times, rng)
    return [o.count for o in obs]


class TestModel:
    def test_death_rate_constraint(self):
        with pytest.raises(ConfigError, match="r\\*a - b"):
            scalar_model(1.0, 2.0, 1.0)

    def test_location_rates_need_bounds(self):
        with pytest.raises(ConfigError):
            scalar_model(1.0, 0.0, 1.0, a_fn=lambda x: 1.0)

    def test_ceiling_needs_room(self):
        with pytest.raises(ConfigError):
            ceiling_model(1.0, 0.0, window=1.0, lam_max=2.0)

    def test_ceiling_default(self):
        assert ceiling_model(1.0, 0.0, window=2.0).levels.r == 8.0


class TestInit:
    def test_empty(self):
        cfg = scalar_model(1.0, 0.5, 1.0)
        state = init_uniform(0, cfg, np.random.default_rng(0))
        engine.advance(state, 2.0, cfg)
        assert state.particles == {} and state.now == 2.0

    def test_distinct_ids(self):
        state = init_uniform(5, scalar_model(1.0, 0.0, 1.0), np.random.default_rng(0))
        assert len({p.id for p in state.particles.values()}) == 5

    def test_uniform_levels(self):
        state = init_uniform(10_000, scalar_model(1.0, 0.0, 1.0), np.random.default_rng(1))
        assert ks_test(state.levels(), uniform_cdf(1.0)).passed

    def test_exponential_mode_levels(self):
        cfg = scalar_model(1.0, 0.0, 2.0, level_mode="exponential")
        state = init_uniform(10_000, cfg, np.random.default_rng(2))
        assert ks_test(state.levels(), exponential_cdf(0.5)).passed

    def test_poisson_needs_ceiling(self):
        with pytest.raises(ConfigError):
            init_poisson_levels(1.0, scalar_model(1.0, 0.0, 1.0), np.random.default_rng(0))

    def test_poisson_empty(self):
        state = init_poisson_levels(0.0, ceiling_model(1.0, 0.0, window=1.0), np.random.default_rng(0))
        assert not state.particles

    def test_poisson_counts_and_gaps(self):
        cfg = ceiling_model(1.0, 0.0, window=12.5, lam_max=50.0)
        rng = np.random.default_rng(3)
        n = np.array([len(init_poisson_levels(2.0, cfg, rng).particles) for _ in range(10_000)])
        assert mean_report("mean", n, 100.0).passed
        # SE of the sample variance for Poisson(100): sqrt((mu4 - var^2)/n)
        se_var = math.sqrt((100 + 3 * 100**2 - 100**2) / n.size)
        assert abs(n.var(ddof=1) - 100.0) < 3 * se_var
        gaps = []
        for _ in range(200):
            lv = np.sort(init_poisson_levels(2.0, cfg, rng).levels())
            lv = lv[lv < 25.0]
            gaps.extend(np.diff(lv))
        assert ks_test(gaps, exponential_cdf(2.0)).passed


class TestAdvance:
    def test_pure_death(self):
        # a = 0, b = -1: levels grow like e^t, so a uniform level survives to t=1 w.p. e^{-1}
        cfg = scalar_model(0.0, -1.0, 1.0)
        counts = np.array(map_replicates(_counts, 20_000, 7, "pd", 1, (cfg, 10, (1.0,))))[:, 0]
        assert mean_report("pure_death", counts, 10 * math.exp(-1)).passed

    def test_matches_birth_death_oracle(self):
        cfg = scalar_model(1.0, 0.5, 1.0)
        e = np.array(map_replicates(_counts, 4000, 8, "eng", 1, (cfg, 5, (1.0,))))[:, 0]
        o = [oracle.gillespie_bd(oracle.BDRates(1.0, 0.5), 5, 1.0, replicate_rng(8, i, "bd")) for i in range(4000)]
        assert chi_square_samples(e, o).passed

    def test_backwards_rejected(self):
        cfg = scalar_model(1.0, 0.0, 1.0)
        state = init_uniform(3, cfg, np.random.default_rng(0))
        engine.advance(state, 1.0, cfg)
        with pytest.raises(Exception):
            engine.advance(state, 0.5, cfg)

    def test_deterministic(self):
        cfg = scalar_model(1.0, 0.3, 2.0)
        a = run_replicate(cfg, 5, [0.5, 1.0], replicate_rng(1, 2), record=True)[1]
        b = run_replicate(cfg, 5, [0.5, 1.0], replicate_rng(1, 2), record=True)[1]
        assert a.history.rows == b.history.rows

    def test_levels_stay_below_ceiling(self):
        cfg = scalar_model(1.0, -0.5, 1.0)
        for i in range(50):
            _, state = run_replicate(cfg, 5, [0.7], replicate_rng(2, i))
            assert all(0 <= p.level < 1.0 for p in state.particles.values())

    def test_location_dependent_rates(self):
        # a(x) = b(x) = constant through the grid path must agree in law with the exact path
        cfg = scalar_model(1.0, 0.5, 1.0, a_fn=lambda x: 1.0, a_max=1.0, b_fn=lambda x: 0.5, b_max=0.5)
        e = np.array(map_replicates(_counts, 600, 9, "grid", 1, (cfg, 5, (0.5,))))[:, 0]
        o = np.array(map_replicates(_counts, 600, 9, "exact", 1, (scalar_model(1.0, 0.5, 1.0), 5, (0.5,))))[:, 0]
        assert chi_square_samples(e, o).passed


class TestKernel:
    def test_matches_engine_in_law(self):
        rng_e = [replicate_rng(4, i, "e") for i in range(4000)]
        e = [run_replicate(scalar_model(1.0, -0.5, 2.0), 4, [1.0], g)[0][0].count for g in rng_e]
        k = [simulate_counts(1.0, -0.5, 2.0, 2.0 * g.random(4), [1.0], g)[0][0]
             for g in (replicate_rng(4, i, "k") for i in range(4000))]
        assert chi_square_samples(e, k).passed

    def test_deterministic(self):
        a = simulate_counts(1.0, 0.5, 1.0, [0.1, 0.5], [1.0, 2.0], replicate_rng(3, 0))
        b = simulate_counts(1.0, 0.5, 1.0, [0.1, 0.5], [1.0, 2.0], replicate_rng(3, 0))
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])

    def test_final_levels_uniform(self):
        lv = np.concatenate([simulate_counts(1.0, 0.5, 1.0, replicate_rng(5, i).random(5), [1.0],
                                             replicate_rng(5, i, "k"))[1] for i in range(3000)])
        assert ks_test(lv, uniform_cdf(1.0)).passed

    def test_overflow_raises(self):
        with pytest.raises(SimulationOverflow):
            simulate_counts(1.0, 1.0, 1.0, [0.1] * 5, [10.0], replicate_rng(0, 0), max_events=100)

    def test_ceiling_window_mean(self):
        # Poisson(y=1) start in ceiling mode: mean of N_K/K tracks e^{bt}
        lam, K = 200.0, 50.0

        def rep(rng, i):
            init = lam * rng.random(rng.poisson(lam))
            return simulate_counts(1.0, 0.25, lam, init, [1.0], rng, window=K)[0][0] / K

        x = map_replicates(rep, 400, 6, "ceiling")
        assert mean_report("window_mass", x, math.exp(0.25)).passed


class TestObserve:
    def test_empty(self):
        state = init_uniform(0, scalar_model(1.0, 0.0, 1.0), np.random.default_rng(0))
        assert observe_count(state, 0.5) == 0

    def test_window_too_large(self):
        state = init_uniform(3, scalar_model(1.0, 0.0, 1.0), np.random.default_rng(0))
        with pytest.raises(LevelDomainError):
            observe_count(state, 2.0, r=1.0)

    def test_full_window_is_total(self):
        state = init_uniform(7, scalar_model(1.0, 0.0, 1.0), np.random.default_rng(0))
        assert observe_count(state, 1.0) == 7
        assert observe_normalized(state, 1.0) == 7.0

    def test_poisson_start_mass(self):
        cfg = ceiling_model(1.0, 0.0, window=5.0)
        rng = np.random.default_rng(9)
        x = [observe_normalized(init_poisson_levels(1.0, cfg, rng), 5.0) for _ in range(5000)]
        assert mean_report("mass0", x, 1.0).passed
        assert np.std(x) == pytest.approx(1 / math.sqrt(5.0), rel=0.05)


class TestMotion:
    def test_zero_step(self):
        loc = np.array([0.3])
        assert motion_step(loc, 0.0, Motion("brownian"), np.random.default_rng(0)) is loc

    def test_brownian_variance(self):
        rng = np.random.default_rng(1)
        m = Motion("brownian", dim=1, sigma2=2.0)
        inc = np.array([motion_step(np.zeros(1), 0.5, m, rng)[0] for _ in range(100_000)])
        se = math.sqrt(2.0) * 1.0 / math.sqrt(inc.size)  # SE of the variance estimate, Gaussian case
        assert abs(inc.var() - 1.0) < 3 * se

    def test_no_shared_locations(self):
        cfg = scalar_model(1.0, 0.5, 1.0, motion=Motion("brownian", dim=2, sigma2=1.0))
        for i in range(200):
            _, state = run_replicate(cfg, 5, [1.0], replicate_rng(7, i))
            locs = [tuple(p.location) for p in state.particles.values()]
            assert len(set(locs)) == len(locs)


class TestGenealogy:
    def _history(self, seed=0, a=1.0, b=0.0, r=5.0, T=1.0):
        cfg = EngineConfig(scalar_model(a, b, r))
        _, state = run_replicate(cfg, 5, [T], replicate_rng(seed, 0), record=True)
        return cfg, state.history

    def test_recording_required(self):
        with pytest.raises(StateError):
            ancestors_at(None, 0.0, 1.0)

    def test_location_dependent_unsupported(self):
        cfg = scalar_model(1.0, 0.0, 1.0, a_fn=lambda x: 1.0, a_max=1.0)
        _, hist = self._history()
        with pytest.raises(UnsupportedError):
            ancestors_at(hist, 0.0, 1.0, cfg)

    def test_just_before_T_everyone_counts(self):
        cfg, hist = self._history(seed=3)
        t = 1.0 - 1e-9
        assert ancestors_at(hist, t, 1.0, cfg)[1] == alive_at(hist, t)

    def test_matches_parent_pointers(self):
        for seed in range(100):
            cfg, hist = self._history(seed=seed, b=0.5)
            parents = {k: v.parent_id for k, v in hist.records.items()}
            birth = {k: v.birth_time for k, v in hist.records.items()}
            death = {k: v.death_time for k, v in hist.records.items()}
            sizes = []
            for t in np.linspace(0.0, 1.0, 41)[:-1]:
                _, ids = ancestors_at(hist, t, 1.0, cfg)
                assert ids == oracle.parent_pointer_ancestors(parents, birth, death, t, 1.0)
                sizes.append(len(ids))
            assert np.all(np.diff(sizes) >= 0)

    def test_event_log_csv(self, tmp_path):
        _, hist = self._history(seed=1)
        path = tmp_path / "events.csv"
        hist.write_csv(path)
        rows = list(csv.reader(open(path)))
        assert rows[0] == ["event", "time", "id", "parent_id", "level"]
        assert len(rows) == len(hist.rows) + 1
        assert float(rows[1][1]) == hist.rows[0][1]
