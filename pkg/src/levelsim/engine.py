"""Event-driven particle engine for the level representation.

Each living particle has a level below the ceiling ``r`` and optionally a
location (a type index or a coordinate vector).  Between events levels
follow their deterministic flow.  A particle dies when its level reaches
``r`` and proposes births at a constant dominating rate; proposals are
thinned to the true birth rate.

``advance`` runs in segments separated by global events (catastrophes and
environment jumps, which move every level at once).  Within a segment each
particle keeps exactly one entry in a heap: the earlier of its death time
and its next birth proposal.  Because proposals are memoryless they are
redrawn from scratch at the start of every segment, so the state carries no
scheduler data between calls.

Location-dependent rates are handled by a separate fixed-grid integrator
(:func:`_advance_grid`), since the level path then depends on the motion.
"""
from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, StateError, UnsupportedError
from .levels import (
    LevelDomainError,
    LevelParams,
    PolynomialFlow,
    ceiling_barrier,
    exp_level_flow,
    exp_level_hit_time,
    riccati_flow,
    riccati_hit_time,
)
from .variants import (
    EngineConfig,
    Variants,
    catastrophe_event,
    immigration_events,
    multi_offspring_birth,
    multitype_birth,
)

INF = math.inf
GRID_STEP = 1e-3

_DEATH, _PROPOSAL, _IMMIGRATE = 0, 1, 2


# ----------------------------------------------------------------------------
# Model
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class Motion:
    """Location dynamics: ``frozen`` or ``brownian`` with per-coordinate variance rate ``sigma2``."""

    kind: str = "frozen"
    dim: int = 1
    sigma2: float = 1.0

    def __post_init__(self):
        if self.kind not in ("frozen", "brownian"):
            raise ConfigError(f"unknown motion {self.kind!r}; expected 'frozen' or 'brownian'")
        if self.dim < 1:
            raise ConfigError(f"motion dimension must be >= 1, got {self.dim}")
        if not self.sigma2 >= 0:
            raise ConfigError(f"sigma2 must be >= 0, got {self.sigma2}")


FROZEN = Motion()


def motion_step(location, dt: float, motion: Motion, rng: np.random.Generator):
    """Advance a location by ``dt`` under ``motion``."""
    if dt < 0:
        raise LevelDomainError(f"dt must be >= 0, got {dt}")
    if motion.kind == "frozen" or dt == 0 or location is None:
        return location
    return location + rng.normal(0.0, math.sqrt(motion.sigma2 * dt), size=motion.dim)


@dataclass(frozen=True)
class SpatialModel:
    """Level coefficients, motion and observation mode.

    ``levels.r`` is the ceiling.  Setting ``window`` selects ceiling mode:
    ``levels.r`` plays the role of the large ceiling and observations use
    only levels below ``window``.  ``a_fn``/``b_fn`` make the coefficients
    location dependent and then require the bounds ``a_max``/``b_max``.
    """

    levels: LevelParams
    motion: Motion = FROZEN
    a_fn: Optional[Callable[[Any], float]] = None
    b_fn: Optional[Callable[[Any], float]] = None
    a_max: Optional[float] = None
    b_max: Optional[float] = None
    window: Optional[float] = None
    init_location: Optional[Callable[[np.random.Generator], Any]] = None
    level_mode: str = "uniform"

    def __post_init__(self):
        problems = []
        p = self.levels
        if self.a_fn is not None and self.a_max is None:
            problems.append("location-dependent a(x) needs a declared bound a_max")
        if self.b_fn is not None and self.b_max is None:
            problems.append("location-dependent b(x) needs a declared bound b_max")
        if self.a_max is not None and self.a_max < 0:
            problems.append("a_max must be >= 0")
        if self.level_mode not in ("uniform", "exponential"):
            problems.append(f"unknown level_mode {self.level_mode!r}")
        if self.level_mode == "exponential" and self.location_dependent:
            problems.append("exponential level mode needs constant coefficients")
        if not self.location_dependent and p.death_rate < -1e-12 * max(1.0, abs(p.b)):
            problems.append(f"r*a - b = {p.death_rate:g} < 0: need b <= r*a")
        if self.window is not None:
            if not self.window > 0:
                problems.append(f"window must be > 0, got {self.window}")
            elif p.r < 4 * self.window * (1 - 1e-12):
                problems.append(f"ceiling {p.r} must be at least 4x the window {self.window}")
        if problems:
            raise ConfigError(problems)

    @property
    def location_dependent(self) -> bool:
        return self.a_fn is not None or self.b_fn is not None

    @property
    def observe_window(self) -> float:
        return self.window if self.window is not None else self.levels.r

    def coefficients(self, loc) -> Tuple[float, float]:
        a = self.a_fn(loc) if self.a_fn is not None else self.levels.a
        b = self.b_fn(loc) if self.b_fn is not None else self.levels.b
        return a, b


def scalar_model(a: float, b: float, r: float, **kw) -> SpatialModel:
    return SpatialModel(LevelParams(a, b, r), **kw)


def ceiling_model(a: float, b: float, window: float, lam_max: Optional[float] = None, **kw) -> SpatialModel:
    """Ceiling-mode model; the default ceiling is ``max(4 K, 4 b / a)``."""
    if lam_max is None:
        lam_max = 4.0 * window
        if a > 0 and b > 0:
            lam_max = max(lam_max, 4.0 * b / a)
    return SpatialModel(LevelParams(a, b, lam_max), window=window, **kw)


# ----------------------------------------------------------------------------
# State
# ----------------------------------------------------------------------------


@dataclass(eq=False)
class Particle:
    id: int
    parent_id: Optional[int]
    birth_time: float
    level: float
    location: Any = None
    synced: float = 0.0
    immortal: bool = False


@dataclass
class ParticleRecord:
    parent_id: Optional[int]
    birth_time: float
    birth_level: float
    death_time: float = INF


class History:
    """Append-only event log plus a per-particle index for genealogy queries."""

    def __init__(self):
        self.rows: List[tuple] = []
        self.records: Dict[int, ParticleRecord] = {}
        self.horizon = 0.0
        self.constant_levels: Optional[LevelParams] = None

    def born(self, p: Particle, event: str = "birth") -> None:
        self.records[p.id] = ParticleRecord(p.parent_id, p.birth_time, p.level)
        self.rows.append((event, p.birth_time, p.id, p.parent_id, p.level, p.location))

    def died(self, p: Particle, t: float) -> None:
        self.records[p.id].death_time = t
        self.rows.append(("death", t, p.id, None, p.level, p.location))

    def catastrophe(self, t: float, rho) -> None:
        self.rows.append(("catastrophe", t, None, None, rho, None))

    @staticmethod
    def csv_header(dim: int = 0) -> List[str]:
        return ["event", "time", "id", "parent_id", "level"] + [f"loc{i}" for i in range(dim)]

    def csv_rows(self, dim: int = 0) -> List[List[str]]:
        return [[event, fmt(t), "" if pid is None else str(pid), "" if parent is None else str(parent),
                 _fmt_level(level)] + _loc_fields(loc, dim)
                for event, t, pid, parent, level, loc in self.rows]

    def write_csv(self, path, dim: int = 0) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.csv_header(dim))
            w.writerows(self.csv_rows(dim))


def fmt(x: float) -> str:
    """Round-trip float formatting with 17 significant digits."""
    return format(float(x), ".17g")


def _fmt_level(level) -> str:
    if isinstance(level, tuple):
        return ";".join(fmt(v) for v in level)
    return fmt(level)


def _loc_fields(loc, dim: int) -> List[str]:
    if dim == 0:
        return []
    if loc is None:
        return [""] * dim
    arr = np.atleast_1d(loc)
    return [fmt(v) if isinstance(v, (float, np.floating)) else str(v) for v in arr[:dim]]


@dataclass
class PopulationState:
    now: float
    particles: Dict[int, Particle]
    rng: np.random.Generator
    env: Optional[int] = None
    next_id: int = 1
    history: Optional[History] = None
    # catastrophe bookkeeping: particles exposed to and killed by shocks
    shock_exposed: int = 0
    shock_killed: int = 0

    def add(self, level: float, location=None, parent_id: Optional[int] = None, event: str = "birth",
            immortal: bool = False) -> Particle:
        p = Particle(self.next_id, parent_id, self.now, level, location, self.now, immortal)
        self.next_id += 1
        self.particles[p.id] = p
        if self.history is not None:
            self.history.born(p, event)
        return p

    def levels(self) -> np.ndarray:
        return np.array([p.level for p in self.particles.values()])


# ----------------------------------------------------------------------------
# Initialisation and observation
# ----------------------------------------------------------------------------


def _as_config(cfg) -> EngineConfig:
    if isinstance(cfg, EngineConfig):
        return cfg
    if isinstance(cfg, SpatialModel):
        return EngineConfig(cfg)
    raise TypeError(f"expected EngineConfig or SpatialModel, got {type(cfg).__name__}")


def _initial_location(model: SpatialModel, rng: np.random.Generator):
    if model.init_location is not None:
        return model.init_location(rng)
    if model.motion.kind == "brownian":
        return np.zeros(model.motion.dim)
    return None


def _empty_state(cfg: EngineConfig, rng: np.random.Generator, record: bool) -> PopulationState:
    state = PopulationState(0.0, {}, rng)
    if record:
        state.history = History()
    env = cfg.variants.environment
    if env is not None:
        state.env = int(min(np.searchsorted(np.cumsum(env.pi), rng.random(), side="right"), env.m - 1))
    if cfg.variants.immortal:
        state.add(0.0, _initial_location(cfg.model, rng), immortal=True)
    return state


def init_uniform(n0: int, cfg, rng: np.random.Generator, record: bool = False) -> PopulationState:
    """``n0`` particles with i.i.d. levels uniform on ``[0, r)``.

    In exponential level mode the levels are i.i.d. exponential with mean
    ``r`` instead.  With a multitype variant, types are drawn from the
    stationary type law.  An immortal particle, if configured, comes first.
    """
    cfg = _as_config(cfg)
    if n0 < 0:
        raise ConfigError(f"n0 must be >= 0, got {n0}")
    state = _empty_state(cfg, rng, record)
    model = cfg.model
    r = model.levels.r
    mt = cfg.variants.multitype
    for _ in range(n0):
        if model.level_mode == "exponential":
            level = rng.exponential(r)
        else:
            level = r * rng.random()
        if mt is not None:
            loc = int(min(np.searchsorted(np.cumsum(mt.stationary), rng.random(), side="right"), mt.m - 1))
        else:
            loc = _initial_location(model, rng)
        state.add(level, loc)
    return state


def init_population(cfg, n0: int, rng: np.random.Generator, record: bool = False) -> PopulationState:
    return init_uniform(n0, cfg, rng, record)


def init_poisson_levels(y: float, cfg, rng: np.random.Generator, record: bool = False) -> PopulationState:
    """Poisson level configuration with intensity ``y`` per unit level on ``[0, r)``."""
    cfg = _as_config(cfg)
    if cfg.model.window is None:
        raise ConfigError("Poisson level initialisation requires ceiling mode (set a window)")
    if not y >= 0:
        raise ConfigError(f"y must be >= 0, got {y}")
    n = rng.poisson(y * cfg.model.levels.r)
    return init_uniform(n, cfg, rng, record)


def init_levels(levels: Sequence[float], cfg, rng: np.random.Generator, record: bool = False) -> PopulationState:
    """Start from explicit levels (used by the windowed estimators)."""
    cfg = _as_config(cfg)
    state = _empty_state(cfg, rng, record)
    for u in levels:
        if not 0 <= u < cfg.model.levels.r:
            raise LevelDomainError(f"initial level {u} outside [0, {cfg.model.levels.r})")
        state.add(float(u), _initial_location(cfg.model, rng))
    return state


def _check_window(state_r: float, K: Optional[float]) -> float:
    if K is None:
        return state_r
    if not 0 < K <= state_r:
        raise LevelDomainError(f"window K={K} must satisfy 0 < K <= r={state_r}")
    return K


def observe_count(state: PopulationState, K: Optional[float] = None, r: Optional[float] = None) -> int:
    """Number of living particles with level below ``K`` (all of them if ``K`` is None)."""
    if K is None:
        return len(state.particles)
    if r is not None:
        _check_window(r, K)
    elif not K > 0:
        raise LevelDomainError(f"window K={K} must be > 0")
    return sum(1 for p in state.particles.values() if p.level < K)


def observe_normalized(state: PopulationState, K: float, f: Optional[Callable[[Any], float]] = None,
                       r: Optional[float] = None) -> float:
    """``(1/K) * sum f(location)`` over particles below ``K``; ``f`` defaults to 1."""
    if r is not None:
        _check_window(r, K)
    if not K > 0:
        raise LevelDomainError(f"window K={K} must be > 0")
    if f is None:
        return observe_count(state, K) / K
    return sum(f(p.location) for p in state.particles.values() if p.level < K) / K


def observe_min_level(state: PopulationState) -> float:
    if not state.particles:
        return INF
    return min(p.level for p in state.particles.values())


# ----------------------------------------------------------------------------
# Level dynamics plug-ins
# ----------------------------------------------------------------------------


class _RiccatiDyn:
    __slots__ = ("a", "b", "r")

    def __init__(self, a, b, r):
        self.a, self.b, self.r = a, b, r

    def flow(self, u, dt):
        return riccati_flow(u, dt, self.a, self.b)

    def hit(self, u, horizon):
        return riccati_hit_time(u, self.r, self.a, self.b)


class _PolyDyn:
    __slots__ = ("poly", "r")

    def __init__(self, poly: PolynomialFlow, r):
        self.poly, self.r = poly, r

    def flow(self, u, dt):
        return self.poly.flow(u, dt)

    def hit(self, u, horizon):
        return self.poly.hit_time(u, self.r, horizon)


class _ExpDyn:
    __slots__ = ("p",)

    def __init__(self, p: LevelParams):
        self.p = p

    def flow(self, z, dt):
        return exp_level_flow(z, dt, self.p)

    def hit(self, z, horizon):
        return exp_level_hit_time(z, self.p)


# ----------------------------------------------------------------------------
# Event loop
# ----------------------------------------------------------------------------


class _Runner:
    def __init__(self, state: PopulationState, cfg: EngineConfig):
        self.state = state
        self.cfg = cfg
        model = cfg.model
        v = cfg.variants
        v.check(model)
        p = model.levels
        self.r = r = p.r
        self.motion = model.motion
        self.type_dyn = None
        self.env_dyn = None
        self.offspring = None
        self.exp_mode = model.level_mode == "exponential"
        if v.multitype is not None:
            mt = v.multitype
            self.type_dyn = [_RiccatiDyn(mt.a[z], mt.b[z], r) for z in range(mt.m)]
            self.type_a = mt.a
            self.bound = 2.0 * float(mt.a.max()) * r
        elif v.environment is not None:
            coeffs = v.environment.level_coefficients(r)
            self.env_dyn = [_RiccatiDyn(al, bl, r) for al, bl in coeffs]
            self.env_a = [al for al, _ in coeffs]
            self.bound = 2.0 * max(self.env_a) * r
        elif v.offspring is not None and not v.offspring.is_binary():
            self.offspring = v.offspring
            self.dyn = _PolyDyn(PolynomialFlow.from_offspring(v.offspring, p.b, r), r)
            self.bound = sum((k + 1) * ak for k, ak in enumerate(v.offspring.rates, start=1)) * r
        else:
            a = v.offspring.rates[0] if v.offspring is not None else p.a
            self.dyn = _ExpDyn(LevelParams(a, p.b, r)) if self.exp_mode else _RiccatiDyn(a, p.b, r)
            self.bound = 2.0 * a * r
        self.imm = None
        if v.immigration is not None and v.immigration.rate(r) > 0:
            self.imm = v.immigration

    # -- per-particle helpers -------------------------------------------------

    def dyn_of(self, p: Particle):
        if self.type_dyn is not None:
            return self.type_dyn[p.location]
        if self.env_dyn is not None:
            return self.env_dyn[self.state.env]
        return self.dyn

    def sync(self, p: Particle, t: float) -> None:
        dt = t - p.synced
        if dt <= 0:
            return
        if not p.immortal:
            lev = self.dyn_of(p).flow(p.level, dt)
            if not self.exp_mode and lev >= self.r:
                # the particle is alive, so it sits just below the ceiling
                lev = math.nextafter(self.r, 0.0)
            p.level = lev
        if self.type_dyn is None:
            p.location = motion_step(p.location, dt, self.motion, self.state.rng)
        p.synced = t

    def schedule(self, heap, p: Particle, t_from: float, t_end: float) -> None:
        if p.immortal:
            t_death = INF
        else:
            t_death = p.synced + self.dyn_of(p).hit(p.level, t_end - p.synced)
        t_prop = t_from + self.state.rng.exponential(1.0 / self.bound) if self.bound > 0 else INF
        if t_death <= t_prop:
            if t_death < t_end:
                heapq.heappush(heap, (t_death, p.id, _DEATH))
        elif t_prop < t_end:
            heapq.heappush(heap, (t_prop, p.id, _PROPOSAL))

    def propose(self, p: Particle) -> List[Tuple[float, Any]]:
        """Thinning step for a proposal from ``p``; returns accepted children as (level, location)."""
        rng = self.state.rng
        u = p.level
        r = self.r
        if self.exp_mode:
            if rng.random() < math.exp(-u / r):
                return [(u + rng.exponential(r), p.location)]
            return []
        if self.offspring is not None:
            return [(v, p.location) for v in multi_offspring_birth(u, self.offspring, r, rng)]
        if self.type_dyn is not None:
            a = self.type_a[p.location]
            if not rng.random() * self.bound < 2.0 * a * (r - u):
                return []
            birth = multitype_birth(p.location, u, self.cfg.variants.multitype, r, rng)
            p.location = birth.parent_type
            return [(birth.child_level, birth.child_type)]
        if self.env_dyn is not None:
            a = self.env_a[self.state.env]
            if not rng.random() * self.bound < 2.0 * a * (r - u):
                return []
            return [(u + (r - u) * rng.random(), p.location)]
        if not rng.random() * r < r - u:
            return []
        return [(u + (r - u) * rng.random(), p.location)]

    # -- segments ---------------------------------------------------------------

    def global_rate(self) -> float:
        v = self.cfg.variants
        rate = 0.0
        if v.catastrophe is not None:
            rate += v.catastrophe.event_rate
        if v.environment is not None:
            rate += v.environment.jump_rate(self.state.env)
        return rate

    def run(self, t_target: float) -> None:
        st = self.state
        rng = st.rng
        while True:
            g = self.global_rate()
            t_glob = st.now + rng.exponential(1.0 / g) if g > 0 else INF
            seg_end = min(t_glob, t_target)
            self.segment(seg_end)
            for p in st.particles.values():
                self.sync(p, seg_end)
            st.now = seg_end
            if t_glob > t_target:
                break
            self.global_event(g)

    def global_event(self, g: float) -> None:
        st = self.state
        v = self.cfg.variants
        cat_rate = v.catastrophe.event_rate if v.catastrophe is not None else 0.0
        if st.rng.random() * g < cat_rate:
            victims = {pid: st.particles[pid] for pid in st.particles}
            rho, killed = catastrophe_event(st, v.catastrophe, self.r, st.rng)
            st.shock_exposed += len(victims)
            st.shock_killed += len(killed)
            if st.history is not None:
                st.history.catastrophe(st.now, rho)
                for pid in killed:
                    st.history.died(victims[pid], st.now)
        else:
            st.env = v.environment.next_state(st.env, st.rng)

    def segment(self, t_end: float) -> None:
        st = self.state
        heap: list = []
        for p in list(st.particles.values()):
            self.schedule(heap, p, st.now, t_end)
        arrivals = None
        if self.imm is not None:
            arrivals = immigration_events(self.imm, self.r, st.rng, st.now)
            nxt = next(arrivals)
            if nxt[0] < t_end:
                heapq.heappush(heap, (nxt[0], -1, _IMMIGRATE, nxt))
        while heap:
            item = heapq.heappop(heap)
            t, pid, kind = item[0], item[1], item[2]
            st.now = t
            if kind == _DEATH:
                p = st.particles.pop(pid)
                self.sync(p, t)
                if st.history is not None:
                    st.history.died(p, t)
            elif kind == _PROPOSAL:
                p = st.particles[pid]
                self.sync(p, t)
                for level, loc in self.propose(p):
                    child = st.add(level, np.copy(loc) if isinstance(loc, np.ndarray) else loc, parent_id=p.id)
                    self.schedule(heap, child, t, t_end)
                self.schedule(heap, p, t, t_end)
            else:
                _, level, loc = item[3]
                child = st.add(level, loc, event="immigrate")
                self.schedule(heap, child, t, t_end)
                nxt = next(arrivals)
                if nxt[0] < t_end:
                    heapq.heappush(heap, (nxt[0], -1, _IMMIGRATE, nxt))


def advance(state: PopulationState, t_target: float, cfg) -> PopulationState:
    """Simulate exactly from ``state.now`` to ``t_target`` (in place)."""
    cfg = _as_config(cfg)
    if t_target < state.now:
        raise LevelDomainError(f"t_target={t_target} is before the current time {state.now}")
    if cfg.model.location_dependent:
        _advance_grid(state, t_target, cfg)
    else:
        _Runner(state, cfg).run(t_target)
    if state.history is not None:
        state.history.horizon = max(state.history.horizon, t_target)
        if _genealogy_ok(cfg):
            state.history.constant_levels = cfg.model.levels
    return state


def _genealogy_ok(cfg: EngineConfig) -> bool:
    v = cfg.variants
    return (not cfg.model.location_dependent and cfg.model.level_mode == "uniform"
            and v.multitype is None and v.offspring is None and v.catastrophe is None
            and v.environment is None)


# ----------------------------------------------------------------------------
# Location-dependent coefficients
# ----------------------------------------------------------------------------


def _rk4_level(u, h, a, b):
    f = lambda x: a * x * x - b * x  # noqa: E731
    k1 = f(u)
    k2 = f(u + 0.5 * h * k1)
    k3 = f(u + 0.5 * h * k2)
    k4 = f(u + h * k3)
    return u + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0


def _advance_grid(state: PopulationState, t_target: float, cfg: EngineConfig, h: float = GRID_STEP) -> None:
    """Fixed-grid integration for location-dependent ``a(x)``, ``b(x)``.

    Over each step the coefficients are frozen at the particle's location at
    the start of the step.  Births are thinned against ``2 a_max r`` using the
    step-start level and location; the level takes one RK4 step and the
    location one exact Gaussian increment.
    """
    model = cfg.model
    v = cfg.variants
    if any(getattr(v, n) is not None for n in ("immigration", "multitype", "offspring", "catastrophe", "environment")):
        raise UnsupportedError("location-dependent rates are supported for the plain model only")
    r = model.levels.r
    a_max = model.a_max if model.a_max is not None else model.levels.a
    b_max = model.b_max if model.b_max is not None else abs(model.levels.b)
    bound = 2.0 * a_max * r
    rng = state.rng
    while state.now < t_target:
        dt = min(h, t_target - state.now)
        t0 = state.now
        births = []
        for p in list(state.particles.values()):
            a, b = model.coefficients(p.location)
            if not (0 <= a <= a_max * (1 + 1e-12)) or abs(b) > b_max * (1 + 1e-12):
                raise ConfigError(f"coefficients a={a}, b={b} at {p.location} exceed the declared bounds")
            if r * a - b < -1e-12:
                raise ConfigError(f"r*a - b < 0 at location {p.location}")
            if p.immortal:
                lev = 0.0
            else:
                if bound > 0:
                    s = rng.exponential(1.0 / bound)
                    while s < dt:
                        if rng.random() * bound < 2.0 * a * (r - p.level):
                            births.append((p, t0 + s, p.level + (r - p.level) * rng.random()))
                        s += rng.exponential(1.0 / bound)
                lev = _rk4_level(p.level, dt, a, b)
            p.location = motion_step(p.location, dt, model.motion, rng)
            p.synced = t0 + dt
            if lev >= r:
                del state.particles[p.id]
                state.now = t0 + dt
                if state.history is not None:
                    state.history.died(p, t0 + dt)
            else:
                p.level = lev
        state.now = t0 + dt
        for parent, tb, level in births:
            state.now = tb
            loc = parent.location.copy() if isinstance(parent.location, np.ndarray) else parent.location
            child = state.add(level, loc, parent_id=parent.id)
            child.synced = t0 + dt
        state.now = t0 + dt


# ----------------------------------------------------------------------------
# Genealogy
# ----------------------------------------------------------------------------


def level_at(history: History, pid: int, t: float) -> float:
    rec = history.records[pid]
    p = history.constant_levels
    return riccati_flow(rec.birth_level, t - rec.birth_time, p.a, p.b)


def alive_at(history: History, t: float) -> List[int]:
    return sorted(pid for pid, rec in history.records.items() if rec.birth_time <= t < rec.death_time)


def ancestors_at(history: Optional[History], t: float, T: float, cfg=None) -> Tuple[int, List[int]]:
    """Particles alive at ``t`` whose level lies below the genealogy barrier for ``T``.

    These are exactly the time-``t`` particles with a descendant alive at
    ``T``.  The barrier is the level at ``t`` whose path reaches the ceiling
    at ``T``.
    """
    if history is None:
        raise StateError("genealogy recording was not enabled for this run")
    if cfg is not None and not _genealogy_ok(_as_config(cfg)):
        raise UnsupportedError("ancestor barriers need constant coefficients and the plain uniform-level model")
    if history.constant_levels is None:
        raise UnsupportedError("ancestor barriers need constant coefficients and the plain uniform-level model")
    if not (0 <= t < T <= history.horizon):
        raise LevelDomainError(f"need 0 <= t < T <= horizon={history.horizon}, got t={t}, T={T}")
    p = history.constant_levels
    if p.a <= 0:
        raise UnsupportedError("ancestor barriers need a > 0")
    barrier = ceiling_barrier(T, t, p)
    ids = [pid for pid in alive_at(history, t) if level_at(history, pid, t) < barrier]
    return len(ids), ids


# ----------------------------------------------------------------------------
# Replicate driver
# ----------------------------------------------------------------------------


@dataclass
class Observation:
    time: float
    count: int
    mass: float
    min_level: float


def run_replicate(cfg, n0: int, times: Sequence[float], rng: np.random.Generator,
                  record: bool = False, init: str = "uniform", y: float = 1.0):
    """Run one replicate and observe at each of ``times``.

    Returns ``(observations, state)``.  ``count`` is the number of particles
    below the observation window (ceiling mode) or all particles.
    """
    cfg = _as_config(cfg)
    if init == "poisson":
        state = init_poisson_levels(y, cfg, rng, record)
    else:
        state = init_uniform(n0, cfg, rng, record)
    K = cfg.model.window
    obs = []
    for t in sorted(times):
        advance(state, t, cfg)
        count = observe_count(state, K)
        obs.append(Observation(t, count, count / cfg.model.observe_window, observe_min_level(state)))
    return obs, state
