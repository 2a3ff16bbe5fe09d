"""Model variants layered on top of the engine.

Each spec validates itself on construction.  The event helpers here are
the single implementation of each variant's randomness; the engine calls
them and the tests exercise them directly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Any, Callable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError
from .levels import LevelDomainError, LevelParams, OffspringRates

if TYPE_CHECKING:  # pragma: no cover
    from .engine import PopulationState, SpatialModel


def _irreducible(rates: np.ndarray) -> bool:
    """True if the directed graph of positive off-diagonal rates is strongly connected."""
    m = rates.shape[0]
    adj = (rates > 0) & ~np.eye(m, dtype=bool)
    for src in range(m):
        seen = {src}
        stack = [src]
        while stack:
            i = stack.pop()
            for j in np.flatnonzero(adj[i]):
                if j not in seen:
                    seen.add(int(j))
                    stack.append(int(j))
        if len(seen) != m:
            return False
    return True


def stationary_law(Q: np.ndarray) -> np.ndarray:
    """Stationary distribution of an irreducible generator matrix."""
    m = Q.shape[0]
    A = np.vstack([Q.T, np.ones((1, m))])
    rhs = np.zeros(m + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    return pi


# ----------------------------------------------------------------------------
# Specs
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class ImmigrationSpec:
    """Immigration with total intensity ``nu_mass`` and location law ``location_sampler``.

    Immigrants arrive at rate ``r * nu_mass`` with levels uniform on
    ``[0, r)``.
    """

    nu_mass: float
    location_sampler: Optional[Callable[[np.random.Generator], Any]] = None

    def __post_init__(self):
        if not (math.isfinite(self.nu_mass) and self.nu_mass >= 0):
            raise ConfigError(f"immigration rate density must be finite and >= 0, got {self.nu_mass}")

    def rate(self, r: float) -> float:
        return r * self.nu_mass


@dataclass(frozen=True)
class MultitypeSpec:
    """Finitely many types; ``rates[i, j]`` is the rate of type-i parents producing type j."""

    rates: np.ndarray
    b: np.ndarray

    def __init__(self, rates, b):
        rates = np.atleast_2d(np.asarray(rates, dtype=float))
        b = np.atleast_1d(np.asarray(b, dtype=float))
        problems = []
        if rates.ndim != 2 or rates.shape[0] != rates.shape[1]:
            problems.append(f"type rate matrix must be square, got shape {rates.shape}")
        elif b.shape != (rates.shape[0],):
            problems.append(f"b must have length {rates.shape[0]}, got {b.shape}")
        if np.any(~np.isfinite(rates)) or np.any(rates < 0):
            problems.append("type rates must be finite and >= 0")
        if not problems:
            if np.any(rates.sum(axis=1) <= 0):
                problems.append("every type needs a positive total birth rate")
            if not _irreducible(rates):
                problems.append("type chain is not irreducible")
        if problems:
            raise ConfigError(problems)
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "b", b)

    @property
    def m(self) -> int:
        return self.rates.shape[0]

    @property
    def a(self) -> np.ndarray:
        return self.rates.sum(axis=1)

    def check(self, r: float) -> None:
        bad = np.flatnonzero(r * self.a - self.b < -1e-12)
        if bad.size:
            raise ConfigError([f"type {i}: r*a - b = {r * self.a[i] - self.b[i]:g} < 0" for i in bad])

    @property
    def stationary(self) -> np.ndarray:
        Q = self.rates.copy()
        np.fill_diagonal(Q, 0.0)
        np.fill_diagonal(Q, -Q.sum(axis=1))
        return stationary_law(Q)


@dataclass(frozen=True)
class CatastropheSpec:
    """Catastrophes at rate ``event_rate``; each draws a mark from ``marks``.

    ``marks`` is a list of ``(probability, rho)`` where ``rho`` is a constant
    scaling factor or a per-type sequence of factors (multitype models).
    """

    event_rate: float
    marks: Tuple[Tuple[float, Any], ...]

    def __init__(self, event_rate, marks):
        problems = []
        if not (math.isfinite(event_rate) and event_rate >= 0):
            problems.append(f"catastrophe rate must be finite and >= 0, got {event_rate}")
        norm = []
        total = 0.0
        for prob, rho in marks:
            rho_arr = np.atleast_1d(np.asarray(rho, dtype=float))
            if prob < 0:
                problems.append(f"mark probability must be >= 0, got {prob}")
            if np.any(~np.isfinite(rho_arr)) or np.any(rho_arr < 1):
                problems.append(f"rho must be finite and >= 1, got {rho}")
            total += prob
            norm.append((float(prob), float(rho) if np.ndim(rho) == 0 else tuple(rho_arr)))
        if not norm:
            problems.append("at least one catastrophe mark is required")
        elif abs(total - 1.0) > 1e-9:
            problems.append(f"mark probabilities must sum to 1, got {total}")
        if problems:
            raise ConfigError(problems)
        object.__setattr__(self, "event_rate", float(event_rate))
        object.__setattr__(self, "marks", tuple(norm))

    def draw_rho(self, rng: np.random.Generator):
        x = rng.random()
        acc = 0.0
        for prob, rho in self.marks:
            acc += prob
            if x < acc:
                return rho
        return self.marks[-1][1]


@dataclass(frozen=True)
class EnvironmentSpec:
    """Finite-state environment chain with generator ``Q`` and per-state ``a``, ``b``.

    Derived quantities: stationary law ``pi``, the solution ``h0`` of
    ``Q h0 = b`` centred under ``pi``, ``abar = pi . a`` and
    ``cbar = -sum_l pi(l) h0(l) b(l)``.
    """

    Q: np.ndarray
    a: np.ndarray
    b: np.ndarray
    speedup: float = 1.0
    pi: np.ndarray = field(init=False, repr=False)
    h0: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        a = np.atleast_1d(np.asarray(self.a, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        problems = []
        m = Q.shape[0]
        if Q.shape != (m, m):
            problems.append(f"Q must be square, got shape {Q.shape}")
        else:
            if a.shape != (m,) or b.shape != (m,):
                problems.append(f"a and b must have length {m}")
            off = Q - np.diag(np.diag(Q))
            if np.any(off < 0):
                problems.append("off-diagonal entries of Q must be >= 0")
            if np.any(np.abs(Q.sum(axis=1)) > 1e-12 * max(1.0, np.abs(Q).max())):
                problems.append("rows of Q must sum to 0")
            if not _irreducible(off):
                problems.append("environment chain is not irreducible")
        if np.any(a < 0):
            problems.append("a(l) must be >= 0")
        if not self.speedup > 0:
            problems.append(f"speedup must be > 0, got {self.speedup}")
        if problems:
            raise ConfigError(problems)
        pi = stationary_law(Q)
        if abs(pi @ b) > 1e-12:
            raise ConfigError(f"environment drift must average to zero under pi: sum pi*b = {pi @ b:.3g}")
        # Q h0 = b is singular (constants are in the kernel); pin pi . h0 = 0
        A = np.vstack([Q, pi[None, :]])
        h0, *_ = np.linalg.lstsq(A, np.append(b, 0.0), rcond=None)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "h0", h0)
        if self.cbar < -1e-12:
            raise ConfigError(f"cbar = {self.cbar:g} < 0")

    @property
    def m(self) -> int:
        return self.Q.shape[0]

    @property
    def abar(self) -> float:
        return float(self.pi @ self.a)

    @property
    def cbar(self) -> float:
        return float(max(0.0, -(self.pi * self.h0) @ self.b))

    def level_coefficients(self, r: float) -> List[Tuple[float, float]]:
        """Per-state ``(a(l), sqrt(speedup) b(l))`` for the prelimit level drift."""
        s = math.sqrt(self.speedup)
        return [(float(self.a[l]), s * float(self.b[l])) for l in range(self.m)]

    def check(self, r: float) -> None:
        bad = [l for l, (al, bl) in enumerate(self.level_coefficients(r)) if r * al - bl < -1e-12]
        if bad:
            raise ConfigError([f"environment state {l}: r*a - sqrt(speedup)*b < 0" for l in bad])

    def jump_rate(self, state: int) -> float:
        return -self.speedup * self.Q[state, state]

    def next_state(self, state: int, rng: np.random.Generator) -> int:
        row = self.Q[state].copy()
        row[state] = 0.0
        x = rng.random() * row.sum()
        return int(min(np.searchsorted(np.cumsum(row), x, side="right"), self.m - 1))


@dataclass(frozen=True)
class Variants:
    """Which variants are active.  ``immortal`` adds a level-zero particle."""

    immigration: Optional[ImmigrationSpec] = None
    multitype: Optional[MultitypeSpec] = None
    offspring: Optional[OffspringRates] = None
    catastrophe: Optional[CatastropheSpec] = None
    environment: Optional[EnvironmentSpec] = None
    immortal: bool = False

    def check(self, model: "SpatialModel") -> None:
        r = model.levels.r
        problems = []
        exclusive = [n for n in ("multitype", "offspring", "environment") if getattr(self, n) is not None]
        if len(exclusive) > 1:
            problems.append(f"variants {exclusive} cannot be combined")
        if model.level_mode == "exponential" and (exclusive or self.catastrophe or self.immigration):
            problems.append("exponential level mode supports only the plain scalar model")
        for spec in (self.multitype, self.environment):
            if spec is not None:
                try:
                    spec.check(r)
                except ConfigError as e:
                    problems.extend(e.problems)
        if self.offspring is not None:
            try:
                self.offspring.check(model.levels.b, r)
            except LevelDomainError as e:
                problems.append(str(e))
        if problems:
            raise ConfigError(problems)


@dataclass(frozen=True)
class EngineConfig:
    model: "SpatialModel"
    variants: Variants = Variants()
    # levels reported to the user are engine levels plus this shift
    level_shift: float = 0.0


# ----------------------------------------------------------------------------
# Conditioning
# ----------------------------------------------------------------------------


def condition_nonextinction(model: "SpatialModel") -> EngineConfig:
    """Condition on survival by adding an immortal particle at level 0."""
    p = model.levels
    if p.b > 0:
        raise LevelDomainError("conditioning on nonextinction needs b <= 0")
    return EngineConfig(model, Variants(immortal=True))


def condition_extinction(model: "SpatialModel") -> EngineConfig:
    """Condition a supercritical model on extinction.

    Extinction means the minimal level starts above ``b/a``.  On the shifted
    levels ``V = U - b/a`` the dynamics are those of the model
    ``(a, -b, r - b/a)``, which is subcritical.
    """
    p = model.levels
    if not (p.a > 0 and 0 < p.b < p.r * p.a):
        raise LevelDomainError(f"conditioning on extinction needs 0 < b < r*a, got a={p.a}, b={p.b}, r={p.r}")
    shift = p.b / p.a
    shifted = replace(model, levels=LevelParams(p.a, -p.b, p.r - shift))
    return EngineConfig(shifted, Variants(), level_shift=shift)


# ----------------------------------------------------------------------------
# Event helpers
# ----------------------------------------------------------------------------


def immigration_events(
    spec: ImmigrationSpec, r: float, rng: np.random.Generator, t0: float = 0.0
) -> Iterator[Tuple[float, float, Any]]:
    """Endless stream of ``(time, level, location)`` immigrant arrivals after ``t0``."""
    rate = spec.rate(r)
    if rate <= 0:
        return
    t = t0
    while True:
        t += rng.exponential(1.0 / rate)
        level = r * rng.random()
        loc = spec.location_sampler(rng) if spec.location_sampler is not None else None
        yield t, level, loc


@dataclass
class MultitypeBirth:
    parent_type: int
    child_type: int
    child_level: float
    swapped: bool


def multitype_birth(parent_type: int, u: float, spec: MultitypeSpec, r: float, rng: np.random.Generator) -> MultitypeBirth:
    """Type assignment for an accepted birth from a type-``parent_type`` particle at level ``u``.

    The new type ``j`` is drawn with probability ``a(z, j)/a(z)`` and the new
    level ``v`` uniformly on ``[u, r)``.  With probability 1/2 the two types
    swap levels: the particle at ``u`` (the parent) becomes type ``j`` and
    the particle at ``v`` (the child) type ``z``.
    """
    if not 0 <= u < r:
        raise LevelDomainError(f"parent level {u} outside [0, {r})")
    row = spec.rates[parent_type]
    x = rng.random() * row.sum()
    j = int(min(np.searchsorted(np.cumsum(row), x, side="right"), spec.m - 1))
    v = u + (r - u) * rng.random()
    if rng.random() < 0.5:
        return MultitypeBirth(parent_type, j, v, False)
    return MultitypeBirth(j, parent_type, v, True)


def multi_offspring_birth(u: float, o: OffspringRates, r: float, rng: np.random.Generator) -> List[float]:
    """One thinning proposal for simultaneous births.

    Proposals come at the merged bound ``sum_k (k+1) a_k r``; the proposal is
    a k-birth with probability proportional to ``(k+1) a_k`` and is accepted
    with probability ``((r-u)/r)**k``.  Returns the child levels (empty on
    rejection).
    """
    if not 0 <= u < r:
        raise LevelDomainError(f"parent level {u} outside [0, {r})")
    weights = [(k + 1) * ak for k, ak in enumerate(o.rates, start=1)]
    x = rng.random() * sum(weights)
    k = len(weights)
    acc = 0.0
    for i, w in enumerate(weights, start=1):
        acc += w
        if x < acc:
            k = i
            break
    if not rng.random() < ((r - u) / r) ** k:
        return []
    return [u + (r - u) * rng.random() for _ in range(k)]


def catastrophe_event(state: "PopulationState", spec: CatastropheSpec, r: float, rng: np.random.Generator) -> Tuple[Any, List[int]]:
    """Scale every level by the drawn ``rho`` and remove particles reaching ``r``.

    Levels must already be synchronised to ``state.now``.  Returns the mark
    and the ids of killed particles (in id order).
    """
    rho = spec.draw_rho(rng)
    killed = []
    for pid in sorted(state.particles):
        p = state.particles[pid]
        factor = rho if isinstance(rho, float) else rho[int(p.location)]
        p.level *= factor
        if p.level >= r:
            killed.append(pid)
    for pid in killed:
        del state.particles[pid]
    return rho, killed


# ----------------------------------------------------------------------------
# Random environment
# ----------------------------------------------------------------------------


def environment_run(
    spec: EnvironmentSpec,
    model: "SpatialModel",
    times: Sequence[float],
    rng: np.random.Generator,
    mode: str = "limit",
    y0: float = 1.0,
    n0: int = 0,
    h: float = 1e-3,
) -> np.ndarray:
    """Counts below the observation window at each of ``times``.

    ``limit``: the infinite-level model driven by common noise, started from
    a Poisson(``y0``) level configuration on ``[0, model.levels.r)``; the
    normalised mass is the count divided by ``model.window``.
    ``prelimit``: the finite-r model whose coefficients follow the
    environment chain, started from ``n0`` uniform levels.
    """
    from . import engine

    times = np.asarray(sorted(times), dtype=float)
    if mode == "limit":
        if model.window is None:
            raise ConfigError("limit-mode environment runs need a ceiling model with a window")
        lam = model.levels.r
        init = lam * rng.random(rng.poisson(y0 * lam))
        from ._kernel import run_env_limit

        return run_env_limit(rng, spec.abar, spec.cbar, lam, init, times, model.window, h)
    if mode == "prelimit":
        cfg = EngineConfig(model, Variants(environment=spec))
        state = engine.init_population(cfg, n0, rng)
        out = []
        for t in times:
            engine.advance(state, t, cfg)
            out.append(engine.observe_count(state, model.window))
        return np.asarray(out, dtype=np.int64)
    raise ConfigError(f"unknown environment mode {mode!r}")
