"""Independent reference results: direct Gillespie simulation and closed forms.

Nothing here uses levels.  The Gillespie simulators work on counts only, so
agreement with the particle engine is a genuine cross-check.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import SimulationOverflow
from .levels import LevelDomainError, LevelParams

DEFAULT_EVENT_CAP = 10**7

Transition = Tuple[Callable[[np.ndarray], float], Sequence[int]]


@dataclass(frozen=True)
class BDRates:
    """Per-individual birth and death rates of a linear birth-death chain."""

    birth_per_individual: float
    death_per_individual: float

    def __post_init__(self):
        if not (self.birth_per_individual >= 0 and self.death_per_individual >= 0):
            raise LevelDomainError(f"rates must be >= 0, got {self}")

    @classmethod
    def from_levels(cls, p: LevelParams) -> "BDRates":
        return cls(p.r * p.a, p.r * p.a - p.b)

    def transitions(self) -> List[Transition]:
        lam, mu = self.birth_per_individual, self.death_per_individual
        return [(lambda n: lam * n[0], (1,)), (lambda n: mu * n[0], (-1,))]


@dataclass
class SSAResult:
    """Counts at each requested time; ``overflow`` is set if the event cap was hit."""

    counts: np.ndarray
    overflow: bool
    events: int


def gillespie_custom(
    transitions: Sequence[Transition],
    n0: Union[int, Sequence[int]],
    times: Union[float, Sequence[float]],
    rng: np.random.Generator,
    max_events: int = DEFAULT_EVENT_CAP,
) -> SSAResult:
    """Exact SSA for a chain on integer count vectors.

    ``transitions`` is a list of ``(rate_fn, delta)``: ``rate_fn(n)`` gives
    the rate at state ``n`` and ``delta`` the jump.  ``counts`` has shape
    ``(len(times), dim)``.  On overflow the remaining rows are left at -1.
    """
    state = np.atleast_1d(np.asarray(n0, dtype=np.int64)).copy()
    obs = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(np.diff(obs) < 0) or np.any(obs < 0):
        raise LevelDomainError("observation times must be >= 0 and ascending")
    deltas = [np.asarray(d, dtype=np.int64) for _, d in transitions]
    counts = np.full((obs.size, state.size), -1, dtype=np.int64)
    t = 0.0
    k = 0
    events = 0
    while k < obs.size:
        rates = [fn(state) for fn, _ in transitions]
        total = sum(rates)
        t_next = t + rng.exponential(1.0 / total) if total > 0 else math.inf
        while k < obs.size and obs[k] < t_next:
            counts[k] = state
            k += 1
        if k == obs.size:
            break
        events += 1
        if events > max_events:
            return SSAResult(counts, True, events)
        t = t_next
        x = rng.random() * total
        acc = 0.0
        for rate, d in zip(rates, deltas):
            acc += rate
            if x < acc:
                state += d
                break
        else:
            state += deltas[-1]
        if np.any(state < 0):
            raise LevelDomainError(f"transition drove the state negative: {state}")
    return SSAResult(counts, False, events)


def gillespie_bd(rates: BDRates, n0: int, t, rng: np.random.Generator, max_events: int = DEFAULT_EVENT_CAP):
    """Endpoint(s) of the linear birth-death chain started at ``n0``.

    Returns an int for scalar ``t`` and an array for a sequence of times.
    """
    if n0 < 0 or np.any(np.asarray(t) < 0):
        raise LevelDomainError("n0 and t must be >= 0")
    res = gillespie_custom(rates.transitions(), n0, t, rng, max_events)
    if res.overflow:
        raise SimulationOverflow(f"birth-death trajectory exceeded {max_events} events")
    if np.ndim(t) == 0:
        return int(res.counts[0, 0])
    return res.counts[:, 0]


def nonextinction_transitions(p: LevelParams) -> List[Transition]:
    """Count chain conditioned on nonextinction; ``n`` includes the immortal particle."""
    lam, mu = p.r * p.a, p.r * p.a - p.b
    return [(lambda n: lam * (n[0] + 1), (1,)), (lambda n: mu * (n[0] - 1), (-1,))]


def multioffspring_transitions(rates: Sequence[float], b: float, r: float) -> List[Transition]:
    """k-birth at rate ``r a_k n``; death at ``(r sum_k k a_k - b) n``."""
    out: List[Transition] = []
    for k, ak in enumerate(rates, start=1):
        if ak > 0:
            out.append(((lambda n, c=r * ak: c * n[0]), (k,)))
    mu = r * sum(k * ak for k, ak in enumerate(rates, start=1)) - b
    out.append(((lambda n: mu * n[0]), (-1,)))
    return out


def multitype_transitions(type_rates: np.ndarray, b: np.ndarray, r: float) -> List[Transition]:
    """Birth of type j from type z at ``r a(z, j) n_z``; death at ``(r a(z) - b(z)) n_z``."""
    m = type_rates.shape[0]
    out: List[Transition] = []
    a = type_rates.sum(axis=1)
    for z in range(m):
        for j in range(m):
            if type_rates[z, j] > 0:
                d = [0] * m
                d[j] = 1
                out.append(((lambda n, c=r * type_rates[z, j], z=z: c * n[z]), tuple(d)))
        d = [0] * m
        d[z] = -1
        out.append(((lambda n, c=r * a[z] - b[z], z=z: c * n[z]), tuple(d)))
    return out


def catastrophe_bd_sample(p: LevelParams, n0: int, t: float, event_rate: float,
                          marks: Sequence[Tuple[float, float]], rng: np.random.Generator,
                          max_events: int = DEFAULT_EVENT_CAP) -> int:
    """Linear birth-death chain with catastrophes that keep each individual w.p. ``1/rho``."""
    lam, mu = p.r * p.a, p.r * p.a - p.b
    n = n0
    now = 0.0
    events = 0
    while True:
        total = (lam + mu) * n + event_rate
        if total <= 0:
            return n
        now += rng.exponential(1.0 / total)
        if now >= t:
            return n
        events += 1
        if events > max_events:
            raise SimulationOverflow("catastrophe chain exceeded its event cap")
        x = rng.random() * total
        if x < lam * n:
            n += 1
        elif x < (lam + mu) * n:
            n -= 1
        else:
            y = rng.random()
            acc = 0.0
            rho = marks[-1][1]
            for prob, rv in marks:
                acc += prob
                if y < acc:
                    rho = rv
                    break
            n = int(rng.binomial(n, 1.0 / rho))


# ----------------------------------------------------------------------------
# Closed forms
# ----------------------------------------------------------------------------


def _survival_D(t: float, p: LevelParams) -> float:
    if p.b == 0:
        return 1.0 + p.a * p.r * t
    e = math.exp(-p.b * t)
    return e - (p.r * p.a / p.b) * math.expm1(-p.b * t)


def survival_prob(n0: int, t: float, p: LevelParams) -> float:
    """P{N(t) > 0} for ``n0`` initial particles.

    The minimal level survives to ``t`` iff it starts below ``r/D`` with
    ``D = e^{-bt} - (ra/b)(e^{-bt} - 1)``, so the answer is
    ``1 - (1 - 1/D)**n0``.
    """
    if n0 < 1 or t < 0:
        raise LevelDomainError("need n0 >= 1 and t >= 0")
    D = _survival_D(t, p)
    if D < 1 - 1e-12:
        raise ArithmeticError(f"survival denominator D={D} < 1; parameters violate b <= r*a")
    return -math.expm1(n0 * math.log1p(-1.0 / D)) if D > 1 else 1.0


def classical_bd_survival(lam: float, mu: float, t: float, n0: int = 1) -> float:
    """Survival of a linear birth-death chain from the textbook generating function."""
    if lam == mu:
        q = lam * t / (1 + lam * t)
    else:
        g = math.exp((lam - mu) * t)
        q = mu * (g - 1) / (lam * g - mu)
    return 1.0 - q**n0


def harris_params(p: LevelParams) -> Tuple[float, float]:
    """``(P{W > 0}, rate of W given W > 0)`` for one initial particle."""
    if not 0 < p.b < p.r * p.a:
        raise LevelDomainError(f"Harris limit needs 0 < b < r*a, got b={p.b}, r*a={p.r * p.a}")
    q = p.b / (p.r * p.a)
    return q, q


def feller_moments(y0: float, t: float, a: float, b: float) -> Tuple[float, float]:
    """Mean and variance of the Feller diffusion ``dY = bY dt + sqrt(2aY) dW``."""
    if y0 < 0 or t < 0:
        raise LevelDomainError("need y0 >= 0 and t >= 0")
    mean = y0 * math.exp(b * t)
    if b == 0:
        var = 2 * a * y0 * t
    else:
        var = (2 * a * y0 / b) * math.exp(b * t) * math.expm1(b * t)
    return mean, var


def subcritical_extinction_prob(lam: float, mu: float, t: float, n0: int) -> float:
    return 1.0 - classical_bd_survival(lam, mu, t, n0)


# ----------------------------------------------------------------------------
# Poisson identities
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class PoissonIntensity:
    """Homogeneous intensity ``rate`` per unit length on ``[low, high]``."""

    rate: float
    low: float = 0.0
    high: float = 1.0

    @property
    def mass(self) -> float:
        return self.rate * (self.high - self.low)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        n = rng.poisson(self.mass)
        return self.low + (self.high - self.low) * rng.random(n)

    def integrate(self, fn: Callable[[np.ndarray], np.ndarray], n: int = 20001) -> float:
        """Composite Simpson rule for ``int fn dnu`` (fn vectorised)."""
        from scipy.integrate import simpson

        x = np.linspace(self.low, self.high, n)
        return float(self.rate * simpson(fn(x), x=x))


def poisson_identities_check(
    intensity: PoissonIntensity,
    f: Callable[[np.ndarray], np.ndarray],
    g: Callable[[np.ndarray], np.ndarray],
    reps: int,
    rng: np.random.Generator,
    name: str = "poisson_identities",
):
    """Monte Carlo check of the Poisson exponential and variance identities.

    ``E[exp(sum f)] = exp(int (e^f - 1) dnu)`` and ``Var(sum g) = int g^2 dnu``.
    Each side is compared by a z-score; the report passes iff both are
    within 3 standard errors.
    """
    from .stats import z_report

    lhs_exp = np.empty(reps)
    sums_g = np.empty(reps)
    for i in range(reps):
        pts = intensity.sample(rng)
        lhs_exp[i] = math.exp(float(np.sum(f(pts)))) if pts.size else 1.0
        sums_g[i] = float(np.sum(g(pts))) if pts.size else 0.0
    rhs_exp = math.exp(intensity.integrate(lambda x: np.expm1(f(x))))
    rhs_var = intensity.integrate(lambda x: g(x) ** 2)
    m = lhs_exp.mean()
    se_m = lhs_exp.std(ddof=1) / math.sqrt(reps)
    c = sums_g - sums_g.mean()
    v = float(np.mean(c**2)) * reps / (reps - 1)
    se_v = math.sqrt(max(np.mean(c**4) - np.mean(c**2) ** 2, 0.0) / reps)
    z1 = 0.0 if se_m == 0 else (m - rhs_exp) / se_m
    z2 = 0.0 if se_v == 0 else (v - rhs_var) / se_v
    # exact agreement with zero spread (e.g. f = 0) counts as a pass
    if se_m == 0 and abs(m - rhs_exp) > 1e-12 * max(1, abs(rhs_exp)):
        z1 = math.inf
    if se_v == 0 and abs(v - rhs_var) > 1e-12 * max(1, abs(rhs_var)):
        z2 = math.inf
    z = z1 if abs(z1) >= abs(z2) else z2
    return z_report(name, z, reps,
                    details={"exp_lhs": m, "exp_rhs": rhs_exp, "var_lhs": v, "var_rhs": rhs_var})


# ----------------------------------------------------------------------------
# Genealogy oracle
# ----------------------------------------------------------------------------


def parent_pointer_ancestors(parents: Dict[int, Optional[int]], birth: Dict[int, float],
                             death: Dict[int, float], t: float, T: float) -> List[int]:
    """Time-``t`` particles with at least one descendant (or themselves) alive at ``T``."""
    out = set()
    for pid in parents:
        if not (birth[pid] <= T < death[pid]):
            continue
        cur: Optional[int] = pid
        while cur is not None:
            if birth[cur] <= t < death[cur]:
                out.add(cur)
                break
            if birth[cur] <= t:
                break
            cur = parents[cur]
    return sorted(out)
