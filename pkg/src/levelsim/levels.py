"""Level dynamics for the particle representation.

Every particle carries a level ``u``.  Between events the level follows the
Riccati flow ``du/dt = a*u**2 - b*u`` (or one of the alternative drifts
below), the particle gives birth at rate ``2*a*(r - u)`` to a child whose
level is uniform on ``[u, r)``, and it dies when its level reaches the
ceiling ``r``.

Blow-up and "never reaches the target" are both reported as ``math.inf``;
callers branch on ``math.isinf`` rather than relying on float overflow.

The scalar kernels are compiled with numba so the same code serves the
Python reference engine and the compiled fast path.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from numba import njit

from .errors import LevelSimError

INF = math.inf


class LevelDomainError(LevelSimError, ValueError):
    """Raised when a level operation is called outside its domain."""


@dataclass(frozen=True)
class LevelParams:
    """Coefficients of the level ODE and the level ceiling.

    ``a`` is the quadratic coefficient, ``b`` the linear one and ``r`` the
    ceiling at which particles die.  The projected birth-death chain has
    per-capita birth rate ``r*a`` and death rate ``r*a - b``; the latter must
    be nonnegative for the representation to project onto a branching
    process, which :meth:`require_projectable` checks.  The bare ODE helpers
    accept any ``b``.
    """

    a: float
    b: float
    r: float

    def __post_init__(self):
        for name in ("a", "b", "r"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise LevelDomainError(f"{name} must be finite, got {v!r}")
        if self.a < 0:
            raise LevelDomainError(f"a must be >= 0, got {self.a}")
        if self.r <= 0:
            raise LevelDomainError(f"r must be > 0, got {self.r}")

    @property
    def birth_rate(self) -> float:
        return self.r * self.a

    @property
    def death_rate(self) -> float:
        return self.r * self.a - self.b

    @property
    def fixed_point(self) -> float:
        """Unstable interior fixed point ``b/a`` (inf when there is none)."""
        if self.a > 0 and self.b > 0:
            return self.b / self.a
        return INF

    def require_projectable(self) -> "LevelParams":
        if self.death_rate < -1e-12 * max(1.0, abs(self.b)):
            raise LevelDomainError(
                f"r*a - b = {self.death_rate:g} < 0: the ceiling must satisfy "
                f"b <= r*a so that the projected death rate is nonnegative"
            )
        return self


@dataclass(frozen=True)
class OffspringRates:
    """Rates ``a_k`` (k = 1..k_max) for births of k simultaneous children.

    A particle at level ``u`` has k children at rate
    ``(k+1) * a_k * (r-u)**k / r**(k-1)``, the children's levels i.i.d.
    uniform on ``[u, r)``.
    """

    rates: Tuple[float, ...]

    def __init__(self, rates: Sequence[float]):
        rates = tuple(float(x) for x in rates)
        if not rates:
            raise LevelDomainError("at least one offspring rate is required")
        if any((not math.isfinite(x)) or x < 0 for x in rates):
            raise LevelDomainError(f"offspring rates must be finite and >= 0: {rates}")
        if not any(x > 0 for x in rates):
            raise LevelDomainError("at least one offspring rate must be positive")
        object.__setattr__(self, "rates", rates)

    @property
    def k_max(self) -> int:
        return len(self.rates)

    def mean_children_rate(self) -> float:
        """``sum_k k * a_k``."""
        return sum((k + 1) * ak for k, ak in enumerate(self.rates))

    def death_rate(self, b: float, r: float) -> float:
        return r * self.mean_children_rate() - b

    def birth_rates(self, r: float) -> list[float]:
        """Projected rate ``r * a_k`` of a k-birth, per individual."""
        return [r * ak for ak in self.rates]

    def check(self, b: float, r: float) -> None:
        if self.death_rate(b, r) < -1e-12:
            raise LevelDomainError(
                f"r * sum_k k a_k - b = {self.death_rate(b, r):g} < 0: "
                "projected death rate must be nonnegative"
            )

    def is_binary(self) -> bool:
        return all(ak == 0 for ak in self.rates[1:])

    def drift_coefficients(self, b: float, r: float) -> np.ndarray:
        """Power-series coefficients ``c`` with drift ``sum_j c[j] u**j``.

        ``(1-x)**(k+1) - 1 + (k+1) x`` is expanded exactly as
        ``sum_{j>=2} C(k+1, j) (-x)**j`` so that the small-u regime does not
        suffer cancellation.
        """
        deg = self.k_max + 1
        c = np.zeros(deg + 1)
        c[1] = -b
        for k, ak in enumerate(self.rates, start=1):
            if ak == 0:
                continue
            for j in range(2, k + 2):
                c[j] += ak * math.comb(k + 1, j) * (-1) ** j * r ** (2 - j)
        return c


# ----------------------------------------------------------------------------
# Riccati flow, compiled
# ----------------------------------------------------------------------------


@njit(cache=True)
def riccati_flow(u0, dt, a, b):
    """Solution of du/dt = a u^2 - b u at time dt from u0 (inf on blow-up)."""
    if u0 == 0.0 or dt == 0.0:
        return u0
    if b > 0.0:
        e = math.exp(-b * dt)
        den = 1.0 + a * u0 * math.expm1(-b * dt) / b
        num = u0 * e
    elif b < 0.0:
        num = u0
        den = math.exp(b * dt) - a * u0 * math.expm1(b * dt) / b
    else:
        num = u0
        den = 1.0 - a * u0 * dt
    if den <= 0.0:
        return INF
    return num / den


@njit(cache=True)
def riccati_hit_time(u0, target, a, b):
    """Smallest t >= 0 with riccati_flow(u0, t) >= target, inf if never."""
    if u0 >= target:
        return 0.0
    if u0 == 0.0:
        return INF
    if b == 0.0:
        if a == 0.0:
            return INF
        return (target - u0) / (a * u0 * target)
    den = a * u0 - b
    if den == 0.0:
        return INF
    z = b * (target - u0) / (target * den)
    if z <= -1.0:
        return INF
    t = math.log1p(z) / b
    if not t > 0.0:
        return INF
    return t


@njit(cache=True)
def riccati_backward(u, dt, a, b):
    """Level that flows forward onto ``u`` after time ``dt``."""
    return riccati_flow(u, dt, -a, -b)


# ----------------------------------------------------------------------------
# Public Riccati operations
# ----------------------------------------------------------------------------


def _check_nonneg(name: str, v: float) -> None:
    if not v >= 0:
        raise LevelDomainError(f"{name} must be >= 0, got {v!r}")


def level_flow(u0: float, dt: float, p: LevelParams) -> float:
    """Exact level after time ``dt`` starting from ``u0``; ``inf`` on blow-up."""
    _check_nonneg("u0", u0)
    _check_nonneg("dt", dt)
    if math.isinf(u0):
        return INF
    return riccati_flow(float(u0), float(dt), p.a, p.b)


def level_hit_time(u0: float, target: float, p: LevelParams) -> float:
    """Time for the level to climb from ``u0`` to ``target`` (``inf``: never)."""
    _check_nonneg("u0", u0)
    if not target > 0:
        raise LevelDomainError(f"target must be > 0, got {target!r}")
    return riccati_hit_time(float(u0), float(target), p.a, p.b)


def backward_flow(u: float, dt: float, p: LevelParams) -> float:
    """Level at time ``-dt`` of the trajectory that sits at ``u`` at time 0."""
    _check_nonneg("u", u)
    _check_nonneg("dt", dt)
    if math.isinf(u):
        return ancestor_barrier(dt, 0.0, p) if dt > 0 else INF
    return riccati_backward(float(u), float(dt), p.a, p.b)


def ancestor_barrier(T: float, t: float, p: LevelParams) -> float:
    """Level at time ``t`` whose trajectory blows up exactly at time ``T``.

    ``b / (a (1 - exp(-b (T-t))))``, ``1/(a (T-t))`` when ``b == 0`` and
    ``inf`` when ``a == 0`` (no finite barrier).
    """
    if not t < T:
        raise LevelDomainError(f"barrier needs t < T, got t={t}, T={T}")
    if p.a == 0:
        return INF
    tau = T - t
    if p.b == 0:
        return 1.0 / (p.a * tau)
    return p.b / (p.a * -math.expm1(-p.b * tau))


def ceiling_barrier(T: float, t: float, p: LevelParams) -> float:
    """Finite-ceiling analogue of :func:`ancestor_barrier`.

    The level at time ``t`` whose trajectory reaches ``r`` exactly at ``T``;
    tends to :func:`ancestor_barrier` as ``r`` grows.
    """
    if not t < T:
        raise LevelDomainError(f"barrier needs t < T, got t={t}, T={T}")
    return riccati_backward(p.r, T - t, p.a, p.b)


def next_birth(u0: float, p: LevelParams, rng: np.random.Generator) -> Optional[Tuple[float, float]]:
    """First accepted birth of a particle started at level ``u0``.

    Proposals arrive at the constant rate ``2 a r`` and are accepted with
    probability ``(r - U(t)) / r``; the child level is uniform on
    ``[U(t), r)``.  Returns ``(delay, child_level)`` or ``None`` when the
    parent reaches the ceiling first.
    """
    _check_nonneg("u0", u0)
    if u0 >= p.r:
        raise LevelDomainError(f"u0={u0} is at or above the ceiling r={p.r}")
    if p.a == 0:
        return None
    horizon = riccati_hit_time(u0, p.r, p.a, p.b)
    bound = 2.0 * p.a * p.r
    t = 0.0
    while True:
        t += rng.exponential(1.0 / bound)
        if t >= horizon:
            return None
        u = riccati_flow(u0, t, p.a, p.b)
        if rng.random() * p.r < p.r - u:
            return t, u + (p.r - u) * rng.random()


# ----------------------------------------------------------------------------
# Alternative drifts
# ----------------------------------------------------------------------------


def multi_offspring_drift(u: float, o: OffspringRates, b: float, r: float) -> float:
    """Level drift when births of several simultaneous children are allowed.

    ``sum_k r^2 a_k [(1 - u/r)^(k+1) - 1 + (k+1) u/r] - b u``.  With only
    ``a_1`` this is ``a_1 u^2 - b u``.
    """
    _check_nonneg("u", u)
    if u > r:
        raise LevelDomainError(f"u={u} exceeds the ceiling r={r}")
    c = o.drift_coefficients(b, r)
    acc = 0.0
    for j in range(len(c) - 1, 1, -1):
        acc += c[j] * u**j
    return acc - b * u


def exp_mode_drift(z: float, p: LevelParams) -> float:
    """Drift of exponentially distributed levels.

    ``exp(z/r) * [2 a r (r(1-e^{-z/r}) - r/2 (1-e^{-2z/r})) - b r (1-e^{-z/r})]``
    which simplifies to ``exp(z/r) * r s (a r s - b)`` with
    ``s = 1 - exp(-z/r)``.
    """
    _check_nonneg("z", z)
    r = p.r
    s = -math.expm1(-z / r)
    return math.exp(z / r) * r * s * (p.a * r * s - p.b)


def exp_to_uniform(z: float, r: float) -> float:
    """Map an Exp(mean r) level to the Uniform[0, r) scale."""
    return -r * math.expm1(-z / r)


def uniform_to_exp(u: float, r: float) -> float:
    if u >= r:
        return INF
    return -r * math.log1p(-u / r)


def exp_level_flow(z0: float, dt: float, p: LevelParams) -> float:
    """Flow of ``dz/dt = exp_mode_drift(z)``; ``inf`` once the level explodes.

    ``u = r (1 - exp(-z/r))`` conjugates this flow to the Riccati flow with
    the same ``(a, b)``, which gives the closed form used here.
    """
    _check_nonneg("z0", z0)
    _check_nonneg("dt", dt)
    u = riccati_flow(exp_to_uniform(z0, p.r), dt, p.a, p.b)
    return uniform_to_exp(u, p.r)


def exp_level_hit_time(z0: float, p: LevelParams) -> float:
    """Time for an exponential-mode level to reach infinity."""
    _check_nonneg("z0", z0)
    return riccati_hit_time(exp_to_uniform(z0, p.r), p.r, p.a, p.b)


def env_level_step(u: float, dt: float, abar: float, cbar: float, dW: float) -> float:
    """One Euler-Maruyama step of ``dU = (abar U^2 + cbar U) dt + sqrt(2 cbar) U dW``.

    ``dW`` must be the increment shared by every particle in this step.
    The result is clamped at 0, which is invariant for the exact dynamics.
    """
    if cbar < 0:
        raise LevelDomainError(f"cbar must be >= 0, got {cbar}")
    _check_nonneg("u", u)
    if not dt > 0:
        raise LevelDomainError(f"dt must be > 0, got {dt}")
    nxt = u + (abar * u * u + cbar * u) * dt + math.sqrt(2.0 * cbar) * u * dW
    return nxt if nxt > 0.0 else 0.0


# ----------------------------------------------------------------------------
# Fixed-step RK4 for polynomial drifts
# ----------------------------------------------------------------------------

RK4_STEP = 2.5e-3


@njit(cache=True)
def _poly(c, u):
    acc = 0.0
    for j in range(c.shape[0] - 1, -1, -1):
        acc = acc * u + c[j]
    return acc


@njit(cache=True)
def _rk4_step(c, u, h):
    k1 = _poly(c, u)
    k2 = _poly(c, u + 0.5 * h * k1)
    k3 = _poly(c, u + 0.5 * h * k2)
    k4 = _poly(c, u + h * k3)
    return u + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0


@njit(cache=True)
def rk4_poly_flow(c, u0, dt, h):
    if dt <= 0.0 or u0 == 0.0:
        return u0
    n = int(math.ceil(dt / h))
    step = dt / n
    u = u0
    for _ in range(n):
        u = _rk4_step(c, u, step)
    return u


@njit(cache=True)
def rk4_poly_hit_time(c, u0, target, h, horizon):
    """First time the RK4 trajectory reaches ``target`` (inf past ``horizon``)."""
    if u0 >= target:
        return 0.0
    t = 0.0
    u = u0
    while t < horizon:
        nxt = _rk4_step(c, u, h)
        if nxt >= target:
            lo = 0.0
            hi = h
            while hi - lo > 1e-13:
                mid = 0.5 * (lo + hi)
                if _rk4_step(c, u, mid) >= target:
                    hi = mid
                else:
                    lo = mid
            hit = t + hi
            return hit if hit <= horizon else INF
        if nxt <= u:
            # the drift has turned nonpositive: the level never climbs again
            return INF
        u = nxt
        t += h
    return INF


class PolynomialFlow:
    """Autonomous scalar flow ``du/dt = sum_j c[j] u**j`` integrated by RK4.

    Used for drifts without a closed-form solution.  ``hit_time`` returns
    ``inf`` both for "never" (a fixed point separates ``u0`` from the target)
    and for "not before ``horizon``".
    """

    def __init__(self, coeffs, h: float = RK4_STEP):
        self.c = np.ascontiguousarray(coeffs, dtype=float)
        self.h = float(h)
        roots = np.roots(self.c[::-1]) if np.any(self.c[1:] != 0) else np.array([])
        real = roots[np.abs(roots.imag) < 1e-12].real
        self.fixed_points = np.sort(real[real > 0])

    @classmethod
    def from_offspring(cls, o: OffspringRates, b: float, r: float, h: float = RK4_STEP):
        return cls(o.drift_coefficients(b, r), h)

    def drift(self, u: float) -> float:
        return float(_poly(self.c, u))

    def flow(self, u0: float, dt: float) -> float:
        return rk4_poly_flow(self.c, float(u0), float(dt), min(self.h, max(dt, 1e-300)))

    def hit_time(self, u0: float, target: float, horizon: float = INF) -> float:
        if u0 >= target:
            return 0.0
        if self.drift(u0) <= 0.0:
            return INF
        blocking = self.fixed_points[(self.fixed_points > u0) & (self.fixed_points <= target)]
        if blocking.size:
            return INF
        return rk4_poly_hit_time(self.c, float(u0), float(target), self.h, float(horizon))
