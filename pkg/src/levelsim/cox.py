"""Conditionally Poisson (Cox) point configurations and the window estimator.

A Cox configuration on ``S x [0, K]`` is drawn by first sampling a random
total mass ``m`` and then a Poisson number ``Poisson(m K)`` of points with
levels uniform on ``[0, K]`` and i.i.d. marks.  The estimator
``(1/K) sum f(mark)`` recovers ``m * E f(mark)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, Optional, Union

import numpy as np

MassSampler = Union[float, Callable[[np.random.Generator], float]]


class CoxError(ValueError):
    pass


@dataclass
class PointConfig:
    marks: np.ndarray
    levels: np.ndarray
    window: float
    mass: float  # the realised Cox mass (kept for tests and diagnostics)

    def __post_init__(self):
        if self.levels.size and (self.levels.min() < 0 or self.levels.max() > self.window):
            raise CoxError("levels must lie in [0, window]")

    def __len__(self) -> int:
        return int(self.levels.size)


def sample_cox(mass: MassSampler, K: float, rng: np.random.Generator,
               mark_sampler: Optional[Callable[[np.random.Generator, int], Any]] = None) -> PointConfig:
    """Draw a Cox configuration with window ``K``.

    ``mass`` is a constant or a callable returning a random mass.
    ``mark_sampler(rng, n)`` returns ``n`` marks; the default marks are all
    zero.
    """
    if not K > 0:
        raise CoxError(f"window K must be > 0, got {K}")
    m = float(mass(rng)) if callable(mass) else float(mass)
    if m < 0:
        raise CoxError(f"Cox mass must be >= 0, got {m}")
    n = rng.poisson(m * K)
    levels = K * rng.random(n)
    marks = mark_sampler(rng, n) if mark_sampler is not None else np.zeros(n)
    return PointConfig(np.asarray(marks), levels, float(K), m)


def estimate_cox(cfg: PointConfig, f: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> float:
    """``(1/K) sum f(mark)``; ``f`` defaults to 1."""
    if not cfg.window > 0:
        raise CoxError("window must be > 0")
    if len(cfg) == 0:
        return 0.0
    vals = np.ones(len(cfg)) if f is None else np.asarray(f(cfg.marks), dtype=float)
    return float(vals.sum() / cfg.window)


def estimator_bound(delta: float, C: float, K: float, Kprime: Optional[float] = None,
                    uniform_mode: bool = False, r: Optional[float] = None, tail: float = 0.0,
                    laplace_tail: Optional[float] = None) -> float:
    """Chebyshev bound on ``P{|estimate - truth| >= delta}``.

    The first term is ``C/(K delta^2)``, or ``(r-K) C/(r K delta^2)`` for
    uniform levels on ``[0, r)``.  The second term bounds
    ``P{int f^2 dXi > C}``: either ``tail`` directly, or, when
    ``laplace_tail`` gives ``E[1 - exp(-int_{[0,K']} f^2 dxi / C)]``, that
    value divided by ``1 - exp(-K' exp(-1/C))``.  The result is capped at 1.
    """
    if not (delta > 0 and C > 0 and K > 0):
        raise CoxError("delta, C and K must be > 0")
    if uniform_mode:
        if r is None or K > r:
            raise CoxError("uniform mode needs r >= K")
        first = (r - K) * C / (r * K * delta**2)
    else:
        first = C / (K * delta**2)
    if laplace_tail is not None:
        if Kprime is None or not Kprime > 0:
            raise CoxError("laplace_tail needs Kprime > 0")
        if uniform_mode and Kprime >= r:
            raise CoxError("uniform mode needs Kprime < r")
        second = laplace_tail / -math.expm1(-Kprime * math.exp(-1.0 / C))
    else:
        second = tail
    return min(1.0, first + second)
