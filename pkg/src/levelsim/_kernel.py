"""Compiled fast path for the constant-coefficient scalar level model.

The reference engine in :mod:`levelsim.engine` handles every variant and
records genealogy.  This kernel covers the plain model (plus an immortal
level-zero particle and uniform immigration) and is used where replicate
counts make the reference engine too slow.  Both are checked against each
other in law by the test suite.

Particles do not interact in this model, so instead of a global event queue
the kernel processes lineages depth first: a particle's level path is
deterministic, its death time is the ceiling hitting time, and its births
form a Poisson process with intensity ``2 a (r - U(s))`` along that path.
Births are sampled by thinning against ``2 a (r - u0)`` when the level
rises and ``2 a r`` otherwise; each accepted child is pushed on a stack and
processed the same way.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

from .levels import riccati_flow, riccati_hit_time

INF = math.inf


@njit(cache=True)
def _grow(arr, cap):
    out = np.empty(cap, dtype=arr.dtype)
    out[: arr.shape[0]] = arr
    return out


@njit(cache=True)
def run_scalar(rng, a, b, r, init_levels, immortal, imm_rate, obs_times, window, max_events):
    """Simulate one replicate up to ``obs_times[-1]`` (times ascending).

    Returns ``(counts, final_levels, n_events)`` where ``counts[i]`` is the
    number of living particles with level below ``window`` at
    ``obs_times[i]`` (the immortal particle included) and ``final_levels``
    holds those levels at the last observation time.  ``n_events`` counts
    birth proposals and is -1 if ``max_events`` was exceeded, in which case
    the outputs are incomplete.
    """
    n_obs = obs_times.shape[0]
    horizon = obs_times[n_obs - 1]
    counts = np.zeros(n_obs, dtype=np.int64)
    cap = max(64, 2 * init_levels.shape[0] + 2)
    s_lev = np.empty(cap)
    s_time = np.empty(cap)
    sp = 0
    if immortal:
        s_lev[sp] = 0.0
        s_time[sp] = 0.0
        sp += 1
    for k in range(init_levels.shape[0]):
        s_lev[sp] = init_levels[k]
        s_time[sp] = 0.0
        sp += 1
    if imm_rate > 0.0:
        t = rng.exponential(1.0 / imm_rate)
        while t < horizon:
            if sp >= cap:
                cap *= 2
                s_lev = _grow(s_lev, cap)
                s_time = _grow(s_time, cap)
            s_lev[sp] = r * rng.random()
            s_time[sp] = t
            sp += 1
            t += rng.exponential(1.0 / imm_rate)

    final = np.empty(16)
    n_final = 0
    events = 0
    while sp > 0:
        sp -= 1
        u0 = s_lev[sp]
        t0 = s_time[sp]
        death = t0 + riccati_hit_time(u0, r, a, b)
        for k in range(n_obs):
            tk = obs_times[k]
            if t0 <= tk and tk < death:
                u = riccati_flow(u0, tk - t0, a, b)
                if u < window:
                    counts[k] += 1
                    if k == n_obs - 1:
                        if n_final >= final.shape[0]:
                            final = _grow(final, 2 * final.shape[0])
                        final[n_final] = u
                        n_final += 1
        if a == 0.0:
            continue
        end = death if death < horizon else horizon
        rising = a * u0 - b > 0.0
        top = r - u0 if rising else r
        bound = 2.0 * a * top
        if bound <= 0.0:
            continue
        s = t0
        while True:
            s += rng.exponential(1.0 / bound)
            if s >= end:
                break
            events += 1
            if events > max_events:
                return counts, final[:n_final], -1
            u = riccati_flow(u0, s - t0, a, b)
            if rng.random() * top < r - u:
                if sp >= cap:
                    cap *= 2
                    s_lev = _grow(s_lev, cap)
                    s_time = _grow(s_time, cap)
                s_lev[sp] = u + (r - u) * rng.random()
                s_time[sp] = s
                sp += 1
    return counts, final[:n_final], events


@njit(cache=True)
def run_env_limit(rng, abar, cbar, lam_max, init_levels, obs_times, window, h):
    """Limit-mode random-environment model on ``[0, lam_max)``.

    All levels take Euler-Maruyama steps driven by one shared Gaussian
    increment per step.  A particle at level ``u`` gives birth during a step
    with probability ``1 - exp(-2 abar (lam_max - u) h)``; the child is
    uniform on ``[u, lam_max)``.  Returns the count below ``window`` at each
    observation time.
    """
    n_obs = obs_times.shape[0]
    counts = np.zeros(n_obs, dtype=np.int64)
    cap = max(64, 2 * init_levels.shape[0] + 2)
    lev = np.empty(cap)
    n = init_levels.shape[0]
    lev[:n] = init_levels
    sig = math.sqrt(2.0 * cbar)
    now = 0.0
    obs_idx = 0
    while obs_idx < n_obs and now >= obs_times[obs_idx] - 1e-12:
        for j in range(n):
            if lev[j] < window:
                counts[obs_idx] += 1
        obs_idx += 1
    while obs_idx < n_obs:
        step = h
        if now + step > obs_times[obs_idx]:
            step = obs_times[obs_idx] - now
        dw = math.sqrt(step) * rng.normal()
        n_start = n
        for j in range(n_start):
            u = lev[j]
            if rng.random() < -math.expm1(-2.0 * abar * (lam_max - u) * step):
                if n >= cap:
                    cap *= 2
                    lev = _grow(lev, cap)
                lev[n] = u + (lam_max - u) * rng.random()
                n += 1
        k = 0
        for j in range(n):
            u = lev[j]
            if j < n_start:
                u = u + (abar * u * u + cbar * u) * step + sig * u * dw
                if u < 0.0:
                    u = 0.0
            if u < lam_max:
                lev[k] = u
                k += 1
        n = k
        now += step
        while obs_idx < n_obs and now >= obs_times[obs_idx] - 1e-12:
            for j in range(n):
                if lev[j] < window:
                    counts[obs_idx] += 1
            obs_idx += 1
    return counts


def simulate_counts(a, b, r, init_levels, times, rng, immortal=False, imm_rate=0.0, window=None,
                    max_events=10**9):
    """Python entry point for :func:`run_scalar`; raises on event-cap overflow."""
    from .errors import SimulationOverflow

    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0 or np.any(np.diff(times) < 0) or times[0] < 0:
        raise ValueError("times must be a nonempty ascending sequence of nonnegative values")
    counts, final, events = run_scalar(rng, float(a), float(b), float(r),
                                       np.ascontiguousarray(init_levels, dtype=float), bool(immortal),
                                       float(imm_rate), times, float(r if window is None else window),
                                       int(max_events))
    if events < 0:
        raise SimulationOverflow(f"replicate exceeded {max_events} birth proposals")
    return counts, final
