"""Goodness-of-fit tests and simple estimators used by the acceptance suite."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import chi2, norm

THRESHOLD = 1e-3
# two-sided p-value of a 3 standard error deviation
THREE_SE = float(2 * norm.sf(3.0))


class StatsError(ValueError):
    pass


@dataclass
class TestReport:
    """Outcome of one statistical comparison.  ``passed`` iff ``p_value > threshold``."""

    __test__ = False  # keep pytest from collecting this class

    name: str
    statistic: float
    p_value: float
    threshold: float = THRESHOLD
    n: str = ""
    details: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.p_value <= 1.0:
            raise StatsError(f"p-value {self.p_value} outside [0, 1]")

    @property
    def passed(self) -> bool:
        return self.p_value > self.threshold

    HEADER = ("name", "statistic", "p_value", "threshold", "pass", "n")

    def row(self) -> Tuple[str, ...]:
        return (self.name, format(self.statistic, ".17g"), format(self.p_value, ".17g"),
                format(self.threshold, ".17g"), "true" if self.passed else "false", self.n)

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        extra = " ".join(f"{k}={v:.6g}" for k, v in self.details.items())
        return (f"{verdict} {self.name}: statistic={self.statistic:.6g} p={self.p_value:.4g} "
                f"threshold={self.threshold:.4g} n={self.n} {extra}").rstrip()


def _n(*sizes) -> str:
    return ";".join(str(int(s)) for s in sizes)


# ----------------------------------------------------------------------------
# Kolmogorov-Smirnov
# ----------------------------------------------------------------------------


def kolmogorov_sf(x: float, max_terms: int = 100) -> float:
    """``P{K > x}`` for the Kolmogorov distribution.

    Uses the alternating series ``2 sum (-1)^(k-1) exp(-2 k^2 x^2)`` for
    ``x >= 1`` and the theta-function form of the CDF below that, where the
    alternating series converges slowly.  Summation stops once a term drops
    below 1e-12 (after at least 25 terms are available).
    """
    if x <= 0:
        return 1.0
    if x >= 1.0:
        total = 0.0
        for k in range(1, max_terms + 1):
            term = math.exp(-2.0 * k * k * x * x)
            total += term if k % 2 else -term
            if term < 1e-12:
                break
        return min(1.0, max(0.0, 2.0 * total))
    c = math.pi**2 / (8.0 * x * x)
    total = 0.0
    for k in range(1, max_terms + 1):
        term = math.exp(-((2 * k - 1) ** 2) * c)
        total += term
        if term < 1e-12:
            break
    cdf = math.sqrt(2.0 * math.pi) / x * total
    return min(1.0, max(0.0, 1.0 - cdf))


def ks_test(sample: Sequence[float], cdf: Callable[[np.ndarray], np.ndarray], name: str = "ks",
            threshold: float = THRESHOLD) -> TestReport:
    """One-sample KS test with the asymptotic Kolmogorov p-value."""
    x = np.sort(np.asarray(sample, dtype=float))
    n = x.size
    if n == 0:
        raise StatsError("KS test needs a nonempty sample")
    F = np.clip(np.asarray(cdf(x), dtype=float), 0.0, 1.0)
    i = np.arange(1, n + 1)
    d = float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))
    return TestReport(name, d, kolmogorov_sf(math.sqrt(n) * d), threshold, _n(n))


def uniform_cdf(r: float) -> Callable[[np.ndarray], np.ndarray]:
    return lambda x: np.clip(np.asarray(x) / r, 0.0, 1.0)


def exponential_cdf(rate: float) -> Callable[[np.ndarray], np.ndarray]:
    return lambda x: -np.expm1(-rate * np.maximum(np.asarray(x), 0.0))


# ----------------------------------------------------------------------------
# Chi-square
# ----------------------------------------------------------------------------


def histograms(x: Sequence[int], y: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
    """Aligned count histograms of two nonnegative integer samples."""
    x = np.asarray(x, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    if (x.size and x.min() < 0) or (y.size and y.min() < 0):
        raise StatsError("histograms need nonnegative integers")
    top = int(max(x.max(initial=0), y.max(initial=0))) + 1
    return np.bincount(x, minlength=top), np.bincount(y, minlength=top)


def _merge_bins(a: np.ndarray, b: np.ndarray, min_expected: float) -> Tuple[np.ndarray, np.ndarray]:
    na, nb = a.sum(), b.sum()
    fa, fb = na / (na + nb), nb / (na + nb)
    out_a, out_b = [], []
    ca = cb = 0
    for x, y in zip(a, b):
        ca += x
        cb += y
        pooled = ca + cb
        if pooled * fa >= min_expected and pooled * fb >= min_expected:
            out_a.append(ca)
            out_b.append(cb)
            ca = cb = 0
    if ca or cb:
        if out_a:
            out_a[-1] += ca
            out_b[-1] += cb
        else:
            out_a.append(ca)
            out_b.append(cb)
    return np.asarray(out_a, dtype=float), np.asarray(out_b, dtype=float)


def chi_square_two_sample(counts_a: Sequence[int], counts_b: Sequence[int], name: str = "chi2",
                          threshold: float = THRESHOLD, min_expected: float = 5.0) -> TestReport:
    """Two-sample chi-square homogeneity test on histograms over shared bins.

    Adjacent bins are merged left to right until each pooled bin has an
    expected count of at least ``min_expected`` in both samples; leftover
    tail mass joins the last bin.
    """
    a = np.asarray(counts_a, dtype=float)
    b = np.asarray(counts_b, dtype=float)
    if a.shape != b.shape:
        raise StatsError(f"histograms must share bins: {a.shape} vs {b.shape}")
    if np.any(a < 0) or np.any(b < 0):
        raise StatsError("histogram counts must be >= 0")
    na, nb = a.sum(), b.sum()
    if na == 0 or nb == 0:
        raise StatsError("both histograms need at least one observation")
    ma, mb = _merge_bins(a, b, min_expected)
    k = ma.size
    if k < 2:
        return TestReport(name, 0.0, 1.0, threshold, _n(na, nb), {"bins": float(k)})
    s1 = math.sqrt(nb / na)
    s2 = math.sqrt(na / nb)
    stat = float(np.sum((s1 * ma - s2 * mb) ** 2 / (ma + mb)))
    p = float(chi2.sf(stat, k - 1))
    return TestReport(name, stat, p, threshold, _n(na, nb), {"bins": float(k)})


def chi_square_samples(x: Sequence[int], y: Sequence[int], name: str = "chi2",
                       threshold: float = THRESHOLD) -> TestReport:
    """Chi-square homogeneity test on two integer samples."""
    ha, hb = histograms(x, y)
    return chi_square_two_sample(ha, hb, name, threshold)


def chi_square_vectors(x: np.ndarray, y: np.ndarray, name: str = "chi2",
                       threshold: float = THRESHOLD) -> TestReport:
    """Chi-square homogeneity test on the joint law of integer vectors (rows)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.int64))
    y = np.atleast_2d(np.asarray(y, dtype=np.int64))
    keys = sorted(set(map(tuple, x)) | set(map(tuple, y)), key=lambda k: (sum(k), k))
    index = {k: i for i, k in enumerate(keys)}
    ha = np.bincount([index[tuple(v)] for v in x], minlength=len(keys))
    hb = np.bincount([index[tuple(v)] for v in y], minlength=len(keys))
    return chi_square_two_sample(ha, hb, name, threshold)


# ----------------------------------------------------------------------------
# Estimators and z-type reports
# ----------------------------------------------------------------------------


def mean_with_se(sample: Sequence[float]) -> Tuple[float, float]:
    x = np.asarray(sample, dtype=float)
    if x.size == 0:
        raise StatsError("empty sample")
    if x.size == 1:
        return float(x[0]), math.inf
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def binomial_ci(successes: int, trials: int, z: float = 3.0) -> Tuple[float, float]:
    """Normal-approximation interval ``p +- z sqrt(p(1-p)/n)`` clipped to [0, 1]."""
    if trials <= 0:
        raise StatsError("trials must be > 0")
    if not 0 <= successes <= trials:
        raise StatsError("successes must lie in [0, trials]")
    p = successes / trials
    half = z * math.sqrt(p * (1 - p) / trials)
    return max(0.0, p - half), min(1.0, p + half)


def z_report(name: str, z: float, n, details: Optional[Dict[str, float]] = None,
             threshold: float = THREE_SE) -> TestReport:
    """Report for a ``|z| <= 3`` style check; passes iff ``|z| < 3`` by default."""
    p = 0.0 if math.isinf(z) else float(2 * norm.sf(abs(z)))
    return TestReport(name, float(z), p, threshold, _n(n) if not isinstance(n, str) else n, details or {})


def mean_report(name: str, sample: Sequence[float], target: float, details=None) -> TestReport:
    m, se = mean_with_se(sample)
    z = (m - target) / se if se > 0 else (0.0 if m == target else math.inf)
    d = {"mean": m, "se": se, "target": target}
    d.update(details or {})
    return z_report(name, z, len(sample), d)


def binomial_report(name: str, successes: int, trials: int, target: float) -> TestReport:
    """z-test of an observed frequency against ``target`` with the null SE."""
    se = math.sqrt(target * (1 - target) / trials)
    freq = successes / trials
    z = (freq - target) / se if se > 0 else (0.0 if freq == target else math.inf)
    return z_report(name, z, trials, {"freq": freq, "target": target, "se": se})


def tolerance_report(name: str, value: float, target: float, rel_tol: float, n) -> TestReport:
    """Deterministic relative-tolerance check.

    There is no sampling distribution here, so the verdict is encoded as
    ``p_value`` 1 (within tolerance) or 0 (outside) against threshold 0.5;
    ``statistic`` is the relative error.
    """
    rel = abs(value - target) / abs(target)
    ok = rel <= rel_tol
    return TestReport(name, rel, 1.0 if ok else 0.0, 0.5, _n(n) if not isinstance(n, str) else n,
                      {"value": value, "target": target, "rel_tol": rel_tol})


def exact_report(name: str, mismatches: int, n) -> TestReport:
    """Exact identity check: passes iff there are no mismatches."""
    return TestReport(name, float(mismatches), 1.0 if mismatches == 0 else 0.0, 0.5,
                      _n(n) if not isinstance(n, str) else n)
