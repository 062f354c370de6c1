"""Goodness-of-fit for exit times and exit-location fractions."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import norm

MIN_KS_SAMPLES = 8


class StatsError(ValueError):
    pass


def ecdf(samples):
    """Sorted sample and ECDF heights i/n at each order statistic."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    return x, np.arange(1, n + 1) / n


def kolmogorov_sf(x: float, rtol: float = 1e-10) -> float:
    """P(K > x) for the Kolmogorov distribution.

    Uses 2 Σ (-1)^{k-1} e^{-2k²x²}, truncated once a term falls below
    ``rtol`` relative to the partial sum.  Below x = 1 that series
    alternates slowly, so the dual theta series for P(K ≤ x) is used.
    """
    if x <= 0:
        return 1.0
    total = 0.0
    if x < 1.0:
        c = -math.pi**2 / (8.0 * x * x)
        k = 1
        while True:
            term = math.exp(c * (2 * k - 1) ** 2)
            total += term
            if term <= rtol * total or term == 0.0:
                break
            k += 1
        return float(min(max(1.0 - math.sqrt(2.0 * math.pi) / x * total, 0.0), 1.0))
    k = 1
    while True:
        term = 2.0 * math.exp(-2.0 * k * k * x * x)
        total += term if k % 2 else -term
        if term <= rtol * abs(total) or term == 0.0:
            break
        k += 1
    return float(min(max(total, 0.0), 1.0))


def ks_statistic(samples, cdf) -> float:
    x, F = ecdf(samples)
    n = x.size
    G = cdf(x)
    d_plus = np.max(F - G)
    d_minus = np.max(G - (np.arange(n) / n))
    return float(max(d_plus, d_minus))


@dataclass
class KsReport:
    n: int
    rate: float
    statistic: float
    p_value: float
    level: float
    passed: bool

    def to_dict(self):
        return asdict(self)


def ks_exponential(samples, rate: float, level: float = 0.01) -> KsReport:
    """One-sample KS test of ``samples`` against EXP(rate).

    The p-value is the asymptotic Kolmogorov tail at √n D_n.
    """
    s = np.asarray(samples, dtype=float)
    if s.size < MIN_KS_SAMPLES:
        raise StatsError(f"KS test needs at least {MIN_KS_SAMPLES} samples, got {s.size}")
    if not rate > 0:
        raise StatsError("rate must be positive")
    if np.any(~np.isfinite(s)) or np.any(s <= 0):
        raise StatsError("samples must be finite and positive")
    D = ks_statistic(s, lambda x: -np.expm1(-rate * x))
    p = kolmogorov_sf(math.sqrt(s.size) * D)
    return KsReport(int(s.size), float(rate), D, p, level, bool(p >= level))


def wilson_interval(k: int, n: int, conf: float = 0.99):
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        raise StatsError("need n > 0")
    z = float(norm.ppf(0.5 + conf / 2))
    p = k / n
    den = 1 + z * z / n
    c = (p + z * z / (2 * n)) / den
    hw = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    # the bounds are exactly 0 at k = 0 and 1 at k = n; rounding can miss them
    lo = 0.0 if k == 0 else max(0.0, c - hw)
    hi = 1.0 if k == n else min(1.0, c + hw)
    return lo, hi


def location_fraction(records, target):
    """Fraction of records whose exit point lies in ``target``."""
    recs = [r for r in records if r.usable]
    if not recs:
        raise StatsError("no untruncated records")
    pts = np.array([r.exit_point for r in recs])
    k = int(np.count_nonzero(target.contains(pts)))
    return k / len(recs), k


def location_fraction_test(records, target, predicted: float, conf: float = 0.99,
                           abs_tol: float = 0.0):
    """Whether ``predicted`` lies in the Wilson interval of the MC fraction.

    ``abs_tol`` widens the interval on both sides.
    """
    frac, k = location_fraction(records, target)
    n = sum(r.usable for r in records)
    lo, hi = wilson_interval(k, n, conf)
    return {
        "fraction": frac, "count": k, "n": n, "predicted": predicted,
        "interval": [lo, hi],
        "passed": bool(lo - abs_tol <= predicted <= hi + abs_tol),
    }
