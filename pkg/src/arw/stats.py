"""Interval estimates and the one-sided dominance test."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import EmptySample


def z_value(conf: float) -> float:
    return float(norm.ppf(0.5 + conf / 2.0))


def wilson_interval(k: int, n: int, conf: float = 0.99) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion k/n."""
    if n <= 0:
        return 0.0, 1.0
    z = z_value(conf)
    p = k / n
    den = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    lo = 0.0 if k == 0 else max(0.0, centre - half)
    hi = 1.0 if k == n else min(1.0, centre + half)
    return lo, hi


def mean_se(x) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return float("nan"), float("nan")
    if x.size == 1:
        return float(x[0]), 0.0
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def proportion_se(k: int, n: int) -> float:
    if n <= 0:
        return float("nan")
    p = k / n
    return math.sqrt(p * (1 - p) / n)


def dkw_epsilon(delta: float, n: int) -> float:
    """Half-width of the DKW uniform band for an empirical CDF of n samples."""
    return math.sqrt(math.log(2.0 / delta) / (2.0 * n))


def two_proportion_z(k1: int, n1: int, k2: int, n2: int) -> tuple[float, float]:
    """Pooled two-proportion z statistic and two-sided p-value."""
    p = (k1 + k2) / (n1 + n2)
    se = math.sqrt(p * (1 - p) * (1 / n1 + 1 / n2))
    if se == 0:
        return 0.0, 1.0
    z = (k1 / n1 - k2 / n2) / se
    return z, float(2 * norm.sf(abs(z)))


def ecdf_on(samples, support) -> np.ndarray:
    s = np.sort(np.asarray(samples))
    return np.searchsorted(s, support, side="right") / s.size


@dataclass(frozen=True)
class DominanceVerdict:
    """A is claimed to dominate B stochastically (F_A <= F_B everywhere)."""

    one_sided_stat: float
    threshold: float
    n_a: int
    n_b: int
    delta: float

    @property
    def passed(self) -> bool:
        return self.one_sided_stat <= self.threshold

    pass_ = passed


def dominance_test(samples_a, samples_b, delta: float = 0.01) -> DominanceVerdict:
    """Accept "A dominates B" unless max_x (F_A(x) - F_B(x)) exceeds the sum
    of the two DKW half-widths at level delta."""
    a = np.asarray(samples_a)
    b = np.asarray(samples_b)
    if a.size == 0 or b.size == 0:
        raise EmptySample("both samples must be non-empty")
    support = np.union1d(a, b)
    stat = float(np.max(ecdf_on(a, support) - ecdf_on(b, support)))
    thr = dkw_epsilon(delta, a.size) + dkw_epsilon(delta, b.size)
    return DominanceVerdict(stat, thr, int(a.size), int(b.size), delta)
