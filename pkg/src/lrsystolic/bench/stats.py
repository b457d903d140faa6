"""Confidence intervals and distribution distances used in experiment outputs."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

CONFIDENCE = 0.95
BINOMIAL_METHOD = "Clopper-Pearson exact binomial, 95%"
MEAN_METHOD = "Student t, 95%"


@dataclass(frozen=True)
class Interval:
    estimate: float
    low: float
    high: float

    @property
    def half_width(self) -> float:
        return (self.high - self.low) / 2.0


def clopper_pearson(errors: int, total: int, confidence: float = CONFIDENCE) -> Interval:
    if total <= 0:
        return Interval(math.nan, math.nan, math.nan)
    res = stats.binomtest(int(errors), int(total)).proportion_ci(confidence_level=confidence,
                                                                 method="exact")
    return Interval(errors / total, float(res.low), float(res.high))


def t_interval(samples, confidence: float = CONFIDENCE) -> Interval:
    x = np.asarray(samples, dtype=float)
    n = x.size
    if n == 0:
        return Interval(math.nan, math.nan, math.nan)
    mean = float(x.mean())
    if n == 1:
        return Interval(mean, math.nan, math.nan)
    sem = float(x.std(ddof=1)) / math.sqrt(n)
    h = float(stats.t.ppf(0.5 + confidence / 2.0, n - 1)) * sem
    return Interval(mean, mean - h, mean + h)


def ks_distance(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov statistic (sup distance between empirical CDFs)."""
    # only the statistic is used, and it does not depend on the p-value method
    return float(stats.ks_2samp(np.asarray(a), np.asarray(b), method="asymp").statistic)


def empirical_cdf(samples):
    """Sorted samples with CDF values ``k / n`` for ``k = 1..n``."""
    x = np.sort(np.asarray(samples, dtype=float))
    return x, np.arange(1, x.size + 1) / x.size
