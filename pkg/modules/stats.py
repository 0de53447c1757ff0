#!/usr/bin/env python3
"""
Stats module for trimlab - empirical distributions and goodness-of-fit metrics

All statistics are deterministic functions of their input samples.
"""

import math
from dataclasses import dataclass, field, asdict
from typing import Any, Callable, Dict, List, Sequence, Tuple

import logging
import numpy as np
import scipy.stats
from scipy import special

from modules.errors import InsufficientTail

logger = logging.getLogger(__name__)

MIN_TAIL_SAMPLES = 100


@dataclass
class EmpiricalDistribution:
    sorted_samples: np.ndarray
    count: int

    @classmethod
    def from_samples(cls, samples: Sequence[float]) -> "EmpiricalDistribution":
        data = np.sort(np.asarray(samples, dtype=np.float64).reshape(-1))
        return cls(sorted_samples=data, count=int(data.shape[0]))

    def cdf(self, x) -> np.ndarray:
        return np.searchsorted(self.sorted_samples, x, side="right") / self.count

    def quantile(self, q: float) -> float:
        return float(np.quantile(self.sorted_samples, q))


@dataclass
class GofReport:
    name: str
    statistic: float
    threshold: float
    n_samples: int
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.statistic <= self.threshold)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["pass"] = self.passed
        return data


def _as_empirical(samples) -> EmpiricalDistribution:
    if isinstance(samples, EmpiricalDistribution):
        return samples
    return EmpiricalDistribution.from_samples(samples)


def ks_distance(samples, cdf: Callable[[np.ndarray], np.ndarray]) -> float:
    """sup_x |F_n(x) - F(x)|, attained at a sample point or just left of it"""
    emp = _as_empirical(samples)
    if emp.count < 1:
        raise ValueError("ks_distance needs at least one sample")
    return float(scipy.stats.kstest(emp.sorted_samples, cdf, method="asymp").statistic)


def ks_two_sample(a, b) -> float:
    """Sup-norm distance between two empirical CDFs"""
    ea, eb = _as_empirical(a), _as_empirical(b)
    if ea.count < 1 or eb.count < 1:
        raise ValueError("ks_two_sample needs two nonempty samples")
    return float(scipy.stats.ks_2samp(ea.sorted_samples, eb.sorted_samples, method="asymp").statistic)


def tv_distance_poisson(counts: Sequence[int], t: float, cutoff: int) -> float:
    """Total variation distance between an observed count histogram and Poisson(t).

    counts[j] is the number of observations equal to j. Cells beyond the
    cutoff are lumped into one tail cell on both sides.
    """
    if t <= 0:
        raise ValueError(f"t must be positive, got {t}")
    if cutoff < 10 * t:
        raise ValueError(f"cutoff {cutoff} below 10t = {10 * t}")
    hist = np.asarray(counts, dtype=np.float64)
    total = hist.sum()
    if total <= 0:
        raise ValueError("empty histogram")
    observed = np.zeros(cutoff + 1)
    head = hist[:cutoff + 1]
    observed[:head.shape[0]] = head / total
    expected = poisson_pmf(t, cutoff)
    tail = 0.5 * abs(hist[cutoff + 1:].sum() / total - scipy.stats.poisson.sf(cutoff, t))
    return float(0.5 * np.abs(observed - expected).sum() + tail)


def poisson_pmf(t: float, cutoff: int) -> np.ndarray:
    """P(X = j) for X ~ Poisson(t), j = 0..cutoff"""
    return scipy.stats.poisson.pmf(np.arange(cutoff + 1), t)


def normal_cdf(x, sigma2: float = 1.0):
    if sigma2 <= 0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    return 0.5 * (1.0 + special.erf(np.asarray(x) / math.sqrt(2.0 * sigma2)))


def sample_moments(samples: Sequence[float], up_to_k: int) -> List[float]:
    """[mean, m_2, ..., m_k]: the mean, then central moments, compensated sums throughout"""
    data = np.asarray(samples, dtype=np.float64).reshape(-1)
    if data.shape[0] == 0:
        raise ValueError("sample_moments needs samples")
    n = data.shape[0]
    mean = math.fsum(data) / n
    centered = data - mean
    out = [mean]
    power = centered.copy()
    for _ in range(2, up_to_k + 1):
        power = power * centered
        out.append(math.fsum(power) / n)
    return out


def hill_tail_slope(samples: Sequence[float], decade: Tuple[float, float]) -> float:
    """Least-squares slope of log CCDF against log x over the window [lo, hi]"""
    lo, hi = decade
    data = np.sort(np.asarray(samples, dtype=np.float64).reshape(-1))
    n = data.shape[0]
    # midpoint plotting positions: CCDF at the i-th order statistic is (n - i - 1/2)/n
    ccdf = (n - np.arange(n) - 0.5) / n
    mask = (data >= lo) & (data <= hi)
    if mask.sum() < MIN_TAIL_SAMPLES:
        raise InsufficientTail(f"Only {int(mask.sum())} samples in [{lo:g}, {hi:g}], need {MIN_TAIL_SAMPLES}")
    fit = scipy.stats.linregress(np.log(data[mask]), np.log(ccdf[mask]))
    return float(fit.slope)


def median_and_quartiles(values: Sequence[float]) -> Tuple[float, float, float]:
    emp = _as_empirical(values)
    return emp.quantile(0.5), emp.quantile(0.25), emp.quantile(0.75)


def nonincreasing(seq: Sequence[float], slack: float = 0.0) -> bool:
    return all(b <= a + slack for a, b in zip(seq, seq[1:]))


def strictly_decreasing(seq: Sequence[float]) -> bool:
    return all(b < a for a, b in zip(seq, seq[1:]))
