#!/usr/bin/env python3
"""
Poisson point process module for trimlab - (trimmed) PPPs on the half-line and the reference law Y

Y is the limit of sum_{x in Lambda^K, x < R} x^-alpha - c_R, where Lambda^K
is a rate-one PPP with its K points closest to 0 removed. c_R is the
untrimmed mean on [1, R); the head [0, 1) enters uncentered.
"""

import math
from dataclasses import dataclass
from typing import List, Sequence

import logging
import numpy as np
from numba import njit

from modules.errors import WrongRegime

logger = logging.getLogger(__name__)

# points per batch when sampling many PPP paths at once
BATCH_POINTS = 4_000_000


@dataclass
class PppSample:
    arrivals: np.ndarray
    horizon: float

    def count(self, t: float) -> int:
        """#(Lambda ∩ [0, t))"""
        return int(np.searchsorted(self.arrivals, t, side="left"))


@dataclass(frozen=True)
class TrimmedPppLaw:
    K: int
    alpha: float
    coupling: float = 1.0
    c_R: float = 0.0

    @property
    def moment_threshold(self) -> float:
        """E|Y|^p is finite exactly for p below this"""
        return (self.K + 1) / self.alpha

    def has_finite_moment(self, p: float) -> bool:
        return p < self.moment_threshold

    def validate(self) -> None:
        if self.alpha <= 0.5:
            raise WrongRegime(f"Reference law needs alpha > 1/2, got {self.alpha}")
        if self.alpha >= 1.0 and self.K < 1:
            raise WrongRegime(f"alpha={self.alpha} >= 1 needs K >= 1: the untrimmed head has infinite mean")


def sample_ppp(R: float, rng: np.random.Generator) -> PppSample:
    """Rate-one PPP on [0, R) from cumulative exponential spacings"""
    if R <= 0:
        raise ValueError(f"Horizon must be positive, got {R}")
    chunk = int(R + 5.0 * math.sqrt(R) + 10)
    pieces = []
    last = 0.0
    while True:
        times = last + np.cumsum(rng.standard_exponential(chunk))
        pieces.append(times[times < R])
        if times[-1] >= R:
            break
        last = times[-1]
    return PppSample(arrivals=np.concatenate(pieces), horizon=float(R))


def trimmed_count(sample: PppSample, K: int, t: float) -> int:
    """#(Lambda^K ∩ [0, t)), counted from the arrivals beyond the K-th"""
    return int(np.count_nonzero(sample.arrivals[K:] < t))


def centering_c_R(alpha: float, R: float, asymptotic: bool = False) -> float:
    """Integral of x^-alpha over [1, R); zero for alpha > 1 in asymptotic mode"""
    if R < 1.0:
        raise ValueError(f"c_R needs R >= 1, got {R}")
    if alpha > 1.0 and asymptotic:
        return 0.0
    if math.isclose(alpha, 1.0):
        return math.log(R)
    return (R ** (1.0 - alpha) - 1.0) / (1.0 - alpha)


def trimmed_ppp_sum(sample: PppSample, K: int, alpha: float, R: float = None, asymptotic: bool = False) -> float:
    """sum over Lambda^K ∩ [0, R) of x^-alpha, minus c_R"""
    if alpha <= 0.5:
        raise WrongRegime(f"Trimmed PPP sum needs alpha > 1/2, got {alpha}")
    R = sample.horizon if R is None else R
    kept = sample.arrivals[K:]
    kept = kept[kept < R]
    return math.fsum(kept ** (-alpha)) - centering_c_R(alpha, R, asymptotic)


# -------------------------
# CUMULANTS AND MOMENTS
# -------------------------
def cumulant(k: int, alpha: float, nlo: float, nhi: float) -> float:
    """k-th cumulant of the centered sum of x^-alpha over Lambda ∩ [nlo, nhi)"""
    if k == 1:
        return 0.0
    p = k * alpha
    if math.isclose(p, 1.0):
        return math.log(nhi / nlo)
    return (nhi ** (1.0 - p) - nlo ** (1.0 - p)) / (1.0 - p)


def moments_from_cumulants(kappas: Sequence[float]) -> List[float]:
    """Raw moments m_1..m_n from cumulants kappa_1..kappa_n.

    m_k = sum_j C(k-1, j-1) kappa_j m_{k-j}, the recursive form of the
    partial Bell polynomial expansion.
    """
    m = [1.0]
    for k in range(1, len(kappas) + 1):
        m.append(math.fsum(math.comb(k - 1, j - 1) * kappas[j - 1] * m[k - j] for j in range(1, k + 1)))
    return m[1:]


def bell_leading_term(k: int, kappa2: float) -> float:
    """k!/((k/2)! 2^(k/2)) kappa_2^(k/2), the pair-partition term of m_k"""
    if k % 2:
        return 0.0
    return math.factorial(k) / (math.factorial(k // 2) * 2 ** (k // 2)) * kappa2 ** (k // 2)


# -------------------------
# BATCH SAMPLERS
# -------------------------
@njit(cache=True)
def _segment_sums(points, offsets, K, alpha, out):
    """Per segment: sum of x^-alpha over the points, skipping the K smallest"""
    size = max(K, 1)
    best_x = np.empty(size)
    best_i = np.empty(size, dtype=np.int64)
    for s in range(out.shape[0]):
        lo = offsets[s]
        hi = offsets[s + 1]
        m = 0
        for j in range(lo, hi):
            x = points[j]
            if m < K:
                pos = m
                m += 1
            elif K > 0 and x < best_x[K - 1]:
                pos = K - 1
            else:
                continue
            while pos > 0 and best_x[pos - 1] > x:
                best_x[pos] = best_x[pos - 1]
                best_i[pos] = best_i[pos - 1]
                pos -= 1
            best_x[pos] = x
            best_i[pos] = j
        total = 0.0
        comp = 0.0
        for j in range(lo, hi):
            skip = False
            for q in range(m):
                if best_i[q] == j:
                    skip = True
                    break
            if skip:
                continue
            v = points[j] ** (-alpha)
            t = total + v
            if abs(total) >= abs(v):
                comp += (total - t) + v
            else:
                comp += (v - t) + total
            total = t
        out[s] = total + comp


def _poisson_paths(lo: float, hi: float, K: int, alpha: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """n independent sums over a rate-one PPP on [lo, hi), K closest-to-0 points removed.

    Given its count, a PPP on an interval is a set of i.i.d. uniform points,
    which lets whole batches be drawn at once.
    """
    width = hi - lo
    batch = max(1, int(BATCH_POINTS // max(width, 1.0)))
    out = np.empty(n)
    done = 0
    while done < n:
        b = min(batch, n - done)
        counts = rng.poisson(width, size=b)
        offsets = np.zeros(b + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        points = lo + width * rng.random(int(offsets[-1]))
        _segment_sums(points, offsets, K, alpha, out[done:done + b])
        done += b
    return out


def reference_law(K: int, alpha: float, R: float, coupling: float = 1.0) -> TrimmedPppLaw:
    """Law with the centering convention shared with the dynamical side (c_R = 0 for alpha > 1)"""
    return TrimmedPppLaw(K=K, alpha=alpha, coupling=coupling, c_R=centering_c_R(alpha, R, asymptotic=True))


def sample_reference_law(law: TrimmedPppLaw, R: float, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """n_samples draws of coupling * (trimmed PPP sum on [0, R) - c_R), an R-truncated surrogate for Y"""
    law.validate()
    logger.info(f"Sampling {n_samples} reference draws (K={law.K}, alpha={law.alpha}, R={R:g})")
    sums = _poisson_paths(0.0, R, law.K, law.alpha, n_samples, rng)
    return law.coupling * (sums - law.c_R)


def sample_window_sums(alpha: float, nlo: float, nhi: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Untrimmed sums of x^-alpha over Lambda ∩ [nlo, nhi)"""
    return _poisson_paths(nlo, nhi, 0, alpha, n, rng)
