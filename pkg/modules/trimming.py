#!/usr/bin/env python3
"""
Trimming module for trimlab - one-pass untrimmed, value-trimmed and distance-trimmed Birkhoff sums

S_N^k removes the k largest terms of the sum, S-hat_N^k removes the terms at
the k orbit points closest to the singular site. Both are read off at every
checkpoint from two bounded heaps of size k(N_max); ties keep the earliest
orbit index.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple, Union

import logging
import numpy as np
from numba import njit

from config import CHUNK_SIZE
from modules.dynsys import OrbitState, SystemModel, generate_orbit
from modules.errors import ConfigError, InsufficientPoints
from modules.observables import Observable, evaluate_many

logger = logging.getLogger(__name__)


class TrimMode(Enum):
    NONE = "none"
    LIGHT = "light"
    INTERMEDIATE = "inter"


class Schedule(Enum):
    POWER_LAW = "pow"
    POLY_LOG = "polylog"


@dataclass(frozen=True)
class TrimSpec:
    mode: TrimMode
    K: int = 0
    schedule: Optional[Schedule] = None
    exponent: float = 0.0

    def k(self, N: int) -> int:
        """Number of terms trimmed from a sum of N terms"""
        if self.mode is TrimMode.NONE:
            return 0
        if self.mode is TrimMode.LIGHT:
            return self.K
        if self.schedule is Schedule.POWER_LAW:
            raw = N ** self.exponent
        else:
            raw = math.log(N) ** self.exponent if N > 1 else 0.0
        return int(math.ceil(round(raw, 9)))

    @classmethod
    def light(cls, K: int) -> "TrimSpec":
        return cls(TrimMode.LIGHT, K=K)

    @classmethod
    def parse(cls, text: str) -> "TrimSpec":
        """Parse `none`, `light:K`, `inter:pow:gamma` or `inter:polylog:p`"""
        parts = str(text).strip().lower().split(":")
        try:
            if parts == ["none"]:
                return cls(TrimMode.NONE)
            if parts[0] == "light" and len(parts) == 2:
                K = int(parts[1])
                if K < 0:
                    raise ConfigError(f"Light trimming needs K >= 0, got {K}", field="trim")
                return cls(TrimMode.LIGHT, K=K)
            if parts[0] == "inter" and len(parts) == 3:
                schedule = Schedule(parts[1])
                exponent = float(parts[2])
                if schedule is Schedule.POWER_LAW and not 0.0 < exponent < 1.0:
                    raise ConfigError(f"Power-law schedule needs 0 < gamma < 1, got {exponent}", field="trim")
                if schedule is Schedule.POLY_LOG and exponent <= 0.0:
                    raise ConfigError(f"Polylog schedule needs p > 0, got {exponent}", field="trim")
                return cls(TrimMode.INTERMEDIATE, schedule=schedule, exponent=exponent)
        except ValueError:
            pass
        raise ConfigError(f"Cannot parse trim '{text}' (use none, light:K, inter:pow:G, inter:polylog:P)",
                          field="trim")

    def __str__(self) -> str:
        if self.mode is TrimMode.NONE:
            return "none"
        if self.mode is TrimMode.LIGHT:
            return f"light:{self.K}"
        return f"inter:{self.schedule.value}:{self.exponent:g}"


@dataclass
class Checkpoint:
    N: int
    S: float
    S_trim: float
    S_hat: float
    k: int
    max_value_removed: Optional[float] = None
    kth_distance: Optional[float] = None
    top_indices: Tuple[int, ...] = ()
    closest_indices: Tuple[int, ...] = ()


@dataclass
class TrimmedSeries:
    trim: TrimSpec
    checkpoints: List[Checkpoint] = field(default_factory=list)


# -------------------------
# HEAP KERNELS
# -------------------------
# Both heaps keep their worst element at the root. For the largest values
# "worse" means smaller value, then later index; for the closest points it
# means larger distance, then later index.

@njit(cache=True)
def _worse(key_a, idx_a, key_b, idx_b, largest):
    if key_a != key_b:
        return key_a < key_b if largest else key_a > key_b
    return idx_a > idx_b


@njit(cache=True)
def _swap(keys, idxs, payload, a, b):
    keys[a], keys[b] = keys[b], keys[a]
    idxs[a], idxs[b] = idxs[b], idxs[a]
    payload[a], payload[b] = payload[b], payload[a]


@njit(cache=True)
def _sift_up(keys, idxs, payload, pos, largest):
    while pos > 0:
        parent = (pos - 1) // 2
        if not _worse(keys[pos], idxs[pos], keys[parent], idxs[parent], largest):
            break
        _swap(keys, idxs, payload, pos, parent)
        pos = parent


@njit(cache=True)
def _sift_down(keys, idxs, payload, size, largest):
    pos = 0
    while True:
        left = 2 * pos + 1
        if left >= size:
            break
        child = left
        right = left + 1
        if right < size and _worse(keys[right], idxs[right], keys[left], idxs[left], largest):
            child = right
        if not _worse(keys[child], idxs[child], keys[pos], idxs[pos], largest):
            break
        _swap(keys, idxs, payload, pos, child)
        pos = child


@njit(cache=True)
def _offer(keys, idxs, payload, size, kmax, key, idx, extra, largest):
    """Offer (key, idx, extra) to a bounded heap; returns the new size"""
    if size < kmax:
        keys[size] = key
        idxs[size] = idx
        payload[size] = extra
        _sift_up(keys, idxs, payload, size, largest)
        return size + 1
    # a newcomer has the latest index, so it only enters on a strictly better key
    if (key > keys[0]) if largest else (key < keys[0]):
        keys[0] = key
        idxs[0] = idx
        payload[0] = extra
        _sift_down(keys, idxs, payload, size, largest)
    return size


@njit(cache=True)
def _scan(values, dists, idx0, kmax, top_v, top_i, top_d, near_d, near_i, near_v, sizes, acc):
    s = acc[0]
    c = acc[1]
    n_top = sizes[0]
    n_near = sizes[1]
    for j in range(values.shape[0]):
        v = values[j]
        t = s + v
        if abs(s) >= abs(v):
            c += (s - t) + v
        else:
            c += (v - t) + s
        s = t
        if kmax > 0:
            n_top = _offer(top_v, top_i, top_d, n_top, kmax, v, idx0 + j, dists[j], True)
            n_near = _offer(near_d, near_i, near_v, n_near, kmax, dists[j], idx0 + j, v, False)
    acc[0] = s
    acc[1] = c
    sizes[0] = n_top
    sizes[1] = n_near


class StreamingTrimmer:
    """Running sum plus bounded heaps of the kmax largest values and kmax closest points"""

    def __init__(self, kmax: int):
        self.kmax = int(kmax)
        size = max(self.kmax, 1)
        self.top_values = np.zeros(size)
        self.top_index = np.zeros(size, dtype=np.int64)
        self.top_dist = np.zeros(size)
        self.near_dist = np.zeros(size)
        self.near_index = np.zeros(size, dtype=np.int64)
        self.near_values = np.zeros(size)
        self.sizes = np.zeros(2, dtype=np.int64)
        self.acc = np.zeros(2)
        self.count = 0

    def feed(self, values: np.ndarray, dists: np.ndarray) -> None:
        values = np.ascontiguousarray(values, dtype=np.float64)
        dists = np.ascontiguousarray(dists, dtype=np.float64)
        _scan(values, dists, self.count, self.kmax, self.top_values, self.top_index, self.top_dist,
              self.near_dist, self.near_index, self.near_values, self.sizes, self.acc)
        self.count += values.shape[0]

    @property
    def total(self) -> float:
        return float(self.acc[0] + self.acc[1])

    def snapshot(self, k: int) -> Checkpoint:
        N = self.count
        if k >= N:
            raise InsufficientPoints(f"Cannot trim k={k} terms from a sum of N={N}")
        if k > self.kmax:
            raise ValueError(f"k={k} exceeds the heap capacity {self.kmax}")
        S = self.total
        if k == 0:
            return Checkpoint(N=N, S=S, S_trim=S, S_hat=S, k=0)
        n_top, n_near = int(self.sizes[0]), int(self.sizes[1])
        tv, ti = self.top_values[:n_top], self.top_index[:n_top]
        order = np.lexsort((ti, -tv))[:k]
        nd, ni = self.near_dist[:n_near], self.near_index[:n_near]
        near = np.lexsort((ni, nd))[:k]
        return Checkpoint(
            N=N,
            S=S,
            S_trim=S - math.fsum(tv[order]),
            S_hat=S - math.fsum(self.near_values[:n_near][near]),
            k=k,
            max_value_removed=float(tv[order[0]]),
            kth_distance=float(nd[near[-1]]),
            top_indices=tuple(int(i) for i in ti[order]),
            closest_indices=tuple(int(i) for i in ni[near]),
        )


def _check_checkpoints(checkpoints: Sequence[int]) -> List[int]:
    cps = [int(n) for n in checkpoints]
    if not cps or cps[0] < 1 or any(b <= a for a, b in zip(cps, cps[1:])):
        raise ConfigError(f"Checkpoints must be positive and strictly increasing: {cps}", field="checkpoints")
    return cps


def _as_trim(trim: Union[TrimSpec, int]) -> TrimSpec:
    return trim if isinstance(trim, TrimSpec) else TrimSpec.light(int(trim))


def run_trimmed_stream(values: Sequence[float], distances: Sequence[float], trim: Union[TrimSpec, int],
                       checkpoints: Sequence[int]) -> TrimmedSeries:
    """Trimmed sums of an explicit value stream at each checkpoint"""
    trim = _as_trim(trim)
    cps = _check_checkpoints(checkpoints)
    values = np.asarray(values, dtype=np.float64)
    distances = np.asarray(distances, dtype=np.float64)
    if cps[-1] > values.shape[0]:
        raise ValueError(f"Stream has {values.shape[0]} terms, last checkpoint is {cps[-1]}")
    trimmer = StreamingTrimmer(trim.k(cps[-1]))
    series = TrimmedSeries(trim)
    done = 0
    for N in cps:
        trimmer.feed(values[done:N], distances[done:N])
        done = N
        series.checkpoints.append(trimmer.snapshot(trim.k(N)))
    return series


def run_trimmed_series(system: SystemModel, obs: Observable, trim: Union[TrimSpec, int], x0: OrbitState,
                       checkpoints: Sequence[int], chunk_size: int = CHUNK_SIZE) -> TrimmedSeries:
    """One pass over the orbit of x0, emitting S, S^k and S-hat^k at each checkpoint"""
    trim = _as_trim(trim)
    cps = _check_checkpoints(checkpoints)
    for N in cps:
        if trim.k(N) >= N:
            raise InsufficientPoints(f"Trim {trim} removes k={trim.k(N)} terms at N={N}")
    trimmer = StreamingTrimmer(trim.k(cps[-1]))
    series = TrimmedSeries(trim)
    state = x0
    for N in cps:
        while trimmer.count < N:
            points, state = generate_orbit(system, state, min(chunk_size, N - trimmer.count))
            values, dists = evaluate_many(obs, system, points)
            trimmer.feed(values, dists)
        series.checkpoints.append(trimmer.snapshot(trim.k(N)))
    return series


def trimmed_sum_bruteforce(values: Sequence[float], distances: Sequence[float], k: int) -> Tuple[float, float]:
    """(S^k, S-hat^k) by full sorting; the reference the streaming sums are checked against"""
    top, closest = bruteforce_indices(values, distances, k)
    S = math.fsum(values)
    return S - math.fsum(values[i] for i in top), S - math.fsum(values[i] for i in closest)


def bruteforce_indices(values: Sequence[float], distances: Sequence[float], k: int) -> Tuple[List[int], List[int]]:
    if len(values) != len(distances):
        raise ValueError("values and distances differ in length")
    values, distances = [float(v) for v in values], [float(d) for d in distances]
    n = len(values)
    top = sorted(range(n), key=lambda i: (-values[i], i))[:k]
    closest = sorted(range(n), key=lambda i: (distances[i], i))[:k]
    return top, closest


# -------------------------
# BALL HIT COUNTS
# -------------------------
@dataclass
class BallCounts:
    radii: np.ndarray
    counts: np.ndarray
    closest: np.ndarray
    state: Optional[OrbitState] = None

    def clipped(self, K: int) -> np.ndarray:
        """max(count - K, 0)"""
        return np.maximum(self.counts - K, 0)

    def trimmed(self, K: int) -> np.ndarray:
        """Hits left after dropping the K orbit points closest to the site"""
        if K > self.closest.shape[0]:
            raise ValueError(f"Only {self.closest.shape[0]} closest distances tracked, asked for K={K}")
        near = self.closest[:K]
        return self.counts - np.array([(near < r).sum() for r in self.radii], dtype=np.int64)


def count_ball_hits(system: SystemModel, site, x0: OrbitState, N: int, radii: Sequence[float],
                    closest_k: int = 0, chunk_size: int = CHUNK_SIZE) -> BallCounts:
    """Hits of the open balls B_r(site) by the first N orbit points, for each radius"""
    radii = np.asarray(radii, dtype=np.float64)
    if np.any(np.diff(radii) < 0):
        raise ValueError(f"Radii must be nondecreasing: {radii}")
    counts = np.zeros(radii.shape[0], dtype=np.int64)
    closest = np.empty(0)
    state, done = x0, 0
    while done < N:
        n = min(chunk_size, N - done)
        points, state = generate_orbit(system, state, n)
        dists = system.distances(points, site)
        # number of radii <= d: the point lies in every ball from that position on
        pos = np.searchsorted(radii, dists, side="right")
        counts += np.cumsum(np.bincount(pos, minlength=radii.shape[0] + 1))[:radii.shape[0]]
        if closest_k:
            merged = np.concatenate((closest, dists))
            if merged.shape[0] > closest_k:
                merged = np.partition(merged, closest_k - 1)[:closest_k]
            closest = np.sort(merged)
        done += n
    return BallCounts(radii=radii, counts=counts, closest=closest, state=state)


# -------------------------
# SUPERLEVEL HIT COUNTS
# -------------------------
def count_superlevel_hits(system: SystemModel, obs: Observable, x0: OrbitState, checkpoints: Sequence[int],
                          cuts: Sequence[float], chunk_size: int = CHUNK_SIZE) -> np.ndarray:
    """Row j holds, for every cut, how many of the first checkpoints[j] orbit points have f >= cut"""
    cps = _check_checkpoints(checkpoints)
    cuts = np.asarray(cuts, dtype=np.float64)
    order = np.argsort(cuts, kind="stable")
    sorted_cuts = cuts[order]
    m = cuts.shape[0]
    running = np.zeros(m, dtype=np.int64)
    out = np.zeros((len(cps), m), dtype=np.int64)
    state, done = x0, 0
    for j, N in enumerate(cps):
        while done < N:
            n = min(chunk_size, N - done)
            points, state = generate_orbit(system, state, n)
            values, _ = evaluate_many(obs, system, points)
            # a value is counted for the sorted cuts before its insertion position
            pos = np.searchsorted(sorted_cuts, values, side="right")
            running += n - np.cumsum(np.bincount(pos, minlength=m + 1))[:m]
            done += n
        out[j, order] = running
    return out
