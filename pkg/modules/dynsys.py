#!/usr/bin/env python3
"""
Dynamical systems module for trimlab - the maps whose orbits feed every Birkhoff sum

Four concrete systems are provided: an i.i.d. uniform baseline, the doubling
map realized exactly as a shift over a fair-bit stream, Arnold's cat map in
128-bit fixed point, and the Gauss map in double precision.
"""

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
from typing import Dict, Optional, Sequence, Tuple

import logging
import numpy as np
from numba import njit
from scipy.optimize import brentq

from modules.errors import ConfigError, DegenerateState
from modules.rng import U64_MASK, raw_word, raw_words

logger = logging.getLogger(__name__)

U128_MASK = (1 << 128) - 1
TWO_M53 = 2.0 ** -53
LN2 = math.log(2.0)

# largest denominator treated as "rational" when screening singular sites
SITE_MAX_DENOMINATOR = 10 ** 6


class SystemId(Enum):
    IID_UNIFORM = "iid"
    DOUBLING = "doubling"
    CATMAP = "catmap"
    GAUSS = "gauss"


@dataclass(frozen=True)
class SystemModel:
    system_id: SystemId
    dimension: int
    wraps: bool
    mixing: str = ""

    @property
    def name(self) -> str:
        return self.system_id.value

    def density_at(self, point) -> float:
        """Invariant density at `point`"""
        x = _coords(point)
        if any(c < 0.0 or c > 1.0 for c in x):
            return 0.0
        if self.system_id is SystemId.GAUSS:
            return 1.0 / ((1.0 + x[0]) * LN2)
        return 1.0

    def metric(self, a, b) -> float:
        return torus_distance(self, a, b)

    def distances(self, points: np.ndarray, site: Sequence[float]) -> np.ndarray:
        """Vectorized distance of each row of `points` to `site`"""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, self.dimension)
        diff = np.abs(pts - np.asarray(site, dtype=np.float64))
        if self.wraps:
            diff = np.minimum(diff, 1.0 - diff)
        if self.dimension == 1:
            return diff[:, 0]
        return np.sqrt(np.sum(diff * diff, axis=1))


SYSTEMS: Dict[SystemId, SystemModel] = {
    SystemId.IID_UNIFORM: SystemModel(SystemId.IID_UNIFORM, 1, False, "independent"),
    SystemId.DOUBLING: SystemModel(SystemId.DOUBLING, 1, True, "exponentially mixing"),
    SystemId.CATMAP: SystemModel(SystemId.CATMAP, 2, True, "exponentially mixing of all orders"),
    SystemId.GAUSS: SystemModel(SystemId.GAUSS, 1, False, "exponentially mixing"),
}


def get_system(name: str) -> SystemModel:
    try:
        return SYSTEMS[SystemId(name)]
    except ValueError:
        choices = ", ".join(s.value for s in SystemId)
        raise ConfigError(f"Unknown system '{name}' (choose from {choices})", field="system")


@dataclass
class OrbitState:
    """Exact state of one orbit.

    words holds the integer state: (window, pending, bits_left) for the
    doubling shift and (X, Y) 128-bit fixed-point integers for the cat map.
    x holds the real state of the Gauss and i.i.d. models.
    """
    system_id: SystemId
    step_index: int = 0
    words: Tuple[int, ...] = ()
    x: float = 0.0
    rng: Optional[np.random.Generator] = field(default=None, repr=False, compare=False)

    def point(self) -> Tuple[float, ...]:
        if self.system_id is SystemId.DOUBLING:
            return ((self.words[0] >> 11) * TWO_M53,)
        if self.system_id is SystemId.CATMAP:
            return ((self.words[0] >> 75) * TWO_M53, (self.words[1] >> 75) * TWO_M53)
        return (self.x,)


def _coords(point) -> Tuple[float, ...]:
    if isinstance(point, (int, float, np.floating)):
        return (float(point),)
    return tuple(float(c) for c in point)


def gauss_inverse_cdf(u: float) -> float:
    """Inverse of F(x) = log2(1+x), the Gauss measure distribution function"""
    return 2.0 ** u - 1.0


# -------------------------
# SAMPLING AND STEPPING
# -------------------------
def sample_initial(system: SystemModel, rng: np.random.Generator) -> OrbitState:
    """Initial state distributed according to the invariant measure"""
    sid = system.system_id
    if sid is SystemId.DOUBLING:
        return OrbitState(sid, 0, (raw_word(rng), 0, 0), rng=rng)
    if sid is SystemId.CATMAP:
        w = [raw_word(rng) for _ in range(4)]
        return OrbitState(sid, 0, ((w[0] << 64) | w[1], (w[2] << 64) | w[3]), rng=rng)
    if sid is SystemId.GAUSS:
        return OrbitState(sid, 0, x=gauss_inverse_cdf(float(rng.random())), rng=rng)
    return OrbitState(sid, 0, x=float(rng.random()), rng=rng)


def step(system: SystemModel, state: OrbitState) -> OrbitState:
    sid = system.system_id
    if sid is SystemId.DOUBLING:
        window, pending, bits_left = state.words
        if bits_left == 0:
            pending, bits_left = raw_word(state.rng), 64
        bit = pending >> 63
        pending = (pending << 1) & U64_MASK
        window = ((window << 1) | bit) & U64_MASK
        return replace(state, step_index=state.step_index + 1, words=(window, pending, bits_left - 1))
    if sid is SystemId.CATMAP:
        X, Y = state.words
        return replace(state, step_index=state.step_index + 1,
                       words=((2 * X + Y) & U128_MASK, (X + Y) & U128_MASK))
    if sid is SystemId.GAUSS:
        if state.x == 0.0:
            raise DegenerateState(f"Gauss map undefined at x=0 (step {state.step_index})")
        y = 1.0 / state.x
        return replace(state, step_index=state.step_index + 1, x=y - math.floor(y))
    return replace(state, step_index=state.step_index + 1, x=float(state.rng.random()))


def inverse_step(system: SystemModel, state: OrbitState) -> OrbitState:
    """Exact inverse of the cat map, matrix (1,-1;-1,2)"""
    if system.system_id is not SystemId.CATMAP:
        raise ValueError(f"{system.name} is not invertible")
    X, Y = state.words
    return replace(state, step_index=state.step_index - 1,
                   words=((X - Y) & U128_MASK, (2 * Y - X) & U128_MASK))


def torus_distance(system: SystemModel, a, b) -> float:
    """Geodesic distance; wraps around for the tori, plain |a-b| for interval models"""
    pa, pb = _coords(a), _coords(b)
    diffs = [abs(u - v) for u, v in zip(pa, pb)]
    if system.wraps:
        diffs = [min(d, 1.0 - d) for d in diffs]
    if len(diffs) == 1:
        return diffs[0]
    return math.hypot(*diffs)


# -------------------------
# BULK ORBIT KERNELS
# -------------------------
@njit(cache=True)
def _doubling_orbit(window, pending, bits_left, words, out):
    one = np.uint64(1)
    w_i = 0
    for i in range(out.shape[0]):
        out[i] = float(window >> np.uint64(11)) * TWO_M53
        if bits_left == 0:
            pending = words[w_i]
            w_i += 1
            bits_left = 64
        bit = pending >> np.uint64(63)
        pending = pending << one
        bits_left -= 1
        window = (window << one) | bit
    return window, pending, bits_left


@njit(cache=True)
def _add128(ahi, alo, bhi, blo):
    lo = alo + blo
    carry = np.uint64(1) if lo < alo else np.uint64(0)
    return ahi + bhi + carry, lo


@njit(cache=True)
def _catmap_orbit(xhi, xlo, yhi, ylo, out):
    shift = np.uint64(11)
    for i in range(out.shape[0]):
        out[i, 0] = float(xhi >> shift) * TWO_M53
        out[i, 1] = float(yhi >> shift) * TWO_M53
        dhi, dlo = _add128(xhi, xlo, xhi, xlo)
        nxhi, nxlo = _add128(dhi, dlo, yhi, ylo)
        yhi, ylo = _add128(xhi, xlo, yhi, ylo)
        xhi, xlo = nxhi, nxlo
    return xhi, xlo, yhi, ylo


@njit(cache=True)
def _gauss_orbit(x, out):
    """Returns the final x and the index of a zero hit, or -1"""
    for i in range(out.shape[0]):
        out[i] = x
        if x == 0.0:
            return x, i
        y = 1.0 / x
        x = y - np.floor(y)
    return x, -1


def generate_orbit(system: SystemModel, state: OrbitState, n: int) -> Tuple[np.ndarray, OrbitState]:
    """Points of the next n orbit states as an (n, d) array, and the state after n steps.

    Row j is the point of the state j steps ahead of `state`; the result is
    identical to n successive calls of step().
    """
    sid = system.system_id
    if n <= 0:
        return np.empty((0, system.dimension)), state
    if sid is SystemId.DOUBLING:
        window, pending, bits_left = state.words
        need = max(0, -(-(n - bits_left) // 64))
        words = raw_words(state.rng, need) if need else np.zeros(1, dtype=np.uint64)
        out = np.empty(n)
        w, p, b = _doubling_orbit(np.uint64(window), np.uint64(pending), bits_left, words, out)
        return out.reshape(-1, 1), replace(state, step_index=state.step_index + n, words=(int(w), int(p), int(b)))
    if sid is SystemId.CATMAP:
        X, Y = state.words
        out = np.empty((n, 2))
        xhi, xlo, yhi, ylo = _catmap_orbit(np.uint64(X >> 64), np.uint64(X & U64_MASK),
                                           np.uint64(Y >> 64), np.uint64(Y & U64_MASK), out)
        words = ((int(xhi) << 64) | int(xlo), (int(yhi) << 64) | int(ylo))
        return out, replace(state, step_index=state.step_index + n, words=words)
    if sid is SystemId.GAUSS:
        out = np.empty(n)
        x, hit = _gauss_orbit(state.x, out)
        if hit >= 0:
            raise DegenerateState(f"Gauss map undefined at x=0 (step {state.step_index + hit})")
        return out.reshape(-1, 1), replace(state, step_index=state.step_index + n, x=float(x))
    draws = state.rng.random(n)
    out = np.empty(n)
    out[0] = state.x
    out[1:] = draws[:-1]
    return out.reshape(-1, 1), replace(state, step_index=state.step_index + n, x=float(draws[-1]))


# -------------------------
# BALLS AROUND A SITE
# -------------------------
def _max_radius(system: SystemModel) -> float:
    if system.wraps:
        return 0.5 * math.sqrt(system.dimension)
    return 1.0


def ball_measure(system: SystemModel, site, r: float) -> float:
    """Exact invariant measure of the open ball B_r(site)"""
    if r <= 0.0:
        return 0.0
    s = _coords(site)
    if system.wraps and system.dimension == 1:
        return min(2.0 * r, 1.0)
    if system.wraps:
        if r <= 0.5:
            return math.pi * r * r
        if r >= math.sqrt(0.5):
            return 1.0
        segment = r * r * math.acos(0.5 / r) - 0.5 * math.sqrt(r * r - 0.25)
        return math.pi * r * r - 4.0 * segment
    lo, hi = max(0.0, s[0] - r), min(1.0, s[0] + r)
    if system.system_id is SystemId.GAUSS:
        return math.log2((1.0 + hi) / (1.0 + lo))
    return hi - lo


def ball_radius_for_mass(system: SystemModel, site, mass: float) -> float:
    """Radius r with ball_measure(r) = mass"""
    if mass <= 0.0:
        return 0.0
    rmax = _max_radius(system)
    if mass >= ball_measure(system, site, rmax):
        return rmax
    if system.wraps and system.dimension == 1:
        return 0.5 * mass
    if system.wraps and mass <= math.pi / 4.0:
        return math.sqrt(mass / math.pi)
    return brentq(lambda r: ball_measure(system, site, r) - mass, 0.0, rmax, xtol=1e-15, rtol=1e-13)


def validate_site(system: SystemModel, site) -> None:
    """Reject sites with eventually periodic orbits.

    Rational points are eventually periodic for the doubling and cat maps
    and have terminating orbits under the Gauss map, so they cannot be
    slowly recurrent. The Gauss endpoint 0 is allowed.
    """
    coords = _coords(site)
    if len(coords) != system.dimension:
        raise ConfigError(f"Site {coords} has dimension {len(coords)}, system {system.name} needs {system.dimension}",
                          field="site")
    if any(c < 0.0 or c >= 1.0 for c in coords):
        raise ConfigError(f"Site {coords} outside [0,1)^d", field="site")
    if system.system_id is SystemId.IID_UNIFORM:
        return
    if system.system_id is SystemId.GAUSS and coords == (0.0,):
        return
    rational = []
    for c in coords:
        approx = Fraction(c).limit_denominator(SITE_MAX_DENOMINATOR)
        rational.append(float(approx) == c)
    if all(rational):
        logger.error(f"Rejected site {coords} for {system.name}")
        raise ConfigError(f"Site {coords} is rational, hence periodic or preperiodic under {system.name}",
                          field="site")
