#!/usr/bin/env python3
"""
Observables module for trimlab - functions with a power singularity at a site x*

f(x) = g(x) * d(x, x*)^(-beta), with g the residue profile. Besides the
radial profile (g constant) an oscillatory profile makes the largest values
differ from the values at the closest points, and the Gauss digit
observable x -> floor(1/x) behaves as a one-sided order-1 singularity at 0.
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Tuple

import logging
import numpy as np
from scipy import integrate, special
from scipy.optimize import brentq

from modules.dynsys import SystemId, SystemModel, ball_measure, validate_site
from modules.errors import ConfigError, DegenerateHit, QuadratureFailure

logger = logging.getLogger(__name__)

GOLDEN_SITE = (math.sqrt(5.0) - 1.0) / 2.0
QUAD_TOL = 1e-9
CROSSING_GRID = 4096

DEFAULT_SITES: Dict[SystemId, Tuple[float, ...]] = {
    SystemId.IID_UNIFORM: (0.0,),
    SystemId.DOUBLING: (GOLDEN_SITE,),
    SystemId.CATMAP: (GOLDEN_SITE, math.sqrt(2.0) - 1.0),
    SystemId.GAUSS: (0.0,),
}


class Profile(Enum):
    RADIAL = "radial"
    OSCILLATORY = "oscillatory"
    DIGIT = "digit"


class Aperture(Enum):
    FULL = "full"
    HALF = "half"

    @property
    def factor(self) -> float:
        return 1.0 if self is Aperture.FULL else 0.5


def unit_ball_volume(d: int) -> float:
    """Volume B_d of the d-dimensional unit ball"""
    if d == 1:
        return 2.0
    if d == 2:
        return math.pi
    return math.pi ** (d / 2.0) / math.gamma(d / 2.0 + 1.0)


@dataclass(frozen=True)
class Observable:
    site: Tuple[float, ...]
    order_beta: float
    profile: Profile
    aperture: Aperture
    dimension: int = 1
    scale: float = 1.0

    @property
    def alpha(self) -> float:
        return self.order_beta / self.dimension

    @property
    def is_radial(self) -> bool:
        return self.profile is not Profile.OSCILLATORY

    def residue_profile(self, x) -> float:
        """The profile g; g(x*) is the residue"""
        if self.profile is Profile.OSCILLATORY:
            x1 = x if np.ndim(x) == 0 else np.asarray(x)[..., 0]
            return self.scale * (1.0 + 0.5 * np.cos(2.0 * np.pi * x1))
        return self.scale

    @property
    def residue(self) -> float:
        return float(self.residue_profile(np.asarray(self.site)))

    @property
    def bound_C0(self) -> float:
        """C_0 with f(x) <= C_0 d(x,x*)^-beta everywhere"""
        if self.profile is Profile.OSCILLATORY:
            return 1.5 * self.scale
        return self.scale

    def epsilon_bound(self, r: float) -> float:
        """eps(r) with (1-eps(r)) Res d^-beta <= f on B_r(x*)"""
        if self.profile is Profile.OSCILLATORY:
            # |g'| <= pi * scale
            return math.pi * self.scale * r / self.residue
        if self.profile is Profile.DIGIT:
            # floor(1/x) >= (1/x)(1 - x)
            return r
        return 0.0


@dataclass(frozen=True)
class TailLaw:
    alpha: float
    tail_constant: float

    def tail(self, t: float) -> float:
        return self.tail_constant * t ** (-1.0 / self.alpha)


def default_aperture(system: SystemModel, site) -> Aperture:
    if not system.wraps and any(c in (0.0, 1.0) for c in site):
        return Aperture.HALF
    return Aperture.FULL


def digit_observable(system: Optional[SystemModel] = None) -> Observable:
    """The continued-fraction digit x -> floor(1/x), a one-sided order-1 singularity at 0"""
    if system is not None and system.system_id is not SystemId.GAUSS:
        raise ConfigError(f"Digit observable needs the Gauss map, not {system.name}", field="profile")
    return Observable(site=(0.0,), order_beta=1.0, profile=Profile.DIGIT, aperture=Aperture.HALF)


def make_observable(system: SystemModel, profile: str = "radial", beta: float = 1.0,
                    site: Optional[List[float]] = None, aperture: Optional[str] = None,
                    scale: float = 1.0) -> Observable:
    """Build and validate an observable for `system`"""
    try:
        prof = Profile(profile)
    except ValueError:
        raise ConfigError(f"Unknown profile '{profile}'", field="profile")
    if prof is Profile.DIGIT:
        return digit_observable(system)
    if beta <= 0:
        raise ConfigError(f"beta must be positive, got {beta}", field="beta")
    if scale <= 0:
        raise ConfigError(f"scale must be positive, got {scale}", field="scale")
    coords = tuple(float(c) for c in site) if site is not None else DEFAULT_SITES[system.system_id]
    validate_site(system, coords)
    try:
        ap = Aperture(aperture) if aperture else default_aperture(system, coords)
    except ValueError:
        raise ConfigError(f"Unknown aperture '{aperture}'", field="aperture")
    return Observable(site=coords, order_beta=float(beta), profile=prof, aperture=ap,
                      dimension=system.dimension, scale=float(scale))


# -------------------------
# EVALUATION
# -------------------------
def evaluate(obs: Observable, system: SystemModel, x) -> float:
    d = system.metric(x, obs.site)
    if d == 0.0:
        raise DegenerateHit(f"Point {x} hits the singular site {obs.site}")
    if obs.profile is Profile.DIGIT:
        return float(math.floor(1.0 / d))
    return float(obs.residue_profile(np.asarray(x, dtype=float))) * d ** (-obs.order_beta)


def evaluate_many(obs: Observable, system: SystemModel, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Values and distances to the site for each row of `points`"""
    dist = system.distances(points, obs.site)
    zero = np.flatnonzero(dist == 0.0)
    if zero.size:
        raise DegenerateHit(f"Orbit point {int(zero[0])} of the chunk hits the singular site {obs.site}")
    if obs.profile is Profile.DIGIT:
        return np.floor(1.0 / dist), dist
    g = obs.residue_profile(np.asarray(points, dtype=float).reshape(-1, system.dimension))
    return g * dist ** (-obs.order_beta), dist


def tail_law(obs: Observable, system: SystemModel) -> TailLaw:
    """Leading-order law mu(f > t) ~ c_geom B_d rho(x*) Res^(1/alpha) t^(-1/alpha)"""
    mass = obs.aperture.factor * unit_ball_volume(system.dimension) * system.density_at(obs.site)
    return TailLaw(alpha=obs.alpha, tail_constant=mass * obs.residue ** (1.0 / obs.alpha))


# -------------------------
# EXACT TAIL MEASURE
# -------------------------
def _side_lengths(system: SystemModel, site) -> List[Tuple[int, float]]:
    if system.wraps:
        return [(-1, 0.5), (1, 0.5)]
    return [(-1, site[0]), (1, 1.0 - site[0])]


def _interval_mass(system: SystemModel, a: float, b: float) -> float:
    if b <= a:
        return 0.0
    if system.system_id is SystemId.GAUSS:
        return math.log2((1.0 + b) / (1.0 + a))
    return b - a


def _positive_runs(phi, hmax: float) -> List[Tuple[float, float]]:
    """Intervals of (0, hmax] where phi > 0, from sign changes on a grid refined by brentq"""
    grid = np.linspace(0.0, hmax, CROSSING_GRID + 1)[1:]
    grid = np.concatenate(([hmax * 1e-12], grid))
    vals = np.array([phi(h) for h in grid])
    runs = []
    start = 0.0 if vals[0] > 0 else None
    for i in range(1, len(grid)):
        if (vals[i - 1] > 0) == (vals[i] > 0):
            continue
        root = brentq(phi, grid[i - 1], grid[i], xtol=1e-15, rtol=1e-14)
        if vals[i] > 0:
            start = root
        else:
            runs.append((start, root))
            start = None
    if start is not None:
        runs.append((start, hmax))
    return runs


def tail_measure(obs: Observable, system: SystemModel, t: float) -> float:
    """Exact invariant measure of {f > t}; {f >= t} for the integer-valued digit observable"""
    if t <= 0:
        raise ValueError(f"t must be positive, got {t}")
    if obs.profile is Profile.DIGIT:
        # floor(1/x) >= n  <=>  x <= 1/n
        return ball_measure(system, obs.site, 1.0 / math.ceil(t)) if t > 1 else 1.0
    if obs.is_radial:
        return ball_measure(system, obs.site, (obs.scale / t) ** (1.0 / obs.order_beta))
    reach = (obs.bound_C0 / t) ** (1.0 / obs.order_beta)
    beta = obs.order_beta
    if system.dimension == 1:
        total = 0.0
        for sign, length in _side_lengths(system, obs.site):
            hmax = min(length, reach)
            if hmax <= 0:
                continue
            x0 = obs.site[0]
            phi = lambda h, s=sign: obs.residue_profile(x0 + s * h) - t * h ** beta
            for lo, hi in _positive_runs(phi, hmax):
                a, b = (x0 - hi, x0 - lo) if sign < 0 else (x0 + lo, x0 + hi)
                total += _interval_mass(system, a, b)
        return min(total, 1.0)
    # d = 2 torus with uniform density; g depends on the first coordinate only
    umax = min(0.5, reach)
    x1 = obs.site[0]

    def width(u):
        rad = (obs.residue_profile(x1 + u) / t) ** (2.0 / beta) - u * u
        return min(1.0, 2.0 * math.sqrt(rad)) if rad > 0 else 0.0

    value, abserr = integrate.quad(width, -umax, umax, limit=400, epsabs=QUAD_TOL * 1e-3, epsrel=QUAD_TOL)
    if abserr > max(QUAD_TOL * abs(value), 1e-12):
        raise QuadratureFailure(f"tail_measure quadrature error {abserr:.3g} at t={t}")
    return value


# -------------------------
# TRUNCATED EXPECTATIONS
# -------------------------
def _power_integral(lo: float, hi: float, p: float) -> float:
    """Integral of h^-p over [lo, hi]"""
    if hi <= lo:
        return 0.0
    if p == 1.0:
        return math.log(hi / lo)
    return (hi ** (1.0 - p) - lo ** (1.0 - p)) / (1.0 - p)


def _quad(func, a: float, b: float, what: str) -> float:
    value, abserr = integrate.quad(func, a, b, limit=400, epsrel=QUAD_TOL)
    if abserr > max(1e-7 * abs(value), 1e-10):
        raise QuadratureFailure(f"{what} quadrature error {abserr:.3g} on [{a}, {b}]")
    return value


def truncated_mean(obs: Observable, system: SystemModel, r: float) -> float:
    """E[f * 1{d(., x*) > r}] under the invariant measure"""
    beta = obs.order_beta
    if obs.profile is Profile.DIGIT:
        r = max(r, 0.0)
        if r <= 0.0:
            return math.inf
        # E[a 1{x>r}] = sum_j mu(r < x <= 1/j), j <= 1/r
        J = math.floor(1.0 / r)
        if system.system_id is SystemId.GAUSS:
            return math.log2(J + 1.0) - J * math.log2(1.0 + r)
        return float(special.digamma(J + 1.0) + np.euler_gamma) - J * r
    if system.dimension == 1:
        total = 0.0
        x0 = obs.site[0]
        for sign, length in _side_lengths(system, obs.site):
            if length <= r:
                continue
            if r <= 0.0 and beta >= 1.0:
                return math.inf
            if obs.is_radial and system.system_id is not SystemId.GAUSS:
                total += obs.scale * _power_integral(r, length, beta)
                continue
            integrand = lambda h, s=sign: (obs.residue_profile(x0 + s * h) * h ** (-beta)
                                           * system.density_at(x0 + s * h))
            total += _quad(integrand, r, length, "truncated_mean")
        return total
    # d = 2 torus: disc annulus r < rho < 1/2 in polar form plus the square's corners
    if r <= 0.0 and beta >= 2.0:
        return math.inf
    x1 = obs.site[0]
    annulus = 0.0
    if r < 0.5:
        if obs.is_radial:
            annulus = 2.0 * math.pi * obs.scale * _power_integral(r, 0.5, beta - 1.0)
        else:
            c = math.cos(2.0 * math.pi * x1)
            annulus = obs.scale * _quad(
                lambda rho: rho ** (1.0 - beta) * (2.0 * math.pi + math.pi * c * special.j0(2.0 * math.pi * rho)),
                r, 0.5, "truncated_mean annulus")
    rc = max(r, 0.5)

    def inner(u):
        v_lo = math.sqrt(max(rc * rc - u * u, 0.0))
        if v_lo >= 0.5:
            return 0.0
        col = integrate.quad(lambda v: (u * u + v * v) ** (-beta / 2.0), v_lo, 0.5, epsrel=QUAD_TOL)[0]
        return 2.0 * obs.residue_profile(x1 + u) * col

    corners = _quad(inner, -0.5, 0.5, "truncated_mean corners")
    return annulus + corners


def integral_mean(obs: Observable, system: SystemModel) -> float:
    """Integral of f over the whole space; finite iff alpha < 1"""
    return truncated_mean(obs, system, 0.0)
