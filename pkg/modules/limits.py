#!/usr/bin/env python3
"""
Limits module for trimlab - normalizing constants, centerings and limiting laws

Everything here is a pure function of its value inputs. The geometry of a
(system, observable) pair reduces to four numbers: B_d, the aperture
c_geom, the density at the site and the residue. Their product
c_geom * B_d * rho is the "ball mass" m, with mu(B_r) ~ m r^d.
"""

import math
from dataclasses import dataclass, asdict
from enum import Enum
from typing import Any, Dict, Optional, Tuple

import logging
from scipy.optimize import brentq

from modules.dynsys import SystemModel, ball_radius_for_mass
from modules.errors import RootFindFailure, WrongRegime
from modules.observables import Observable, tail_measure, truncated_mean, unit_ball_volume
from modules.ppp import centering_c_R

logger = logging.getLogger(__name__)


class Theorem(Enum):
    SLLN_LIGHT = "slln-light"
    SLLN_INTER = "slln-inter"
    DLT_LIGHT = "dlt-light"
    DLT_INTER = "dlt-inter"
    WEAK_LAW = "weak-law"
    POISSON_RETURNS = "poisson-returns"
    SUPERLEVEL_CLT = "superlevel-clt"


class LawKind(Enum):
    POINT_MASS = "point-mass"
    NORMAL = "normal"
    TRIMMED_PPP = "trimmed-ppp"
    POISSON = "poisson"


@dataclass(frozen=True)
class LawDescriptor:
    kind: LawKind
    value: float = 0.0
    variance: float = 0.0
    K: int = 0
    alpha: float = 0.0
    rate: float = 0.0

    def label(self) -> str:
        if self.kind is LawKind.POINT_MASS:
            return f"delta({self.value:.6g})"
        if self.kind is LawKind.NORMAL:
            return f"N(0,{self.variance:.6g})"
        if self.kind is LawKind.TRIMMED_PPP:
            return f"Y(K={self.K},alpha={self.alpha:g})"
        return f"Poisson({self.rate:g})"


@dataclass(frozen=True)
class Normalization:
    """Centering a_N, scale b_N and the target law at one N"""
    theorem: Theorem
    N: int
    a_N: float
    b_N: float
    limit: LawDescriptor

    def normalize(self, raw: float) -> float:
        return (raw - self.a_N) / self.b_N


@dataclass(frozen=True)
class GeometryConstants:
    B_d: float
    c_geom: float
    rho_at_site: float
    residue: float
    dimension: int = 1

    @property
    def ball_mass(self) -> float:
        return self.c_geom * self.B_d * self.rho_at_site

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["ball_mass"] = self.ball_mass
        return data


def geometry(obs: Observable, system: SystemModel) -> GeometryConstants:
    return GeometryConstants(
        B_d=unit_ball_volume(system.dimension),
        c_geom=obs.aperture.factor,
        rho_at_site=system.density_at(obs.site),
        residue=obs.residue,
        dimension=system.dimension,
    )


# -------------------------
# STRONG LAWS
# -------------------------
def slln_light_constant(geom: GeometryConstants, alpha: float = 1.0) -> float:
    """lim S_N^K / (N log N) for an order-d singularity"""
    if not math.isclose(alpha, 1.0):
        raise WrongRegime(f"Light-trimmed strong law needs alpha = 1, got {alpha}")
    return geom.residue * geom.ball_mass


def slln_inter_constant(geom: GeometryConstants, alpha: float) -> float:
    """lim S_N^k(N) / (N^alpha k^(1-alpha)) for alpha > 1"""
    if alpha <= 1.0:
        raise WrongRegime(f"Intermediately trimmed strong law needs alpha > 1, got {alpha}")
    return geom.residue / (alpha - 1.0) * geom.ball_mass ** alpha


# -------------------------
# DISTRIBUTIONAL LAWS
# -------------------------
def mass_radius(geom: GeometryConstants, mass: float, obs: Optional[Observable] = None,
                system: Optional[SystemModel] = None) -> float:
    """Radius r with mu(B_r(x*)) = mass; exact when the system is given, leading order otherwise"""
    if obs is not None and system is not None:
        return ball_radius_for_mass(system, obs.site, mass)
    return (mass / geom.ball_mass) ** (1.0 / geom.dimension)


def dlt_inter_normalization(geom: GeometryConstants, alpha: float, N: int, k: int,
                            obs: Optional[Observable] = None,
                            system: Optional[SystemModel] = None) -> Tuple[float, float, float]:
    """(a_N, b_N, sigma^2) for the intermediately trimmed sums.

    a_N is the exact truncated expectation N E[f 1{d > r_N}] with
    mu(B_{r_N}) = k/N; it needs the observable and system. Without them a_N
    is returned as NaN.
    """
    if alpha <= 0.5:
        raise WrongRegime(f"Intermediate distributional law needs alpha > 1/2, got {alpha}")
    b_N = geom.residue * geom.ball_mass ** alpha * N ** alpha * k ** (0.5 - alpha)
    sigma2 = 2.0 * alpha / (2.0 * alpha - 1.0)
    a_N = math.nan
    if obs is not None and system is not None:
        r_N = mass_radius(geom, k / N, obs, system)
        a_N = N * truncated_mean(obs, system, r_N)
    return a_N, b_N, sigma2


def dlt_inter_asymptotic_centering(geom: GeometryConstants, alpha: float, N: int, k: int,
                                   integral: Optional[float] = None) -> float:
    """Leading-order a_N from the three regimes alpha < 1, alpha = 1, alpha > 1"""
    if alpha < 1.0:
        if integral is None:
            raise ValueError("alpha < 1 needs the integral of f")
        return N * integral
    if math.isclose(alpha, 1.0):
        return N * math.log(N / k) * geom.residue * geom.ball_mass
    return N ** alpha * k ** (1.0 - alpha) * geom.residue / (alpha - 1.0) * geom.ball_mass ** alpha


def dlt_light_normalization(geom: GeometryConstants, alpha: float, N: int, R: float,
                            obs: Optional[Observable] = None,
                            system: Optional[SystemModel] = None) -> Dict[str, float]:
    """Centering and coupling of the lightly trimmed sums to the reference law Y.

    Points within mu-mass R/N of the site are matched with the Poisson
    arrivals on [0, R); the rest of the sum is centered by its mean.
    """
    if alpha <= 0.5:
        raise WrongRegime(f"Light distributional law needs alpha > 1/2, got {alpha}")
    if R <= 1.0:
        raise ValueError(f"Reference horizon R must exceed 1, got {R}")
    scale = float(N) ** alpha
    coupling = geom.residue * geom.ball_mass ** alpha
    c_R = centering_c_R(alpha, R, asymptotic=True)
    r_N = (geom.ball_mass * N) ** (-1.0 / geom.dimension)
    cut = R ** (1.0 / geom.dimension) * r_N
    bulk = math.nan
    if obs is not None and system is not None:
        bulk = N * truncated_mean(obs, system, cut)
    return {
        "a_N": coupling * scale * c_R + bulk,
        "scale": scale,
        "coupling": coupling,
        "c_R": c_R,
        "r_N": r_N,
        "cut_radius": cut,
        "bulk_mean": bulk,
    }


def poisson_radius(geom: GeometryConstants, N: int, t: float) -> float:
    """r_N^t = (t / (m N))^(1/d), the radius hit t times on average in N steps"""
    if t <= 0:
        return 0.0
    return (t / (geom.ball_mass * N)) ** (1.0 / geom.dimension)


def lambda_cut(geom: GeometryConstants, alpha: float, N: int, k: int,
               obs: Optional[Observable] = None, system: Optional[SystemModel] = None) -> float:
    """Superlevel threshold lambda with mu(f > lambda) = k/N"""
    if k >= N:
        raise ValueError(f"lambda_cut needs k < N, got k={k}, N={N}")
    target = k / N
    if obs is None or obs.is_radial:
        return geom.residue * (target / geom.ball_mass) ** (-alpha)
    guess = geom.residue * (target / geom.ball_mass) ** (-alpha)
    lo, hi = guess / 4.0, guess * 4.0
    phi = lambda lam: math.log(tail_measure(obs, system, lam)) - math.log(target)
    try:
        for _ in range(40):
            if phi(lo) > 0:
                break
            lo /= 4.0
        for _ in range(40):
            if phi(hi) < 0:
                break
            hi *= 4.0
        return brentq(phi, lo, hi, xtol=1e-300, rtol=1e-12)
    except (ValueError, ZeroDivisionError) as e:
        raise RootFindFailure(f"lambda_cut could not bracket k/N={target}: {e}")


# -------------------------
# TARGETS PER THEOREM
# -------------------------
def point_mass(value: float) -> LawDescriptor:
    return LawDescriptor(LawKind.POINT_MASS, value=value)


def normal_law(variance: float) -> LawDescriptor:
    return LawDescriptor(LawKind.NORMAL, variance=variance)


def trimmed_ppp_law(K: int, alpha: float) -> LawDescriptor:
    return LawDescriptor(LawKind.TRIMMED_PPP, K=K, alpha=alpha)


def poisson_law(t: float) -> LawDescriptor:
    return LawDescriptor(LawKind.POISSON, rate=t)
