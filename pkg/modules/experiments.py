#!/usr/bin/env python3
"""
Experiments module for trimlab - one runner per limit theorem

Each runner validates the regime, fans replicas out through the harness,
normalizes the raw sums with the constants from `modules.limits`, and folds
the replica-id-sorted records into summary rows, goodness-of-fit reports
and a single pass flag.
"""

import math
import sys
from dataclasses import dataclass, asdict
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import logging
import numba
import numpy as np
import scipy

from modules.dynsys import SystemModel, ball_radius_for_mass, get_system, sample_initial
from modules.errors import (
    ConfigError, DegenerateHit, DegenerateState, InsufficientTail, QuadratureFailure, WrongRegime,
)
from modules.harness import (
    ExperimentConfig, ExperimentKind, ExperimentResult, ReplicaRecord, run_parallel, sort_records,
)
from modules.limits import (
    GeometryConstants, LawDescriptor, LawKind, Normalization, Theorem, dlt_inter_asymptotic_centering,
    dlt_inter_normalization, dlt_light_normalization, geometry, lambda_cut, normal_law, point_mass, poisson_law,
    poisson_radius, slln_inter_constant, slln_light_constant, trimmed_ppp_law,
)
from modules.observables import Observable, integral_mean, make_observable, tail_law, tail_measure
from modules.ppp import (
    TrimmedPppLaw, cumulant, moments_from_cumulants, reference_law, sample_reference_law, sample_window_sums,
)
from modules.rng import Stream, make_rng
from modules.stats import (
    GofReport, hill_tail_slope, ks_distance, ks_two_sample, median_and_quartiles, nonincreasing, normal_cdf,
    poisson_pmf, sample_moments, strictly_decreasing, tv_distance_poisson,
)
from modules.trimming import TrimMode, TrimSpec, count_ball_hits, count_superlevel_hits, run_trimmed_series

logger = logging.getLogger(__name__)

# DLT experiments stay this far above alpha = 1/2
REGIME_MARGIN = 0.05
TAIL_SLOPE_TOLERANCE = 0.25
ORACLE_SIGMAS = 3.0

ORBIT_COLUMNS = [
    "experiment", "system", "N", "k", "statistic", "a_N", "b_N", "target", "target_value", "median", "q25",
    "q75", "rel_error", "metric", "metric_value", "threshold", "passed", "replicas", "discards",
]
SUPERLEVEL_COLUMNS = ORBIT_COLUMNS[:4] + ["t", "cut", "leading_center"] + ORBIT_COLUMNS[4:]
NEAR_COLUMNS = [
    "N", "k", "a_N", "b_N", "target", "target_value", "median_ratio", "q25_ratio", "q75_ratio", "max_ratio",
    "median_gap", "metric", "metric_value", "threshold", "passed", "replicas", "discards",
]
POISSON_COLUMNS = [
    "N", "t", "j", "radius", "a_N", "b_N", "target", "observed_pmf", "reference_pmf", "metric", "metric_value",
    "threshold", "passed",
]
PPP_COLUMNS = ["quantity", "estimate", "reference", "standard_error", "rel_error", "passed"]


@dataclass(frozen=True)
class Setup:
    system: SystemModel
    obs: Observable
    trim: TrimSpec
    geom: GeometryConstants

    @property
    def alpha(self) -> float:
        return self.obs.alpha


def build_setup(cfg: ExperimentConfig) -> Setup:
    system = get_system(cfg.system)
    obs = make_observable(system, cfg.profile, cfg.beta, cfg.site, cfg.aperture, cfg.scale)
    return Setup(system=system, obs=obs, trim=TrimSpec.parse(cfg.trim), geom=geometry(obs, system))


# -------------------------
# REGIME VALIDATION
# -------------------------
def _need_trim(setup: Setup, *modes: TrimMode) -> None:
    if setup.trim.mode not in modes:
        raise ConfigError(f"Trim '{setup.trim}' not allowed here (need {'/'.join(m.value for m in modes)})",
                          field="trim")


def validate_regime(cfg: ExperimentConfig, setup: Setup) -> None:
    """Reject (alpha, trim) combinations an experiment does not cover, before any replica runs"""
    kind, alpha = cfg.kind, setup.alpha
    if kind in (ExperimentKind.SLLN_LIGHT, ExperimentKind.WEAK_LAW, ExperimentKind.SLLN_INTER_D):
        if not math.isclose(alpha, 1.0):
            raise WrongRegime(f"{kind.value} needs alpha = 1, got {alpha}")
    if kind is ExperimentKind.SLLN_LIGHT:
        _need_trim(setup, TrimMode.LIGHT)
        if setup.trim.K < 1:
            raise ConfigError("slln-light needs K >= 1", field="trim")
    if kind is ExperimentKind.SLLN_INTER:
        if alpha < 1.0 + REGIME_MARGIN:
            raise WrongRegime(f"slln-inter needs alpha >= {1.0 + REGIME_MARGIN}, got {alpha}")
    if kind in (ExperimentKind.SLLN_INTER, ExperimentKind.SLLN_INTER_D, ExperimentKind.DLT_INTER,
                ExperimentKind.BALL_CLT, ExperimentKind.SUPERLEVEL_CLT):
        _need_trim(setup, TrimMode.INTERMEDIATE)
    if kind in (ExperimentKind.DLT_LIGHT, ExperimentKind.DLT_INTER, ExperimentKind.PPP_LIMIT,
                ExperimentKind.SUPERLEVEL_CLT):
        if alpha < 0.5 + REGIME_MARGIN:
            raise WrongRegime(f"{kind.value} needs alpha >= {0.5 + REGIME_MARGIN}, got {alpha}")
    if kind in (ExperimentKind.DLT_LIGHT, ExperimentKind.PPP_LIMIT):
        _need_trim(setup, TrimMode.LIGHT, TrimMode.NONE)
        TrimmedPppLaw(K=setup.trim.k(1), alpha=alpha).validate()
    if kind is ExperimentKind.POISSON_RETURNS and max(cfg.trim_levels) >= cfg.checkpoints[-1]:
        raise ConfigError(f"trim_levels {cfg.trim_levels} need fewer than N={cfg.checkpoints[-1]} orbit points",
                          field="trim_levels")
    for N in cfg.checkpoints:
        if setup.trim.k(N) >= N:
            raise ConfigError(f"Trim {setup.trim} removes k={setup.trim.k(N)} of N={N} terms", field="trim")


# -------------------------
# REPLICA WORKERS (top level so they pickle)
# -------------------------
def _discarded(replica: int, checkpoints: Sequence[int], reason: str) -> List[ReplicaRecord]:
    return [ReplicaRecord(replica=replica, N=N, discarded=True, reason=reason) for N in checkpoints]


def orbit_replica(cfg: ExperimentConfig, replica: int) -> List[ReplicaRecord]:
    """Raw S, S^k and S-hat^k of one orbit at every checkpoint"""
    setup = build_setup(cfg)
    rng = make_rng(cfg.seed, Stream.ORBIT, replica)
    try:
        x0 = sample_initial(setup.system, rng)
        series = run_trimmed_series(setup.system, setup.obs, setup.trim, x0, cfg.checkpoints, cfg.chunk_size)
    except (DegenerateHit, DegenerateState) as e:
        return _discarded(replica, cfg.checkpoints, f"{type(e).__name__}: {e}")
    return [
        ReplicaRecord(replica=replica, N=c.N, values={
            "k": c.k, "S": c.S, "S_trim": c.S_trim, "S_hat": c.S_hat,
            "max_value_removed": c.max_value_removed, "kth_distance": c.kth_distance,
        })
        for c in series.checkpoints
    ]


def ball_replica(cfg: ExperimentConfig, replica: int, radii: Sequence[float],
                 segments: Sequence[int], closest_k: int) -> List[ReplicaRecord]:
    """Cumulative hits of every ball at the end of each orbit segment"""
    setup = build_setup(cfg)
    rng = make_rng(cfg.seed, Stream.ORBIT, replica)
    order = np.argsort(radii, kind="stable")
    sorted_radii = np.asarray(radii, dtype=np.float64)[order]
    totals = np.zeros(len(radii), dtype=np.int64)
    records = []
    try:
        state = sample_initial(setup.system, rng)
        done = 0
        for N in segments:
            counts = count_ball_hits(setup.system, setup.obs.site, state, N - done, sorted_radii,
                                     closest_k=closest_k, chunk_size=cfg.chunk_size)
            state, done = counts.state, N
            totals[order] += counts.counts
            values = {"counts": [int(c) for c in totals]}
            if closest_k:
                # the closest points are tracked per segment
                values["identity"] = {
                    str(K): bool(np.array_equal(counts.trimmed(K), counts.clipped(K)))
                    for K in range(1, closest_k + 1)
                }
            records.append(ReplicaRecord(replica=replica, N=N, values=values))
    except (DegenerateHit, DegenerateState) as e:
        return _discarded(replica, segments, f"{type(e).__name__}: {e}")
    return records


def superlevel_replica(cfg: ExperimentConfig, replica: int, cuts: Sequence[float]) -> List[ReplicaRecord]:
    """Hits of {f >= cut} for every cut at each checkpoint"""
    setup = build_setup(cfg)
    rng = make_rng(cfg.seed, Stream.ORBIT, replica)
    try:
        x0 = sample_initial(setup.system, rng)
        counts = count_superlevel_hits(setup.system, setup.obs, x0, cfg.checkpoints, cuts, cfg.chunk_size)
    except (DegenerateHit, DegenerateState) as e:
        return _discarded(replica, cfg.checkpoints, f"{type(e).__name__}: {e}")
    return [
        ReplicaRecord(replica=replica, N=N, values={"counts": [int(c) for c in row]})
        for N, row in zip(cfg.checkpoints, counts)
    ]


def reference_chunk(law: TrimmedPppLaw, horizon: float, seed: int, index: int, n: int) -> np.ndarray:
    return sample_reference_law(law, horizon, n, make_rng(seed, Stream.REFERENCE, index))


def window_chunk(alpha: float, nlo: float, nhi: float, seed: int, index: int, n: int) -> np.ndarray:
    return sample_window_sums(alpha, nlo, nhi, n, make_rng(seed, Stream.ORACLE, index))


def _split(total: int, parts: int) -> List[int]:
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts) if base + (1 if i < extra else 0) > 0]


def sample_reference(law: TrimmedPppLaw, horizon: float, cfg: ExperimentConfig,
                     workers: Optional[int]) -> np.ndarray:
    sizes = _split(cfg.reference_samples, cfg.replicas)
    jobs = [(law, horizon, cfg.seed, i, n) for i, n in enumerate(sizes)]
    return np.concatenate(run_parallel(reference_chunk, jobs, workers))


# -------------------------
# SHARED FOLDS
# -------------------------
def _log_discards(records: Sequence[ReplicaRecord]) -> List[int]:
    seen = {}
    for r in records:
        if r.discarded and r.replica not in seen:
            seen[r.replica] = r.reason
            logger.warning(f"Replica {r.replica} discarded: {r.reason}")
    return sorted(seen)


def _run_orbits(cfg: ExperimentConfig, workers: Optional[int]) -> List[ReplicaRecord]:
    batches = run_parallel(orbit_replica, [(cfg, i) for i in range(cfg.replicas)], workers)
    return sort_records([r for batch in batches for r in batch])


def _apply(records: Sequence[ReplicaRecord], norms: Dict[int, Normalization], statistic: str) -> None:
    for r in records:
        if r.discarded:
            continue
        norm = norms[r.N]
        r.values["a_N"] = norm.a_N
        r.values["b_N"] = norm.b_N
        r.values["normalized"] = norm.normalize(r.values[statistic])


def _column(records: Sequence[ReplicaRecord], N: int, key: str = "normalized") -> np.ndarray:
    return np.array([r.values[key] for r in records if r.N == N and not r.discarded], dtype=np.float64)


def _versions() -> Dict[str, str]:
    return {
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
    }


def _metadata(cfg: ExperimentConfig, setup: Optional[Setup], records: Sequence[ReplicaRecord],
              constants: Dict[str, Any], discarded: Sequence[int]) -> Dict[str, Any]:
    meta = {
        "config": cfg.to_dict(),
        "experiment": cfg.experiment,
        "exploratory": cfg.kind.exploratory,
        "constants": constants,
        "horizon": cfg.horizon,
        "centering": "c_R = integral of x^-alpha over [1, R); 0 for alpha > 1",
        "replicas_in": cfg.replicas,
        "discards": len(discarded),
        "discarded_replicas": list(discarded),
        "replicas_out": cfg.replicas - len(discarded),
        "records": len(records),
        "versions": _versions(),
    }
    if setup is not None:
        meta["system"] = setup.system.name
        meta["observable"] = {
            "site": list(setup.obs.site), "beta": setup.obs.order_beta, "alpha": setup.alpha,
            "profile": setup.obs.profile.value, "aperture": setup.obs.aperture.value, "scale": setup.obs.scale,
            "residue": setup.obs.residue,
        }
        meta["trim"] = str(setup.trim)
        meta["geometry"] = setup.geom.to_dict()
        meta["tail_law"] = asdict(tail_law(setup.obs, setup.system))
    return meta


def _norm_constants(norms: Dict[int, Normalization]) -> List[Dict[str, Any]]:
    return [
        {"N": n.N, "a_N": n.a_N, "b_N": n.b_N, "target": n.limit.label(), "theorem": n.theorem.value}
        for n in norms.values()
    ]


def _target_value(law: LawDescriptor) -> float:
    return law.value if law.kind is LawKind.POINT_MASS else law.variance


def _orbit_row(cfg: ExperimentConfig, setup: Setup, norm: Normalization, statistic: str,
               values: np.ndarray, discards: int) -> Dict[str, Any]:
    row = {
        "experiment": cfg.experiment, "system": setup.system.name, "N": norm.N, "k": setup.trim.k(norm.N),
        "statistic": statistic, "a_N": norm.a_N, "b_N": norm.b_N, "target": norm.limit.label(),
        "target_value": _target_value(norm.limit), "replicas": int(values.shape[0]), "discards": discards,
        "passed": False,
    }
    if values.shape[0]:
        med, q25, q75 = median_and_quartiles(values)
        row.update(median=med, q25=q25, q75=q75)
    return row


def _judge(row: Dict[str, Any], metric: str, value: float, threshold: float) -> Dict[str, Any]:
    row.update(metric=metric, metric_value=value, threshold=threshold, passed=bool(value <= threshold))
    return row


# -------------------------
# STRONG AND WEAK LAWS
# -------------------------
def _strong_norms(cfg: ExperimentConfig, setup: Setup) -> Tuple[Dict[int, Normalization], float]:
    kind, alpha, geom = cfg.kind, setup.alpha, setup.geom
    norms = {}
    if kind in (ExperimentKind.SLLN_LIGHT, ExperimentKind.WEAK_LAW):
        target = slln_light_constant(geom, alpha)
        theorem = Theorem.SLLN_LIGHT if kind is ExperimentKind.SLLN_LIGHT else Theorem.WEAK_LAW
        for N in cfg.checkpoints:
            norms[N] = Normalization(theorem, N, 0.0, N * math.log(N), point_mass(target))
    elif kind is ExperimentKind.SLLN_INTER:
        target = slln_inter_constant(geom, alpha)
        for N in cfg.checkpoints:
            k = setup.trim.k(N)
            norms[N] = Normalization(Theorem.SLLN_INTER, N, 0.0, N ** alpha * k ** (1.0 - alpha), point_mass(target))
    else:
        target = geom.residue * geom.ball_mass
        for N in cfg.checkpoints:
            k = setup.trim.k(N)
            norms[N] = Normalization(Theorem.SLLN_INTER, N, 0.0, N * math.log(N / k), point_mass(target))
    return norms, target


def run_strong_law(cfg: ExperimentConfig, workers: Optional[int] = None) -> ExperimentResult:
    """slln-light, slln-inter, slln-inter-d and weak-law"""
    setup = build_setup(cfg)
    validate_regime(cfg, setup)
    norms, target = _strong_norms(cfg, setup)
    statistic = "S" if cfg.kind is ExperimentKind.WEAK_LAW else "S_trim"
    records = _run_orbits(cfg, workers)
    discarded = _log_discards(records)
    _apply(records, norms, statistic)

    rows, gof, errors, fractions = [], [], [], []
    for N in cfg.checkpoints:
        values = _column(records, N)
        row = _orbit_row(cfg, setup, norms[N], statistic, values, len(discarded))
        if values.shape[0]:
            errors.append(abs(row["median"] - target) / abs(target))
            row["rel_error"] = errors[-1]
            if cfg.kind is ExperimentKind.WEAK_LAW:
                # each fraction must undercut the one before it
                frac = float(np.mean(np.abs(values / target - 1.0) > cfg.deviation))
                previous = fractions[-1] if fractions else math.inf
                fractions.append(frac)
                row.update(metric="deviation_fraction", metric_value=frac, threshold=previous,
                           passed=frac < previous)
            else:
                _judge(row, "rel_error", errors[-1], cfg.tolerance)
        rows.append(row)

    complete = len(errors) == len(cfg.checkpoints)
    if cfg.kind is ExperimentKind.WEAK_LAW:
        ok = complete and strictly_decreasing(fractions)
        gof.append(GofReport("deviation_fraction_trend", float(not ok), 0.0, len(fractions),
                             {"fractions": fractions, "deviation": cfg.deviation}).to_dict())
    else:
        last = GofReport("median_rel_error", errors[-1] if complete else math.inf, cfg.tolerance,
                         int(_column(records, cfg.checkpoints[-1]).shape[0]), {"target": target})
        trend = complete and nonincreasing(errors)
        gof.append(last.to_dict())
        gof.append(GofReport("error_trend", float(not trend), 0.0, len(errors), {"errors": errors}).to_dict())
        ok = last.passed and trend
    if cfg.kind.exploratory:
        logger.info(f"{cfg.experiment} is exploratory: reported pass={ok} is not an acceptance result")
        ok = True

    constants = {"target": target, "normalizations": _norm_constants(norms)}
    return ExperimentResult(cfg, records, ORBIT_COLUMNS, rows, gof,
                            _metadata(cfg, setup, records, constants, discarded), ok)


# -------------------------
# DISTRIBUTIONAL LAWS
# -------------------------
def _asymptotic_centering(cfg: ExperimentConfig, setup: Setup) -> Dict[str, float]:
    """Leading-order a_N per checkpoint, next to the exact truncated expectation"""
    integral = None
    if setup.alpha < 1.0:
        try:
            integral = integral_mean(setup.obs, setup.system)
        except QuadratureFailure as e:
            logger.warning(f"No asymptotic centering: {e}")
            return {}
    return {
        str(N): dlt_inter_asymptotic_centering(setup.geom, setup.alpha, N, setup.trim.k(N), integral)
        for N in cfg.checkpoints
    }


def run_dlt_inter(cfg: ExperimentConfig, workers: Optional[int] = None) -> ExperimentResult:
    setup = build_setup(cfg)
    validate_regime(cfg, setup)
    alpha = setup.alpha
    norms = {}
    for N in cfg.checkpoints:
        a_N, b_N, sigma2 = dlt_inter_normalization(setup.geom, alpha, N, setup.trim.k(N), setup.obs, setup.system)
        norms[N] = Normalization(Theorem.DLT_INTER, N, a_N, b_N, normal_law(sigma2))
    sigma2 = norms[cfg.checkpoints[-1]].limit.variance
    records = _run_orbits(cfg, workers)
    discarded = _log_discards(records)
    _apply(records, norms, "S_trim")

    rows, gof = [], []
    for N in cfg.checkpoints:
        values = _column(records, N)
        row = _orbit_row(cfg, setup, norms[N], "S_trim", values, len(discarded))
        if values.shape[0]:
            ks = ks_distance(values, lambda x: normal_cdf(x, sigma2))
            _judge(row, "ks", ks, cfg.ks_threshold)
            gof.append(GofReport("ks_normal", ks, cfg.ks_threshold, int(values.shape[0]),
                                 {"N": N, "sigma2": sigma2}).to_dict())
        rows.append(row)
    ok = _last_passed(gof, cfg.checkpoints[-1])
    constants = {
        "sigma2": sigma2,
        "normalizations": _norm_constants(norms),
        "asymptotic_centering": _asymptotic_centering(cfg, setup),
    }
    return ExperimentResult(cfg, records, ORBIT_COLUMNS, rows, gof,
                            _metadata(cfg, setup, records, constants, discarded), ok)


def run_dlt_light(cfg: ExperimentConfig, workers: Optional[int] = None) -> ExperimentResult:
    setup = build_setup(cfg)
    validate_regime(cfg, setup)
    alpha, K, R = setup.alpha, setup.trim.k(1), cfg.horizon
    norms, details = {}, {}
    for N in cfg.checkpoints:
        d = dlt_light_normalization(setup.geom, alpha, N, R, setup.obs, setup.system)
        details[N] = d
        norms[N] = Normalization(Theorem.DLT_LIGHT, N, d["a_N"], d["scale"], trimmed_ppp_law(K, alpha))
    law = reference_law(K, alpha, R, coupling=details[cfg.checkpoints[-1]]["coupling"])
    reference = sample_reference(law, R, cfg, workers)
    records = _run_orbits(cfg, workers)
    discarded = _log_discards(records)
    _apply(records, norms, "S_trim")

    rows, gof = [], []
    for N in cfg.checkpoints:
        values = _column(records, N)
        row = _orbit_row(cfg, setup, norms[N], "S_trim", values, len(discarded))
        row["target_value"] = law.coupling
        if values.shape[0]:
            ks = ks_two_sample(values, reference)
            _judge(row, "ks2", ks, cfg.ks_threshold)
            gof.append(GofReport("ks_reference", ks, cfg.ks_threshold, int(values.shape[0]),
                                 {"N": N, "reference_samples": int(reference.shape[0])}).to_dict())
        rows.append(row)
    ok = _last_passed(gof, cfg.checkpoints[-1])
    constants = {
        "reference_law": asdict(law),
        "normalizations": _norm_constants(norms),
        "light_details": [dict(N=N, **d) for N, d in details.items()],
    }
    return ExperimentResult(cfg, records, ORBIT_COLUMNS, rows, gof,
                            _metadata(cfg, setup, records, constants, discarded), ok)


def _last_passed(gof: Sequence[Dict[str, Any]], N: int) -> bool:
    return bool(gof) and gof[-1]["metadata"].get("N") == N and gof[-1]["pass"]


# -------------------------
# RETURNS TO SHRINKING BALLS
# -------------------------
def run_poisson_returns(cfg: ExperimentConfig, workers: Optional[int] = None) -> ExperimentResult:
    """Counts of returns to balls of mass t/N: Poisson(t) marginals, nested-scale independence, K-trimmed identity"""
    setup = build_setup(cfg)
    validate_regime(cfg, setup)
    N = cfg.checkpoints[-1]
    ts = sorted(cfg.t_values)
    radii = [ball_radius_for_mass(setup.system, setup.obs.site, t / N) for t in ts]
    closest_k = max(cfg.trim_levels)
    jobs = [(cfg, i, radii, [N], closest_k) for i in range(cfg.replicas)]
    records = sort_records([r for batch in run_parallel(ball_replica, jobs, workers) for r in batch])
    discarded = _log_discards(records)
    kept = [r for r in records if not r.discarded]
    counts = np.array([r.values["counts"] for r in kept], dtype=np.int64).reshape(len(kept), len(ts))
    for r in kept:
        r.values["t"] = ts
        r.values["identity"] = {K: ok for K, ok in r.values.get("identity", {}).items()
                                if int(K) in cfg.trim_levels}

    rows, gof = [], []
    if not kept:
        logger.error(f"poisson-returns: all {cfg.replicas} replicas discarded")
    scales = ts if kept else []
    for j, t in enumerate(scales):
        hist = np.bincount(counts[:, j])
        cutoff = max(int(math.ceil(10 * t)), hist.shape[0] - 1)
        tv = tv_distance_poisson(hist, t, cutoff)
        report = GofReport("tv_poisson", tv, cfg.tv_threshold, int(counts.shape[0]),
                           {"t": t, "radius": radii[j], "law": poisson_law(t).label()})
        gof.append(report.to_dict())
        # raw counts: a_N = 0, b_N = 1
        echo = {"N": N, "t": t, "radius": radii[j], "a_N": 0.0, "b_N": 1.0, "target": poisson_law(t).label()}
        total = max(int(counts.shape[0]), 1)
        pmf = poisson_pmf(t, cutoff)
        for i in range(cutoff + 1):
            observed = float(hist[i]) / total if i < hist.shape[0] else 0.0
            rows.append(dict(echo, j=i, observed_pmf=observed, reference_pmf=float(pmf[i]), passed=report.passed))
        rows.append(dict(echo, metric="tv_poisson", metric_value=tv, threshold=cfg.tv_threshold,
                         passed=report.passed))

    if len(scales) > 1:
        inner = counts[:, 0]
        annulus = counts[:, -1] - counts[:, 0]
        if counts.shape[0] > 1 and inner.std() > 0 and annulus.std() > 0:
            corr = float(np.corrcoef(inner, annulus)[0, 1])
        else:
            corr = math.nan
        gof.append(GofReport("annulus_correlation", abs(corr) if math.isfinite(corr) else math.inf,
                             cfg.corr_tolerance, int(counts.shape[0]),
                             {"t_inner": ts[0], "t_outer": ts[-1], "correlation": corr}).to_dict())

    for K in sorted(set(cfg.trim_levels)):
        if K == 0:
            continue
        violations = sum(1 for r in kept if not r.values["identity"][str(K)])
        gof.append(GofReport("trimmed_count_identity", float(violations), 0.0, len(kept), {"K": K}).to_dict())

    for g in gof:
        if g["name"] != "tv_poisson":
            rows.append({"N": N, "metric": g["name"], "metric_value": g["statistic"], "threshold": g["threshold"],
                         "passed": g["pass"]})

    ok = bool(kept) and all(g["pass"] for g in gof)
    constants = {
        "N": N, "t_values": ts, "radii": radii, "ball_masses": [t / N for t in ts],
        "leading_radii": [poisson_radius(setup.geom, N, t) for t in ts],
    }
    return ExperimentResult(cfg, records, POISSON_COLUMNS, rows, gof,
                            _metadata(cfg, setup, records, constants, discarded), ok)


def run_ball_clt(cfg: ExperimentConfig, workers: Optional[int] = None) -> ExperimentResult:
    """(S_N(1_B) - k)/sqrt(k) for balls of mass k(N)/N"""
    setup = build_setup(cfg)
    validate_regime(cfg, setup)
    ks_ = [setup.trim.k(N) for N in cfg.checkpoints]
    radii = [ball_radius_for_mass(setup.system, setup.obs.site, k / N) for k, N in zip(ks_, cfg.checkpoints)]
    norms = {
        N: Normalization(Theorem.POISSON_RETURNS, N, float(k), math.sqrt(k), normal_law(1.0))
        for k, N in zip(ks_, cfg.checkpoints)
    }
    jobs = [(cfg, i, radii, list(cfg.checkpoints), 0) for i in range(cfg.replicas)]
    records = sort_records([r for batch in run_parallel(ball_replica, jobs, workers) for r in batch])
    discarded = _log_discards(records)
    position = {N: j for j, N in enumerate(cfg.checkpoints)}
    for r in records:
        if not r.discarded:
            r.values["count"] = r.values.pop("counts")[position[r.N]]
    _apply(records, norms, "count")

    rows, gof = [], []
    for N in cfg.checkpoints:
        values = _column(records, N)
        row = _orbit_row(cfg, setup, norms[N], "count", values, len(discarded))
        if values.shape[0]:
            ks = ks_distance(values, normal_cdf)
            _judge(row, "ks", ks, cfg.ks_threshold)
            gof.append(GofReport("ks_normal", ks, cfg.ks_threshold, int(values.shape[0]), {"N": N}).to_dict())
        rows.append(row)
    ok = _last_passed(gof, cfg.checkpoints[-1])
    constants = {"radii": radii, "normalizations": _norm_constants(norms)}
    return ExperimentResult(cfg, records, ORBIT_COLUMNS, rows, gof,
                            _metadata(cfg, setup, records, constants, discarded), ok)


def run_superlevel_clt(cfg: ExperimentConfig, workers: Optional[int] = None) -> ExperimentResult:
    """(S_N(1{f >= t lambda_N}) - N mu(f >= t lambda_N)) / sqrt(k) against N(0, t^(-1/alpha)) for each t"""
    setup = build_setup(cfg)
    validate_regime(cfg, setup)
    alpha, ts = setup.alpha, sorted(cfg.t_values)
    law = tail_law(setup.obs, setup.system)
    norms, cuts, leading = {}, [], {}
    for N in cfg.checkpoints:
        k = setup.trim.k(N)
        lam = lambda_cut(setup.geom, alpha, N, k, setup.obs, setup.system)
        for t in ts:
            cut = t * lam
            cuts.append(cut)
            center = N * tail_measure(setup.obs, setup.system, cut)
            norms[(N, t)] = Normalization(Theorem.SUPERLEVEL_CLT, N, center, math.sqrt(k),
                                          normal_law(t ** (-1.0 / alpha)))
            leading[(N, t)] = N * law.tail(cut)

    jobs = [(cfg, i, cuts) for i in range(cfg.replicas)]
    records = sort_records([r for batch in run_parallel(superlevel_replica, jobs, workers) for r in batch])
    discarded = _log_discards(records)
    position = {N: j for j, N in enumerate(cfg.checkpoints)}
    for r in records:
        if r.discarded:
            continue
        start = position[r.N] * len(ts)
        counts = r.values.pop("counts")[start:start + len(ts)]
        r.values["t"] = ts
        r.values["counts"] = counts
        r.values["normalized"] = [norms[(r.N, t)].normalize(c) for t, c in zip(ts, counts)]

    rows, gof = [], []
    for N in cfg.checkpoints:
        for i, t in enumerate(ts):
            norm = norms[(N, t)]
            values = np.array([r.values["normalized"][i] for r in records if r.N == N and not r.discarded])
            row = _orbit_row(cfg, setup, norm, "superlevel_count", values, len(discarded))
            row.update(t=t, cut=cuts[position[N] * len(ts) + i], leading_center=leading[(N, t)])
            if values.shape[0]:
                variance = norm.limit.variance
                ks = ks_distance(values, lambda x, v=variance: normal_cdf(x, v))
                _judge(row, "ks", ks, cfg.ks_threshold)
                gof.append(GofReport("ks_superlevel", ks, cfg.ks_threshold, int(values.shape[0]),
                                     {"N": N, "t": t, "variance": variance}).to_dict())
            rows.append(row)

    last = [g for g in gof if g["metadata"]["N"] == cfg.checkpoints[-1]]
    ok = len(last) == len(ts) and all(g["pass"] for g in last)
    constants = {
        "t_values": ts,
        "tail_law": asdict(law),
        "cuts": [{"N": N, "t": t, "cut": cuts[position[N] * len(ts) + i], "center": norms[(N, t)].a_N,
                  "leading_center": leading[(N, t)], "variance": norms[(N, t)].limit.variance}
                 for N in cfg.checkpoints for i, t in enumerate(ts)],
    }
    return ExperimentResult(cfg, records, SUPERLEVEL_COLUMNS, rows, gof,
                            _metadata(cfg, setup, records, constants, discarded), ok)


# -------------------------
# REFERENCE LAW
# -------------------------
def run_ppp_limit(cfg: ExperimentConfig, workers: Optional[int] = None) -> ExperimentResult:
    """Reference-law samples, the cumulant oracle on a window, and the moment-threshold tail slope"""
    setup = build_setup(cfg)
    validate_regime(cfg, setup)
    alpha, K, R = setup.alpha, setup.trim.k(1), cfg.horizon
    law = reference_law(K, alpha, R)
    sizes = _split(cfg.reference_samples, cfg.replicas)

    reference = sample_reference(law, R, cfg, workers)
    nlo, nhi = cfg.window
    window_jobs = [(alpha, nlo, nhi, cfg.seed, i, n) for i, n in enumerate(sizes)]
    windows = run_parallel(window_chunk, window_jobs, workers)
    window = np.concatenate(windows)

    records, start = [], 0
    for i, (n, w) in enumerate(zip(sizes, windows)):
        batch = reference[start:start + n]
        start += n
        records.append(ReplicaRecord(replica=i, N=n, values={
            "reference_mean": float(batch.mean()), "reference_max": float(batch.max()),
            "window_mean": float(w.mean()),
        }))

    rows, gof = [], []
    kappas = [cumulant(k, alpha, nlo, nhi) for k in range(1, 5)]
    exact = moments_from_cumulants(kappas)
    mean, m2, m3, m4 = sample_moments(window, 4)
    n = window.shape[0]
    se2 = math.sqrt(max(m4 - m2 * m2, 0.0) / n)
    var_dev = abs(m2 - kappas[1]) / se2 if se2 > 0 else math.inf
    gof.append(GofReport("variance_sigmas", var_dev, ORACLE_SIGMAS, n, {"kappa2": kappas[1], "variance": m2}).to_dict())
    rows.append({"quantity": "variance", "estimate": m2, "reference": kappas[1], "standard_error": se2,
                 "rel_error": abs(m2 / kappas[1] - 1.0), "passed": gof[-1]["pass"]})
    for name, estimate, target in (("m3", m3, exact[2]), ("m4", m4, exact[3])):
        rel = abs(estimate / target - 1.0)
        gof.append(GofReport(f"{name}_rel_error", rel, cfg.tolerance, n,
                             {"estimate": estimate, "exact": target}).to_dict())
        rows.append({"quantity": name, "estimate": estimate, "reference": target, "rel_error": rel,
                     "passed": gof[-1]["pass"]})

    expected_slope = -law.moment_threshold
    try:
        slope = hill_tail_slope(reference, tuple(cfg.decade))
    except InsufficientTail as e:
        logger.warning(f"Tail slope not fitted: {e}")
        slope = math.nan
    rel = abs(slope / expected_slope - 1.0) if math.isfinite(slope) else math.inf
    gof.append(GofReport("tail_slope_rel_error", rel, TAIL_SLOPE_TOLERANCE, int(reference.shape[0]),
                         {"slope": slope, "expected": expected_slope, "decade": list(cfg.decade)}).to_dict())
    rows.append({"quantity": "tail_slope", "estimate": slope, "reference": expected_slope, "rel_error": rel,
                 "passed": gof[-1]["pass"]})

    ok = all(g["pass"] for g in gof)
    reference_meta = {
        "K": K, "alpha": alpha, "horizon": R, "c_R": law.c_R, "coupling": law.coupling,
        "samples": int(reference.shape[0]), "moment_threshold": law.moment_threshold,
        "seed": cfg.seed, "stream": Stream.REFERENCE.name,
    }
    constants = {"reference_law": reference_meta, "cumulants": kappas, "moments": exact, "window": [nlo, nhi]}
    result = ExperimentResult(cfg, records, PPP_COLUMNS, rows, gof, _metadata(cfg, setup, records, constants, []), ok)
    result.extra_files["reference.csv"] = (["y"], reference)
    result.extra_json["reference.json"] = reference_meta
    return result


# -------------------------
# S-HAT VERSUS S
# -------------------------
def run_near_equivalence(cfg: ExperimentConfig, workers: Optional[int] = None) -> ExperimentResult:
    """Distribution of S-hat/S - 1 and (S-hat - S)/N^alpha per checkpoint"""
    setup = build_setup(cfg)
    validate_regime(cfg, setup)
    alpha = setup.alpha
    records = _run_orbits(cfg, workers)
    discarded = _log_discards(records)
    for r in records:
        if r.discarded:
            continue
        S, S_hat = r.values["S_trim"], r.values["S_hat"]
        r.values["ratio"] = S_hat / S - 1.0 if S != 0.0 else 0.0
        r.values["gap"] = (S_hat - S) / r.N ** alpha

    rows, gof, medians = [], [], []
    exact_zero = True
    exact = setup.obs.is_radial or setup.trim.mode is TrimMode.NONE
    for N in cfg.checkpoints:
        ratios = _column(records, N, "ratio")
        gaps = _column(records, N, "gap")
        # the gap column is (S-hat - S) / N^alpha
        row = {"N": N, "k": setup.trim.k(N), "a_N": 0.0, "b_N": float(N) ** alpha,
               "target": point_mass(0.0).label(), "target_value": 0.0,
               "replicas": int(ratios.shape[0]), "discards": len(discarded), "passed": False}
        if ratios.shape[0]:
            med, q25, q75 = median_and_quartiles(ratios)
            medians.append(med)
            exact_zero = exact_zero and bool(np.all(ratios == 0.0))
            row.update(median_ratio=med, q25_ratio=q25, q75_ratio=q75, max_ratio=float(ratios.max()),
                       median_gap=float(np.median(gaps)))
            if exact:
                _judge(row, "max_abs_ratio", float(np.abs(ratios).max()), 0.0)
            else:
                _judge(row, "median_ratio", med, cfg.tolerance)
        rows.append(row)

    complete = len(medians) == len(cfg.checkpoints)
    if exact:
        gof.append(GofReport("nonzero_ratio", float(not exact_zero), 0.0, len(medians)).to_dict())
    else:
        trend = complete and nonincreasing(medians)
        gof.append(GofReport("median_ratio", medians[-1] if complete else math.inf, cfg.tolerance,
                             len(medians), {"medians": medians}).to_dict())
        gof.append(GofReport("ratio_trend", float(not trend), 0.0, len(medians)).to_dict())
    ok = complete and all(g["pass"] for g in gof)
    constants = {"alpha": alpha, "k": {str(N): setup.trim.k(N) for N in cfg.checkpoints}}
    return ExperimentResult(cfg, records, NEAR_COLUMNS, rows, gof,
                            _metadata(cfg, setup, records, constants, discarded), ok)


RUNNERS: Dict[ExperimentKind, Callable[..., ExperimentResult]] = {
    ExperimentKind.SLLN_LIGHT: run_strong_law,
    ExperimentKind.SLLN_INTER: run_strong_law,
    ExperimentKind.SLLN_INTER_D: run_strong_law,
    ExperimentKind.WEAK_LAW: run_strong_law,
    ExperimentKind.DLT_LIGHT: run_dlt_light,
    ExperimentKind.DLT_INTER: run_dlt_inter,
    ExperimentKind.POISSON_RETURNS: run_poisson_returns,
    ExperimentKind.PPP_LIMIT: run_ppp_limit,
    ExperimentKind.NEAR_EQUIVALENCE: run_near_equivalence,
    ExperimentKind.BALL_CLT: run_ball_clt,
    ExperimentKind.SUPERLEVEL_CLT: run_superlevel_clt,
}
