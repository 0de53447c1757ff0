#!/usr/bin/env python3
"""
Harness module for trimlab - experiment configs, replica-parallel execution and result files

Config files are JSON objects. Recognized keys (all optional except
`experiment`):

    experiment         one of ExperimentKind
    system             iid | doubling | catmap | gauss
    profile            radial | oscillatory | digit
    beta               order of the singularity
    site               list of coordinates, default per system
    aperture           full | half, default from the site
    scale              multiplier on the residue profile
    trim               none | light:K | inter:pow:G | inter:polylog:P
    checkpoints        "start:stop:xF", "N1,N2,..." or a list of integers
    replicas, seed, output_dir, chunk_size
    horizon            PPP horizon R
    reference_samples  draws from the reference law / oracle
    t_values           Poisson-return scales t, superlevel multipliers t
    trim_levels        K values for the trimmed-count identity
    tolerance, ks_threshold, tv_threshold, corr_tolerance, deviation
    window             [nlo, nhi] for the cumulant oracle
    decade             [lo, hi] for the tail slope fit
"""

import asyncio
import json
import math
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict, fields
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import logging
import numpy as np
import psutil

from config import (
    CHUNK_SIZE, DEFAULT_CHECKPOINTS, DEFAULT_CORR_TOLERANCE, DEFAULT_DECADE, DEFAULT_DEVIATION,
    DEFAULT_HORIZON, DEFAULT_KS_THRESHOLD, DEFAULT_REFERENCE_SAMPLES, DEFAULT_REPLICAS, DEFAULT_SEED,
    DEFAULT_SYSTEM, DEFAULT_T_VALUES, DEFAULT_TOLERANCE, DEFAULT_TRIM, DEFAULT_TRIM_LEVELS,
    DEFAULT_TV_THRESHOLD, DEFAULT_WINDOW, OUTPUT_DIR, WORKERS_ENV,
)
from modules.errors import ConfigError, IOFailure, TrimlabError, WrongRegime

logger = logging.getLogger(__name__)

SEED_MASK = (1 << 64) - 1


class ExperimentKind(Enum):
    SLLN_LIGHT = "slln-light"
    SLLN_INTER = "slln-inter"
    SLLN_INTER_D = "slln-inter-d"
    WEAK_LAW = "weak-law"
    DLT_LIGHT = "dlt-light"
    DLT_INTER = "dlt-inter"
    POISSON_RETURNS = "poisson-returns"
    PPP_LIMIT = "ppp-limit"
    NEAR_EQUIVALENCE = "near-equivalence"
    BALL_CLT = "ball-clt"
    SUPERLEVEL_CLT = "superlevel-clt"

    @property
    def exploratory(self) -> bool:
        """Reported, never part of acceptance"""
        return self is ExperimentKind.SLLN_INTER_D


@dataclass
class ExperimentConfig:
    experiment: str
    system: str = DEFAULT_SYSTEM
    profile: str = "radial"
    beta: float = 1.0
    site: Optional[List[float]] = None
    aperture: Optional[str] = None
    scale: float = 1.0
    trim: str = DEFAULT_TRIM
    checkpoints: List[int] = field(default_factory=list)
    replicas: int = DEFAULT_REPLICAS
    seed: int = DEFAULT_SEED
    output_dir: str = OUTPUT_DIR
    horizon: float = DEFAULT_HORIZON
    reference_samples: int = DEFAULT_REFERENCE_SAMPLES
    t_values: List[float] = field(default_factory=lambda: list(DEFAULT_T_VALUES))
    trim_levels: List[int] = field(default_factory=lambda: list(DEFAULT_TRIM_LEVELS))
    tolerance: float = DEFAULT_TOLERANCE
    ks_threshold: float = DEFAULT_KS_THRESHOLD
    tv_threshold: float = DEFAULT_TV_THRESHOLD
    corr_tolerance: float = DEFAULT_CORR_TOLERANCE
    deviation: float = DEFAULT_DEVIATION
    window: List[float] = field(default_factory=lambda: list(DEFAULT_WINDOW))
    decade: List[float] = field(default_factory=lambda: list(DEFAULT_DECADE))
    chunk_size: int = CHUNK_SIZE

    @property
    def kind(self) -> ExperimentKind:
        return ExperimentKind(self.experiment)

    @property
    def results_dir(self) -> Path:
        return Path(self.output_dir) / self.experiment

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class ReplicaRecord:
    """One replica at one checkpoint; discarded replicas carry a reason and no statistics"""
    replica: int
    N: int
    values: Dict[str, Any] = field(default_factory=dict)
    discarded: bool = False
    reason: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        data = {"replica": self.replica, "N": self.N, "discarded": self.discarded}
        if self.discarded:
            data["reason"] = self.reason
        data.update(self.values)
        return data


CONFIG_FIELDS = {f.name for f in fields(ExperimentConfig)}


# -------------------------
# PARSING
# -------------------------
def _key_line(text: str, key: str) -> Optional[int]:
    match = re.search(rf'"{re.escape(key)}"\s*:', text)
    return text.count("\n", 0, match.start()) + 1 if match else None


def _number(value: Any) -> float:
    if isinstance(value, bool):
        raise ValueError("booleans are not numbers")
    return float(value)


def _integer(value: Any) -> int:
    number = _number(value)
    if not number.is_integer():
        raise ValueError(f"{value} is not an integer")
    return int(number)


def parse_checkpoints(spec: Any) -> List[int]:
    """`start:stop:xF` (N_j = ceil(start * F^j) <= stop), a comma list, or a list"""
    try:
        if isinstance(spec, (list, tuple)):
            cps = [_integer(v) for v in spec]
        elif isinstance(spec, str) and ":" in spec:
            start_s, stop_s, factor_s = spec.split(":")
            if not factor_s.startswith("x"):
                raise ValueError("factor must look like x10")
            start, stop, factor = _number(start_s), _number(stop_s), _number(factor_s[1:])
            if factor <= 1.0:
                raise ValueError("factor must exceed 1")
            cps, j = [], 0
            while True:
                n = int(math.ceil(round(start * factor ** j, 6)))
                if n > stop:
                    break
                cps.append(n)
                j += 1
        else:
            cps = [_integer(v) for v in str(spec).split(",") if v.strip()]
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Cannot parse checkpoints '{spec}': {e}", field="checkpoints")
    if not cps or cps[0] < 1 or any(b <= a for a, b in zip(cps, cps[1:])):
        raise ConfigError(f"Checkpoints must be positive and strictly increasing: {cps}", field="checkpoints")
    return cps


def _coerce(cfg: ExperimentConfig) -> ExperimentConfig:
    """Normalize types and check every field"""
    def fail(name: str, message: str):
        raise ConfigError(message, field=name)

    try:
        ExperimentKind(cfg.experiment)
    except ValueError:
        fail("experiment", f"Unknown experiment '{cfg.experiment}' "
                           f"(choose from {', '.join(k.value for k in ExperimentKind)})")

    numeric = {
        "beta": _number, "scale": _number, "horizon": _number, "tolerance": _number,
        "ks_threshold": _number, "tv_threshold": _number, "corr_tolerance": _number, "deviation": _number,
        "replicas": _integer, "seed": _integer, "reference_samples": _integer, "chunk_size": _integer,
    }
    for name, conv in numeric.items():
        try:
            setattr(cfg, name, conv(getattr(cfg, name)))
        except (TypeError, ValueError):
            fail(name, f"'{name}' must be numeric, got {getattr(cfg, name)!r}")

    if cfg.replicas < 1:
        fail("replicas", f"replicas must be >= 1, got {cfg.replicas}")
    if not 0 <= cfg.seed <= SEED_MASK:
        fail("seed", f"seed must be a 64-bit unsigned integer, got {cfg.seed}")
    if cfg.chunk_size < 1:
        fail("chunk_size", f"chunk_size must be >= 1, got {cfg.chunk_size}")
    if cfg.reference_samples < 1:
        fail("reference_samples", f"reference_samples must be >= 1, got {cfg.reference_samples}")
    if cfg.horizon <= 1.0:
        fail("horizon", f"horizon must exceed 1, got {cfg.horizon}")
    for name in ("tolerance", "ks_threshold", "tv_threshold", "corr_tolerance", "deviation"):
        if getattr(cfg, name) <= 0:
            fail(name, f"'{name}' must be positive")

    cfg.checkpoints = parse_checkpoints(cfg.checkpoints or DEFAULT_CHECKPOINTS)

    for name, conv in (("t_values", _number), ("trim_levels", _integer), ("window", _number), ("decade", _number)):
        value = getattr(cfg, name)
        if not isinstance(value, (list, tuple)) or not value:
            fail(name, f"'{name}' must be a nonempty list")
        try:
            setattr(cfg, name, [conv(v) for v in value])
        except (TypeError, ValueError):
            fail(name, f"'{name}' must hold numbers, got {value!r}")
    if any(t <= 0 for t in cfg.t_values):
        fail("t_values", f"t_values must be positive: {cfg.t_values}")
    if any(K < 0 for K in cfg.trim_levels):
        fail("trim_levels", f"trim_levels must be >= 0: {cfg.trim_levels}")
    for name in ("window", "decade"):
        pair = getattr(cfg, name)
        if len(pair) != 2 or not 0 < pair[0] < pair[1]:
            fail(name, f"'{name}' must be [lo, hi] with 0 < lo < hi, got {pair}")

    if cfg.site is not None:
        if not isinstance(cfg.site, (list, tuple)):
            cfg.site = [cfg.site]
        try:
            cfg.site = [_number(c) for c in cfg.site]
        except (TypeError, ValueError):
            fail("site", f"site must hold numbers, got {cfg.site!r}")
    for name in ("system", "profile", "trim", "output_dir"):
        setattr(cfg, name, str(getattr(cfg, name)))
    if cfg.aperture is not None:
        cfg.aperture = str(cfg.aperture)
    return cfg


def config_from_dict(data: Dict[str, Any], text: Optional[str] = None) -> ExperimentConfig:
    """Build a validated config; `text` is the source used for line diagnostics"""
    for key in data:
        if key not in CONFIG_FIELDS:
            raise ConfigError(f"Unknown key '{key}'", field=key, line=_key_line(text, key) if text else None)
    if "experiment" not in data:
        raise ConfigError("Missing required key 'experiment'", field="experiment")
    try:
        return _coerce(ExperimentConfig(**data))
    except ConfigError as e:
        if text and e.field and e.line is None:
            raise ConfigError(e.message, field=e.field, line=_key_line(text, e.field))
        raise


def parse_config(path, overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """Read a JSON config; CLI `overrides` replace file values"""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"Cannot read config {path}: {e}")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"Invalid JSON in {path}: {e.msg} (column {e.colno})", line=e.lineno)
    if not isinstance(data, dict):
        raise ConfigError(f"Config {path} must hold a JSON object")
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    cfg = config_from_dict(data, text)
    logger.info(f"Loaded config {path}: {cfg.experiment} on {cfg.system}")
    return cfg


def write_config(cfg: ExperimentConfig, path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as e:
        raise IOFailure(f"Cannot write config {path}: {e}")
    return path


# -------------------------
# EXECUTION
# -------------------------
def worker_count() -> int:
    """TRIMLAB_WORKERS, else the number of physical cores"""
    env = os.getenv(WORKERS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            logger.warning(f"Ignoring {WORKERS_ENV}={env!r}: not an integer")
    return psutil.cpu_count(logical=False) or 1


async def _gather_jobs(func, jobs: Sequence[Tuple], workers: int) -> List[Any]:
    loop = asyncio.get_running_loop()
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return await asyncio.gather(*(loop.run_in_executor(pool, func, *job) for job in jobs))


def run_parallel(func, jobs: Sequence[Tuple], workers: Optional[int] = None) -> List[Any]:
    """func(*job) for every job, results in job order whatever the scheduling"""
    workers = worker_count() if workers is None else workers
    try:
        if workers <= 1 or len(jobs) <= 1:
            return [func(*job) for job in jobs]
        return asyncio.run(_gather_jobs(func, jobs, min(workers, len(jobs))))
    except Exception as e:
        logger.error(f"{getattr(func, '__name__', func)} failed on one of {len(jobs)} jobs: {e}", exc_info=True)
        raise


# -------------------------
# PERSISTENCE
# -------------------------
def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    return value


def _dump(obj: Any, **kwargs) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, ensure_ascii=False, **kwargs)


def _csv_cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    text = str(_jsonable(value))
    if any(c in text for c in ",\"\n"):
        return "\"" + text.replace("\"", "\"\"") + "\""
    return text


def write_csv(path: Path, columns: Sequence[str], rows) -> Path:
    """rows is a list of dicts keyed by column, or a float array with one column per entry of `columns`"""
    with open(path, "w", encoding="utf-8") as f:
        f.write(",".join(columns) + "\n")
        if isinstance(rows, np.ndarray):
            for row in rows.reshape(rows.shape[0], -1):
                f.write(",".join(repr(float(v)) for v in row) + "\n")
        else:
            for row in rows:
                f.write(",".join(_csv_cell(row.get(c)) for c in columns) + "\n")
    return path


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: List[ReplicaRecord]
    summary_columns: List[str]
    summary_rows: List[Dict[str, Any]]
    gof: List[Dict[str, Any]]
    metadata: Dict[str, Any]
    passed: bool
    extra_files: Dict[str, Tuple[List[str], List[Dict[str, Any]]]] = field(default_factory=dict)
    extra_json: Dict[str, Dict[str, Any]] = field(default_factory=dict)


def sort_records(records: Sequence[ReplicaRecord]) -> List[ReplicaRecord]:
    return sorted(records, key=lambda r: (r.replica, r.N))


def write_results(result: ExperimentResult, directory=None) -> List[Path]:
    """Write metadata.json, replicas.jsonl, summary.csv and gof.json (plus extras); returns the paths"""
    out = Path(directory) if directory is not None else result.config.results_dir
    paths = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        meta = out / "metadata.json"
        meta.write_text(_dump(result.metadata, indent=2) + "\n", encoding="utf-8")
        paths.append(meta)

        jsonl = out / "replicas.jsonl"
        with open(jsonl, "w", encoding="utf-8") as f:
            for record in sort_records(result.records):
                f.write(_dump(record.to_dict()) + "\n")
        paths.append(jsonl)

        paths.append(write_csv(out / "summary.csv", result.summary_columns, result.summary_rows))

        gof = out / "gof.json"
        gof.write_text(_dump(result.gof, indent=2) + "\n", encoding="utf-8")
        paths.append(gof)

        for name, (columns, rows) in result.extra_files.items():
            paths.append(write_csv(out / name, columns, rows))
        for name, payload in result.extra_json.items():
            extra = out / name
            extra.write_text(_dump(payload, indent=2) + "\n", encoding="utf-8")
            paths.append(extra)
    except OSError as e:
        raise IOFailure(f"Cannot write results to {out}: {e}")
    for path in paths:
        logger.info(f"Wrote {path}")
    return paths


def run_experiment(cfg: ExperimentConfig, workers: Optional[int] = None, write: bool = True) -> ExperimentResult:
    """Validate the regime, run every replica, summarize and (optionally) write the result files"""
    from modules import experiments

    runner = experiments.RUNNERS[cfg.kind]
    logger.info(f"Starting {cfg.experiment}: {cfg.replicas} replicas, seed {cfg.seed}")
    try:
        result = runner(cfg, workers=workers)
    except (ConfigError, WrongRegime) as e:
        logger.error(f"{cfg.experiment} rejected: {e}")
        raise
    except TrimlabError as e:
        logger.error(f"{cfg.experiment} failed: {e}", exc_info=True)
        raise
    discards = sum(1 for r in result.records if r.discarded)
    logger.info(f"Finished {cfg.experiment}: pass={result.passed}, discarded records={discards}")
    if write:
        write_results(result)
    return result


def near_equivalence_experiment(cfg: ExperimentConfig, workers: Optional[int] = None,
                                write: bool = True) -> ExperimentResult:
    if cfg.kind is not ExperimentKind.NEAR_EQUIVALENCE:
        raise ConfigError(f"near_equivalence_experiment got a '{cfg.experiment}' config", field="experiment")
    return run_experiment(cfg, workers=workers, write=write)
