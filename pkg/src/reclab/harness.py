"""Seed ensembles, verdicts and reports.

Every seed draws from its own rng substream ``SeedSequence(master, spawn_key=(i,))``
so a per-seed record depends only on the config and the seed index.  Worker
threads may finish in any order; results are folded in index order, which
keeps the JSON report byte-identical for any thread count.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .core import InvalidArgumentError, RadiusSchedule, geometric_checkpoints
from .recurrence import HitSeries, hit_series
from .systems import get_system, random_modulus

log = logging.getLogger(__name__)

QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)
# execution settings: they change neither results nor the report bytes
_NOT_HASHED = ("threads", "out", "format")


class ConfigError(InvalidArgumentError):
    """The experiment config does not validate."""


class ScheduleClassError(InvalidArgumentError):
    """A divergent schedule was given to the convergence runner, or vice versa."""


def load_schema() -> dict:
    text = resources.files("reclab").joinpath("schemas/experiment.schema.json").read_text()
    return json.loads(text)


@dataclass
class ExperimentConfig:
    system: str
    schedule: dict
    N: int
    experiment: str = "sbc"
    mode: str | None = None
    ensemble: int = 100
    seed: int = 0
    x0: list | None = None
    hat: bool = False
    checkpoints_per_decade: int = 8
    ratio_tol: float = 0.10
    median_tol: float | None = None
    pass_fraction: float = 0.9
    min_normalizer: float = 100.0
    envelope_C: float = 3.0
    envelope_eps: float = 0.5
    envelope_from: int = 1000
    envelope_fraction: float = 0.95
    tail_start: int = 1000
    tail_fraction: float = 0.9
    max_hits: int | None = None
    modulus_bits: int = 61
    precision_bits: int = 512
    threads: int = 1
    out: str | None = None
    format: str = "json"

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        validate_config(data)
        cfg = cls(**data)
        cfg.check()
        return cfg

    def check(self) -> None:
        sys = get_system(self.system)
        sched = self.radius_schedule()
        if sched.dim != sys.dim:
            raise ConfigError(f"schedule has dimension {sched.dim}, {self.system} needs {sys.dim}")
        mode = self.resolved_mode
        if mode not in sys.modes:
            raise ConfigError(f"{self.system} does not support mode {mode!r}")
        if self.x0 is not None:
            if len(self.x0) != self.ensemble:
                raise ConfigError(f"x0 lists {len(self.x0)} seeds but ensemble is {self.ensemble}")
            if any(len(p) != sys.dim for p in self.x0):
                raise ConfigError(f"every x0 entry needs {sys.dim} coordinates")

    def to_dict(self) -> dict:
        return asdict(self)

    def content(self) -> dict:
        """The config without execution settings."""
        return {k: v for k, v in asdict(self).items() if k not in _NOT_HASHED}

    @property
    def resolved_mode(self) -> str:
        return get_system(self.system).default_mode if self.mode is None else self.mode

    def radius_schedule(self) -> RadiusSchedule:
        return RadiusSchedule.from_dict(self.schedule)

    def checkpoints(self) -> list:
        pts = set(geometric_checkpoints(self.N, self.checkpoints_per_decade))
        if self.experiment == "convergence" and 1 <= self.tail_start <= self.N:
            pts.add(self.tail_start)
        return sorted(pts)

    @property
    def hash(self) -> str:
        return config_hash(self)


def validate_config(data: dict) -> None:
    """Raise :class:`ConfigError` naming every offending key."""
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.path))
    if errors:
        lines = []
        for e in errors:
            where = ".".join(str(p) for p in e.path) or "<root>"
            lines.append(f"{where}: {e.message}")
        raise ConfigError("invalid config:\n  " + "\n  ".join(lines))


def config_hash(cfg: ExperimentConfig) -> str:
    data = cfg.content()
    text = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


@dataclass
class ExperimentReport:
    experiment: str
    version: str
    config: dict
    config_hash: str
    checkpoints: list
    normalizers: list
    per_seed: list
    aggregates: dict
    verdicts: dict
    iterations: int
    modulus: int | None = None
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        """True iff every verdict that was reached passed."""
        return all(v is not False for v in self.verdicts.values())

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentReport":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in names})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, allow_nan=False) + "\n"


@dataclass(frozen=True)
class EnvelopeCheck:
    checks: list  # True / False per checkpoint, None where not tested
    passed: bool


def sprindzuk_envelope(series, h: float, C_env: float = 3.0, eps_env: float = 0.5,
                       start: int = 1) -> EnvelopeCheck:
    """``|S - h Phi| <= C (h Phi)^{1/2} log(h Phi)^{3/2 + eps}`` at each checkpoint.

    Checkpoints below ``start`` or with ``h Phi <= e`` are skipped.
    """
    if isinstance(series, HitSeries):
        cps, hits, norms = series.checkpoints, series.hits, series.normalizers
    else:
        cps, hits, norms = series["checkpoints"], series["hits"], series["normalizers"]
    checks = []
    for n, s, phi in zip(cps, hits, norms):
        m = h * phi
        if n < start or not m > math.e:
            checks.append(None)
            continue
        bound = C_env * math.sqrt(m) * math.log(m) ** (1.5 + eps_env)
        checks.append(abs(s - m) <= bound)
    return EnvelopeCheck(checks, all(c is not False for c in checks))


# -- seeds -----------------------------------------------------------------------

def seed_rng(master: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master, spawn_key=(index,)))


def _draw_seed(cfg: ExperimentConfig, sys, index: int, q: int | None):
    """Seed point for ensemble member ``index``: ``a/q`` strings or floats."""
    if cfg.x0 is not None:
        return tuple(cfg.x0[index])
    rng = seed_rng(cfg.seed, index)
    if q is not None:
        return tuple(f"{int(a)}/{q}" for a in sys.sample_modular(rng, 1, q)[0])
    return tuple(float(v) for v in sys.sample(rng, 1)[0])


def _modulus(cfg: ExperimentConfig) -> int | None:
    if cfg.resolved_mode != "exact_modular" or cfg.x0 is not None:
        return None
    return random_modulus(cfg.modulus_bits, cfg.seed)


def _run_ensemble(cfg: ExperimentConfig, worker):
    sys = get_system(cfg.system)
    q = _modulus(cfg)
    seeds = [_draw_seed(cfg, sys, i, q) for i in range(cfg.ensemble)]
    t0 = time.perf_counter()
    if cfg.threads > 1 and cfg.ensemble > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(worker, seeds))
    else:
        results = [worker(s) for s in seeds]
    log.info("%s: %d seeds x %d steps in %.2fs (%d threads)", cfg.system, cfg.ensemble,
             cfg.N, time.perf_counter() - t0, cfg.threads)
    return results, q


def _quantiles(values) -> dict:
    vals = [v for v in values if v is not None]
    if not vals:
        return {}
    qs = np.quantile(np.asarray(vals, dtype=np.float64), QUANTILES)
    return {f"q{int(round(p * 100)):02d}": float(v) for p, v in zip(QUANTILES, qs)}


def _iqr(quant: dict):
    return quant["q75"] - quant["q25"] if quant else None


def _series(cfg, sys, schedule, x0):
    return hit_series(sys, x0, schedule, cfg.N, cfg.resolved_mode, cfg.checkpoints(),
                      hat=cfg.hat, precision_bits=cfg.precision_bits)


# -- runners ---------------------------------------------------------------------

def run_sbc_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """Divergent schedule: does ``S_N / Phi_N`` approach ``h(x0)`` (or 1 for the hat series)?"""
    if isinstance(cfg, dict):
        cfg = ExperimentConfig.from_dict(cfg)
    sys = get_system(cfg.system)
    schedule = cfg.radius_schedule()
    if not schedule.divergent:
        raise ScheduleClassError("schedule is convergent; use run_convergence_experiment")

    def worker(x0):
        return _series(cfg, sys, schedule, x0)

    results, q = _run_ensemble(cfg, worker)
    rows, errors, ratios, env_flags = [], [], [], []
    for i, hs in enumerate(results):
        target = 1.0 if cfg.hat else hs.density
        ratio = hs.final_ratio
        err = abs(ratio - target) / target if ratio is not None and target > 0 else None
        env = sprindzuk_envelope(hs, target, cfg.envelope_C, cfg.envelope_eps, cfg.envelope_from)
        rows.append({
            "seed_index": i, "x0": list(hs.x0), "x0_exact": hs.x0_exact, "h": hs.density,
            "target": target, "hits": hs.hits, "final_hits": hs.final_hits,
            "final_normalizer": hs.final_normalizer, "ratio": ratio, "error": err,
            "within_tol": err is not None and err <= cfg.ratio_tol,
            "envelope_pass": env.passed, "hit_log_head": hs.hit_log[:20],
        })
        errors.append(err)
        ratios.append(ratio)
        env_flags.append(env.passed)

    checkpoints = results[0].checkpoints if results else cfg.checkpoints()
    normalizers = results[0].normalizers if results else []
    phi = normalizers[-1] if normalizers else 0.0
    M = len(rows)
    within = sum(r["within_tol"] for r in rows)
    err_q, ratio_q = _quantiles(errors), _quantiles(ratios)
    agg = {
        "seeds": M,
        "final_normalizer": phi,
        "within_tol": within,
        "within_fraction": within / M if M else 0.0,
        "median_error": err_q.get("q50"),
        "error_quantiles": err_q,
        "error_iqr": _iqr(err_q),
        "ratio_quantiles": ratio_q,
        "ratio_iqr": _iqr(ratio_q),
        "envelope_pass_rate": sum(env_flags) / M if M else 0.0,
    }
    notes = []
    if phi < cfg.min_normalizer:
        notes.append(f"final normalizer {phi:.4g} below {cfg.min_normalizer:g}: no verdict")
        verdicts = {"ratio": None, "envelope": None}
    else:
        ok = agg["within_fraction"] >= cfg.pass_fraction
        if cfg.median_tol is not None:
            ok = ok and agg["median_error"] <= cfg.median_tol
        verdicts = {"ratio": bool(ok),
                    "envelope": bool(agg["envelope_pass_rate"] >= cfg.envelope_fraction)}
    return ExperimentReport("sbc", __version__, cfg.content(), cfg.hash, checkpoints,
                            normalizers, rows, agg, verdicts, M * cfg.N, q, notes)


def run_convergence_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """Convergent schedule: do hits stop after ``tail_start`` for most seeds?"""
    if isinstance(cfg, dict):
        cfg = ExperimentConfig.from_dict(cfg)
    sys = get_system(cfg.system)
    schedule = cfg.radius_schedule()
    if schedule.divergent:
        raise ScheduleClassError("schedule is divergent; use run_sbc_experiment")

    def worker(x0):
        return _series(cfg, sys, schedule, x0)

    results, q = _run_ensemble(cfg, worker)
    rows = []
    for i, hs in enumerate(results):
        before = 0
        for n, s in zip(hs.checkpoints, hs.hits):
            if n <= cfg.tail_start:
                before = s
        tail = hs.final_hits - before
        rows.append({
            "seed_index": i, "x0": list(hs.x0), "x0_exact": hs.x0_exact, "h": hs.density,
            "hits": hs.hits, "final_hits": hs.final_hits,
            "final_normalizer": hs.final_normalizer, "ratio": hs.final_ratio,
            "tail_hits": tail, "last_hit": hs.hit_log[-1] if hs.hit_log else None,
            "hit_log_head": hs.hit_log[:20],
        })
    checkpoints = results[0].checkpoints if results else cfg.checkpoints()
    normalizers = results[0].normalizers if results else []
    M = len(rows)
    clean = sum(r["tail_hits"] == 0 for r in rows)
    totals = [r["final_hits"] for r in rows]
    agg = {
        "seeds": M,
        "final_normalizer": normalizers[-1] if normalizers else 0.0,
        "tail_start": cfg.tail_start,
        "zero_tail": clean,
        "zero_tail_fraction": clean / M if M else 0.0,
        "max_total_hits": max(totals) if totals else 0,
        "mean_total_hits": float(np.mean(totals)) if totals else 0.0,
        "total_hits_quantiles": _quantiles(totals),
    }
    ok = agg["zero_tail_fraction"] >= cfg.tail_fraction
    verdicts = {"tail": bool(ok)}
    if cfg.max_hits is not None:
        verdicts["total_hits"] = bool(agg["max_total_hits"] <= cfg.max_hits)
    return ExperimentReport("convergence", __version__, cfg.content(), cfg.hash, checkpoints,
                            normalizers, rows, agg, verdicts, M * cfg.N, q, [])


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    if cfg.experiment == "convergence":
        return run_convergence_experiment(cfg)
    return run_sbc_experiment(cfg)


# -- export ----------------------------------------------------------------------

def csv_header(dim: int) -> list:
    return (["seed_index"] + [f"x0_{i + 1}" for i in range(dim)]
            + ["h", "final_hits", "final_normalizer", "ratio", "envelope_pass"])


def export_report(report: ExperimentReport, path, fmt: str = "json") -> Path:
    """Write the full JSON report or one CSV row per seed."""
    path = Path(path)
    try:
        if fmt == "json":
            path.write_text(report.to_json())
        elif fmt == "csv":
            dim = get_system(report.config["system"]).dim
            with path.open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(csv_header(dim))
                for r in report.per_seed:
                    env = r.get("envelope_pass")
                    w.writerow([r["seed_index"], *[repr(float(v)) for v in r["x0"]],
                                repr(float(r["h"])), r["final_hits"],
                                repr(float(r["final_normalizer"])),
                                "" if r["ratio"] is None else repr(float(r["ratio"])),
                                "" if env is None else int(env)])
        else:
            raise InvalidArgumentError(f"unknown report format {fmt!r}")
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc.strerror or exc}") from exc
    return path


def load_report(path) -> ExperimentReport:
    path = Path(path)
    try:
        return ExperimentReport.from_dict(json.loads(path.read_text()))
    except OSError as exc:
        raise OSError(f"cannot read report {path}: {exc.strerror or exc}") from exc
