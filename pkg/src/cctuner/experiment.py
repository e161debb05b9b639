"""Replicated tuning experiments and their reports.

An experiment sweeps mode x distribution x eps over independent
replications. Each replication draws its own tuning and out-of-sample
sets from seed streams that depend only on the replication index, tunes
s on the tuning set, and scores the tuned dispatch out of sample. Rows
come out in canonical sweep order regardless of worker scheduling.
"""

from __future__ import annotations

import concurrent.futures
import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Dict, Optional, Sequence, Tuple

from .grid import GridCase, apply_rts_modifications, parse_case_file
from .ptdf import compute_ptdf
from .reformulation import build_catalog, participation_factors
from .tuner import TuningConfig, TuningError, tune
from .uncertainty import (
    GaussianSpec,
    MixtureSpec,
    UniformBoxSpec,
    derive_seed,
    empirical_moments,
    gaussian_from_std_corr,
    sample,
    spec_moments,
)
from .violation import evaluate

logger = logging.getLogger(__name__)

# Seed stream tags: child seeds depend only on the tag and the
# replication index, so every sweep cell of a replication shares its
# tuning draw and its out-of-sample draw.
STREAM_TUNING = 0
STREAM_OOS = 1

REPORT_COLUMNS = (
    "mode",
    "distribution",
    "eps_des",
    "replication",
    "iterations",
    "cost",
    "s",
    "s_true",
    "eps_obs_single",
    "eps_oos_single",
    "eps_obs_joint",
    "eps_oos_joint",
)

_SQRT2 = math.sqrt(2.0)
_SQRT_2PI = math.sqrt(2.0 * math.pi)


class ConfigError(ValueError):
    """Raised for malformed experiment configuration."""


def normal_cdf(x: float) -> float:
    """Standard normal distribution function."""
    return 0.5 * (1.0 + math.erf(x / _SQRT2))


# Rational approximation coefficients for the standard normal quantile
# (relative error below 1.2e-9 before refinement).
_ICDF_A = (
    -3.969683028665376e01,
    2.209460984245205e02,
    -2.759285104469687e02,
    1.383577518672690e02,
    -3.066479806614716e01,
    2.506628277459239e00,
)
_ICDF_B = (
    -5.447609879822406e01,
    1.615858368580409e02,
    -1.556989798598866e02,
    6.680131188771972e01,
    -1.328068155288572e01,
)
_ICDF_C = (
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e00,
    -2.549732539343734e00,
    4.374664141464968e00,
    2.938163982698783e00,
)
_ICDF_D = (
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e00,
    3.754408661907416e00,
)
_ICDF_P_LOW = 0.02425


def inv_normal_cdf(p: float) -> float:
    """Standard normal quantile, accurate to well below 1e-9.

    Piecewise rational approximation polished by one Newton step on the
    erf-based distribution function.
    """
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie strictly between 0 and 1")
    a, b, c, d = _ICDF_A, _ICDF_B, _ICDF_C, _ICDF_D
    if p < _ICDF_P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / (
            (((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0
        )
    elif p <= 1.0 - _ICDF_P_LOW:
        q = p - 0.5
        r = q * q
        x = (
            (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5])
            * q
            / (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0)
        )
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        x = -(
            (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5])
            / ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
        )
    err = normal_cdf(x) - p
    x -= err * _SQRT_2PI * math.exp(0.5 * x * x)
    return x


def parse_config_text(text: str) -> Dict[str, str]:
    """Parse flat key = value lines with dotted keys.

    Blank lines and full-line # comments are skipped. Duplicate keys are
    rejected so a typo cannot silently shadow an earlier setting.
    """
    out: Dict[str, str] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected key = value, got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"line {line_no}: empty key")
        if key in out:
            raise ConfigError(f"line {line_no}: duplicate key {key!r}")
        out[key] = value
    return out


def parse_config_file(path) -> Dict[str, str]:
    with open(path, "r", encoding="utf-8") as handle:
        return parse_config_text(handle.read())


def _split_list(value: str) -> Tuple[str, ...]:
    return tuple(part.strip() for part in value.split(",") if part.strip())


def _get(cfg, key, default=None, required=False):
    if key in cfg:
        return cfg[key]
    if required:
        raise ConfigError(f"missing required key {key!r}")
    return default


def _get_float(cfg, key, default=None, required=False):
    raw = _get(cfg, key, default=None, required=required)
    if raw is None:
        return default
    try:
        return float(Fraction(raw))
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"key {key!r}: {raw!r} is not a number") from exc


def _get_int(cfg, key, default=None, required=False):
    raw = _get(cfg, key, default=None, required=required)
    if raw is None:
        return default
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"key {key!r}: {raw!r} is not an integer") from exc


@dataclass(frozen=True)
class ExperimentConfig:
    """Typed view of a flat experiment configuration."""

    case: str = "rts24"
    modes: Tuple[str, ...] = ("single",)
    distributions: Tuple[str, ...] = ("gaussian",)
    eps_values: Tuple[str, ...] = ("0.1",)
    replications: int = 1
    n_tuning: int = 10_000
    n_oos: int = 100_000
    gamma: str = "1e-4"
    width_tol: float = 1e-6
    max_iterations: int = 60
    seed: int = 1
    moment_source: str = "auto"
    raw: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for mode in self.modes:
            if mode not in ("single", "joint"):
                raise ConfigError(f"unknown mode {mode!r}")
        for dist in self.distributions:
            if dist not in ("gaussian", "mixture"):
                raise ConfigError(f"unknown distribution {dist!r}")
        if self.moment_source not in ("auto", "spec", "empirical"):
            raise ConfigError(f"unknown moment_source {self.moment_source!r}")
        for eps in self.eps_values:
            value = float(Fraction(eps))
            if not 0 < value < 1:
                raise ConfigError(f"eps {eps!r} out of range")
        if self.replications < 0:
            raise ConfigError("replications must be nonnegative")
        if self.n_tuning < 1 or self.n_oos < 1:
            raise ConfigError("sample counts must be positive")

    @classmethod
    def from_mapping(cls, cfg: Dict[str, str]) -> "ExperimentConfig":
        return cls(
            case=_get(cfg, "case", "rts24"),
            modes=_split_list(_get(cfg, "modes", "single")),
            distributions=_split_list(_get(cfg, "distributions", "gaussian")),
            eps_values=_split_list(_get(cfg, "eps", "0.1")),
            replications=_get_int(cfg, "replications", 1),
            n_tuning=_get_int(cfg, "tuning.samples", 10_000),
            n_oos=_get_int(cfg, "oos.samples", 100_000),
            gamma=_get(cfg, "gamma", "1e-4"),
            width_tol=_get_float(cfg, "width_tol", 1e-6),
            max_iterations=_get_int(cfg, "max_iterations", 60),
            seed=_get_int(cfg, "seed", 1),
            moment_source=_get(cfg, "moment_source", "auto"),
            raw=dict(cfg),
        )

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        return cls.from_mapping(parse_config_text(text))

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        return cls.from_mapping(parse_config_file(path))


def load_case(name_or_path: str) -> GridCase:
    """Resolve the case key: the built-in study network or a file path."""
    if name_or_path == "rts24":
        from . import load_rts_case

        return apply_rts_modifications(load_rts_case())
    return parse_case_file(name_or_path)


def build_distribution(name: str, cfg: Dict[str, str], case: GridCase):
    """Construct the sampling spec for a configured distribution name."""
    n_unc = len(case.uncertain_buses)
    if name == "gaussian":
        std = [float(Fraction(v)) for v in _split_list(_get(cfg, "gaussian.std_mw", required=True))]
        corr = _get_float(cfg, "gaussian.correlation", 0.0)
        if len(std) != n_unc:
            raise ConfigError(
                f"gaussian.std_mw has {len(std)} entries for {n_unc} uncertain buses"
            )
        return gaussian_from_std_corr(std, corr)
    if name == "mixture":
        weights = [
            float(Fraction(v))
            for v in _split_list(_get(cfg, "mixture.weights", "1/3, 1/3, 1/3"))
        ]
        if len(weights) != 3:
            raise ConfigError("mixture.weights must have three entries")
        std1 = [float(Fraction(v)) for v in _split_list(_get(cfg, "mixture.g1.std_mw", "7, 14"))]
        corr1 = _get_float(cfg, "mixture.g1.correlation", 0.5)
        std2 = [float(Fraction(v)) for v in _split_list(_get(cfg, "mixture.g2.std_mw", "6, 6"))]
        corr2 = _get_float(cfg, "mixture.g2.correlation", 0.1)
        low = _get_float(cfg, "mixture.uniform.low_mw", -30.0)
        high = _get_float(cfg, "mixture.uniform.high_mw", 30.0)
        if len(std1) != n_unc or len(std2) != n_unc:
            raise ConfigError("mixture component std lists must match the uncertain buses")
        box = UniformBoxSpec(lower_mw=[low] * n_unc, upper_mw=[high] * n_unc)
        return MixtureSpec(
            components=(
                (weights[0], gaussian_from_std_corr(std1, corr1)),
                (weights[1], gaussian_from_std_corr(std2, corr2)),
                (weights[2], box),
            )
        )
    raise ConfigError(f"unknown distribution {name!r}")


@dataclass(frozen=True)
class ResultRow:
    mode: str
    distribution: str
    eps_des: float
    replication: int
    iterations: Optional[int] = None
    cost: Optional[float] = None
    s: Optional[float] = None
    s_true: Optional[float] = None
    eps_obs_single: Optional[float] = None
    eps_oos_single: Optional[float] = None
    eps_obs_joint: Optional[float] = None
    eps_oos_joint: Optional[float] = None
    terminated_by: str = ""
    failed: bool = False
    error: str = ""


@dataclass(frozen=True)
class AverageRow:
    mode: str
    distribution: str
    eps_des: float
    replications: int
    iterations: Optional[float] = None
    cost: Optional[float] = None
    s: Optional[float] = None
    s_true: Optional[float] = None
    eps_obs_single: Optional[float] = None
    eps_oos_single: Optional[float] = None
    eps_obs_joint: Optional[float] = None
    eps_oos_joint: Optional[float] = None


@dataclass(frozen=True)
class ExperimentReport:
    config: ExperimentConfig
    rows: Tuple[ResultRow, ...]
    averages: Tuple[AverageRow, ...]


def _run_cell(case, raw_cfg, mode, dist_name, eps, rep, config) -> ResultRow:
    """Tune one sweep cell and score it out of sample."""
    spec = build_distribution(dist_name, raw_cfg, case)
    tuning_seed = derive_seed(config.seed, STREAM_TUNING, rep)
    oos_seed = derive_seed(config.seed, STREAM_OOS, rep)
    tuning_samples = sample(spec, config.n_tuning, tuning_seed, case)

    source = config.moment_source
    if source == "auto":
        source = "spec" if dist_name == "gaussian" else "empirical"
    if source == "spec":
        moments = spec_moments(spec, case)
    else:
        moments = empirical_moments(tuning_samples)

    catalog = build_catalog(case, compute_ptdf(case), participation_factors(case), moments)
    tuning = TuningConfig(
        eps_des=eps,
        gamma=config.gamma,
        mode=mode,
        width_tol=config.width_tol,
        max_iterations=config.max_iterations,
    )
    s_true = None
    if dist_name == "gaussian" and mode == "single":
        s_true = inv_normal_cdf(1.0 - float(Fraction(eps)))
    try:
        result = tune(case, catalog, tuning_samples, tuning)
    except TuningError as exc:
        return ResultRow(
            mode=mode,
            distribution=dist_name,
            eps_des=float(Fraction(eps)),
            replication=rep,
            s_true=s_true,
            failed=True,
            error=str(exc),
        )
    oos_samples = sample(spec, config.n_oos, oos_seed, case)
    oos = evaluate(result.p_g, oos_samples, catalog)
    return ResultRow(
        mode=mode,
        distribution=dist_name,
        eps_des=float(Fraction(eps)),
        replication=rep,
        iterations=result.iterations,
        cost=result.objective,
        s=result.s,
        s_true=s_true,
        eps_obs_single=float(result.eps_single),
        eps_oos_single=float(oos.eps_single),
        eps_obs_joint=float(result.eps_joint),
        eps_oos_joint=float(oos.eps_joint),
        terminated_by=result.terminated_by,
    )


def _cell_args(case, config):
    for mode in config.modes:
        for dist_name in config.distributions:
            for eps in config.eps_values:
                for rep in range(1, config.replications + 1):
                    yield (case, config.raw, mode, dist_name, eps, rep, config)


def _run_cell_star(args):
    return _run_cell(*args)


def run_experiment(config: ExperimentConfig, jobs: int = 1, case: Optional[GridCase] = None) -> ExperimentReport:
    """Run the full sweep and reduce rows in canonical order.

    jobs > 1 distributes cells over worker processes; the reduction is
    keyed by cell coordinates, so scheduling order never changes the
    report.
    """
    if case is None:
        case = load_case(config.case)
    cells = list(_cell_args(case, config))
    if jobs > 1 and len(cells) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell_star, cells, chunksize=1))
    else:
        results = [_run_cell(*args) for args in cells]

    keyed = {
        (r.mode, r.distribution, r.eps_des, r.replication): r for r in results
    }
    rows = []
    for _, _, mode, dist_name, eps, rep, _ in cells:
        row = keyed[(mode, dist_name, float(Fraction(eps)), rep)]
        if row.failed:
            logger.warning(
                "replication %d of mode=%s distribution=%s eps=%s failed: %s",
                rep,
                mode,
                dist_name,
                eps,
                row.error,
            )
        rows.append(row)

    averages = []
    for mode in config.modes:
        for dist_name in config.distributions:
            for eps in config.eps_values:
                eps_f = float(Fraction(eps))
                group = [
                    r
                    for r in rows
                    if (r.mode, r.distribution, r.eps_des) == (mode, dist_name, eps_f)
                ]
                if not group:
                    continue
                ok = [r for r in group if not r.failed]
                if not ok:
                    logger.warning(
                        "all %d replications failed for mode=%s distribution=%s eps=%s",
                        len(group),
                        mode,
                        dist_name,
                        eps,
                    )
                    averages.append(
                        AverageRow(mode=mode, distribution=dist_name, eps_des=eps_f, replications=0)
                    )
                    continue

                def mean(attr):
                    values = [getattr(r, attr) for r in ok]
                    if any(v is None for v in values):
                        return None
                    return sum(values) / len(values)

                averages.append(
                    AverageRow(
                        mode=mode,
                        distribution=dist_name,
                        eps_des=eps_f,
                        replications=len(ok),
                        iterations=mean("iterations"),
                        cost=mean("cost"),
                        s=mean("s"),
                        s_true=ok[0].s_true,
                        eps_obs_single=mean("eps_obs_single"),
                        eps_oos_single=mean("eps_oos_single"),
                        eps_obs_joint=mean("eps_obs_joint"),
                        eps_oos_joint=mean("eps_oos_joint"),
                    )
                )
    return ExperimentReport(config=config, rows=tuple(rows), averages=tuple(averages))


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


def report_to_csv(report: ExperimentReport) -> str:
    """Fixed-column CSV: one row per replication, then averages with
    the replication column set to 'avg'."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for r in report.rows:
        writer.writerow(
            [
                r.mode,
                r.distribution,
                _fmt(r.eps_des),
                r.replication,
                _fmt(r.iterations),
                _fmt(r.cost),
                _fmt(r.s),
                _fmt(r.s_true),
                _fmt(r.eps_obs_single),
                _fmt(r.eps_oos_single),
                _fmt(r.eps_obs_joint),
                _fmt(r.eps_oos_joint),
            ]
        )
    for a in report.averages:
        writer.writerow(
            [
                a.mode,
                a.distribution,
                _fmt(a.eps_des),
                "avg",
                _fmt(a.iterations),
                _fmt(a.cost),
                _fmt(a.s),
                _fmt(a.s_true),
                _fmt(a.eps_obs_single),
                _fmt(a.eps_oos_single),
                _fmt(a.eps_obs_joint),
                _fmt(a.eps_oos_joint),
            ]
        )
    return out.getvalue()


def report_to_json(report: ExperimentReport) -> str:
    """JSON mirror of the CSV report, with failure details included."""

    def row_dict(r: ResultRow):
        return {
            "mode": r.mode,
            "distribution": r.distribution,
            "eps_des": r.eps_des,
            "replication": r.replication,
            "iterations": r.iterations,
            "cost": r.cost,
            "s": r.s,
            "s_true": r.s_true,
            "eps_obs_single": r.eps_obs_single,
            "eps_oos_single": r.eps_oos_single,
            "eps_obs_joint": r.eps_obs_joint,
            "eps_oos_joint": r.eps_oos_joint,
            "terminated_by": r.terminated_by,
            "failed": r.failed,
            "error": r.error,
        }

    def avg_dict(a: AverageRow):
        return {
            "mode": a.mode,
            "distribution": a.distribution,
            "eps_des": a.eps_des,
            "replication": "avg",
            "replications": a.replications,
            "iterations": a.iterations,
            "cost": a.cost,
            "s": a.s,
            "s_true": a.s_true,
            "eps_obs_single": a.eps_obs_single,
            "eps_oos_single": a.eps_oos_single,
            "eps_obs_joint": a.eps_obs_joint,
            "eps_oos_joint": a.eps_oos_joint,
        }

    payload = {
        "config": dict(report.config.raw),
        "rows": [row_dict(r) for r in report.rows],
        "averages": [avg_dict(a) for a in report.averages],
    }
    return json.dumps(payload, indent=2)


def write_report(report: ExperimentReport, path, fmt: str = "csv") -> None:
    if fmt == "csv":
        text = report_to_csv(report)
    elif fmt == "json":
        text = report_to_json(report)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(text)
