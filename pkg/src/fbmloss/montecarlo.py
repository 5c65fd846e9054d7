"""Seeded Monte Carlo estimation of maximum-loss expectations and tails.

Replication ``r`` always draws its noise from stream ``r`` of the master seed,
so an experiment's output depends only on its configuration.  Work is cut
into fixed-size chunks (a function of the configuration alone) and the
chunks are reassembled in order, so the worker count never changes a result.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from collections import OrderedDict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import yaml
from scipy.special import ndtri

from . import bounds
from .core import ConfigError, DomainError, NumericError, ProcessParams, ScopeError, TimeGrid
from .pathstats import BatchStatistics, batch_stats
from .samplers import SamplerMethod, generate_paths, variates_needed

WORKERS_ENV = "FBMLOSS_WORKERS"
MIN_EXCEED = 50
MAX_GRID_N = 1 << 16
BIAS_REPS = 10_000
_CHUNK_BUDGET = 1 << 22  # variates held in memory per chunk


@dataclass(frozen=True)
class ExperimentConfig:
    params: ProcessParams
    n: int
    reps: int
    method: SamplerMethod = SamplerMethod.CIRCULANT
    seed: int = 0
    x_grid: tuple = ()
    confidence: float = 0.99

    def __post_init__(self):
        if not isinstance(self.params, ProcessParams):
            raise ConfigError("params must be a ProcessParams")
        try:
            method = SamplerMethod.parse(self.method)
        except DomainError as exc:
            raise ConfigError(str(exc)) from None
        object.__setattr__(self, "method", method)
        if int(self.n) != self.n or self.n < 1:
            raise ConfigError(f"n must be a positive integer, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))
        if int(self.reps) != self.reps or self.reps < 100:
            raise ConfigError(f"reps must be an integer >= 100, got {self.reps!r}")
        object.__setattr__(self, "reps", int(self.reps))
        if method is SamplerMethod.CIRCULANT and self.n & (self.n - 1):
            raise ConfigError(f"circulant sampler needs n a power of two, got {self.n}")
        if not 0 <= int(self.seed) < 1 << 64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")
        object.__setattr__(self, "seed", int(self.seed))
        xs = tuple(float(x) for x in self.x_grid)
        if any(x < 0 for x in xs) or any(b <= a for a, b in zip(xs, xs[1:])):
            raise ConfigError("x_grid must be non-negative and strictly increasing")
        object.__setattr__(self, "x_grid", xs)
        if not 0.0 < self.confidence < 1.0:
            raise ConfigError(f"confidence must lie in (0, 1), got {self.confidence!r}")
        object.__setattr__(self, "confidence", float(self.confidence))

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.params.horizon, self.n)

    @property
    def h(self):
        return self.params.h

    def replace(self, **changes) -> "ExperimentConfig":
        fields_ = {k: getattr(self, k) for k in
                   ("params", "n", "reps", "method", "seed", "x_grid", "confidence")}
        pchanges = {k: changes.pop(k) for k in ("h", "mu", "sigma", "horizon") if k in changes}
        if pchanges:
            p = self.params
            fields_["params"] = ProcessParams(
                pchanges.get("h", p.h), pchanges.get("mu", p.mu),
                pchanges.get("sigma", p.sigma), pchanges.get("horizon", p.horizon))
        fields_.update(changes)
        return ExperimentConfig(**fields_)

    def to_dict(self) -> dict:
        return {
            "params": {
                "hurst": self.params.h.value,
                "mu": self.params.mu,
                "sigma": self.params.sigma,
                "horizon": self.params.horizon,
            },
            "n": self.n,
            "reps": self.reps,
            "method": self.method.value,
            "seed": self.seed,
            "x_grid": list(self.x_grid),
            "confidence": self.confidence,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        allowed = {"params", "n", "reps", "method", "seed", "x_grid", "confidence"}
        unknown = set(data) - allowed
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        p = dict(data.pop("params", None) or {})
        unknown = set(p) - {"hurst", "mu", "sigma", "horizon"}
        if unknown:
            raise ConfigError(f"unknown params keys: {sorted(unknown)}")
        missing = {"n", "reps"} - set(data)
        if "hurst" not in p:
            missing.add("params.hurst")
        if missing:
            raise ConfigError(f"missing config keys: {sorted(missing)}")
        try:
            params = ProcessParams(p["hurst"], p.get("mu", 0.0), p.get("sigma", 1.0),
                                   p.get("horizon", 1.0))
        except DomainError as exc:
            raise ConfigError(str(exc)) from None
        return cls(params=params, **data)


def load_config_file(path) -> dict:
    """Read a YAML config into a plain dict (validated later by ``from_dict``)."""
    with open(path) as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


@dataclass(frozen=True)
class EstimateRecord:
    target: str
    x: float | None
    estimate: float
    std_error: float
    ci_low: float
    ci_high: float
    exceed_count: int | None = None


def _z(confidence: float) -> float:
    return float(ndtri(0.5 + 0.5 * confidence))


def wilson_interval(k: int, n: int, confidence: float = 0.99) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion ``k / n``."""
    if n <= 0:
        raise DomainError("need at least one trial")
    z = _z(confidence)
    p = k / n
    denom = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    lo, hi = max(0.0, centre - half), min(1.0, centre + half)
    # guard the containment of p against rounding at k = 0 or k = n
    return min(lo, p), max(hi, p)


# -- simulation ----------------------------------------------------------------

def _chunk_size(config: ExperimentConfig) -> int:
    per_path = max(variates_needed(config.method, config.grid), config.n + 1)
    return int(max(16, min(2048, _CHUNK_BUDGET // per_path)))


def _simulate_chunk(args) -> BatchStatistics:
    config, start, stop = args
    try:
        paths = generate_paths(config.method, config.h, config.grid, config.seed,
                               np.arange(start, stop, dtype=np.uint64))
    except NumericError as exc:
        raise NumericError(f"replications {start}..{stop - 1}: {exc}") from exc
    mu = config.params.mu
    if mu != 0.0:
        paths = mu * config.grid.points + config.params.sigma * paths
    return batch_stats(paths)


def resolve_workers(workers: int | None = None) -> int:
    if workers is None:
        env = os.environ.get(WORKERS_ENV, "").strip()
        try:
            workers = int(env) if env else 1
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
    return max(1, int(workers))


_cache: "OrderedDict[tuple, BatchStatistics]" = OrderedDict()
_CACHE_SIZE = 4


def _cache_key(config: ExperimentConfig) -> tuple:
    p = config.params
    # for driftless runs every statistic is linear in sigma: share one sample
    return (p.h.value, p.horizon, p.mu, p.sigma if p.mu != 0.0 else None,
            config.n, config.reps, config.method.value, config.seed)


def clear_cache() -> None:
    _cache.clear()


def simulate(config: ExperimentConfig, workers: int | None = None, progress=None,
             use_cache: bool = True) -> BatchStatistics:
    """Per-replication statistics of ``mu t + sigma B_t`` for ``config.reps`` paths.

    ``progress(done, total)`` is called after each chunk.
    """
    key = _cache_key(config)
    scale = config.params.sigma if config.params.mu == 0.0 else 1.0
    if use_cache and key in _cache:
        _cache.move_to_end(key)
        stats = _cache[key]
    else:
        size = _chunk_size(config)
        base = config if config.params.mu != 0.0 else config.replace(sigma=1.0)
        tasks = [(base, s, min(s + size, config.reps)) for s in range(0, config.reps, size)]
        parts = []
        nworkers = resolve_workers(workers)
        if nworkers == 1:
            for task in tasks:
                parts.append(_simulate_chunk(task))
                if progress:
                    progress(task[2], config.reps)
        else:
            with ProcessPoolExecutor(max_workers=nworkers) as pool:
                for task, part in zip(tasks, pool.map(_simulate_chunk, tasks)):
                    parts.append(part)
                    if progress:
                        progress(task[2], config.reps)
        stats = BatchStatistics.concat(parts)
        if use_cache:
            _cache[key] = stats
            while len(_cache) > _CACHE_SIZE:
                _cache.popitem(last=False)
    return stats.scaled(scale) if scale != 1.0 else stats


def _samples(config, samples, workers=None, progress=None) -> BatchStatistics:
    return samples if samples is not None else simulate(config, workers, progress)


# -- estimators ------------------------------------------------------------------

def mean_record(target: str, values: np.ndarray, confidence: float) -> EstimateRecord:
    values = np.asarray(values, dtype=float)
    est = float(values.mean())
    se = float(values.std(ddof=1) / math.sqrt(values.size)) if values.size > 1 else 0.0
    z = _z(confidence)
    return EstimateRecord(target, None, est, se, est - z * se, est + z * se)


def estimate_expected_maxloss(config: ExperimentConfig, samples: BatchStatistics | None = None,
                              workers: int | None = None, progress=None) -> EstimateRecord:
    stats = _samples(config, samples, workers, progress)
    return mean_record("E[M]", stats.max_loss, config.confidence)


def tail_records(values: np.ndarray, x_grid, confidence: float,
                 label: str = "P(M>x)") -> list[EstimateRecord]:
    values = np.sort(np.asarray(values, dtype=float))
    n = values.size
    out = []
    for x in x_grid:
        k = int(n - np.searchsorted(values, x, side="right"))
        p = k / n
        lo, hi = wilson_interval(k, n, confidence)
        out.append(EstimateRecord(label, float(x), p, math.sqrt(p * (1 - p) / n), lo, hi, k))
    return out


def estimate_tail(config: ExperimentConfig, samples: BatchStatistics | None = None,
                  workers: int | None = None, progress=None) -> list[EstimateRecord]:
    """Exceedance frequency of ``M > x`` for each ``x`` in the grid, Wilson CIs."""
    stats = _samples(config, samples, workers, progress)
    return tail_records(stats.max_loss, config.x_grid, config.confidence)


# -- analytic envelopes in the configured units -----------------------------------------

def lower_envelope(config: ExperimentConfig, x: float) -> float:
    """Best analytic lower bound on ``P(M > x)`` for the configured process."""
    p = config.params
    return bounds.drift_minimizer(p.horizon, p.h, p.mu, x, p.sigma).bound


def log_lower_envelope(config: ExperimentConfig, x: float) -> float:
    p = config.params
    d = bounds.drift_minimizer(p.horizon, p.h, p.mu, x, p.sigma)
    return bounds.log_normal_tail((x + p.mu * d.minimizer) / (p.sigma * d.minimizer ** p.h.value))


def log_upper_envelope(config: ExperimentConfig, x: float) -> float | None:
    """Log of the Borel upper bound (0 where it is undefined), driftless only."""
    p = config.params
    if p.mu != 0.0 or not p.h.paper_scope:
        return None
    y = x / p.sigma
    eta = bounds.default_eta(p.horizon, p.h)
    if y <= eta:
        return 0.0
    return min(0.0, bounds.log_tail_borel_upper(p.horizon, p.h, y, eta))


# -- slope fit -------------------------------------------------------------------------

@dataclass
class SlopeFit:
    x_window: tuple | None
    pointwise: list
    fitted_slope: float | None
    intercept: float | None
    r_squared: float | None
    theory_slope: float
    status: str
    envelope: list = field(default_factory=list)
    records: list = field(default_factory=list)

    @property
    def conclusive(self) -> bool:
        return self.status == "ok"


def fit_tail_slope(config: ExperimentConfig, samples: BatchStatistics | None = None,
                   min_exceed: int = MIN_EXCEED, p_window: tuple | None = None,
                   workers: int | None = None, progress=None) -> SlopeFit:
    """Least-squares slope of ``log p_hat`` against ``x^2`` over the well-sampled tail.

    Only grid points with at least ``min_exceed`` exceedances (and ``p_hat``
    inside ``p_window`` when given) enter the fit.  Fewer than three such
    points give an ``inconclusive`` result with no slope.
    """
    recs = [r for r in estimate_tail(config, samples, workers, progress) if r.x > 0]
    qual = [r for r in recs if r.exceed_count >= min_exceed]
    pointwise = [(r.x, math.log(r.estimate) / r.x**2) for r in qual]
    envelope = [(r.x, log_lower_envelope(config, r.x) / r.x**2,
                 None if (u := log_upper_envelope(config, r.x)) is None else u / r.x**2)
                for r in qual]
    lo, hi = p_window if p_window is not None else (0.0, 1.0)
    used = [r for r in qual if r.estimate < 1.0 and lo <= r.estimate <= hi]
    theory = bounds.asymptotic_slope(config.params.horizon, config.h, config.params.sigma)
    if len(used) < 3:
        return SlopeFit(None, pointwise, None, None, None, theory, "inconclusive", envelope, recs)
    x2 = np.array([r.x**2 for r in used])
    y = np.log([r.estimate for r in used])
    slope, intercept = np.polyfit(x2, y, 1)
    resid = y - (slope * x2 + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return SlopeFit((used[0].x, used[-1].x), pointwise, float(slope), float(intercept), r2,
                    theory, "ok", envelope, recs)


# -- bound verification ------------------------------------------------------------------

@dataclass(frozen=True)
class CheckRecord:
    name: str
    x: float | None
    analytic: float | tuple
    estimate: float
    ci_low: float
    ci_high: float
    exceed_count: int | None
    verdict: str
    note: str = ""


@dataclass
class VerificationReport:
    config: ExperimentConfig
    checks: list
    bias: float
    expected: EstimateRecord | None = None

    @property
    def failures(self) -> list:
        return [c for c in self.checks if c.verdict == "fail"]

    @property
    def passed(self) -> bool:
        return not self.failures

    def verdict_counts(self) -> dict:
        out: dict = {}
        for c in self.checks:
            out[c.verdict] = out.get(c.verdict, 0) + 1
        return out

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "overall": "pass" if self.passed else "fail",
            "grid_bias_estimate": self.bias,
            "counts": self.verdict_counts(),
            "checks": [
                {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(c).items()}
                for c in self.checks
            ],
        }


def _verdict(respects: bool, straddles: bool, exceed: int | None, min_exceed: int) -> str:
    if not respects:
        return "fail"
    if straddles and exceed is not None and exceed < min_exceed:
        return "inconclusive"
    return "pass"


def _upper_check(name, rec, bound, min_exceed, note=""):
    respects = rec.ci_low <= bound
    straddles = rec.ci_low <= bound <= rec.ci_high
    return CheckRecord(name, rec.x, bound, rec.estimate, rec.ci_low, rec.ci_high,
                       rec.exceed_count, _verdict(respects, straddles, rec.exceed_count, min_exceed), note)


def _lower_check(name, rec, bound, slack, min_exceed):
    respects = rec.ci_high + slack >= bound
    straddles = rec.ci_low <= bound <= rec.ci_high + slack
    return CheckRecord(name, rec.x, bound, rec.estimate, rec.ci_low, rec.ci_high,
                       rec.exceed_count, _verdict(respects, straddles, rec.exceed_count, min_exceed),
                       f"grid-bias slack {slack:.3g}")


def grid_bias_estimate(config: ExperimentConfig, reps: int = BIAS_REPS,
                       workers: int | None = None) -> float:
    """Estimated shortfall of grid ``E[M]`` below its continuum value at ``config.n``.

    Compares ``n`` with ``2 n`` on ``min(reps, config.reps)`` replications and
    extrapolates assuming the shortfall decays like ``n^-H``.
    """
    r = min(reps, config.reps)
    coarse = simulate(config.replace(reps=r), workers).max_loss.mean()
    fine = simulate(config.replace(reps=r, n=2 * config.n), workers).max_loss.mean()
    hv = config.h.value
    return float(max(0.0, fine - coarse) / (1.0 - 2.0 ** (-hv)))


def _prob_slack(config, x, bias):
    # p_grid(x) ~ p_cont(x + bias): a lower bound at x is judged against its value at x + bias
    if bias <= 0:
        return 0.0
    return max(0.0, lower_envelope(config, x) - lower_envelope(config, x + bias))


def verify_bounds(config: ExperimentConfig, samples: BatchStatistics | None = None,
                  bias: float | None = None, min_exceed: int = MIN_EXCEED,
                  workers: int | None = None, progress=None) -> VerificationReport:
    """Check every analytic bound against the simulated sample.

    Driftless unit-diffusion configs get checks (a)-(d): the expected-loss
    sandwich, the Markov tail bound, the Gaussian lower tail and the Borel
    upper tail.  Other configs get check (e), the drift lower bound.
    Lower-bound checks are credited the discretization shortfall ``bias``
    (estimated by grid refinement when not given).
    """
    stats = _samples(config, samples, workers, progress)
    p = config.params
    if bias is None:
        bias = grid_bias_estimate(config, workers=workers)
    tails = [r for r in tail_records(stats.max_loss, config.x_grid, config.confidence) if r.x > 0]
    checks = []
    expected = None
    if p.is_standard:
        expected = mean_record("E[M]", stats.max_loss, config.confidence)
        try:
            eb = bounds.expected_maxloss_bounds(p.horizon, p.h)
        except ScopeError as exc:
            eb = None
            checks.append(CheckRecord("a:expected_sandwich", None, (math.nan, math.nan),
                                      expected.estimate, expected.ci_low, expected.ci_high,
                                      None, "not_applicable", str(exc)))
        if eb is not None:
            ok = eb.lower <= expected.ci_low and expected.ci_high <= eb.upper
            checks.append(CheckRecord("a:expected_sandwich", None, (eb.lower, eb.upper),
                                      expected.estimate, expected.ci_low, expected.ci_high,
                                      None, "pass" if ok else "fail"))
        for rec in tails:
            if eb is not None:
                checks.append(_upper_check("b:markov_upper", rec,
                                           bounds.tail_markov_upper(p.horizon, p.h, rec.x), min_exceed))
            checks.append(_lower_check("c:gaussian_lower", rec,
                                       bounds.tail_gaussian_lower(p.horizon, p.h, rec.x),
                                       _prob_slack(config, rec.x, bias), min_exceed))
            if eb is None:
                continue
            if rec.x <= eb.upper:
                checks.append(CheckRecord("d:borel_upper", rec.x, math.nan, rec.estimate,
                                          rec.ci_low, rec.ci_high, rec.exceed_count,
                                          "not_applicable", "x <= eta"))
            else:
                checks.append(_upper_check("d:borel_upper", rec,
                                           bounds.tail_borel_upper(p.horizon, p.h, rec.x, eb.upper),
                                           min_exceed))
    else:
        for rec in tails:
            checks.append(_lower_check("e:drift_lower", rec, lower_envelope(config, rec.x),
                                       _prob_slack(config, rec.x, bias), min_exceed))
    return VerificationReport(config, checks, float(bias), expected)


# -- refinement and Talagrand curves ------------------------------------------------------

@dataclass
class RefinementReport:
    rows: list  # (n, EstimateRecord)

    def estimates(self) -> np.ndarray:
        return np.array([r.estimate for _, r in self.rows])

    def std_errors(self) -> np.ndarray:
        return np.array([r.std_error for _, r in self.rows])


def grid_refinement_study(base: ExperimentConfig, levels: int, max_n: int = MAX_GRID_N,
                          workers: int | None = None, progress=None) -> RefinementReport:
    """``E[M]`` at ``n, 2n, 4n, ...`` (``levels`` rows) on the same replication streams."""
    if levels < 1:
        raise ConfigError("levels must be at least 1")
    top = base.n * 2 ** (levels - 1)
    if top > max_n:
        raise ConfigError(f"refinement would reach n={top}, above the cap {max_n}")
    rows = []
    for k in range(levels):
        cfg = base.replace(n=base.n * 2**k)
        rows.append((cfg.n, estimate_expected_maxloss(cfg, workers=workers, progress=progress)))
    return RefinementReport(rows)


@dataclass(frozen=True)
class TalagrandPoint:
    x: float
    p_hat: float
    reference: float
    ratio: float
    ci_low: float
    ci_high: float
    exceed_count: int


def talagrand_ratio_curve(config: ExperimentConfig, samples: BatchStatistics | None = None,
                          min_exceed: int = MIN_EXCEED, workers: int | None = None,
                          progress=None) -> list[TalagrandPoint]:
    """``p_hat(x) / Phi_bar(x / t^H)`` where at least ``min_exceed`` paths exceed ``x``."""
    if not config.params.is_standard:
        raise ConfigError("the ratio curve is defined for mu = 0, sigma = 1 only")
    out = []
    for rec in estimate_tail(config, samples, workers, progress):
        if rec.x <= 0 or rec.exceed_count < min_exceed:
            continue
        ref = bounds.talagrand_reference(rec.x, config.params.horizon, config.h)
        out.append(TalagrandPoint(rec.x, rec.estimate, ref, rec.estimate / ref,
                                  rec.ci_low / ref, rec.ci_high / ref, rec.exceed_count))
    return out


# -- output ------------------------------------------------------------------------------

ESTIMATE_COLUMNS = ("target", "x", "estimate", "std_error", "ci_low", "ci_high", "exceed_count")


def fmt(value) -> str:
    """Stable text form of a CSV cell (``repr`` for floats, blank for None)."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_rows(stream, header, rows) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])


def estimates_to_csv(records, stream=None) -> str:
    buf = stream or io.StringIO()
    write_rows(buf, ESTIMATE_COLUMNS,
               ([getattr(r, c) for c in ESTIMATE_COLUMNS] for r in records))
    return buf.getvalue() if stream is None else ""


def report_to_json(report: VerificationReport) -> str:
    def clean(obj):
        if isinstance(obj, float) and not math.isfinite(obj):
            return None
        if isinstance(obj, dict):
            return {k: clean(v) for k, v in obj.items()}
        if isinstance(obj, list):
            return [clean(v) for v in obj]
        return obj
    return json.dumps(clean(report.to_dict()), indent=2, sort_keys=True)
