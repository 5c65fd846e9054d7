"""Command-line entry point.

Exit status: 0 success, 1 a verification check failed, 2 usage or
configuration error, 3 numerical failure inside a sampler.
"""

from __future__ import annotations

import argparse
import io
import json
import sys

import numpy as np

from . import __version__, bounds
from .core import (ConfigError, DomainError, NumericError, ProcessParams, SamplePath, ScopeError,
                   TimeGrid)
from .montecarlo import (
    ExperimentConfig,
    estimate_tail,
    estimates_to_csv,
    fit_tail_slope,
    load_config_file,
    report_to_json,
    talagrand_ratio_curve,
    verify_bounds,
    write_rows,
)
from .pathstats import compute_stats
from .samplers import SamplerMethod, generate_paths

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

STOCHASTIC = {"sample", "stats", "verify", "tail-slope", "talagrand"}
_EXTRA_OPTIONS = ("eta", "bias", "min_exceed", "p_window", "h_param", "grid_n")
_PATH_CHUNK = 1024


class UsageError(Exception):
    pass


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("process and experiment")
    g.add_argument("--config", help="YAML experiment config; flags override its values")
    g.add_argument("--hurst", type=float)
    g.add_argument("--horizon", type=float, help="time horizon t (default 1)")
    g.add_argument("--mu", type=float, help="drift (default 0)")
    g.add_argument("--sigma", type=float, help="diffusion scale (default 1)")
    g.add_argument("--n", type=int, help="grid steps")
    g.add_argument("--reps", type=int, help="number of paths / replications")
    g.add_argument("--seed", type=int, help="64-bit master seed")
    g.add_argument("--method", choices=[m.value for m in SamplerMethod],
                   help="sampler (default circulant)")
    g.add_argument("--x-grid", type=_float_list, help="comma-separated loss levels")
    g.add_argument("--confidence", type=float, help="CI level (default 0.99)")
    g.add_argument("--out", help="output file (default standard output)")
    g.add_argument("--progress", action="store_true", help="replication counter on stderr")

    parser = argparse.ArgumentParser(
        prog="fbmloss",
        description="Simulate fractional Brownian motion and check maximum-loss bounds.",
        epilog="exit status: 0 ok, 1 a check failed, 2 usage/config error, 3 numeric failure")
    parser.add_argument("--version", action="version", version=f"fbmloss {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("sample", parents=[common], help="CSV of simulated paths")
    sub.add_parser("stats", parents=[common], help="per-path sup/inf/range/max-loss")
    b = sub.add_parser("bounds", parents=[common], help="analytic bounds on an x grid")
    b.add_argument("--eta", type=float, help="eta for the Borel bound (default: E[M] upper bound)")
    v = sub.add_parser("verify", parents=[common], help="Monte Carlo check of every bound")
    v.add_argument("--bias", type=float, help="grid-bias slack (default: estimated by refinement)")
    v.add_argument("--min-exceed", type=int, default=50)
    v.add_argument("--csv", help="also write the estimate records to this CSV file")
    s = sub.add_parser("tail-slope", parents=[common], help="fit of log P(M>x) against x^2")
    s.add_argument("--min-exceed", type=int, default=50)
    s.add_argument("--p-window", type=_float_list, help="lo,hi range of p_hat entering the fit")
    t = sub.add_parser("talagrand", parents=[common], help="ratio of P(M>x) to the normal tail")
    t.add_argument("--min-exceed", type=int, default=50)
    th = sub.add_parser("th-scan", parents=[common], help="lattice scan of the near-maximal set")
    th.add_argument("--h-param", type=float)
    th.add_argument("--grid-n", type=int)
    return parser


def _resolve(args) -> dict:
    """Merge config file and flags into one flat mapping."""
    merged: dict = {}
    if args.config:
        data = load_config_file(args.config)
        cfg_keys = {"params", "n", "reps", "method", "seed", "x_grid", "confidence"}
        unknown = set(data) - cfg_keys
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        params = data.get("params") or {}
        unknown = set(params) - {"hurst", "mu", "sigma", "horizon"}
        if unknown:
            raise ConfigError(f"unknown params keys: {sorted(unknown)}")
        merged.update(params)
        merged.update({k: v for k, v in data.items() if k != "params"})
    for key in ("hurst", "horizon", "mu", "sigma", "n", "reps", "seed", "method",
                "x_grid", "confidence"):
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val
    merged.setdefault("horizon", 1.0)
    merged.setdefault("mu", 0.0)
    merged.setdefault("sigma", 1.0)
    merged.setdefault("method", SamplerMethod.CIRCULANT.value)
    merged.setdefault("confidence", 0.99)
    merged.setdefault("x_grid", [])
    if "hurst" not in merged:
        raise UsageError("--hurst is required")
    if args.command in STOCHASTIC:
        missing = [f"--{k}" for k in ("n", "reps", "seed") if k not in merged]
        if missing:
            raise UsageError(f"{args.command} requires {', '.join(missing)}")
    if args.command in {"bounds", "verify", "tail-slope", "talagrand"} and not merged["x_grid"]:
        raise UsageError(f"{args.command} requires --x-grid")
    merged["x_grid"] = [float(x) for x in merged["x_grid"]]
    return merged


def _params(r: dict) -> ProcessParams:
    return ProcessParams(r["hurst"], r["mu"], r["sigma"], r["horizon"])


def _experiment(r: dict) -> ExperimentConfig:
    return ExperimentConfig(_params(r), n=r["n"], reps=r["reps"], method=r["method"],
                            seed=r["seed"], x_grid=tuple(r["x_grid"]), confidence=r["confidence"])


def _header(command: str, resolved: dict) -> str:
    payload = json.dumps({"command": command, **resolved}, sort_keys=True, separators=(",", ":"))
    return f"# fbmloss {__version__} {payload}\n"


def _progress_cb(enabled: bool):
    if not enabled:
        return None

    def cb(done, total):
        sys.stderr.write(f"\rreplications {done}/{total}")
        if done >= total:
            sys.stderr.write("\n")
        sys.stderr.flush()
    return cb


def _path_batches(r: dict, progress):
    params = _params(r)
    grid = TimeGrid(params.horizon, r["n"])
    reps = r["reps"]
    if reps < 1:
        raise ConfigError("--reps must be at least 1")
    for start in range(0, reps, _PATH_CHUNK):
        stop = min(start + _PATH_CHUNK, reps)
        paths = generate_paths(r["method"], params.h, grid, r["seed"], np.arange(start, stop))
        if not params.is_standard:
            paths = params.mu * grid.points + params.sigma * paths
        if progress:
            progress(stop, reps)
        yield start, grid, paths


def cmd_sample(r, args, out):
    rows = []
    for start, grid, paths in _path_batches(r, _progress_cb(args.progress)):
        pts = grid.points
        for i, vals in enumerate(paths):
            rows.extend((start + i, t, v) for t, v in zip(pts, vals))
    write_rows(out, ("path_index", "time", "value"), rows)
    return EXIT_OK


def cmd_stats(r, args, out):
    rows = []
    for start, grid, paths in _path_batches(r, _progress_cb(args.progress)):
        for i, vals in enumerate(paths):
            s = compute_stats(SamplePath(grid, vals))
            rows.append((start + i, s.sup, s.inf, s.range, s.max_loss, s.peak_time, s.trough_time))
    write_rows(out, ("path_index", "sup", "inf", "range", "max_loss", "peak_time", "trough_time"), rows)
    return EXIT_OK


def _maybe(fn, *a):
    try:
        return fn(*a)
    except (ScopeError, DomainError):
        return None


def cmd_bounds(r, args, out):
    p = _params(r)
    t, h, sig = p.horizon, p.h, p.sigma
    eb = _maybe(bounds.expected_maxloss_bounds, t, h)
    sb = _maybe(bounds.expected_sup_bounds, t, h)
    eta = args.eta if args.eta is not None else (eb.upper if eb else None)
    slope = bounds.asymptotic_slope(t, h, sig)
    rows = []
    for x in r["x_grid"]:
        if not x > 0:
            raise ConfigError("bounds need every x > 0")
        y = x / sig  # standard-process bounds applied to sigma * B
        drift = bounds.drift_minimizer(t, h, p.mu, x, sig)
        rows.append((
            x,
            _maybe(bounds.tail_markov_upper, t, h, y),
            bounds.tail_gaussian_lower(t, h, y),
            _maybe(bounds.tail_borel_upper, t, h, y, eta) if eta is not None else None,
            eta,
            eb.lower if eb else None,
            eb.upper if eb else None,
            sb[0] if sb else None,
            sb[1] if sb else None,
            slope,
            bounds.talagrand_reference(y, t, h),
            drift.regime,
            drift.minimizer,
            drift.bound,
        ))
    write_rows(out, ("x", "markov_upper", "gaussian_lower", "borel_upper", "eta",
                     "expected_lower", "expected_upper", "sup_lower", "sup_upper", "slope",
                     "talagrand_reference", "drift_regime", "drift_minimizer", "drift_bound"), rows)
    return EXIT_OK


def cmd_verify(r, args, out):
    cfg = _experiment(r)
    report = verify_bounds(cfg, bias=args.bias, min_exceed=args.min_exceed,
                           progress=_progress_cb(args.progress))
    out.write(report_to_json(report))
    out.write("\n")
    if args.csv:
        recs = [report.expected] if report.expected else []
        recs += estimate_tail(cfg)
        with open(args.csv, "w", newline="") as fh:
            fh.write(_header("verify", r))
            estimates_to_csv(recs, fh)
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_tail_slope(r, args, out):
    cfg = _experiment(r)
    window = tuple(args.p_window) if args.p_window else None
    if window is not None and len(window) != 2:
        raise UsageError("--p-window takes exactly two numbers")
    fit = fit_tail_slope(cfg, min_exceed=args.min_exceed, p_window=window,
                         progress=_progress_cb(args.progress))
    used = set()
    if fit.x_window:
        used = {x for x, _ in fit.pointwise if fit.x_window[0] <= x <= fit.x_window[1]}
    env = {x: (lo, up) for x, lo, up in fit.envelope}
    pw = dict(fit.pointwise)
    rows = []
    for rec in fit.records:
        lo, up = env.get(rec.x, (None, None))
        rows.append((rec.x, rec.estimate, rec.exceed_count, pw.get(rec.x), lo, up,
                     rec.x in used and rec.estimate < 1.0))
    write_rows(out, ("x", "p_hat", "exceed_count", "pointwise_slope", "lower_slope",
                     "upper_slope", "in_fit"), rows)
    out.write(f"# status={fit.status} fitted_slope={_fmt(fit.fitted_slope)} "
              f"intercept={_fmt(fit.intercept)} r_squared={_fmt(fit.r_squared)} "
              f"theory_slope={_fmt(fit.theory_slope)}\n")
    return EXIT_OK


def _fmt(v):
    return "" if v is None else repr(float(v))


def cmd_talagrand(r, args, out):
    cfg = _experiment(r)
    curve = talagrand_ratio_curve(cfg, min_exceed=args.min_exceed,
                                  progress=_progress_cb(args.progress))
    write_rows(out, ("x", "p_hat", "reference", "ratio", "ci_low", "ci_high", "exceed_count"),
               ((c.x, c.p_hat, c.reference, c.ratio, c.ci_low, c.ci_high, c.exceed_count)
                for c in curve))
    return EXIT_OK


def cmd_th_scan(r, args, out):
    if args.h_param is None or args.grid_n is None:
        raise UsageError("th-scan requires --h-param and --grid-n")
    res = bounds.th_scan(r["horizon"], r["hurst"], args.h_param, args.grid_n)
    write_rows(out, ("horizon", "hurst", "h_param", "grid_n", "members", "max_gap", "k_bound",
                     "unique_maximizer", "contained", "passed"),
               [(r["horizon"], r["hurst"], res.h_param, res.grid_n, len(res.members),
                 res.max_gap, res.k_bound, res.unique_maximizer, res.contained, res.passed)])
    return EXIT_OK if res.passed else EXIT_FAIL


COMMANDS = {
    "sample": cmd_sample,
    "stats": cmd_stats,
    "bounds": cmd_bounds,
    "verify": cmd_verify,
    "tail-slope": cmd_tail_slope,
    "talagrand": cmd_talagrand,
    "th-scan": cmd_th_scan,
}


def run(argv=None, stdout=None) -> int:
    stdout = stdout if stdout is not None else sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    buf = io.StringIO()
    try:
        resolved = _resolve(args)
        # subcommand options also shape the output, so they belong in the header
        for key in _EXTRA_OPTIONS:
            if getattr(args, key, None) is not None:
                resolved[key] = getattr(args, key)
        buf.write(_header(args.command, resolved))
        status = COMMANDS[args.command](resolved, args, buf)
    except (UsageError, ConfigError, DomainError, ScopeError) as exc:
        sys.stderr.write(f"fbmloss {args.command}: error: {exc}\n")
        return EXIT_USAGE
    except NumericError as exc:
        sys.stderr.write(f"fbmloss {args.command}: numeric error: {exc}\n")
        return EXIT_NUMERIC
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(buf.getvalue())
    else:
        stdout.write(buf.getvalue())
    return status


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
