"""Benchmark harness: synthetic market paths, seeded replications of every
estimator, report tables and volatility traces.

Stream layout: replication ``l`` draws its market path from stream
``(seed, 16 * l)`` and method ``m`` from ``(seed, 16 * l + code(m))``.  With
``fixed_path`` every replication reuses the path of replication 0.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .homotopy_flow import HomotopySchedule, TransportOptions, homotopy_filter
from .model_core import ConfigError, SteinSteinModel, SteinSteinParams, euler_step, load_mapping
from .numeric_utils import RandomStream, as_generator
from .particle_filter import FilterConfig, full_observations, pf_filter
from .pricing_stats import (
    METHODS,
    EstimatorReport,
    compute_report,
    reports_to_csv,
    weighted_price,
)
from .reweighted_transport import rw_filter

log = logging.getLogger(__name__)

METHOD_CODES = {"mc": 1, "pf": 2, "homotopy": 3, "rw_homotopy": 4}
STREAMS_PER_REPLICATION = 16


def canonical_method(name: str) -> str:
    key = name.strip().lower().replace("-", "_")
    if key not in METHOD_CODES:
        raise ConfigError(f"unknown method {name!r}; expected one of mc, pf, homotopy, rw-homotopy")
    return key


@dataclass(frozen=True)
class ExperimentConfig:
    params: SteinSteinParams = field(default_factory=SteinSteinParams)
    methods: tuple = METHODS
    n_particles: int = 20_000
    n_replications: int = 20
    seed: int = 20_240_101
    lambda_steps: int = 30
    lambda_spacing: str = "geometric"
    lambda_ratio: float = 1.2
    ess_threshold: float = 0.5
    reference_price: float = 16.05
    output_dir: str | None = None
    emit_paths: bool = False
    fixed_path: bool = False
    refresh_hessian: bool = False
    final_weights: str = "post"
    rw_weight_lag: int = 0
    parallel_methods: bool = False
    jobs: int = 1
    plot: bool = False

    def __post_init__(self):
        methods = tuple(canonical_method(m) for m in self.methods)
        if not methods:
            raise ConfigError("methods must be nonempty")
        object.__setattr__(self, "methods", tuple(dict.fromkeys(methods)))
        if self.n_replications < 2:
            raise ConfigError("n_replications must be >= 2")
        if self.n_particles < 2:
            raise ConfigError("n_particles must be >= 2")
        if not self.reference_price > 0:
            raise ConfigError("reference_price must be > 0")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        # validate the derived objects eagerly
        self.schedule
        self.filter_config

    @property
    def schedule(self) -> HomotopySchedule:
        try:
            return HomotopySchedule(self.lambda_steps, self.lambda_spacing, self.lambda_ratio)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def filter_config(self) -> FilterConfig:
        try:
            return FilterConfig(self.n_particles, self.ess_threshold, final_weights=self.final_weights)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def transport_options(self) -> TransportOptions:
        return TransportOptions(refresh_hessian=self.refresh_hessian)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        if "params" in data:
            data["params"] = SteinSteinParams.from_dict(data["params"] or {})
        if "methods" in data:
            m = data["methods"]
            data["methods"] = tuple([m] if isinstance(m, str) else m)
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        return cls.from_dict(load_mapping(path))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["params"] = self.params.to_dict()
        out["methods"] = list(self.methods)
        return out


def generate_market_path(params: SteinSteinParams, rng):
    """One Euler-Maruyama trajectory ``(x_path, y_path)`` of length N + 1
    starting at ``(V0, log S0)``."""
    rng = as_generator(rng)
    n = params.n_steps
    x = np.empty(n + 1)
    y = np.empty(n + 1)
    x[0], y[0] = params.v0, math.log(params.s0)
    for t in range(n):
        eps, eta = rng.standard_normal(2)
        x[t + 1], y[t + 1] = euler_step(params, x[t], y[t], eps, eta)
    return x, y


def mc_filter(params: SteinSteinParams, n_particles: int, rng):
    """Plain Monte Carlo: mutation only, uniform weights."""
    rng = as_generator(rng)
    model = SteinSteinModel(params)
    x, y = model.initial(n_particles)
    vol = np.empty(params.n_steps)
    for t in range(params.n_steps):
        vol[t] = float(np.mean(x))
        x, y = model.propagate(x, y, rng)
    return y, vol


def mc_price(params: SteinSteinParams, n_particles: int, rng) -> float:
    y, _ = mc_filter(params, n_particles, rng)
    return weighted_price(params, y)


def run_method(method: str, cfg: ExperimentConfig, y_path, rng):
    """Price with one method.  Returns ``(price, vol_means)``."""
    params = cfg.params
    rng = as_generator(rng)
    if method == "mc":
        y, vol = mc_filter(params, cfg.n_particles, rng)
        return weighted_price(params, y), vol
    model = SteinSteinModel(params)
    obs = full_observations(params, y_path)
    if method == "pf":
        res = pf_filter(model, cfg.filter_config, obs, rng)
        return weighted_price(params, res.cloud.y, res.cloud.weights()), res.vol_means
    if method == "homotopy":
        cloud, vol, diag = homotopy_filter(model, cfg.n_particles, obs, cfg.schedule, rng,
                                           cfg.transport_options)
        if diag.frozen:
            log.debug("homotopy: %d frozen particle-steps", diag.frozen)
        return weighted_price(params, cloud.y), vol
    if method == "rw_homotopy":
        res = rw_filter(model, cfg.filter_config, obs, cfg.schedule, rng, cfg.transport_options,
                        weight_lag=cfg.rw_weight_lag)
        return weighted_price(params, res.cloud.y, res.cloud.weights()), res.vol_means
    raise ConfigError(f"unknown method {method!r}")


def path_hash(y_path) -> str:
    return hashlib.sha256(np.ascontiguousarray(y_path, dtype=np.float64).tobytes()).hexdigest()


@dataclass
class ReplicationOutcome:
    replication: int
    x_path: np.ndarray
    y_path: np.ndarray
    prices: dict
    seconds: dict
    vol_means: dict
    hashes: dict
    failures: list


def run_replication(cfg: ExperimentConfig, rep: int) -> ReplicationOutcome:
    path_rep = 0 if cfg.fixed_path else rep
    x_path, y_path = generate_market_path(
        cfg.params, RandomStream(cfg.seed, STREAMS_PER_REPLICATION * path_rep))
    observed = y_path[1:]

    def one(method):
        stream = RandomStream(cfg.seed, STREAMS_PER_REPLICATION * rep + METHOD_CODES[method])
        rng = stream.generator()
        given = observed.copy()
        digest = path_hash(given)
        start = time.perf_counter()
        try:
            price, vol = run_method(method, cfg, given, rng)
            error = None
        except Exception as exc:  # recorded per replication, others continue
            price, vol = math.nan, None
            error = {"replication": rep, "method": method, "error": type(exc).__name__,
                     "message": str(exc)}
        elapsed = time.perf_counter() - start
        return method, price, elapsed, vol, error, digest

    if cfg.parallel_methods and len(cfg.methods) > 1:
        with ThreadPoolExecutor(len(cfg.methods)) as pool:
            results = list(pool.map(one, cfg.methods))
    else:
        results = [one(m) for m in cfg.methods]
    out = ReplicationOutcome(rep, x_path, y_path, {}, {}, {}, {}, [])
    for method, price, elapsed, vol, error, digest in results:
        out.prices[method] = price
        out.seconds[method] = elapsed
        out.vol_means[method] = vol
        out.hashes[method] = digest
        if error:
            out.failures.append(error)
    return out


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    reports: list
    estimates: dict          # method -> array[M_s] (NaN for failed replications)
    cpu_seconds: dict        # method -> array[M_s]
    path_hashes: list        # per replication: method -> hash
    failures: list
    outcomes: list

    def report(self, method: str) -> EstimatorReport:
        method = canonical_method(method)
        for rep in self.reports:
            if rep.method == method:
                return rep
        raise KeyError(method)


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Run every replication and method, build reports, write outputs."""
    reps = range(cfg.n_replications)
    if cfg.jobs > 1:
        with ProcessPoolExecutor(cfg.jobs) as pool:
            outcomes = list(pool.map(run_replication, [cfg] * len(reps), reps))
    else:
        outcomes = [run_replication(cfg, r) for r in reps]

    estimates, seconds, reports, failures = {}, {}, [], []
    for o in outcomes:
        failures.extend(o.failures)
    for method in cfg.methods:
        est = np.array([o.prices[method] for o in outcomes])
        sec = np.array([o.seconds[method] for o in outcomes])
        estimates[method], seconds[method] = est, sec
        ok = np.isfinite(est)
        if ok.sum() < 2:
            log.warning("%s: fewer than two successful replications, no report", method)
            continue
        reports.append(compute_report(
            est[ok], cfg.reference_price, float(sec[ok].sum()), method=method,
            n_particles=cfg.n_particles, n_steps=cfg.params.n_steps, seed=cfg.seed))
    result = ExperimentResult(cfg, reports, estimates, seconds,
                              [o.hashes for o in outcomes], failures, outcomes)
    if cfg.output_dir is not None:
        write_outputs(result, Path(cfg.output_dir))
    return result


def write_outputs(result: ExperimentResult, out: Path):
    cfg = result.config
    try:
        out.mkdir(parents=True, exist_ok=True)
        with (out / "reports.csv").open("w", newline="") as fh:
            reports_to_csv(result.reports, fh)
        with (out / "reports.jsonl").open("w") as fh:
            for rep in result.reports:
                fh.write(rep.to_json() + "\n")
        with (out / "estimates.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["replication", "method", "estimate", "cpu_seconds", "path_sha256"])
            for o in result.outcomes:
                for m in cfg.methods:
                    w.writerow([o.replication, m, repr(float(o.prices[m])),
                                repr(float(o.seconds[m])), o.hashes[m]])
        if result.failures:
            with (out / "failures.jsonl").open("w") as fh:
                for f in result.failures:
                    fh.write(json.dumps(f) + "\n")
        with (out / "config.json").open("w") as fh:
            json.dump(cfg.to_dict(), fh, indent=2)
        if cfg.emit_paths:
            first = result.outcomes[0]
            for m in cfg.methods:
                vol = first.vol_means[m]
                if vol is None:
                    continue
                with (out / f"trace_{m}.csv").open("w", newline="") as fh:
                    w = csv.writer(fh, lineterminator="\n")
                    w.writerow(["t", "true_vol", "filtered_vol_mean"])
                    for t, v in enumerate(vol):
                        w.writerow([t, repr(float(first.x_path[t])), repr(float(v))])
    except OSError as exc:
        raise OSError(f"writing results to {out}: {exc}") from exc
    if cfg.plot:
        from .plotting import render_report_figures
        render_report_figures(out)


# ---------------------------------------------------------------------------
# command line

class _JsonErrorParser(argparse.ArgumentParser):
    """Usage errors leave as a JSON record on stderr, like every other failure."""

    def error(self, message):
        _error_record(argparse.ArgumentError(None, message), 2)
        self.exit(2)


def build_parser() -> argparse.ArgumentParser:
    parser = _JsonErrorParser(prog="homotopy-sv", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_JsonErrorParser)

    run = sub.add_parser("run", help="run the pricing benchmark")
    run.add_argument("--config", type=Path, help="YAML/JSON experiment config")
    run.add_argument("--method", action="append", dest="methods",
                     choices=["mc", "pf", "homotopy", "rw-homotopy", "rw_homotopy"],
                     help="estimator to run; repeat for several (default: all four)")
    run.add_argument("--particles", type=int, dest="n_particles", metavar="N",
                     help="particles per filter (default 20000)")
    run.add_argument("--steps", type=int, dest="n_steps", metavar="N",
                     help="time steps to maturity (default 64)")
    run.add_argument("--replications", type=int, dest="n_replications", metavar="M",
                     help="independent replications (default 20)")
    run.add_argument("--seed", type=int, help="master seed")
    run.add_argument("--lambda-steps", type=int, dest="lambda_steps", metavar="K",
                     help="pseudo-time steps per observation (default 30)")
    run.add_argument("--lambda-spacing", choices=["uniform", "geometric"], dest="lambda_spacing",
                     help="pseudo-time grid (default geometric)")
    run.add_argument("--ess-threshold", type=float, dest="ess_threshold", metavar="F",
                     help="resample when ESS < F * n (default 0.5)")
    run.add_argument("--fixed-path", action="store_true", default=None, dest="fixed_path",
                     help="reuse one market path for every replication")
    run.add_argument("--emit-paths", action="store_true", default=None, dest="emit_paths",
                     help="write volatility traces for replication 0")
    run.add_argument("--parallel-methods", action="store_true", default=None, dest="parallel_methods",
                     help="run methods concurrently (timings become less clean)")
    run.add_argument("--jobs", type=int, help="worker processes for replications")
    run.add_argument("--plot", action="store_true", default=None,
                     help="render PNG figures next to the CSV output")
    run.add_argument("--out", type=Path, dest="output_dir", metavar="DIR",
                     help="directory for CSV/JSON results")

    plot = sub.add_parser("plot", help="render figures from an existing output directory")
    plot.add_argument("out", type=Path, help="output directory of a previous run")
    return parser


def config_from_args(args) -> ExperimentConfig:
    data = load_mapping(args.config) if args.config else {}
    cfg = ExperimentConfig.from_dict(data)
    overrides = {}
    for name in ("methods", "n_particles", "n_replications", "seed", "lambda_steps",
                 "lambda_spacing", "ess_threshold", "fixed_path", "emit_paths",
                 "parallel_methods", "jobs", "plot"):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = tuple(value) if name == "methods" else value
    if args.output_dir is not None:
        overrides["output_dir"] = str(args.output_dir)
    if args.n_steps is not None:
        overrides["params"] = cfg.params.replace(n_steps=args.n_steps)
    return replace(cfg, **overrides) if overrides else cfg


def format_table(reports) -> str:
    cols = ("method", "mean", "st_dev", "rmse", "bias", "rrmse", "rel_error", "cpu_seconds", "fom")
    lines = ["  ".join(f"{c:>12}" for c in cols)]
    for rep in reports:
        cells = [f"{rep.method:>12}"]
        for c in cols[1:]:
            cells.append(f"{getattr(rep, c):>12.6g}")
        lines.append("  ".join(cells))
    return "\n".join(lines)


def _error_record(exc, code):
    record = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(record), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "plot":
            from .plotting import render_report_figures
            for path in render_report_figures(args.out):
                print(path)
            return 0
        cfg = config_from_args(args)
        result = run_experiment(cfg)
    except (ConfigError, ValueError) as exc:
        return _error_record(exc, 2)
    except OSError as exc:
        return _error_record(exc, 3)
    except Exception as exc:  # pragma: no cover - last-resort record
        return _error_record(exc, 1)
    print(format_table(result.reports))
    if result.failures:
        print(f"{len(result.failures)} method failures recorded", file=sys.stderr)
    if cfg.output_dir:
        print(f"results written to {cfg.output_dir}")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
