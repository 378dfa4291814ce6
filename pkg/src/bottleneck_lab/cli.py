"""Command line front end.

Subcommands: simulate, periodic, verify, asymptotic, optimize. Experiments
are driven by a JSON config file (reproducible, seeds recorded in output)
with flags for quick one-offs; flags override config values. Unknown config
keys are rejected before any computation runs.

Exit status contract: 0 success, 1 invariant violation (a residual out of
tolerance, a bound breached, a search beating the benchmark), 2 usage or
validation errors. Identical config and seed give byte-identical outputs on
one platform: all randomness flows from one seeded generator and floats are
formatted with round-trip repr.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import asymptotic, dynamics, optimize, periodic, suites
from .signals import (
    QuadratureSpec,
    SignalError,
    SystemParams,
    signal_from_dict,
)

__all__ = ["main", "ConfigError"]

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_USAGE = 2

BENCHMARK_EXCESS_TOL = 1e-9

_ALLOWED_KEYS = {
    "simulate": {"signal", "lambda", "x0", "horizon", "step", "out"},
    "periodic": {"signal", "lambda", "step", "out", "format"},
    "verify": {"seed", "n_signals", "n_asymptotic", "tolerance", "out", "cases"},
    "asymptotic": {"signal", "lambda", "x0", "tau_max", "n_checkpoints", "out"},
    "optimize": {"family", "lambda", "mean", "resolution", "n_starts", "seed",
                 "max_evals", "out", "log"},
}


class ConfigError(ValueError):
    """Configuration could not be parsed or validated."""


def _load_config(path: str, command: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    allowed = _ALLOWED_KEYS[command]
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(
            f"{path}: unknown key(s) for '{command}': {sorted(unknown)}; "
            f"allowed: {sorted(allowed)}"
        )
    return data


def _load_signal(source, where: str):
    """Signal from an inline dict or a path to a JSON description file."""
    if isinstance(source, str):
        path = source
        try:
            with open(path, "r", encoding="utf-8") as fh:
                source = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{where}: {path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
        except OSError as exc:
            raise ConfigError(f"{where}: cannot read signal file: {exc}") from exc
    if not isinstance(source, dict):
        raise ConfigError(f"{where}: signal must be a mapping or a file path")
    return signal_from_dict(source)


def _require(cfg: dict, key: str, where: str):
    if key not in cfg or cfg[key] is None:
        raise ConfigError(f"{where}: missing required key '{key}'")
    return cfg[key]


def _positive_float(value, name: str) -> float:
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number, got {value!r}") from None
    if value <= 0.0:
        raise ConfigError(f"{name} must be positive, got {value}")
    return value


def _write_text(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _json_dumps(data) -> str:
    return json.dumps(data, sort_keys=True, indent=2) + "\n"


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _cmd_simulate(cfg: dict) -> int:
    signal = _load_signal(_require(cfg, "signal", "simulate"), "simulate")
    params = SystemParams(lam=_positive_float(_require(cfg, "lambda", "simulate"), "lambda"))
    horizon = _positive_float(_require(cfg, "horizon", "simulate"), "horizon")
    x0 = float(cfg.get("x0", 0.0))
    step = cfg.get("step")
    grid = QuadratureSpec(step=float(step)) if step is not None else None
    traj = dynamics.simulate(signal, params, x0, horizon, grid)
    _write_text(cfg.get("out"), dynamics.trajectory_csv_string(traj, signal))
    print(f"simulated to t={horizon!r}: final x = {traj.final_state!r}", file=sys.stderr)
    return EXIT_OK


def _cmd_periodic(cfg: dict) -> int:
    signal = _load_signal(_require(cfg, "signal", "periodic"), "periodic")
    params = SystemParams(lam=_positive_float(_require(cfg, "lambda", "periodic"), "lambda"))
    step = cfg.get("step")
    grid = QuadratureSpec(step=float(step)) if step is not None else None
    report = periodic.gap_report(signal, params, grid)
    fmt = cfg.get("format", "json")
    if fmt == "json":
        text = _json_dumps(periodic.report_to_json_dict(signal, params, report, step))
    elif fmt == "csv":
        text = periodic.reports_csv_string([(signal, params, report)])
    else:
        raise ConfigError(f"periodic: unknown format {fmt!r} (expected json or csv)")
    _write_text(cfg.get("out"), text)
    return EXIT_OK


def _cmd_verify(cfg: dict) -> int:
    seed = int(cfg.get("seed", 0))
    n_signals = int(cfg.get("n_signals", 500))
    n_asymptotic = int(cfg.get("n_asymptotic", 100))
    tolerances = suites.SuiteTolerances()
    if cfg.get("tolerance") is not None:
        tolerances = suites.SuiteTolerances(
            identity_residual=_positive_float(cfg["tolerance"], "tolerance")
        )
    cases = None
    if cfg.get("cases") is not None:
        cases = []
        for i, case in enumerate(cfg["cases"]):
            if not isinstance(case, dict) or set(case) != {"signal", "lam"}:
                raise ConfigError(
                    f"verify: cases[{i}] must have exactly the keys 'signal' and 'lam'"
                )
            cases.append((
                _load_signal(case["signal"], f"verify: cases[{i}]"),
                SystemParams(lam=_positive_float(case["lam"], f"cases[{i}].lam")),
            ))
    report = suites.run_verification(
        n_periodic=n_signals,
        seed=seed,
        tolerances=tolerances,
        n_asymptotic=n_asymptotic,
        cases=cases,
    )
    _write_text(cfg.get("out"), _json_dumps(report.to_json_dict()))
    if not report.passed:
        print(
            f"verify: {len(report.failures)} case(s) out of tolerance "
            f"(serialized in the report for replay)",
            file=sys.stderr,
        )
        return EXIT_VIOLATION
    return EXIT_OK


def _cmd_asymptotic(cfg: dict) -> int:
    signal = _load_signal(_require(cfg, "signal", "asymptotic"), "asymptotic")
    params = SystemParams(lam=_positive_float(_require(cfg, "lambda", "asymptotic"), "lambda"))
    x0 = float(cfg.get("x0", 0.0))
    tau_max = cfg.get("tau_max")
    tau_max = (asymptotic.default_tau_max(signal, params) if tau_max is None
               else _positive_float(tau_max, "tau_max"))
    n_checkpoints = int(cfg.get("n_checkpoints", asymptotic.DEFAULT_CHECKPOINTS))
    ra = asymptotic.running_averages(signal, params, x0, tau_max, n_checkpoints)
    certs = asymptotic.finite_horizon_certificates(signal, params, x0, ra.taus)
    check = asymptotic.longrun_bound_check(signal, params, x0, tau_max, n_checkpoints)
    _write_text(cfg.get("out"), asymptotic.averages_csv_string(ra, certs))
    print(
        f"sigma_bar_est = {check.sigma_bar_est!r}, w_est = {check.w_est!r}, "
        f"bound = {check.bound!r}, margin = {check.margin!r} (slack {check.slack!r})",
        file=sys.stderr,
    )
    worst_slack = min(c.slack for c in certs)
    if check.violated or worst_slack < -asymptotic.CERTIFICATE_TOL:
        print("asymptotic: long-run bound or certificate violated", file=sys.stderr)
        return EXIT_VIOLATION
    return EXIT_OK


def _family_from_dict(data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: family must be a mapping")
    kind = data.get("kind")
    if kind == "bang_bang":
        unknown = set(data) - {"kind", "period"}
        if unknown:
            raise ConfigError(f"{where}: unknown family key(s): {sorted(unknown)}")
        return optimize.BangBang(period=_positive_float(data.get("period", 1.0), "period"))
    if kind == "piecewise_free":
        unknown = set(data) - {"kind", "period", "n_segments"}
        if unknown:
            raise ConfigError(f"{where}: unknown family key(s): {sorted(unknown)}")
        return optimize.PiecewiseConstantFree(
            period=_positive_float(data.get("period", 1.0), "period"),
            n_segments=int(data.get("n_segments", 4)),
        )
    raise ConfigError(f"{where}: unknown family kind {kind!r} "
                      "(expected bang_bang or piecewise_free)")


def _random_start(family, mean: float, rng: np.random.Generator):
    if isinstance(family, optimize.BangBang):
        raw = (rng.uniform(0.0, 2.0 * mean), rng.uniform(0.0, 2.0 * mean),
               rng.uniform(0.05, 0.95))
    else:
        raw = tuple(rng.uniform(0.0, 2.0 * mean, size=family.n_segments))
    return optimize.project_to_mean(family, raw, mean)


def _cmd_optimize(cfg: dict) -> int:
    family = _family_from_dict(_require(cfg, "family", "optimize"), "optimize")
    params = SystemParams(lam=_positive_float(_require(cfg, "lambda", "optimize"), "lambda"))
    mean = _require(cfg, "mean", "optimize")
    mean = float(mean)
    if mean < 0.0:
        raise ConfigError(f"optimize: mean must be non-negative, got {mean}")
    resolution = int(cfg.get("resolution", 9))
    n_starts = int(cfg.get("n_starts", 5))
    seed = int(cfg.get("seed", 0))
    max_evals = int(cfg.get("max_evals", optimize.DEFAULT_MAX_EVALS))
    rng = np.random.default_rng(seed)

    benchmark = periodic.constant_benchmark(mean, params)
    log = optimize.EvaluationLog(family, mean, benchmark)
    grid_result = optimize.grid_search(family, mean, params, resolution, log=log)
    descents = []
    for _ in range(n_starts):
        start = _random_start(family, mean, rng)
        descents.append(optimize.coordinate_descent(
            family, mean, params, start, max_evals=max_evals, log=log,
        ))

    candidates = [grid_result] + descents
    best = max(candidates, key=lambda r: r.best_w)
    payload = {
        "seed": seed,
        "lam": params.lam,
        "target_mean": mean,
        "benchmark_w": benchmark,
        "grid": grid_result.to_json_dict(),
        "descents": [r.to_json_dict() for r in descents],
        "best": best.to_json_dict(),
        "evaluations_total": len(log),
        "max_excess_over_benchmark": log.max_excess,
    }
    _write_text(cfg.get("out"), _json_dumps(payload))
    if cfg.get("log") is not None:
        log.to_csv(cfg["log"])
    if log.max_excess > BENCHMARK_EXCESS_TOL:
        print(
            f"optimize: an evaluation beat the constant benchmark by "
            f"{log.max_excess!r}",
            file=sys.stderr,
        )
        return EXIT_VIOLATION
    return EXIT_OK


_COMMANDS = {
    "simulate": _cmd_simulate,
    "periodic": _cmd_periodic,
    "verify": _cmd_verify,
    "asymptotic": _cmd_asymptotic,
    "optimize": _cmd_optimize,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bottleneck-lab",
        description="Periodic steady states, averaged throughput, and "
                    "constant-inflow optimality checks for the bottleneck "
                    "entrance model x' = sigma(t)(1-x) - lambda x.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--out", help="output path ('-' for stdout)")
        p.add_argument("--lambda", dest="lam", type=float, help="outflow rate constant")
        p.add_argument("--signal", help="path to a JSON signal description")
        p.add_argument("--horizon", type=float, help="simulation horizon")
        p.add_argument("--seed", type=int, help="seed for randomized suites")
        p.add_argument("--tolerance", type=float, help="identity residual tolerance")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    cfg = {}
    try:
        if args.config:
            cfg = _load_config(args.config, args.command)
        # Flags override config.
        if args.lam is not None:
            cfg["lambda"] = args.lam
        if args.signal is not None:
            cfg["signal"] = args.signal
        if args.horizon is not None:
            cfg["horizon"] = args.horizon
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.tolerance is not None:
            cfg["tolerance"] = args.tolerance
        if args.out is not None:
            cfg["out"] = args.out
        unknown = set(cfg) - _ALLOWED_KEYS[args.command]
        if unknown:
            raise ConfigError(
                f"key(s) not applicable to '{args.command}': {sorted(unknown)}"
            )
        return _COMMANDS[args.command](cfg)
    except (ConfigError, SignalError, dynamics.DomainError,
            optimize.InfeasibleMeanError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except dynamics.StepSizeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VIOLATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
