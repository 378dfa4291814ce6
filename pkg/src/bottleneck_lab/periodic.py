"""Periodic steady states and averaged throughput.

For a T-periodic inflow the one-period flow map of the model is affine,
x(T) = a x(0) + b with 0 < a < 1, so every solution converges to the
unique periodic solution x_p with x_p(0) = b / (1 - a). The long-run
time-averaged output is then

    w[sigma] = lam * (1/T) int_0^T x_p(t) dt,

and the central quantitative fact checked here is the shortfall identity

    w[const sigma_bar] - w[sigma]
        = (1/T) int_0^T (x_p(t) - x_star)^2 (lam + sigma(t)) dt  >=  0,

with sigma_bar the period-mean inflow and x_star = sigma_bar/(lam+sigma_bar).
The right-hand side (the "gap") vanishes only for constant inflow, which is
why constant inflow maximizes averaged output at fixed mean. Two moment
identities feed the same bookkeeping:

    (1/T) int (lam + sigma) x_p   = sigma_bar,
    (1/T) int (lam + sigma) x_p^2 = sigma_bar - w[sigma].

On piecewise-constant inflow every integral above has a per-segment closed
form (x_p is a known exponential on each segment), so the reported residuals
measure rounding only. On smooth inflow the integrals fall back to trapezoid
sums over the numeric grid and the residual tolerance is correspondingly
looser (about 1e-5 at default grids).
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass

import numpy as np

from . import dynamics
from .signals import (
    ClippedSinusoidSum,
    InputSignal,
    QuadratureSpec,
    SignalError,
    SystemParams,
    evaluate_array,
    mean_over_period,
    require_period,
    signal_to_dict,
)

__all__ = [
    "PoincareMap",
    "PeriodicReport",
    "poincare_map",
    "periodic_solution",
    "averaged_output",
    "constant_benchmark",
    "gap_report",
    "moment_identities",
    "period_states",
    "output_for_levels",
    "segment_profile",
    "report_to_json_dict",
    "reports_to_csv",
    "REPORT_CSV_HEADER",
]

_MAP_TOL = 1e-12

# Negative gap values above this floor are rounding dust and are clamped to 0;
# anything more negative indicates a real bug and raises.
_GAP_FLOOR = -1e-12


@dataclass(frozen=True)
class PoincareMap:
    """One-period affine state map x(T) = a x(0) + b.

    a is the homogeneous decay e^{-int_0^T (lam + sigma)} and is a strict
    contraction; b is the image of x(0) = 0. The map sends [0, 1] into
    itself, so b >= 0 and a + b <= 1.
    """

    a: float
    b: float

    def __post_init__(self) -> None:
        if not (0.0 < self.a < 1.0):
            raise SignalError(f"contraction factor out of (0, 1): a={self.a}")
        if self.b < -_MAP_TOL or self.a + self.b > 1.0 + _MAP_TOL:
            raise SignalError(f"offset out of range: a={self.a}, b={self.b}")
        # Absorb sub-ulp rounding so the fixed point stays inside [0, 1].
        b = min(max(self.b, 0.0), 1.0 - self.a)
        object.__setattr__(self, "b", b)

    @property
    def fixed_point(self) -> float:
        return self.b / (1.0 - self.a)

    def apply(self, x: float, n: int = 1) -> float:
        for _ in range(n):
            x = self.a * x + self.b
        return x


@dataclass(frozen=True)
class PeriodicReport:
    """All averaged quantities and identity residuals for one periodic run.

    sigma_bar     period-mean inflow
    x_star        sigma_bar / (lam + sigma_bar)
    w_sigma       averaged output of the periodic solution
    w_const       lam * x_star, the constant-inflow benchmark at the same mean
    gap           quadratic shortfall integral (>= 0)
    residual_gap  |w_const - w_sigma - gap|
    residual_m1   |(1/T) int (lam+sigma) x_p   - sigma_bar|
    residual_m2   |(1/T) int (lam+sigma) x_p^2 - (sigma_bar - w_sigma)|
    """

    sigma_bar: float
    x_star: float
    w_sigma: float
    w_const: float
    gap: float
    residual_gap: float
    residual_m1: float
    residual_m2: float


def segment_profile(signal: InputSignal, params: SystemParams) -> tuple[list[float], list[float]]:
    """(levels, durations) covering exactly one period of a piecewise signal."""
    pw = dynamics._as_piecewise(signal)
    if not pw.periodic:
        require_period(signal)  # raises with the standard message
    return list(pw.levels), list(pw.durations)


def _is_smooth(signal: InputSignal) -> bool:
    return isinstance(signal, ClippedSinusoidSum)


# ---------------------------------------------------------------------------
# Poincare map and periodic solution
# ---------------------------------------------------------------------------

# Floor for the contraction factor when e^{-int(lam+sigma)} underflows a
# double; flooring only loosens (never tightens) the contraction bound.
_A_FLOOR = 2.2250738585072014e-308


def poincare_map(
    signal: InputSignal,
    params: SystemParams,
    grid: QuadratureSpec | None = None,
) -> PoincareMap:
    """Build the one-period map x(T) = a x(0) + b.

    b is the image of x(0) = 0 under the flow. a equals the image spread
    Phi(1) - Phi(0) but is computed from the homogeneous decay
    e^{-int_0^T (lam + sigma)} directly: the subtraction form cancels to
    zero once the contraction is stronger than double precision, while the
    exponent form stays exact down to underflow.
    """
    period = require_period(signal)
    ends = np.asarray([period])
    if _is_smooth(signal):
        step = (grid or QuadratureSpec()).resolve(dynamics.default_step(signal, params))
        b = float(dynamics.smooth_pass(signal, params, 0.0, ends, step)[0][0])
        n = max(2, math.ceil(period / step))
        ts = np.linspace(0.0, period, n + 1)
        rate = params.lam + evaluate_array(signal, ts)
        exponent = float(np.trapezoid(rate, ts))
    else:
        b = float(dynamics.exact_pass(signal, params, 0.0, ends)[0][0])
        levels, durations = segment_profile(signal, params)
        exponent = math.fsum((params.lam + c) * h for c, h in zip(levels, durations))
    a = max(math.exp(-exponent), _A_FLOOR)
    return PoincareMap(a=a, b=b)


def periodic_solution(
    signal: InputSignal,
    params: SystemParams,
    grid: QuadratureSpec | None = None,
) -> dynamics.Trajectory:
    """One period of the unique periodic solution, starting at its fixed point."""
    period = require_period(signal)
    x_p0 = poincare_map(signal, params, grid).fixed_point
    return dynamics.simulate(signal, params, x_p0, period, grid)


def averaged_output(
    signal: InputSignal,
    params: SystemParams,
    grid: QuadratureSpec | None = None,
) -> float:
    """Time-averaged output lam * (1/T) int_0^T x_p of the periodic regime."""
    period = require_period(signal)
    if _is_smooth(signal):
        traj = periodic_solution(signal, params, grid)
        return params.lam * float(traj.cumulative_x[-1]) / period
    levels, durations = segment_profile(signal, params)
    return output_for_levels(levels, durations, params.lam)


def constant_benchmark(sigma_bar: float, params: SystemParams) -> float:
    """Averaged output of constant inflow at rate sigma_bar: lam s / (lam + s)."""
    if sigma_bar < 0.0:
        raise dynamics.DomainError(f"mean inflow must be non-negative, got {sigma_bar}")
    if sigma_bar == 0.0:
        return 0.0
    return params.lam * sigma_bar / (params.lam + sigma_bar)


# ---------------------------------------------------------------------------
# Closed-form period integrals (piecewise-constant inflow)
# ---------------------------------------------------------------------------

def _period_factors(levels, durations, lam):
    """Per-segment (x_inf, g, g2, r, h) with g = 1-e^{-rh}, g2 = 1-e^{-2rh}."""
    factors = []
    for c, h in zip(levels, durations):
        r = lam + c
        rh = r * h
        g = -math.expm1(-rh)
        g2 = -math.expm1(-2.0 * rh)
        factors.append((c / r, g, g2, r, h))
    return factors


def _fixed_point_from_factors(factors) -> float:
    a = 1.0
    b = 0.0
    for x_inf, g, _, _, _ in factors:
        d = 1.0 - g
        b = x_inf * g + b * d
        a *= d
    return b / (1.0 - a)


def output_for_levels(levels, durations, lam: float) -> float:
    """Averaged output for one period given segment levels and durations.

    Low-overhead kernel used by the waveform-search module, which evaluates
    it many thousands of times; plain floats, no signal objects.
    """
    factors = _period_factors(levels, durations, lam)
    x = _fixed_point_from_factors(factors)
    total = 0.0
    span = 0.0
    for x_inf, g, _, r, h in factors:
        delta = x - x_inf
        total += x_inf * h + delta * g / r
        span += h
        x = x_inf + delta * (1.0 - g)
    return lam * total / span


def _closed_form_report(levels, durations, lam: float) -> PeriodicReport:
    period = math.fsum(durations)
    sigma_bar = math.fsum(c * h for c, h in zip(levels, durations)) / period
    x_star = sigma_bar / (lam + sigma_bar) if sigma_bar > 0.0 else 0.0
    w_const = lam * x_star

    factors = _period_factors(levels, durations, lam)
    x = _fixed_point_from_factors(factors)
    int_x = 0.0     # int x_p
    m1 = 0.0        # int (lam+sigma) x_p
    m2 = 0.0        # int (lam+sigma) x_p^2
    gap_int = 0.0   # int (lam+sigma) (x_p - x_star)^2
    for x_inf, g, g2, r, h in factors:
        delta = x - x_inf
        dev = x_inf - x_star
        int_x += x_inf * h + delta * g / r
        m1 += r * x_inf * h + delta * g
        m2 += r * x_inf * x_inf * h + 2.0 * x_inf * delta * g + delta * delta * g2 * 0.5
        gap_int += r * dev * dev * h + 2.0 * dev * delta * g + delta * delta * g2 * 0.5
        x = x_inf + delta * (1.0 - g)

    w_sigma = lam * int_x / period
    gap = gap_int / period
    if gap < 0.0:
        if gap < _GAP_FLOOR:
            raise AssertionError(f"gap integral went negative: {gap}")
        gap = 0.0
    return PeriodicReport(
        sigma_bar=sigma_bar,
        x_star=x_star,
        w_sigma=w_sigma,
        w_const=w_const,
        gap=gap,
        residual_gap=abs(w_const - w_sigma - gap),
        residual_m1=abs(m1 / period - sigma_bar),
        residual_m2=abs(m2 / period - (sigma_bar - w_sigma)),
    )


def _quadrature_report(
    signal: InputSignal, params: SystemParams, grid: QuadratureSpec | None
) -> PeriodicReport:
    lam = params.lam
    period = require_period(signal)
    sigma_bar = mean_over_period(signal, grid)
    x_star = sigma_bar / (lam + sigma_bar) if sigma_bar > 0.0 else 0.0
    w_const = lam * x_star

    traj = periodic_solution(signal, params, grid)
    ts = traj.times
    xp = traj.states
    sig = evaluate_array(signal, ts)
    rate = lam + sig
    w_sigma = lam * float(traj.cumulative_x[-1]) / period
    m1 = float(np.trapezoid(rate * xp, ts)) / period
    m2 = float(np.trapezoid(rate * xp * xp, ts)) / period
    dev = xp - x_star
    gap = float(np.trapezoid(rate * dev * dev, ts)) / period
    return PeriodicReport(
        sigma_bar=sigma_bar,
        x_star=x_star,
        w_sigma=w_sigma,
        w_const=w_const,
        gap=gap,
        residual_gap=abs(w_const - w_sigma - gap),
        residual_m1=abs(m1 - sigma_bar),
        residual_m2=abs(m2 - (sigma_bar - w_sigma)),
    )


def gap_report(
    signal: InputSignal,
    params: SystemParams,
    grid: QuadratureSpec | None = None,
) -> PeriodicReport:
    """Full periodic report: averages, benchmark, gap, identity residuals.

    The gap and both moment integrals are evaluated independently of the
    averaged-output bookkeeping, so the residuals are genuine consistency
    checks, not algebraic rearrangements of each other.
    """
    if _is_smooth(signal):
        return _quadrature_report(signal, params, grid)
    levels, durations = segment_profile(signal, params)
    return _closed_form_report(levels, durations, params.lam)


def moment_identities(
    signal: InputSignal,
    params: SystemParams,
    grid: QuadratureSpec | None = None,
) -> tuple[float, float]:
    """Residuals of the two weighted-moment identities of the periodic regime."""
    report = gap_report(signal, params, grid)
    return report.residual_m1, report.residual_m2


def period_states(
    signal: InputSignal,
    params: SystemParams,
    x0: float,
    n_periods: int,
) -> np.ndarray:
    """x at times 0, T, 2T, ..., n_periods*T by repeated exact propagation.

    Piecewise-constant inflow only; used to observe the geometric approach
    to the periodic orbit without going through the affine map itself.
    """
    levels, durations = segment_profile(signal, params)
    factors = _period_factors(levels, durations, params.lam)
    steps = [(x_inf, 1.0 - g) for x_inf, g, _, _, _ in factors]
    out = np.empty(n_periods + 1)
    x = dynamics._check_occupancy(x0)
    out[0] = x
    for n in range(1, n_periods + 1):
        for x_inf, d in steps:
            x = x_inf + (x - x_inf) * d
        out[n] = x
    return out


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------

REPORT_CSV_HEADER = (
    "lam,period,sigma_bar,x_star,w_sigma,w_const,gap,"
    "residual_gap,residual_m1,residual_m2"
)


def reports_to_csv(rows, path_or_file) -> None:
    """Write one CSV row per (signal, params, report) experiment."""
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", encoding="utf-8", newline="") if own else path_or_file
    try:
        fh.write(REPORT_CSV_HEADER + "\n")
        for signal, params, report in rows:
            period = require_period(signal)
            fh.write(
                f"{params.lam!r},{period!r},{report.sigma_bar!r},{report.x_star!r},"
                f"{report.w_sigma!r},{report.w_const!r},{report.gap!r},"
                f"{report.residual_gap!r},{report.residual_m1!r},{report.residual_m2!r}\n"
            )
    finally:
        if own:
            fh.close()


def report_to_json_dict(
    signal: InputSignal,
    params: SystemParams,
    report: PeriodicReport,
    grid_step: float | None = None,
) -> dict:
    """JSON form of a report with provenance (inflow description, lam, grid)."""
    return {
        "lam": params.lam,
        "signal": signal_to_dict(signal),
        "period": require_period(signal),
        "grid_step": grid_step,
        "sigma_bar": report.sigma_bar,
        "x_star": report.x_star,
        "w_sigma": report.w_sigma,
        "w_const": report.w_const,
        "gap": report.gap,
        "residuals": {
            "gap_identity": report.residual_gap,
            "moment_1": report.residual_m1,
            "moment_2": report.residual_m2,
        },
    }


def report_json_string(signal, params, report, grid_step=None) -> str:
    return json.dumps(
        report_to_json_dict(signal, params, report, grid_step),
        sort_keys=True,
        indent=2,
    )


def reports_csv_string(rows) -> str:
    buf = io.StringIO()
    reports_to_csv(rows, buf)
    return buf.getvalue()
