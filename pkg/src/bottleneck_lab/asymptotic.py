"""Long-run averages for inflows that need not be periodic.

For a general locally integrable inflow, the mean inflow and averaged
output are defined through limit-superior running averages,

    sigma_bar = limsup (1/tau) int_0^tau sigma,
    w         = lam * limsup (1/tau) int_0^tau x,

and the bound w <= lam sigma_bar / (lam + sigma_bar) still holds. A limsup
is not computable from finite data; this module estimates it by the maximum
of running means over the tail half of a logarithmically spaced checkpoint
grid, and reports that window explicitly. The estimator is conservative for
the direction of the inequality being tested and its slack is combined from
the quadrature error bound and the 2/(lam tau_max) transient term.

The finite-horizon certificate is the pre-limit form of the bound: for any
horizon tau and any reference occupancy x_star,

    lam (1/tau) int_0^tau x  <=  (1-x_star)^2 (1/tau) int_0^tau sigma
                                 + lam x_star^2
                                 + (2 x_star - 1)(x(tau) - x(0))/tau
                                 - (x(tau)^2 - x(0)^2)/(2 tau),

with slack equal to the non-negative integral (1/tau) int (x - x_star)^2
(lam + sigma). It must hold at every horizon, not just in the limit, and
its correction terms decay like 1/tau.

The choice of solution does not matter in the limit: two solutions differ
by a homogeneous solution, so their running averages differ by at most
|x1(0) - x2(0)| / (lam tau).
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from . import dynamics
from .signals import (
    ClippedSinusoidSum,
    InputSignal,
    QuadratureSpec,
    SystemParams,
    is_periodic,
    max_level,
    max_slope,
    mean_over_period,
    period_of,
)
from .periodic import constant_benchmark

__all__ = [
    "RunningAverages",
    "BoundCheck",
    "FiniteTauCertificate",
    "IndependenceCheck",
    "running_averages",
    "longrun_bound_check",
    "finite_horizon_certificates",
    "solution_independence_check",
    "default_tau_max",
    "quadrature_slack",
    "averages_to_csv",
]

DEFAULT_CHECKPOINTS = 64
CERTIFICATE_TOL = 1e-9


@dataclass(frozen=True)
class RunningAverages:
    """Running means of inflow and occupancy at increasing horizons.

    taus           increasing horizon grid
    mean_input     (1/tau) int_0^tau sigma per horizon
    mean_state     (1/tau) int_0^tau x per horizon, each in [0, 1]
    window_start   index where the tail-max estimation window begins
    sigma_bar_est  tail-max estimate of the limsup mean inflow
    w_est          lam times the tail-max estimate of the limsup mean state
    """

    taus: np.ndarray
    mean_input: np.ndarray
    mean_state: np.ndarray
    window_start: int
    sigma_bar_est: float
    w_est: float


@dataclass(frozen=True)
class BoundCheck:
    """Long-run output bound at estimated mean inflow, with estimator slack."""

    sigma_bar_est: float
    w_est: float
    bound: float
    margin: float
    slack: float
    violated: bool


@dataclass(frozen=True)
class FiniteTauCertificate:
    """Pre-limit inequality at one horizon; slack >= 0 up to rounding."""

    tau: float
    lhs: float
    rhs: float
    slack: float
    correction: float  # the two 1/tau terms alone, for decay-rate studies


@dataclass(frozen=True)
class IndependenceCheck:
    """Running-average discrepancy of two starts against the 1/(lam tau) bound."""

    x0_a: float
    x0_b: float
    tau: float
    avg_diff: float
    bound: float


def _pass(signal, params, x0, times, grid: QuadratureSpec | None):
    if isinstance(signal, ClippedSinusoidSum):
        step = (grid or QuadratureSpec()).resolve(dynamics.default_step(signal, params))
        return dynamics.smooth_pass(signal, params, x0, times, step)
    return dynamics.exact_pass(signal, params, x0, times)


def default_tau_max(signal: InputSignal, params: SystemParams) -> float:
    """Horizon making the 1/(lam tau) transient at most 1e-3, and at least
    100 periods for signals with an intrinsic period."""
    tau = 1000.0 / params.lam
    period = period_of(signal)
    if period is not None:
        tau = max(tau, 100.0 * period)
    return tau


def quadrature_slack(signal: InputSignal, params: SystemParams, step: float) -> float:
    """Crude trapezoid error bound per unit time for the mean-state integral.

    Zero on piecewise-constant inflow, where the running integrals are
    closed-form exact.
    """
    if not isinstance(signal, ClippedSinusoidSum):
        return 0.0
    smax = max_level(signal)
    rate = params.lam + smax
    curvature = max_slope(signal) + rate * (params.lam + smax)
    return step * step * curvature / 12.0


def running_averages(
    signal: InputSignal,
    params: SystemParams,
    x0: float,
    tau_max: float,
    n_checkpoints: int = DEFAULT_CHECKPOINTS,
    checkpoints: np.ndarray | None = None,
    grid: QuadratureSpec | None = None,
) -> RunningAverages:
    """Single forward pass recording running means at the checkpoints.

    Checkpoints default to n_checkpoints log-spaced horizons on
    [tau_max/1000, tau_max]. The limsup estimates are the maxima of the
    running means over the last half of the checkpoint list (tail-max).
    """
    if tau_max <= 0.0:
        raise dynamics.DomainError(f"tau_max must be positive, got {tau_max}")
    if checkpoints is None:
        if n_checkpoints < 2:
            raise dynamics.DomainError("need at least two checkpoints")
        checkpoints = np.geomspace(tau_max / 1000.0, tau_max, n_checkpoints)
    else:
        checkpoints = np.asarray(checkpoints, dtype=float)
        if checkpoints.size < 2 or np.any(np.diff(checkpoints) <= 0.0) or checkpoints[0] <= 0.0:
            raise dynamics.DomainError("checkpoints must be positive and increasing")
    _, cum_x, cum_s = _pass(signal, params, x0, checkpoints, grid)
    mean_state = cum_x / checkpoints
    mean_input = cum_s / checkpoints
    window_start = checkpoints.size // 2
    sigma_bar_est = float(np.max(mean_input[window_start:]))
    w_est = params.lam * float(np.max(mean_state[window_start:]))
    return RunningAverages(
        taus=checkpoints,
        mean_input=mean_input,
        mean_state=mean_state,
        window_start=window_start,
        sigma_bar_est=sigma_bar_est,
        w_est=w_est,
    )


def longrun_bound_check(
    signal: InputSignal,
    params: SystemParams,
    x0: float,
    tau_max: float | None = None,
    n_checkpoints: int = DEFAULT_CHECKPOINTS,
    grid: QuadratureSpec | None = None,
) -> BoundCheck:
    """Estimate w and compare with the benchmark at the estimated mean inflow.

    A violation is flagged only when the margin is more negative than the
    combined estimator slack (quadrature bound plus 2/(lam tau_max)), so
    finite-horizon transients do not raise false alarms.
    """
    if tau_max is None:
        tau_max = default_tau_max(signal, params)
    ra = running_averages(signal, params, x0, tau_max, n_checkpoints, grid=grid)
    step = (grid or QuadratureSpec()).resolve(dynamics.default_step(signal, params))
    slack = quadrature_slack(signal, params, step) + 2.0 / (params.lam * tau_max)
    bound = constant_benchmark(ra.sigma_bar_est, params)
    margin = bound - ra.w_est
    return BoundCheck(
        sigma_bar_est=ra.sigma_bar_est,
        w_est=ra.w_est,
        bound=bound,
        margin=margin,
        slack=slack,
        violated=margin < -slack,
    )


def finite_horizon_certificates(
    signal: InputSignal,
    params: SystemParams,
    x0: float,
    taus,
    sigma_bar: float | None = None,
    grid: QuadratureSpec | None = None,
) -> list[FiniteTauCertificate]:
    """Evaluate the pre-limit inequality at each horizon in `taus`.

    The reference x_star is built from `sigma_bar` when given, from the
    exact period mean for periodic signals, or from the final running mean
    otherwise; the inequality holds for any choice, so this only affects
    how tight the certificates are.
    """
    taus = np.asarray(taus, dtype=float)
    if taus.size == 0 or np.any(np.diff(taus) <= 0.0) or taus[0] <= 0.0:
        raise dynamics.DomainError("taus must be positive and increasing")
    lam = params.lam
    x0 = dynamics._check_occupancy(x0)
    states, cum_x, cum_s = _pass(signal, params, x0, taus, grid)
    if sigma_bar is None:
        if is_periodic(signal):
            sigma_bar = mean_over_period(signal)
        else:
            sigma_bar = float(cum_s[-1] / taus[-1])
    x_star = sigma_bar / (lam + sigma_bar) if sigma_bar > 0.0 else 0.0

    certs = []
    one_minus_sq = (1.0 - x_star) ** 2
    for tau, x_tau, ix, isig in zip(taus.tolist(), states.tolist(),
                                    cum_x.tolist(), cum_s.tolist()):
        lhs = lam * ix / tau
        correction = ((2.0 * x_star - 1.0) * (x_tau - x0)
                      - 0.5 * (x_tau * x_tau - x0 * x0)) / tau
        rhs = one_minus_sq * isig / tau + lam * x_star * x_star + correction
        certs.append(FiniteTauCertificate(
            tau=tau, lhs=lhs, rhs=rhs, slack=rhs - lhs, correction=correction,
        ))
    return certs


def solution_independence_check(
    signal: InputSignal,
    params: SystemParams,
    x0_a: float,
    x0_b: float,
    tau: float,
    grid: QuadratureSpec | None = None,
) -> IndependenceCheck:
    """Compare running means from two starts against |dx0| / (lam tau)."""
    if tau <= 0.0:
        raise dynamics.DomainError(f"tau must be positive, got {tau}")
    x0_a = dynamics._check_occupancy(x0_a)
    x0_b = dynamics._check_occupancy(x0_b)
    times = np.asarray([tau])
    _, cum_a, _ = _pass(signal, params, x0_a, times, grid)
    _, cum_b, _ = _pass(signal, params, x0_b, times, grid)
    avg_diff = abs(float(cum_a[0]) - float(cum_b[0])) / tau
    bound = abs(x0_a - x0_b) / (params.lam * tau)
    return IndependenceCheck(x0_a=x0_a, x0_b=x0_b, tau=tau, avg_diff=avg_diff, bound=bound)


def averages_to_csv(
    ra: RunningAverages,
    certificates: list[FiniteTauCertificate] | None,
    path_or_file,
) -> None:
    """Combined table: tau, mean_input, mean_state, lhs, rhs, slack.

    Certificate columns are left empty when no certificate list is given or
    when a certificate horizon does not match the running-average grid.
    """
    by_tau = {}
    if certificates:
        by_tau = {c.tau: c for c in certificates}
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", encoding="utf-8", newline="") if own else path_or_file
    try:
        fh.write("tau,mean_input,mean_state,lhs,rhs,slack\n")
        for tau, mi, ms in zip(ra.taus.tolist(), ra.mean_input.tolist(),
                               ra.mean_state.tolist()):
            cert = by_tau.get(tau)
            if cert is None:
                fh.write(f"{tau!r},{mi!r},{ms!r},,,\n")
            else:
                fh.write(f"{tau!r},{mi!r},{ms!r},{cert.lhs!r},{cert.rhs!r},{cert.slack!r}\n")
    finally:
        if own:
            fh.close()


def averages_csv_string(ra, certificates=None) -> str:
    buf = io.StringIO()
    averages_to_csv(ra, certificates, buf)
    return buf.getvalue()
