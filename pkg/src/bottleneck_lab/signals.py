"""Inflow waveforms for the bottleneck-entrance flow model.

The model tracks an occupancy x(t) in [0, 1] that is filled by a
non-negative inflow rate sigma(t), throttled by the remaining vacancy,
and drained proportionally to the occupancy:

    x'(t) = sigma(t) * (1 - x(t)) - lam * x(t),   lam > 0.

This module owns the inflow side: four closed waveform representations,
point evaluation, periodicity detection, and period averages (exact for
piecewise-constant waveforms, composite trapezoid otherwise). Waveforms
are immutable and fully validated at construction, so evaluation and the
downstream integrators never re-check anything.

Serialization: `signal_to_dict` / `signal_from_dict` define the on-disk
schema consumed by the command line tools (a "kind" discriminator plus
numeric fields; unknown keys are rejected).
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from fractions import Fraction
from typing import Union

import numpy as np

__all__ = [
    "SignalError",
    "NonPeriodicSignalError",
    "SystemParams",
    "QuadratureSpec",
    "Constant",
    "PiecewiseConstant",
    "ClippedSinusoidSum",
    "Sampled",
    "InputSignal",
    "evaluate",
    "evaluate_array",
    "period_of",
    "is_periodic",
    "max_level",
    "mean_over_period",
    "signal_to_dict",
    "signal_from_dict",
]

# Frequency ratios are recognized as rational only up to this denominator;
# beyond it a sinusoid sum is treated as aperiodic (e.g. omega ratio sqrt(2)).
_MAX_RATIO_DENOMINATOR = 1000
_RATIO_TOL = 1e-9

# Default quadrature resolution: one period is split into this many steps.
PERIOD_QUADRATURE_STEPS = 10_000


class SignalError(ValueError):
    """A waveform failed construction-time validation."""


class NonPeriodicSignalError(SignalError):
    """A period-based operation was given a signal without a period.

    Aperiodic inflows are handled by the running-average estimators in
    `bottleneck_lab.asymptotic`, not by period averages.
    """


def _require_finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise SignalError(f"{name} must be finite, got {value!r}")
    return value


@dataclass(frozen=True)
class SystemParams:
    """Outflow rate constant of the model (the `lam` in w = lam * x)."""

    lam: float

    def __post_init__(self) -> None:
        lam = _require_finite("lam", self.lam)
        if lam <= 0.0:
            raise SignalError(f"lam must be strictly positive, got {lam}")
        object.__setattr__(self, "lam", lam)


@dataclass(frozen=True)
class QuadratureSpec:
    """Uniform integration step; `step=None` defers to per-operation defaults."""

    step: float | None = None

    def __post_init__(self) -> None:
        if self.step is not None:
            step = _require_finite("step", self.step)
            if step <= 0.0:
                raise SignalError(f"step must be positive, got {step}")
            object.__setattr__(self, "step", step)

    def resolve(self, default: float) -> float:
        return default if self.step is None else self.step


@dataclass(frozen=True)
class Constant:
    """Constant inflow at `level`.

    A constant is periodic with any period; `period` fixes the nominal one
    used by period-based analyses (Poincare maps, period averages).
    """

    level: float
    period: float = 1.0

    def __post_init__(self) -> None:
        level = _require_finite("level", self.level)
        period = _require_finite("period", self.period)
        if level < 0.0:
            raise SignalError(f"level must be non-negative, got {level}")
        if period <= 0.0:
            raise SignalError(f"period must be positive, got {period}")
        object.__setattr__(self, "level", level)
        object.__setattr__(self, "period", period)


@dataclass(frozen=True)
class PiecewiseConstant:
    """Piecewise-constant inflow on breakpoints 0 = t0 < t1 < ... < tk.

    Level `levels[i]` holds on the left-closed segment [t_i, t_{i+1}).
    When `periodic`, the pattern repeats with period tk; otherwise the last
    level is held for t >= tk.
    """

    breakpoints: tuple[float, ...]
    levels: tuple[float, ...]
    periodic: bool = True

    def __post_init__(self) -> None:
        bps = tuple(_require_finite("breakpoint", b) for b in self.breakpoints)
        lvls = tuple(_require_finite("level", c) for c in self.levels)
        if len(bps) < 2:
            raise SignalError("need at least two breakpoints")
        if bps[0] != 0.0:
            raise SignalError(f"breakpoints must start at 0, got {bps[0]}")
        if any(b1 <= b0 for b0, b1 in zip(bps, bps[1:])):
            raise SignalError(f"breakpoints must be strictly increasing: {bps}")
        if len(lvls) != len(bps) - 1:
            raise SignalError(
                f"expected {len(bps) - 1} levels for {len(bps)} breakpoints, got {len(lvls)}"
            )
        if any(c < 0.0 for c in lvls):
            raise SignalError(f"levels must be non-negative: {lvls}")
        object.__setattr__(self, "breakpoints", bps)
        object.__setattr__(self, "levels", lvls)
        object.__setattr__(self, "periodic", bool(self.periodic))

    @property
    def duration(self) -> float:
        return self.breakpoints[-1]

    @property
    def durations(self) -> tuple[float, ...]:
        return tuple(b1 - b0 for b0, b1 in zip(self.breakpoints, self.breakpoints[1:]))


@dataclass(frozen=True)
class ClippedSinusoidSum:
    """Inflow max(0, mean + sum_i A_i sin(omega_i t + phi_i)).

    The clip keeps sigma non-negative for arbitrary amplitudes. The sum is
    periodic only when all frequency ratios are rational (detected up to
    denominator 1000); otherwise it is quasi-periodic and only the
    running-average machinery applies.
    """

    mean: float
    terms: tuple[tuple[float, float, float], ...]  # (amplitude, omega, phase)

    def __post_init__(self) -> None:
        mean = _require_finite("mean", self.mean)
        if mean < 0.0:
            raise SignalError(f"mean must be non-negative, got {mean}")
        if len(self.terms) == 0:
            raise SignalError("need at least one sinusoid term (use Constant otherwise)")
        terms = []
        for term in self.terms:
            amp, omega, phase = term
            amp = _require_finite("amplitude", amp)
            omega = _require_finite("omega", omega)
            phase = _require_finite("phase", phase)
            if omega <= 0.0:
                raise SignalError(f"omega must be positive, got {omega}")
            terms.append((amp, omega, phase))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "terms", tuple(terms))

    @property
    def period(self) -> float | None:
        """Common period of all terms, or None when incommensurate."""
        base = self.terms[0][1]
        denominators = []
        for _, omega, _ in self.terms:
            ratio = omega / base
            frac = Fraction(ratio).limit_denominator(_MAX_RATIO_DENOMINATOR)
            if abs(ratio - float(frac)) > _RATIO_TOL * max(1.0, abs(ratio)):
                return None
            denominators.append(frac.denominator)
        common = 1
        for q in denominators:
            common = math.lcm(common, q)
        return 2.0 * math.pi * common / base


@dataclass(frozen=True)
class Sampled:
    """Uniformly sampled inflow, held piecewise-constant-left per sample.

    `values[i]` holds on [i*step, (i+1)*step); with `periodic` the pattern
    repeats every len(values)*step. Equivalent to a PiecewiseConstant on a
    uniform grid (see `as_piecewise`).
    """

    step: float
    values: tuple[float, ...]
    periodic: bool = True

    def __post_init__(self) -> None:
        step = _require_finite("step", self.step)
        if step <= 0.0:
            raise SignalError(f"step must be positive, got {step}")
        if len(self.values) == 0:
            raise SignalError("need at least one sample")
        vals = tuple(_require_finite("value", v) for v in self.values)
        if any(v < 0.0 for v in vals):
            raise SignalError("sample values must be non-negative")
        object.__setattr__(self, "step", step)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "periodic", bool(self.periodic))

    def as_piecewise(self) -> PiecewiseConstant:
        n = len(self.values)
        breakpoints = tuple(i * self.step for i in range(n + 1))
        return PiecewiseConstant(breakpoints, self.values, periodic=self.periodic)


InputSignal = Union[Constant, PiecewiseConstant, ClippedSinusoidSum, Sampled]


# ---------------------------------------------------------------------------
# Evaluation and basic queries
# ---------------------------------------------------------------------------

def period_of(signal: InputSignal) -> float | None:
    """Period of the signal, or None for aperiodic signals."""
    if isinstance(signal, Constant):
        return signal.period
    if isinstance(signal, PiecewiseConstant):
        return signal.duration if signal.periodic else None
    if isinstance(signal, ClippedSinusoidSum):
        return signal.period
    if isinstance(signal, Sampled):
        return len(signal.values) * signal.step if signal.periodic else None
    raise TypeError(f"not an input signal: {signal!r}")


def is_periodic(signal: InputSignal) -> bool:
    return period_of(signal) is not None


def require_period(signal: InputSignal) -> float:
    period = period_of(signal)
    if period is None:
        raise NonPeriodicSignalError(
            "signal has no period; use the running-average estimators in "
            "bottleneck_lab.asymptotic for aperiodic inflows"
        )
    return period


def max_level(signal: InputSignal) -> float:
    """Upper bound on sigma(t); tight except for clipped sinusoid sums."""
    if isinstance(signal, Constant):
        return signal.level
    if isinstance(signal, PiecewiseConstant):
        return max(signal.levels)
    if isinstance(signal, ClippedSinusoidSum):
        return signal.mean + sum(abs(a) for a, _, _ in signal.terms)
    if isinstance(signal, Sampled):
        return max(signal.values)
    raise TypeError(f"not an input signal: {signal!r}")


def max_slope(signal: InputSignal) -> float:
    """Upper bound on |sigma'(t)| away from switching points."""
    if isinstance(signal, ClippedSinusoidSum):
        return sum(abs(a) * w for a, w, _ in signal.terms)
    return 0.0


def _piecewise_value(breakpoints: tuple[float, ...], levels: tuple[float, ...],
                     periodic: bool, t: float) -> float:
    end = breakpoints[-1]
    if periodic:
        t = math.fmod(t, end)
    elif t >= end:
        return levels[-1]
    idx = bisect_right(breakpoints, t) - 1
    if idx < 0:
        idx = 0
    elif idx >= len(levels):
        idx = len(levels) - 1
    return levels[idx]


def evaluate(signal: InputSignal, t: float) -> float:
    """Inflow rate sigma(t) at a single time t >= 0."""
    if isinstance(signal, Constant):
        return signal.level
    if isinstance(signal, PiecewiseConstant):
        return _piecewise_value(signal.breakpoints, signal.levels, signal.periodic, t)
    if isinstance(signal, ClippedSinusoidSum):
        s = signal.mean
        for amp, omega, phase in signal.terms:
            s += amp * math.sin(omega * t + phase)
        return s if s > 0.0 else 0.0
    if isinstance(signal, Sampled):
        n = len(signal.values)
        breakpoints = tuple(i * signal.step for i in range(n + 1))
        return _piecewise_value(breakpoints, signal.values, signal.periodic, t)
    raise TypeError(f"not an input signal: {signal!r}")


def evaluate_array(signal: InputSignal, ts: np.ndarray) -> np.ndarray:
    """Vectorized sigma(t) over an array of times."""
    ts = np.asarray(ts, dtype=float)
    if isinstance(signal, Constant):
        return np.full_like(ts, signal.level)
    if isinstance(signal, ClippedSinusoidSum):
        s = np.full_like(ts, signal.mean)
        for amp, omega, phase in signal.terms:
            s += amp * np.sin(omega * ts + phase)
        return np.maximum(s, 0.0)
    if isinstance(signal, Sampled):
        signal = signal.as_piecewise()
    if isinstance(signal, PiecewiseConstant):
        bps = np.asarray(signal.breakpoints)
        lvls = np.asarray(signal.levels)
        tm = np.fmod(ts, signal.duration) if signal.periodic else ts
        idx = np.searchsorted(bps, tm, side="right") - 1
        idx = np.clip(idx, 0, len(lvls) - 1)
        return lvls[idx]
    raise TypeError(f"not an input signal: {signal!r}")


# ---------------------------------------------------------------------------
# Period averages
# ---------------------------------------------------------------------------

def mean_over_period(signal: InputSignal, quad: QuadratureSpec | None = None) -> float:
    """Average inflow over one period.

    Exact (no quadrature) for constant and piecewise-constant waveforms;
    composite trapezoid for clipped sinusoid sums, which are never
    integrated symbolically because the clip boundary is error-prone.
    """
    period = require_period(signal)
    if isinstance(signal, Constant):
        return signal.level
    if isinstance(signal, Sampled):
        signal = signal.as_piecewise()
    if isinstance(signal, PiecewiseConstant):
        total = 0.0
        for level, dt in zip(signal.levels, signal.durations):
            total += level * dt
        return total / period
    quad = quad or QuadratureSpec()
    step = quad.resolve(period / PERIOD_QUADRATURE_STEPS)
    n = max(2, math.ceil(period / step))
    ts = np.linspace(0.0, period, n + 1)
    vals = evaluate_array(signal, ts)
    return float(np.trapezoid(vals, dx=period / n)) / period


# ---------------------------------------------------------------------------
# Serialization (the on-disk signal schema)
# ---------------------------------------------------------------------------

def signal_to_dict(signal: InputSignal) -> dict:
    if isinstance(signal, Constant):
        return {"kind": "constant", "level": signal.level, "period": signal.period}
    if isinstance(signal, PiecewiseConstant):
        return {
            "kind": "piecewise_constant",
            "breakpoints": list(signal.breakpoints),
            "levels": list(signal.levels),
            "periodic": signal.periodic,
        }
    if isinstance(signal, ClippedSinusoidSum):
        return {
            "kind": "clipped_sinusoid_sum",
            "mean": signal.mean,
            "terms": [
                {"amplitude": a, "omega": w, "phase": p} for a, w, p in signal.terms
            ],
        }
    if isinstance(signal, Sampled):
        return {
            "kind": "sampled",
            "step": signal.step,
            "values": list(signal.values),
            "periodic": signal.periodic,
        }
    raise TypeError(f"not an input signal: {signal!r}")


def _check_keys(data: dict, required: set[str], optional: set[str], where: str) -> None:
    keys = set(data)
    unknown = keys - required - optional
    if unknown:
        raise SignalError(f"unknown key(s) in {where}: {sorted(unknown)}")
    missing = required - keys
    if missing:
        raise SignalError(f"missing key(s) in {where}: {sorted(missing)}")


def signal_from_dict(data: dict) -> InputSignal:
    """Build a signal from its dict form; unknown or missing keys are errors."""
    if not isinstance(data, dict):
        raise SignalError(f"signal description must be a mapping, got {type(data).__name__}")
    kind = data.get("kind")
    if kind == "constant":
        _check_keys(data, {"kind", "level"}, {"period"}, "constant signal")
        return Constant(level=data["level"], period=data.get("period", 1.0))
    if kind == "piecewise_constant":
        _check_keys(data, {"kind", "breakpoints", "levels"}, {"periodic"},
                    "piecewise_constant signal")
        return PiecewiseConstant(
            breakpoints=tuple(data["breakpoints"]),
            levels=tuple(data["levels"]),
            periodic=data.get("periodic", True),
        )
    if kind == "clipped_sinusoid_sum":
        _check_keys(data, {"kind", "mean", "terms"}, set(), "clipped_sinusoid_sum signal")
        terms = []
        for i, term in enumerate(data["terms"]):
            _check_keys(term, {"amplitude", "omega"}, {"phase"}, f"terms[{i}]")
            terms.append((term["amplitude"], term["omega"], term.get("phase", 0.0)))
        return ClippedSinusoidSum(mean=data["mean"], terms=tuple(terms))
    if kind == "sampled":
        _check_keys(data, {"kind", "step", "values"}, {"periodic"}, "sampled signal")
        return Sampled(step=data["step"], values=tuple(data["values"]),
                       periodic=data.get("periodic", True))
    raise SignalError(
        f"unknown signal kind {kind!r}; expected one of constant, "
        "piecewise_constant, clipped_sinusoid_sum, sampled"
    )
