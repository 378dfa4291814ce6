import csv
import io
import math

import numpy as np
import pytest

from bottleneck_lab.dynamics import (
    DomainError,
    StepSizeError,
    average_x,
    default_step,
    exact_pass,
    simulate,
    smooth_pass,
    step_exact,
    trajectory_csv_string,
)
from bottleneck_lab.signals import (
    ClippedSinusoidSum,
    Constant,
    PiecewiseConstant,
    QuadratureSpec,
    Sampled,
    SystemParams,
)

P1 = SystemParams(lam=1.0)
TWO_LEVEL = PiecewiseConstant((0.0, 1.0, 2.0), (0.0, 2.0))


def rk4_constant(x0, c, lam, h, n):
    """Independent fine-step integrator for one constant-inflow segment."""
    f = lambda x: c * (1.0 - x) - lam * x
    step = h / n
    x = x0
    for _ in range(n):
        k1 = f(x)
        k2 = f(x + 0.5 * step * k1)
        k3 = f(x + 0.5 * step * k2)
        k4 = f(x + step * k3)
        x += step * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
    return x


class TestStepExact:
    def test_fixed_point_is_invariant(self):
        c = 1.7
        x_star = c / (1.0 + c)
        x1, integral = step_exact(x_star, c, 0.9, P1)
        assert x1 == pytest.approx(x_star, abs=1e-15)
        assert integral == pytest.approx(x_star * 0.9, abs=1e-15)

    def test_half_unit_step_from_empty(self):
        x1, _ = step_exact(0.0, 1.0, 0.5, P1)
        expected = 0.5 * (1.0 - math.exp(-1.0))  # 0.31606027941427883
        assert x1 == pytest.approx(expected, abs=1e-15)
        assert x1 == pytest.approx(rk4_constant(0.0, 1.0, 1.0, 0.5, 50_000), abs=1e-12)

    def test_zero_inflow_is_pure_decay(self):
        for x0 in (0.0, 0.3, 1.0):
            x1, _ = step_exact(x0, 0.0, 0.7, P1)
            assert x1 == pytest.approx(x0 * math.exp(-0.7), abs=1e-15)

    def test_integral_matches_fine_riemann(self):
        x0, c, h = 0.2, 3.0, 0.8
        _, integral = step_exact(x0, c, h, P1)
        ts = np.linspace(0.0, h, 200_001)
        x_inf = c / (1.0 + c)
        xs = x_inf + (x0 - x_inf) * np.exp(-(1.0 + c) * ts)
        assert integral == pytest.approx(float(np.trapezoid(xs, ts)), abs=1e-11)

    def test_domain_errors(self):
        with pytest.raises(DomainError):
            step_exact(-0.1, 1.0, 1.0, P1)
        with pytest.raises(DomainError):
            step_exact(1.1, 1.0, 1.0, P1)
        with pytest.raises(DomainError):
            step_exact(0.5, 1.0, 0.0, P1)
        with pytest.raises(DomainError):
            step_exact(0.5, -1.0, 1.0, P1)


class TestSimulate:
    def test_zero_inflow_decay(self):
        # ~1000 chained exact steps accumulate a few ulp of drift
        traj = simulate(Constant(0.0), P1, 1.0, 1.0)
        assert traj.final_state == pytest.approx(math.exp(-1.0), abs=1e-12)

    def test_converges_to_steady_state(self):
        traj = simulate(Constant(1.0), P1, 0.0, 20.0)
        assert traj.final_state == pytest.approx(0.5, abs=1e-6)
        # approach is monotone from below
        assert np.all(np.diff(traj.states) >= -1e-15)
        assert np.all(traj.states <= 0.5 + 1e-12)

    def test_fixed_point_trajectory_is_flat(self):
        c = 2.0
        x_star = c / (1.0 + c)
        traj = simulate(Constant(c), P1, x_star, 5.0)
        np.testing.assert_allclose(traj.states, x_star, rtol=0, atol=1e-14)

    def test_breakpoints_land_on_grid(self):
        traj = simulate(TWO_LEVEL, P1, 0.0, 5.0)
        for b in (1.0, 2.0, 3.0, 4.0):
            assert b in traj.times

    def test_domain_validation(self):
        with pytest.raises(DomainError):
            simulate(Constant(1.0), P1, -0.2, 1.0)
        with pytest.raises(DomainError):
            simulate(Constant(1.0), P1, 0.0, -1.0)

    def test_smooth_matches_exact_on_constant_like_signal(self):
        # A sinusoid with zero amplitude is a constant; the numeric path must
        # agree with the closed form.
        smooth = ClippedSinusoidSum(mean=1.0, terms=((0.0, 1.0, 0.0),))
        traj = simulate(smooth, P1, 0.0, 2.0, QuadratureSpec(step=1e-3))
        expected = 0.5 * (1.0 - math.exp(-2.0 * 2.0))
        assert traj.final_state == pytest.approx(expected, abs=1e-12)

    def test_sampled_uses_exact_path(self):
        sig = Sampled(0.5, (2.0, 0.0, 1.0))
        traj = simulate(sig, P1, 0.3, 4.0)
        assert np.all(traj.states >= 0.0) and np.all(traj.states <= 1.0)
        # cross-check final state against explicit per-segment stepping
        x = 0.3
        t = 0.0
        while t < 4.0 - 1e-12:
            seg = int(t / 0.5) % 3
            x, _ = step_exact(x, sig.values[seg], 0.5, P1)
            t += 0.5
        assert traj.final_state == pytest.approx(x, abs=1e-12)


class TestInvariants:
    def test_forward_invariance_randomized(self):
        rng = np.random.default_rng(21)
        for _ in range(25):
            n = int(rng.integers(1, 10))
            bps = np.concatenate(([0.0], np.cumsum(rng.uniform(0.05, 1.0, n))))
            sig = PiecewiseConstant(tuple(bps), tuple(rng.uniform(0.0, 5.0, n)))
            params = SystemParams(lam=float(10.0 ** rng.uniform(-1, 1)))
            traj = simulate(sig, params, float(rng.uniform(0.0, 1.0)), 10.0)
            assert np.all(traj.states >= 0.0)
            assert np.all(traj.states <= 1.0)
            assert traj.cumulative_x[0] == 0.0
            assert np.all(np.diff(traj.cumulative_x) >= 0.0)

    def test_two_start_contraction_rate(self):
        # |x1(t) - x2(t)| = |dx0| e^{-int (lam+sigma)} <= |dx0| e^{-lam t}
        times = np.linspace(0.5, 20.0, 40)
        xs_a, _, cum_s = exact_pass(TWO_LEVEL, P1, 0.0, times)
        xs_b, _, _ = exact_pass(TWO_LEVEL, P1, 1.0, times)
        diff = np.abs(xs_b - xs_a)
        exact = np.exp(-(P1.lam * times + cum_s))
        np.testing.assert_allclose(diff, exact, rtol=0, atol=1e-8)
        assert np.all(diff <= np.exp(-P1.lam * times) + 1e-12)

    def test_order_preservation(self):
        rng = np.random.default_rng(8)
        times = np.linspace(0.1, 15.0, 60)
        for _ in range(10):
            a, b = sorted(rng.uniform(0.0, 1.0, 2))
            xs_a, _, _ = exact_pass(TWO_LEVEL, P1, float(a), times)
            xs_b, _, _ = exact_pass(TWO_LEVEL, P1, float(b), times)
            assert np.all(xs_a <= xs_b + 1e-15)

    def test_numeric_path_is_fourth_order(self):
        # Smooth (clip inactive) sinusoid; halving the step should cut the
        # final-state error against a step-1e-6 reference by about 16x.
        sig = ClippedSinusoidSum(mean=1.0, terms=((0.5, 2.0 * math.pi, 0.0),))
        horizon = 1.0
        ref = smooth_pass(sig, P1, 0.2, np.asarray([horizon]), 1e-6)[0][0]
        err = []
        for step in (0.02, 0.01):
            got = smooth_pass(sig, P1, 0.2, np.asarray([horizon]), step)[0][0]
            err.append(abs(got - ref))
        ratio = err[0] / err[1]
        assert 11.0 <= ratio <= 22.0

    def test_unstable_step_aborts_loudly(self):
        stiff = SystemParams(lam=200.0)
        sig = ClippedSinusoidSum(mean=0.5, terms=((0.1, 1.0, 0.0),))
        with pytest.raises(StepSizeError, match="step"):
            smooth_pass(sig, stiff, 1.0, np.asarray([1.0]), 0.05)

    def test_default_step_resolves_fastest_scale(self):
        sig = ClippedSinusoidSum(mean=1.0, terms=((2.0, 1.0, 0.0),))
        step = default_step(sig, SystemParams(lam=0.5))
        # min(0.01/0.5, 0.01/4, T/1e4) with T = 2 pi
        assert step == pytest.approx(2.0 * math.pi / 1e4)
        aperiodic = ClippedSinusoidSum(
            mean=1.0, terms=((0.5, 1.0, 0.0), (0.5, math.sqrt(2.0), 0.0))
        )
        assert default_step(aperiodic, P1) == pytest.approx(0.01 / 3.0)


class TestAverageX:
    def test_constant_trajectory(self):
        traj = simulate(Constant(1.0), P1, 0.5, 4.0)
        assert average_x(traj, 0.0, 4.0) == pytest.approx(0.5, abs=1e-14)
        assert average_x(traj, 1.0, 3.0) == pytest.approx(0.5, abs=1e-14)

    def test_charging_segment_average(self):
        # lam=1, c=1, x0=0 on [0, 0.5]: mean x = e^{-1}/2, checked against a
        # fine Riemann sum of the explicit solution.
        traj = simulate(Constant(1.0), P1, 0.0, 1.0, QuadratureSpec(step=0.25))
        got = average_x(traj, 0.0, 0.5)
        ts = np.linspace(0.0, 0.5, 2_000_001)
        oracle = float(np.trapezoid(0.5 * (1.0 - np.exp(-2.0 * ts)), ts)) / 0.5
        assert oracle == pytest.approx(math.exp(-1.0) / 2.0, abs=1e-12)
        assert got == pytest.approx(oracle, abs=1e-10)

    def test_two_segment_average_against_segmented_rk4(self):
        xp0 = 0.6452942644799433  # periodic start for TWO_LEVEL at lam=1
        traj = simulate(TWO_LEVEL, P1, xp0, 2.0)
        got = average_x(traj, 0.0, 2.0)
        # brute force: fine RK4 within each segment, trapezoid the states
        def seg(x0, c, n=200_000):
            f = lambda x: c * (1.0 - x) - x
            h = 1.0 / n
            xs = np.empty(n + 1)
            xs[0] = x0
            x = x0
            for i in range(n):
                k1 = f(x)
                k2 = f(x + 0.5 * h * k1)
                k3 = f(x + 0.5 * h * k2)
                k4 = f(x + h * k3)
                x += h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
                xs[i + 1] = x
            return x, float(np.trapezoid(xs, dx=h))

        x_mid, i1 = seg(xp0, 0.0)
        _, i2 = seg(x_mid, 2.0)
        assert got == pytest.approx((i1 + i2) / 2.0, abs=1e-9)

    def test_range_errors(self):
        traj = simulate(Constant(1.0), P1, 0.0, 2.0)
        with pytest.raises(DomainError):
            average_x(traj, 1.0, 0.5)
        with pytest.raises(DomainError):
            average_x(traj, 0.0, 3.0)
        with pytest.raises(DomainError):
            average_x(traj, -1.0, 1.0)


class TestCsvExport:
    def test_roundtrip_and_columns(self):
        traj = simulate(TWO_LEVEL, P1, 0.25, 3.0)
        text = trajectory_csv_string(traj, TWO_LEVEL)
        rows = list(csv.reader(io.StringIO(text)))
        assert rows[0] == ["t", "x", "sigma", "cumulative_x"]
        assert len(rows) == traj.times.size + 1
        # full double round-trip formatting
        for i in (1, len(rows) // 2, len(rows) - 1):
            t, x, s, c = map(float, rows[i])
            j = i - 1
            assert t == traj.times[j]
            assert x == traj.states[j]
            assert c == traj.cumulative_x[j]
        # sigma column is the level of the segment starting at each time
        by_t = {float(r[0]): float(r[2]) for r in rows[1:]}
        assert by_t[0.0] == 0.0
        assert by_t[1.0] == 2.0
        assert by_t[2.0] == 0.0
