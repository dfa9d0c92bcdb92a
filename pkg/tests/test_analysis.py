"""Metric formulas, METG interpolation, intervals, and sweep mechanics."""

import math

import pytest

from grainbench.analysis import (
    CurvePoint,
    MetgCurve,
    compute_metg,
    confidence_interval,
    efficiency,
    resolve_peak,
    sweep,
    task_granularity_us,
)
from grainbench.backends import BackendConfig, RunResult
from grainbench.errors import MetgError, SweepError
from grainbench.graphs import GraphSpec, Pattern
from grainbench.kernel import Calibration, KernelConfig


def result(wall, tasks=1000, flops=0):
    return RunResult(
        wall_seconds=wall,
        tasks_executed=tasks,
        edges_satisfied=0,
        dataflow_checksum=0,
        flops_executed=flops,
    )


def point(grain, granularity_us, eff):
    return CurvePoint(
        grain_iterations=grain,
        granularity_us=granularity_us,
        efficiency=eff,
        wall_seconds_mean=1.0,
        wall_seconds_ci99=0.0,
        repetitions=5,
    )


def curve_of(points):
    return MetgCurve(
        backend="serial", pattern="stencil_1d", cores=1, shards_per_core=1, points=points
    )


def analytic_curve(grains, overhead_us=10.0, ns_per_iter=1.0, scale=1.0):
    """The synthetic model: compute c = g * ns_per_iter, efficiency c/(c+o)."""
    pts = []
    for g in sorted(grains):
        c_us = g * ns_per_iter * 1e-3
        pts.append(point(g, (c_us + overhead_us) * scale, c_us / (c_us + overhead_us)))
    return curve_of(pts)


# -- task granularity ------------------------------------------------------


def test_granularity_examples():
    assert task_granularity_us(result(1.0, tasks=48000), 48) == pytest.approx(1000.0)
    assert task_granularity_us(result(0.0039, tasks=1000), 1) == pytest.approx(3.9)
    assert task_granularity_us(result(2.0, tasks=4), 2) == pytest.approx(1e6)


def test_granularity_rejects_zero_tasks():
    with pytest.raises(ValueError):
        task_granularity_us(result(1.0, tasks=0), 1)


def test_granularity_reconstructs_wall_time():
    run = result(0.73501, tasks=4817)
    g = task_granularity_us(run, 6)
    assert g * run.tasks_executed / 6 / 1e6 == pytest.approx(run.wall_seconds, rel=1e-12)


# -- efficiency ------------------------------------------------------------


def test_efficiency_examples():
    peak = 2.44e12
    assert efficiency(result(1.0, flops=int(peak)), peak) == pytest.approx(1.0)
    assert efficiency(result(1.0, flops=int(1.22e12)), peak) == pytest.approx(0.5)
    assert efficiency(result(1.0, flops=0), peak) == 0.0


def test_efficiency_rejects_degenerate_inputs():
    with pytest.raises(ValueError):
        efficiency(result(0.0, flops=10), 1.0)
    with pytest.raises(ValueError):
        efficiency(result(1.0, flops=10), 0.0)


# -- confidence intervals ----------------------------------------------------


def test_ci_known_values():
    mean, half = confidence_interval([1, 2, 3, 4, 5], 0.99)
    assert mean == pytest.approx(3.0)
    assert half == pytest.approx(3.256, abs=1e-3)  # t(0.99, 4) = 4.604


def test_ci_two_samples():
    mean, half = confidence_interval([0.0, 2.0], 0.99)
    assert mean == pytest.approx(1.0)
    assert half == pytest.approx(63.66, abs=0.01)  # t(0.99, 1) = 63.657


def test_ci_identical_samples_zero_width():
    _, half = confidence_interval([4.2] * 5)
    assert half == 0.0


def test_ci_requires_two_samples():
    with pytest.raises(ValueError):
        confidence_interval([1.0])


def test_ci_shrinks_like_inverse_sqrt_n():
    def half_with_unit_stdev(n):
        a = math.sqrt((n - 1) / n)
        samples = [a if k % 2 == 0 else -a for k in range(n)]
        _, half = confidence_interval(samples, 0.99)
        return half

    import scipy.stats

    for n in (4, 8, 16):
        ratio = half_with_unit_stdev(4 * n) / half_with_unit_stdev(n)
        expected = (
            scipy.stats.t.ppf(0.995, 4 * n - 1)
            / scipy.stats.t.ppf(0.995, n - 1)
            / 2.0
        )
        assert ratio == pytest.approx(expected, rel=1e-9)
        assert ratio < 0.55


# -- METG --------------------------------------------------------------------


def test_metg_on_analytic_model():
    # 8 geometric grains around the true 20 us crossing (c = o = 10 us).
    curve = analytic_curve([1500 * 2**k for k in range(8)])
    res = compute_metg(curve)
    assert res.state == "value"
    assert res.metg_us == pytest.approx(20.0, rel=0.05)


def test_metg_exact_threshold_point():
    curve = analytic_curve([2500 * 2**k for k in range(8)])
    # grain 10000 sits exactly on the threshold: c = 10 us, eff = 0.5.
    res = compute_metg(curve)
    assert res.state == "value"
    assert res.metg_us == 20.0  # exactly that sample's granularity


def test_metg_saturated_curve():
    curve = curve_of([point(10, 5.0, 0.6), point(20, 9.0, 0.8), point(40, 17.0, 0.9)])
    res = compute_metg(curve)
    assert res.state == "saturated"
    assert res.flagged
    assert res.metg_us == 5.0


def test_metg_unreachable_curve():
    curve = curve_of([point(10, 5.0, 0.1), point(20, 9.0, 0.2)])
    res = compute_metg(curve)
    assert res.state == "unreachable"
    assert res.metg_us is None
    assert res.flagged


def test_metg_multi_crossing_takes_smallest_and_flags():
    curve = curve_of(
        [
            point(1, 1.0, 0.2),
            point(2, 2.0, 0.6),  # first crossing between 1.0 and 2.0
            point(4, 4.0, 0.4),
            point(8, 8.0, 0.9),  # second crossing between 4.0 and 8.0
        ]
    )
    res = compute_metg(curve)
    assert res.state == "value"
    assert res.flagged
    assert res.metg_us < 2.0


def test_metg_requires_two_sorted_points():
    with pytest.raises(MetgError):
        compute_metg(curve_of([point(10, 5.0, 0.6)]))
    with pytest.raises(MetgError):
        compute_metg(curve_of([point(20, 9.0, 0.2), point(10, 5.0, 0.6)]))


def test_metg_scale_equivariance():
    base = compute_metg(analytic_curve([1500 * 2**k for k in range(8)])).metg_us
    for k in (2.0, 0.5, 8.0):  # power-of-two ratios scale exactly
        scaled = compute_metg(
            analytic_curve([1500 * 2**j for j in range(8)], scale=k)
        ).metg_us
        assert scaled == base * k
    scaled = compute_metg(
        analytic_curve([1500 * 2**j for j in range(8)], scale=3.0)
    ).metg_us
    assert scaled == pytest.approx(base * 3.0, rel=1e-9)


def test_metg_threshold_monotonicity():
    curve = analytic_curve([1500 * 2**k for k in range(8)])
    assert compute_metg(curve, 0.5).metg_us <= compute_metg(curve, 0.6).metg_us


def test_metg_descending_prefix_degenerate():
    curve = curve_of([point(1, 3.0, 0.7), point(2, 6.0, 0.4), point(4, 9.0, 0.3)])
    res = compute_metg(curve)
    assert res.state == "value"
    assert res.flagged
    assert res.metg_us == 3.0


# -- peak resolution ---------------------------------------------------------


def test_peak_priority_order():
    cal = Calibration(ns_per_iteration=2.0, samples=5, dispersion=0.0)
    assert resolve_peak(5e9, 3e9, cal, 2) == (5e9, "override")
    assert resolve_peak(None, 3e9, cal, 2) == (3e9, "measured")
    peak, source = resolve_peak(None, None, cal, 2)
    assert source == "calibration"
    assert peak == pytest.approx(2 * 32 / 2e-9)
    with pytest.raises(ValueError):
        resolve_peak(None, None, None, 2)
    with pytest.raises(ValueError):
        resolve_peak(-1.0, None, None, 2)


# -- sweep --------------------------------------------------------------------


def template(width=2, steps=3):
    return GraphSpec(
        width=width, timesteps=steps, pattern=Pattern("stencil_1d"), kernel=KernelConfig()
    )


def make_stub_runner(wall_for_grain, order=None):
    def runner(graph, config):
        grain = graph.spec.kernel.iterations
        if order is not None:
            order.append(grain)
        return RunResult(
            wall_seconds=wall_for_grain(grain),
            tasks_executed=graph.total_tasks(),
            edges_satisfied=graph.total_edges(),
            dataflow_checksum=1,
            flops_executed=graph.total_tasks() * graph.spec.kernel.flops(),
        )

    return runner


def test_sweep_with_deterministic_stub_has_zero_ci():
    runner = make_stub_runner(lambda g: g * 1e-6)
    curve = sweep(template(), BackendConfig(kind="serial"), [16, 256], 5, runner=runner)
    assert [p.grain_iterations for p in curve.points] == [16, 256]
    for p in curve.points:
        assert p.wall_seconds_ci99 == 0.0
        assert p.repetitions == 5


def test_sweep_runs_largest_grain_first_with_warmup():
    order = []
    runner = make_stub_runner(lambda g: 1e-3, order=order)
    sweep(template(), BackendConfig(kind="serial"), [16, 64, 4], 2, runner=runner)
    # warm-up + 2 timed runs per grain, descending.
    assert order == [64, 64, 64, 16, 16, 16, 4, 4, 4]


def test_sweep_rejects_empty_grain_list():
    with pytest.raises(ValueError):
        sweep(template(), BackendConfig(kind="serial"), [], 5)


def test_sweep_aborts_with_partial_points():
    calls = []

    def runner(graph, config):
        grain = graph.spec.kernel.iterations
        if grain < 64:
            raise RuntimeError("boom")
        return make_stub_runner(lambda g: 1e-3)(graph, config)

    with pytest.raises(SweepError) as excinfo:
        sweep(
            template(),
            BackendConfig(kind="serial"),
            [16, 64, 256],
            2,
            runner=runner,
            on_point=lambda rec: calls.append(rec["grain_iterations"]),
        )
    assert calls == [256, 64]
    assert [r["grain_iterations"] for r in excinfo.value.partial_points] == [256, 64]


def test_sweep_efficiency_normalized_to_best_measured():
    # wall proportional to grain => flops/s constant: every point is at peak.
    runner = make_stub_runner(lambda g: g * 1e-6)
    curve = sweep(template(), BackendConfig(kind="serial"), [16, 256], 2, runner=runner)
    assert curve.peak_source == "measured"
    for p in curve.points:
        assert p.efficiency == pytest.approx(1.0)
        assert not p.peak_anomaly


def test_sweep_peak_override_wins():
    runner = make_stub_runner(lambda g: g * 1e-6)
    curve = sweep(
        template(),
        BackendConfig(kind="serial"),
        [16, 256],
        2,
        runner=runner,
        peak_override=1e30,
    )
    assert curve.peak_source == "override"
    assert all(p.efficiency < 1e-6 for p in curve.points)
