"""Turns timed runs into efficiency curves and METG values.

Task granularity is wall time x cores / tasks. Efficiency is achieved
FLOP/s over a single declared peak per curve. METG is the smallest
granularity at which efficiency reaches the threshold (0.5 by default),
interpolated log-linearly in (log granularity, efficiency) between the
bracketing samples.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import scipy.stats

from . import backends
from .backends import BackendConfig, RunResult
from .errors import MetgError, SweepError
from .graphs import GraphSpec, build_graph
from .kernel import Calibration, peak_flops

DEFAULT_THRESHOLD = 0.5
DEFAULT_REPETITIONS = 5
DEFAULT_CONFIDENCE = 0.99


def task_granularity_us(run: RunResult, cores: int) -> float:
    """Average per-task cost in microseconds: wall x cores / tasks."""
    if run.tasks_executed <= 0:
        raise ValueError("run executed zero tasks")
    return run.wall_seconds * cores / run.tasks_executed * 1e6


def efficiency(run: RunResult, peak: float) -> float:
    """Achieved FLOP/s divided by ``peak``; unclamped."""
    if peak <= 0:
        raise ValueError(f"peak must be positive, got {peak}")
    if run.wall_seconds <= 0:
        raise ValueError("run has zero wall time")
    return run.flops_executed / run.wall_seconds / peak


def confidence_interval(
    samples: Sequence[float], level: float = DEFAULT_CONFIDENCE
) -> tuple[float, float]:
    """Student-t interval: (mean, t(level, n-1) * s / sqrt(n))."""
    n = len(samples)
    if n < 2:
        raise ValueError(f"need at least 2 samples, got {n}")
    mean = statistics.fmean(samples)
    s = statistics.stdev(samples)
    t = float(scipy.stats.t.ppf((1.0 + level) / 2.0, n - 1))
    return mean, t * s / math.sqrt(n)


@dataclass(frozen=True)
class CurvePoint:
    """One grain-size sample of a sweep."""

    grain_iterations: int
    granularity_us: float
    efficiency: float  # clamped to [0, 1]; peak_anomaly set when raw > 1
    wall_seconds_mean: float
    wall_seconds_ci99: float
    repetitions: int
    flops: int = 0
    flops_per_second: float = 0.0
    peak_anomaly: bool = False


@dataclass
class MetgCurve:
    """A swept efficiency curve for one backend configuration."""

    backend: str
    pattern: str
    cores: int
    shards_per_core: int
    points: list[CurvePoint] = field(default_factory=list)
    width: int = 0
    steps: int = 0
    output_bytes: int = 0
    repetitions: int = DEFAULT_REPETITIONS
    warmup_runs: int = 1
    peak_flops_per_second: float = 0.0
    peak_source: str = "measured"  # "override" | "measured" | "calibration"


@dataclass(frozen=True)
class MetgResult:
    """METG for one curve; exactly one of the three states holds.

    ``state`` is "value" for an interpolated threshold crossing,
    "saturated" when every sample is at or above the threshold (metg_us is
    then the smallest sampled granularity), and "unreachable" when no
    sample reaches it (metg_us is None).
    """

    metg_us: float | None
    threshold: float
    state: str
    flagged: bool = False
    note: str = ""
    bracket: tuple[CurvePoint, CurvePoint] | None = None


def _interpolate_crossing(lo: CurvePoint, hi: CurvePoint, threshold: float) -> float:
    # Log-linear in (log granularity, efficiency); exact at an on-threshold sample.
    frac = (threshold - lo.efficiency) / (hi.efficiency - lo.efficiency)
    return lo.granularity_us * (hi.granularity_us / lo.granularity_us) ** frac


def compute_metg(curve: MetgCurve, threshold: float = DEFAULT_THRESHOLD) -> MetgResult:
    """Smallest granularity with efficiency >= threshold, interpolated."""
    points = curve.points
    if len(points) < 2:
        raise MetgError(f"METG needs at least 2 curve points, got {len(points)}")
    grains = [p.grain_iterations for p in points]
    if grains != sorted(grains):
        raise MetgError("curve points must be sorted by grain size")

    if all(p.efficiency >= threshold for p in points):
        smallest = min(points, key=lambda p: p.granularity_us)
        return MetgResult(
            metg_us=smallest.granularity_us,
            threshold=threshold,
            state="saturated",
            flagged=True,
            note="every sample at or above threshold; METG = smallest sampled granularity",
        )
    if all(p.efficiency < threshold for p in points):
        return MetgResult(
            metg_us=None,
            threshold=threshold,
            state="unreachable",
            flagged=True,
            note="no sample reaches the threshold",
        )

    crossings = []
    for lo, hi in zip(points, points[1:]):
        if lo.efficiency < threshold <= hi.efficiency:
            crossings.append((_interpolate_crossing(lo, hi, threshold), lo, hi))
    if not crossings:
        # Mixed curve with no upward crossing: the at-or-above samples form a
        # prefix, so the smallest satisfying granularity is a sampled point.
        satisfying = min(
            (p for p in points if p.efficiency >= threshold),
            key=lambda p: p.granularity_us,
        )
        return MetgResult(
            metg_us=satisfying.granularity_us,
            threshold=threshold,
            state="value",
            flagged=True,
            note="no upward crossing; threshold already satisfied at the curve start",
        )
    crossings.sort(key=lambda c: c[0])
    value, lo, hi = crossings[0]
    return MetgResult(
        metg_us=value,
        threshold=threshold,
        state="value",
        flagged=len(crossings) > 1,
        note="multiple threshold crossings; smallest granularity reported"
        if len(crossings) > 1
        else "",
        bracket=(lo, hi),
    )


def resolve_peak(
    override: float | None,
    measured_best: float | None,
    calibration: Calibration | None,
    cores: int,
) -> tuple[float, str]:
    """Peak FLOP/s priority: explicit override > best measured > calibration."""
    if override is not None:
        if override <= 0:
            raise ValueError(f"peak override must be positive, got {override}")
        return override, "override"
    if measured_best is not None and measured_best > 0:
        return measured_best, "measured"
    if calibration is not None:
        return peak_flops(calibration, cores), "calibration"
    raise ValueError("no peak FLOP/s source available")


def sweep(
    spec_template: GraphSpec,
    config: BackendConfig,
    grains: Iterable[int],
    repetitions: int = DEFAULT_REPETITIONS,
    *,
    runner: Callable[..., RunResult] = backends.run,
    peak_override: float | None = None,
    calibration: Calibration | None = None,
    on_point: Callable[[dict], None] | None = None,
) -> MetgCurve:
    """Sweep grain sizes, largest first, and build an efficiency curve.

    Each grain gets one untimed warm-up run and ``repetitions`` timed runs.
    Backend errors abort the sweep; completed raw points travel on the
    raised SweepError (and through ``on_point``, which fires after each
    grain with the peak-independent measurements).
    """
    grain_list = sorted(set(int(g) for g in grains))
    if not grain_list:
        raise ValueError("grain list must not be empty")
    if repetitions < 1:
        raise ValueError(f"repetitions must be >= 1, got {repetitions}")

    raw: list[dict] = []
    granularity_cores = config.cores
    for grain in reversed(grain_list):
        spec = replace(spec_template, kernel=replace(spec_template.kernel, iterations=grain))
        graph = build_graph(spec)
        try:
            runner(graph, config)  # warm-up, untimed
            results = [runner(graph, config) for _ in range(repetitions)]
        except Exception as exc:
            raise SweepError(
                f"sweep aborted at grain {grain}: {exc}", partial_points=raw, cause=exc
            ) from exc
        walls = [r.wall_seconds for r in results]
        flops = results[0].flops_executed
        if any(r.flops_executed != flops for r in results):
            raise SweepError(
                f"inconsistent FLOP counts across repetitions at grain {grain}",
                partial_points=raw,
            )
        if repetitions >= 2:
            wall_mean, wall_ci = confidence_interval(walls, DEFAULT_CONFIDENCE)
        else:
            wall_mean, wall_ci = walls[0], 0.0
        mean_result = replace(results[0], wall_seconds=wall_mean)
        record = {
            "grain_iterations": grain,
            "wall_seconds_mean": wall_mean,
            "wall_seconds_ci99": wall_ci,
            "flops": flops,
            "flops_per_second": flops / wall_mean if wall_mean > 0 else 0.0,
            "granularity_us": task_granularity_us(mean_result, granularity_cores),
            "repetitions": repetitions,
        }
        raw.append(record)
        if on_point is not None:
            on_point(dict(record))

    measured_best = max(r["flops_per_second"] for r in raw)
    peak, peak_source = resolve_peak(
        peak_override,
        measured_best if measured_best > 0 else None,
        calibration,
        config.cores,
    )

    points = []
    for r in sorted(raw, key=lambda r: r["grain_iterations"]):
        raw_eff = r["flops_per_second"] / peak
        points.append(
            CurvePoint(
                grain_iterations=r["grain_iterations"],
                granularity_us=r["granularity_us"],
                efficiency=min(raw_eff, 1.0),
                wall_seconds_mean=r["wall_seconds_mean"],
                wall_seconds_ci99=r["wall_seconds_ci99"],
                repetitions=r["repetitions"],
                flops=r["flops"],
                flops_per_second=r["flops_per_second"],
                peak_anomaly=raw_eff > 1.0,
            )
        )
    return MetgCurve(
        backend=config.kind,
        pattern=spec_template.pattern.label(),
        cores=config.cores,
        shards_per_core=config.shards_per_core,
        points=points,
        width=spec_template.width,
        steps=spec_template.timesteps,
        output_bytes=spec_template.output_bytes,
        repetitions=repetitions,
        warmup_runs=1,
        peak_flops_per_second=peak,
        peak_source=peak_source,
    )
