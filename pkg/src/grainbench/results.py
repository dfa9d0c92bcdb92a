"""CSV persistence for curves and METG tables.

Floats are written with repr() so a parse round-trips to the identical
double; recomputing METG from a persisted curve file therefore reproduces
the sweep's own metg.csv byte for byte. The first sixteen columns are the
core measurement schema; the remaining columns carry the provenance
every output row must have (tool version, calibration fingerprint,
scheduler knobs).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable

from . import __version__
from .analysis import CurvePoint, MetgCurve, MetgResult
from .errors import GrainbenchError
from .kernel import Calibration, calibration_fingerprint

CURVE_COLUMNS = [
    "backend",
    "pattern",
    "cores",
    "shards_per_core",
    "width",
    "steps",
    "grain_iterations",
    "output_bytes",
    "wall_seconds_mean",
    "wall_seconds_ci99",
    "flops",
    "flops_per_second",
    "efficiency",
    "granularity_us",
    "repetitions",
    "calibration_ns_per_iter",
    "version",
    "calibration_fingerprint",
    "work_stealing",
    "priority_mode",
    "idle_detection",
    "worker_stack",
    "transport",
    "warmup_runs",
    "peak_flops_per_second",
    "peak_source",
    "peak_anomaly",
]

METG_COLUMNS = [
    "backend",
    "pattern",
    "cores",
    "shards_per_core",
    "width",
    "steps",
    "output_bytes",
    "threshold",
    "metg_us",
    "state",
    "flagged",
    "note",
    "points",
    "grain_min",
    "grain_max",
    "repetitions",
    "calibration_ns_per_iter",
    "version",
    "calibration_fingerprint",
    "work_stealing",
    "priority_mode",
    "idle_detection",
    "worker_stack",
    "transport",
    "warmup_runs",
    "peak_flops_per_second",
    "peak_source",
]

# Columns shared verbatim by every row of one curve; used to regroup a
# parsed curves.csv back into curves.
CURVE_KEY_COLUMNS = [
    c
    for c in CURVE_COLUMNS
    if c
    not in (
        "grain_iterations",
        "wall_seconds_mean",
        "wall_seconds_ci99",
        "flops",
        "flops_per_second",
        "efficiency",
        "granularity_us",
        "peak_anomaly",
    )
]


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(float(value))  # plain float repr even for numpy scalars
    if value is None:
        return ""
    return str(value)


@dataclass(frozen=True)
class SchedulerColumns:
    """Scheduler/transport knob values as they appear in output rows."""

    work_stealing: bool
    priority_mode: str
    idle_detection: bool
    worker_stack: str
    transport: str

    @classmethod
    def from_config(cls, config) -> "SchedulerColumns":
        return cls(
            work_stealing=config.scheduler.work_stealing,
            priority_mode=config.scheduler.priority_mode,
            idle_detection=config.scheduler.idle_detection,
            worker_stack=config.scheduler.worker_stack,
            transport=config.transport.medium,
        )


def curve_rows(
    curve: MetgCurve, knobs: SchedulerColumns, calibration: Calibration
) -> list[dict]:
    common = {
        "backend": curve.backend,
        "pattern": curve.pattern,
        "cores": curve.cores,
        "shards_per_core": curve.shards_per_core,
        "width": curve.width,
        "steps": curve.steps,
        "output_bytes": curve.output_bytes,
        "repetitions": curve.repetitions,
        "calibration_ns_per_iter": calibration.ns_per_iteration,
        "version": __version__,
        "calibration_fingerprint": calibration_fingerprint(calibration),
        "work_stealing": knobs.work_stealing,
        "priority_mode": knobs.priority_mode,
        "idle_detection": knobs.idle_detection,
        "worker_stack": knobs.worker_stack,
        "transport": knobs.transport,
        "warmup_runs": curve.warmup_runs,
        "peak_flops_per_second": curve.peak_flops_per_second,
        "peak_source": curve.peak_source,
    }
    rows = []
    for p in curve.points:
        row = dict(common)
        row.update(
            grain_iterations=p.grain_iterations,
            wall_seconds_mean=p.wall_seconds_mean,
            wall_seconds_ci99=p.wall_seconds_ci99,
            flops=p.flops,
            flops_per_second=p.flops_per_second,
            efficiency=p.efficiency,
            granularity_us=p.granularity_us,
            peak_anomaly=p.peak_anomaly,
        )
        rows.append(row)
    return rows


def metg_row(
    curve: MetgCurve,
    result: MetgResult,
    knobs: SchedulerColumns,
    calibration_ns_per_iter: float,
    fingerprint: str,
) -> dict:
    grains = [p.grain_iterations for p in curve.points]
    return {
        "backend": curve.backend,
        "pattern": curve.pattern,
        "cores": curve.cores,
        "shards_per_core": curve.shards_per_core,
        "width": curve.width,
        "steps": curve.steps,
        "output_bytes": curve.output_bytes,
        "threshold": result.threshold,
        "metg_us": result.metg_us,
        "state": result.state,
        "flagged": result.flagged,
        "note": result.note,
        "points": len(curve.points),
        "grain_min": min(grains),
        "grain_max": max(grains),
        "repetitions": curve.repetitions,
        "calibration_ns_per_iter": calibration_ns_per_iter,
        "version": __version__,
        "calibration_fingerprint": fingerprint,
        "work_stealing": knobs.work_stealing,
        "priority_mode": knobs.priority_mode,
        "idle_detection": knobs.idle_detection,
        "worker_stack": knobs.worker_stack,
        "transport": knobs.transport,
        "warmup_runs": curve.warmup_runs,
        "peak_flops_per_second": curve.peak_flops_per_second,
        "peak_source": curve.peak_source,
    }


def format_row(columns: list[str], row: dict) -> str:
    """One CSV line (no newline) with the same quoting write_rows uses."""
    import io

    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerow([_fmt(row.get(col)) for col in columns])
    return buf.getvalue().rstrip("\n")


def write_rows(path, columns: list[str], rows: Iterable[dict], append: bool = False) -> None:
    rows = list(rows)
    mode = "a" if append else "w"
    with open(path, mode, encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if not append or fh.tell() == 0:
            writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(col)) for col in columns])


def read_rows(path, expected_columns: list[str]) -> list[dict]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise GrainbenchError(f"{path}: empty CSV file") from None
        if header != expected_columns:
            raise GrainbenchError(
                f"{path}: unexpected columns {header[:4]}...; "
                f"expected the {expected_columns[0]}..{expected_columns[-1]} schema"
            )
        return [dict(zip(header, row)) for row in reader]


def _parse_bool(text: str) -> bool:
    return text == "true"


def curves_from_rows(
    rows: list[dict],
) -> list[tuple[MetgCurve, SchedulerColumns, float, str]]:
    """Regroup parsed curves.csv rows.

    Returns (curve, knobs, calibration ns/iter, calibration fingerprint)
    per curve, in first-appearance order.
    """
    groups: dict[tuple, list[dict]] = {}
    order: list[tuple] = []
    for row in rows:
        key = tuple(row[c] for c in CURVE_KEY_COLUMNS)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(row)

    out = []
    for key in order:
        group = groups[key]
        first = group[0]
        points = [
            CurvePoint(
                grain_iterations=int(r["grain_iterations"]),
                granularity_us=float(r["granularity_us"]),
                efficiency=float(r["efficiency"]),
                wall_seconds_mean=float(r["wall_seconds_mean"]),
                wall_seconds_ci99=float(r["wall_seconds_ci99"]),
                repetitions=int(r["repetitions"]),
                flops=int(r["flops"]),
                flops_per_second=float(r["flops_per_second"]),
                peak_anomaly=_parse_bool(r["peak_anomaly"]),
            )
            for r in sorted(group, key=lambda r: int(r["grain_iterations"]))
        ]
        curve = MetgCurve(
            backend=first["backend"],
            pattern=first["pattern"],
            cores=int(first["cores"]),
            shards_per_core=int(first["shards_per_core"]),
            points=points,
            width=int(first["width"]),
            steps=int(first["steps"]),
            output_bytes=int(first["output_bytes"]),
            repetitions=int(first["repetitions"]),
            warmup_runs=int(first["warmup_runs"]),
            peak_flops_per_second=float(first["peak_flops_per_second"]),
            peak_source=first["peak_source"],
        )
        knobs = SchedulerColumns(
            work_stealing=_parse_bool(first["work_stealing"]),
            priority_mode=first["priority_mode"],
            idle_detection=_parse_bool(first["idle_detection"]),
            worker_stack=first["worker_stack"],
            transport=first["transport"],
        )
        out.append(
            (
                curve,
                knobs,
                float(first["calibration_ns_per_iter"]),
                first["calibration_fingerprint"],
            )
        )
    return out
