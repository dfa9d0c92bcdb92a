"""Command-line driver: calibrate, run, sweep, metg, variants, plot.

Exit codes: 0 success, 2 usage or invalid-spec error, 3 runtime/backend
error. The GRAINBENCH_CORES environment variable pins the default core
count for every command.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, field

import yaml

from . import __version__, analysis, backends
from .analysis import compute_metg, confidence_interval, sweep
from .backends import BackendConfig, SchedulerConfig, TransportConfig, run
from .errors import GrainbenchError, InvalidSpecError, SweepError
from .graphs import GraphSpec, Pattern, build_graph
from .kernel import (
    Calibration,
    KernelConfig,
    calibrate,
    calibration_fingerprint,
    load_calibration,
    save_calibration,
)
from .results import (
    CURVE_COLUMNS,
    METG_COLUMNS,
    SchedulerColumns,
    curve_rows,
    curves_from_rows,
    format_row,
    metg_row,
    read_rows,
    write_rows,
)

CORES_ENV_VAR = "GRAINBENCH_CORES"

DEFAULT_GRAINS = [2**k for k in range(4, 21)]
DEFAULT_STEPS = 100

PARTIAL_COLUMNS = [
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
    "granularity_us",
    "repetitions",
]

VARIANT_COLUMNS = [
    "variant",
    "backend",
    "pattern",
    "cores",
    "shards_per_core",
    "width",
    "steps",
    "grain_iterations",
    "output_bytes",
    "tasks_per_second_mean",
    "tasks_per_second_ci99",
    "delta_vs_default_pct",
    "repetitions",
    "dataflow_checksum",
    "work_stealing",
    "priority_mode",
    "idle_detection",
    "worker_stack",
    "transport",
    "version",
    "calibration_fingerprint",
]


class UsageError(GrainbenchError):
    """Bad flag combination; maps to exit code 2."""


def _default_cores() -> int:
    pinned = os.environ.get(CORES_ENV_VAR)
    if pinned:
        try:
            cores = int(pinned)
        except ValueError:
            raise UsageError(f"{CORES_ENV_VAR}={pinned!r} is not an integer") from None
        if cores < 1:
            raise UsageError(f"{CORES_ENV_VAR} must be >= 1, got {cores}")
        return cores
    return os.cpu_count() or 1


# -- experiment plans -------------------------------------------------------


@dataclass(frozen=True)
class Experiment:
    name: str
    backend: str
    pattern: Pattern
    cores: int
    shards_per_core: int
    steps: int
    width: int
    output_bytes: int
    grains: list[int]
    repetitions: int
    scheduler: SchedulerConfig
    transport: TransportConfig


@dataclass(frozen=True)
class ExperimentPlan:
    name: str
    experiments: list[Experiment]
    output_dir: str
    calibration_path: str | None  # None when calibration is requested inline
    inline_calibration: dict | None
    threshold: float = 0.5
    peak_flops: float | None = None


def _scheduler_from_mapping(data: dict) -> SchedulerConfig:
    return SchedulerConfig(
        work_stealing=bool(data.get("steal", True)),
        priority_mode=str(data.get("priority_mode", "none")),
        idle_detection=bool(data.get("idle_detection", False)),
        worker_stack=str(data.get("worker_stack", "default")),
    )


def load_plan(path) -> ExperimentPlan:
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise InvalidSpecError(f"plan {path} must be a mapping")
    if "experiments" not in data or not data["experiments"]:
        raise InvalidSpecError(f"plan {path} has no experiments")

    calibration = data.get("calibration")
    calibration_path = None
    inline = None
    if isinstance(calibration, str):
        calibration_path = calibration
        if not os.path.exists(calibration_path):
            raise InvalidSpecError(
                f"plan references calibration file {calibration_path!r} which does not exist"
            )
    elif isinstance(calibration, dict):
        inline = calibration
    else:
        raise InvalidSpecError(
            "plan needs 'calibration': either a file path or an inline "
            "{target_ms, samples} request"
        )

    default_cores = _default_cores()
    plan_grains = [int(g) for g in data.get("grains", DEFAULT_GRAINS)]
    plan_reps = int(data.get("repetitions", analysis.DEFAULT_REPETITIONS))
    plan_steps = int(data.get("steps", DEFAULT_STEPS))
    plan_output_bytes = int(data.get("output_bytes", 16))

    experiments = []
    names = set()
    for idx, entry in enumerate(data["experiments"]):
        if not isinstance(entry, dict) or "backend" not in entry or "pattern" not in entry:
            raise InvalidSpecError(f"experiment #{idx} needs 'backend' and 'pattern'")
        pattern = Pattern.parse(str(entry["pattern"]))
        cores = int(entry.get("cores", default_cores))
        spc = int(entry.get("shards_per_core", 1))
        name = str(entry.get("name", f"{entry['backend']}-{pattern.label()}-spc{spc}"))
        if name in names:
            raise InvalidSpecError(f"duplicate experiment name {name!r}")
        names.add(name)
        experiments.append(
            Experiment(
                name=name,
                backend=str(entry["backend"]),
                pattern=pattern,
                cores=cores,
                shards_per_core=spc,
                steps=int(entry.get("steps", plan_steps)),
                width=int(entry.get("width", cores * spc)),
                output_bytes=int(entry.get("output_bytes", plan_output_bytes)),
                grains=[int(g) for g in entry.get("grains", plan_grains)],
                repetitions=int(entry.get("repetitions", plan_reps)),
                scheduler=_scheduler_from_mapping(entry),
                transport=TransportConfig(str(entry.get("transport", "shared_queue"))),
            )
        )
    return ExperimentPlan(
        name=str(data.get("name", os.path.basename(str(path)))),
        experiments=experiments,
        output_dir=str(data.get("output_dir", "results")),
        calibration_path=calibration_path,
        inline_calibration=inline,
        threshold=float(data.get("threshold", 0.5)),
        peak_flops=float(data["peak_flops"]) if data.get("peak_flops") else None,
    )


# -- shared flag plumbing -----------------------------------------------------


def _add_backend_flags(parser: argparse.ArgumentParser, *, variants: bool = False) -> None:
    parser.add_argument("--pattern", default="stencil_1d", help="dependency pattern (e.g. stencil_1d, fft, nearest:2)")
    parser.add_argument("--cores", type=int, default=None, help=f"worker/rank count (default: ${CORES_ENV_VAR} or CPU count)")
    parser.add_argument("--shards-per-core", type=int, default=4 if variants else 1, help="overdecomposition factor N")
    parser.add_argument("--width", type=int, default=None, help="tasks per timestep (default: cores x shards-per-core)")
    parser.add_argument("--steps", type=int, default=50 if variants else DEFAULT_STEPS, help="timesteps per run")
    parser.add_argument("--output-bytes", type=int, default=16, help="payload bytes per dependence edge")
    parser.add_argument("--calibration", required=True, help="calibration file from 'grainbench calibrate'")
    parser.add_argument("--watchdog-seconds", type=float, default=None, help="override the deadlock watchdog bound")
    if not variants:
        parser.add_argument("--backend", required=True, choices=backends.BACKEND_KINDS)
        parser.add_argument("--grain", type=int, required=True, help="kernel iterations per task")
        parser.add_argument("--transport", default="shared_queue", choices=backends.TRANSPORT_MEDIA)
        parser.add_argument("--steal", action=argparse.BooleanOptionalAction, default=True, help="work stealing (async_ws)")
        parser.add_argument("--priority-mode", default="none", choices=backends.PRIORITY_MODES)
        parser.add_argument("--idle-detection", action=argparse.BooleanOptionalAction, default=False)
        parser.add_argument("--worker-stack", default="default", choices=backends.WORKER_STACKS)
        parser.add_argument("--peak", type=float, default=None, help="explicit peak FLOP/s for efficiency")
    else:
        parser.add_argument("--grain", type=int, default=4096, help="fixed kernel iterations per task")
        parser.add_argument("--reps", type=int, default=5, help="timed repetitions per variant")


def _resolve_cores(args) -> int:
    return args.cores if args.cores is not None else _default_cores()


def _load_required_calibration(path) -> Calibration:
    if not os.path.exists(path):
        raise UsageError(f"calibration file {path!r} not found; run 'grainbench calibrate' first")
    return load_calibration(path)


def _spec_from_args(args, cores: int, grain: int) -> GraphSpec:
    width = args.width if args.width is not None else cores * args.shards_per_core
    return GraphSpec(
        width=width,
        timesteps=args.steps,
        pattern=Pattern.parse(args.pattern),
        kernel=KernelConfig(iterations=grain),
        output_bytes=args.output_bytes,
    )


# -- commands -----------------------------------------------------------------


def cmd_calibrate(args) -> int:
    cal = calibrate(target_duration_ms=args.target_ms, samples=args.samples)
    save_calibration(cal, args.out)
    print(f"ns_per_iteration={cal.ns_per_iteration!r}")
    print(f"flops_per_iteration={cal.flops_per_iteration}")
    print(f"dispersion={cal.dispersion:.4f} over {cal.samples} samples")
    print(f"wrote {args.out} (fingerprint {calibration_fingerprint(cal)})")
    return 0


def cmd_run(args) -> int:
    cores = _resolve_cores(args)
    calibration = _load_required_calibration(args.calibration)
    spec = _spec_from_args(args, cores, args.grain)
    config = BackendConfig(
        kind=args.backend,
        cores=cores,
        shards_per_core=args.shards_per_core,
        scheduler=SchedulerConfig(
            work_stealing=args.steal,
            priority_mode=args.priority_mode,
            idle_detection=args.idle_detection,
            worker_stack=args.worker_stack,
        ),
        transport=TransportConfig(args.transport),
        watchdog_seconds=args.watchdog_seconds,
        ns_per_iteration_hint=calibration.ns_per_iteration,
    )
    config.validate()
    if args.backend == "message_passing" and spec.width % cores:
        raise UsageError(
            f"message_passing needs --width divisible by --cores "
            f"(width {spec.width}, cores {cores})"
        )
    graph = build_graph(spec)

    result = run(graph, config)

    peak, peak_source = analysis.resolve_peak(args.peak, None, calibration, cores)
    raw_eff = analysis.efficiency(result, peak)
    point = analysis.CurvePoint(
        grain_iterations=args.grain,
        granularity_us=analysis.task_granularity_us(result, cores),
        efficiency=min(raw_eff, 1.0),
        wall_seconds_mean=result.wall_seconds,
        wall_seconds_ci99=0.0,
        repetitions=1,
        flops=result.flops_executed,
        flops_per_second=result.flops_executed / result.wall_seconds,
        peak_anomaly=raw_eff > 1.0,
    )
    curve = analysis.MetgCurve(
        backend=config.kind,
        pattern=spec.pattern.label(),
        cores=cores,
        shards_per_core=args.shards_per_core,
        points=[point],
        width=spec.width,
        steps=spec.timesteps,
        output_bytes=spec.output_bytes,
        repetitions=1,
        warmup_runs=0,
        peak_flops_per_second=peak,
        peak_source=peak_source,
    )
    row = curve_rows(curve, SchedulerColumns.from_config(config), calibration)[0]
    print(",".join(CURVE_COLUMNS))
    print(format_row(CURVE_COLUMNS, row))
    if args.csv:
        write_rows(args.csv, CURVE_COLUMNS, [row], append=os.path.exists(args.csv))
        print(f"appended to {args.csv}", file=sys.stderr)
    return 0


def _plan_calibration(plan: ExperimentPlan, out_dir: str) -> Calibration:
    if plan.calibration_path:
        return load_calibration(plan.calibration_path)
    assert plan.inline_calibration is not None
    cal = calibrate(
        target_duration_ms=float(plan.inline_calibration.get("target_ms", 50.0)),
        samples=int(plan.inline_calibration.get("samples", 5)),
    )
    path = os.path.join(out_dir, "calibration.txt")
    save_calibration(cal, path)
    print(f"inline calibration: {cal.ns_per_iteration:.3f} ns/iteration -> {path}")
    return cal


def cmd_sweep(args) -> int:
    plan = load_plan(args.plan)
    out_dir = args.out_dir or plan.output_dir
    os.makedirs(out_dir, exist_ok=True)
    calibration = _plan_calibration(plan, out_dir)

    curves_path = os.path.join(out_dir, "curves.csv")
    metg_path = os.path.join(out_dir, "metg.csv")
    partial_path = os.path.join(out_dir, "curves_partial.csv")
    write_rows(curves_path, CURVE_COLUMNS, [])
    write_rows(metg_path, METG_COLUMNS, [])
    write_rows(partial_path, PARTIAL_COLUMNS, [])

    fingerprint = calibration_fingerprint(calibration)
    for experiment in plan.experiments:
        config = BackendConfig(
            kind=experiment.backend,
            cores=experiment.cores,
            shards_per_core=experiment.shards_per_core,
            scheduler=experiment.scheduler,
            transport=experiment.transport,
            ns_per_iteration_hint=calibration.ns_per_iteration,
        )
        config.validate()
        spec = GraphSpec(
            width=experiment.width,
            timesteps=experiment.steps,
            pattern=experiment.pattern,
            kernel=KernelConfig(),
            output_bytes=experiment.output_bytes,
        )
        knobs = SchedulerColumns.from_config(config)
        partial_common = {
            "backend": experiment.backend,
            "pattern": experiment.pattern.label(),
            "cores": experiment.cores,
            "shards_per_core": experiment.shards_per_core,
            "width": experiment.width,
            "steps": experiment.steps,
            "output_bytes": experiment.output_bytes,
        }

        def flush_partial(record: dict, common=partial_common) -> None:
            write_rows(partial_path, PARTIAL_COLUMNS, [common | record], append=True)

        print(f"[{plan.name}] {experiment.name}: {len(experiment.grains)} grains "
              f"x {experiment.repetitions} reps")
        try:
            curve = sweep(
                spec,
                config,
                experiment.grains,
                experiment.repetitions,
                peak_override=plan.peak_flops,
                calibration=calibration,
                on_point=flush_partial,
            )
        except SweepError as exc:
            print(f"error: {exc}", file=sys.stderr)
            print(
                f"partial results kept in {partial_path} and {curves_path}",
                file=sys.stderr,
            )
            return 3
        write_rows(curves_path, CURVE_COLUMNS, curve_rows(curve, knobs, calibration), append=True)
        result = compute_metg(curve, plan.threshold)
        write_rows(
            metg_path,
            METG_COLUMNS,
            [metg_row(curve, result, knobs, calibration.ns_per_iteration, fingerprint)],
            append=True,
        )
        metg_text = f"{result.metg_us:.3f} us" if result.metg_us is not None else "n/a"
        print(f"  METG = {metg_text} [{result.state}]")

    os.remove(partial_path)
    print(f"wrote {curves_path} and {metg_path}")
    return 0


def cmd_metg(args) -> int:
    rows = read_rows(args.curves, CURVE_COLUMNS)
    if not rows:
        raise GrainbenchError(f"{args.curves} contains no curve points")
    out_rows = []
    for curve, knobs, cal_ns, fingerprint in curves_from_rows(rows):
        result = compute_metg(curve, args.threshold)
        out_rows.append(metg_row(curve, result, knobs, cal_ns, fingerprint))
    if args.out:
        write_rows(args.out, METG_COLUMNS, out_rows)
        print(f"wrote {args.out}", file=sys.stderr)
    header = f"{'backend':<18} {'pattern':<20} {'cores':>5} {'spc':>4} {'METG (us)':>12} state"
    print(header)
    print("-" * len(header))
    for row in out_rows:
        metg_text = f"{float(row['metg_us']):.3f}" if row["metg_us"] is not None else "n/a"
        print(
            f"{row['backend']:<18} {row['pattern']:<20} {row['cores']:>5} "
            f"{row['shards_per_core']:>4} {metg_text:>12} {row['state']}"
            + (" (flagged)" if row["flagged"] else "")
        )
    return 0


def _variant_configs(cores: int, spc: int) -> list[tuple[str, BackendConfig]]:
    def ws(priority: str, idle: bool) -> BackendConfig:
        return BackendConfig(
            kind="async_ws",
            cores=cores,
            shards_per_core=spc,
            scheduler=SchedulerConfig(
                work_stealing=True, priority_mode=priority, idle_detection=idle
            ),
        )

    return [
        ("default", ws("bitvector", True)),
        ("fixed64-priority", ws("fixed64", True)),
        ("no-idle-detection", ws("bitvector", False)),
        (
            "shared-queue-mp",
            BackendConfig(
                kind="message_passing",
                cores=cores,
                shards_per_core=spc,
                transport=TransportConfig("shared_queue"),
            ),
        ),
        ("combined", ws("fixed64", False)),
    ]


def cmd_variants(args) -> int:
    cores = _resolve_cores(args)
    calibration = _load_required_calibration(args.calibration)
    if args.reps < 2:
        raise UsageError("--reps must be >= 2 for confidence intervals")
    spec = _spec_from_args(args, cores, args.grain)
    graph = build_graph(spec)

    measurements = []
    checksums = set()
    for label, config in _variant_configs(cores, args.shards_per_core):
        config = BackendConfig(
            kind=config.kind,
            cores=config.cores,
            shards_per_core=config.shards_per_core,
            scheduler=config.scheduler,
            transport=config.transport,
            watchdog_seconds=args.watchdog_seconds,
            ns_per_iteration_hint=calibration.ns_per_iteration,
        )
        run(graph, config)  # warm-up
        throughputs = []
        for _ in range(args.reps):
            result = run(graph, config)
            throughputs.append(result.tasks_executed / result.wall_seconds)
            checksums.add(result.dataflow_checksum)
        mean, ci = confidence_interval(throughputs)
        measurements.append((label, config, mean, ci))

    if len(checksums) != 1:
        raise GrainbenchError(
            f"variants disagreed on the dataflow checksum ({len(checksums)} distinct "
            "values); scheduler knobs must never change results"
        )
    checksum = checksums.pop()

    base_mean = measurements[0][2]
    print(
        f"pattern={args.pattern} grain={args.grain} cores={cores} "
        f"shards_per_core={args.shards_per_core} steps={args.steps} reps={args.reps}"
    )
    header = f"{'variant':<20} {'tasks/s':>12} {'+-99% CI':>12} {'vs default':>11}"
    print(header)
    print("-" * len(header))
    rows = []
    for label, config, mean, ci in measurements:
        delta_pct = (mean - base_mean) / base_mean * 100.0
        print(f"{label:<20} {mean:>12.0f} {ci:>12.0f} {delta_pct:>+10.1f}%")
        rows.append(
            {
                "variant": label,
                "backend": config.kind,
                "pattern": args.pattern,
                "cores": cores,
                "shards_per_core": args.shards_per_core,
                "width": spec.width,
                "steps": args.steps,
                "grain_iterations": args.grain,
                "output_bytes": args.output_bytes,
                "tasks_per_second_mean": mean,
                "tasks_per_second_ci99": ci,
                "delta_vs_default_pct": delta_pct,
                "repetitions": args.reps,
                "dataflow_checksum": checksum,
                "work_stealing": config.scheduler.work_stealing,
                "priority_mode": config.scheduler.priority_mode,
                "idle_detection": config.scheduler.idle_detection,
                "worker_stack": config.scheduler.worker_stack,
                "transport": config.transport.medium,
                "version": __version__,
                "calibration_fingerprint": calibration_fingerprint(calibration),
            }
        )
    print(f"dataflow checksum identical across all variants: {checksum:#x}")
    if args.csv:
        write_rows(args.csv, VARIANT_COLUMNS, rows)
        print(f"wrote {args.csv}", file=sys.stderr)
    return 0


def cmd_plot(args) -> int:
    from . import plotting

    if not args.curves and not args.metg:
        raise UsageError("pass --curves and/or --metg")
    os.makedirs(args.out_dir, exist_ok=True)
    written = []
    if args.curves:
        rows = read_rows(args.curves, CURVE_COLUMNS)
        written += plotting.plot_efficiency_curves(rows, args.out_dir)
        written += plotting.plot_flops_curves(rows, args.out_dir)
    if args.metg:
        rows = read_rows(args.metg, METG_COLUMNS)
        written += plotting.plot_metg_table(rows, args.out_dir)
    for path in written:
        print(f"wrote {path}")
    return 0


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="grainbench",
        description="Task-graph benchmarking harness for runtime-overhead measurement.",
    )
    parser.add_argument("--version", action="version", version=f"grainbench {__version__}")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("calibrate", help="measure the kernel's ns/iteration on this host")
    p.add_argument("--target-ms", type=float, default=50.0, help="minimum per-sample duration")
    p.add_argument("--samples", type=int, default=7, help="timed samples (>= 5)")
    p.add_argument("--out", default="calibration.txt", help="calibration file to write")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("run", help="execute one graph and append a CSV row")
    _add_backend_flags(p)
    p.add_argument("--csv", default=None, help="CSV file to append the row to")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a plan file; writes curves.csv and metg.csv")
    p.add_argument("--plan", required=True, help="YAML experiment plan")
    p.add_argument("--out-dir", default=None, help="output directory (overrides the plan)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("metg", help="recompute the METG table from a curves.csv")
    p.add_argument("--curves", required=True)
    p.add_argument("--out", default=None, help="metg CSV to write")
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_metg)

    p = sub.add_parser("variants", help="compare scheduler/transport variants at a fixed grain")
    _add_backend_flags(p, variants=True)
    p.add_argument("--csv", default=None, help="CSV file for the variant table")
    p.set_defaults(func=cmd_variants)

    p = sub.add_parser("plot", help="render SVG charts from persisted CSVs")
    p.add_argument("--curves", default=None)
    p.add_argument("--metg", default=None)
    p.add_argument("--out-dir", default="plots")
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code
        return int(code) if isinstance(code, int) else 2
    if not getattr(args, "func", None):
        parser.print_help()
        return 2
    try:
        return int(args.func(args) or 0)
    except (UsageError, InvalidSpecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except GrainbenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
