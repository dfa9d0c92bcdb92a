"""Task-graph benchmarking harness for runtime-overhead measurement."""

from .analysis import (
    CurvePoint,
    MetgCurve,
    MetgResult,
    compute_metg,
    confidence_interval,
    efficiency,
    sweep,
    task_granularity_us,
)
from .backends import (
    BackendConfig,
    RunResult,
    SchedulerConfig,
    TransportConfig,
    run,
    shard_assignment,
)
from .graphs import GraphSpec, Pattern, TaskGraph, TaskPoint, build_graph
from .kernel import (
    Calibration,
    KernelConfig,
    calibrate,
    execute_kernel,
    load_calibration,
    peak_flops,
    save_calibration,
)

__version__ = "0.1.0"

__all__ = [
    "BackendConfig",
    "Calibration",
    "CurvePoint",
    "GraphSpec",
    "KernelConfig",
    "MetgCurve",
    "MetgResult",
    "Pattern",
    "RunResult",
    "SchedulerConfig",
    "TaskGraph",
    "TaskPoint",
    "TransportConfig",
    "build_graph",
    "calibrate",
    "compute_metg",
    "confidence_interval",
    "efficiency",
    "execute_kernel",
    "load_calibration",
    "peak_flops",
    "run",
    "save_calibration",
    "shard_assignment",
    "sweep",
    "task_granularity_us",
    "__version__",
]
