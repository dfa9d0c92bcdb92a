"""Interchangeable graph executors with a single run contract.

Every backend executes each task exactly once, after all of its
dependencies, and yields the same dataflow checksum as the serial
reference for the same graph. Wall time covers the graph execution only,
never worker-pool or transport setup.
"""

from __future__ import annotations

from ..graphs import TaskGraph
from ..kernel import warm_up_kernel
from .async_ws import run_async_ws
from .config import (
    BACKEND_KINDS,
    PRIORITY_MODES,
    TRANSPORT_MEDIA,
    WORKER_STACKS,
    BackendConfig,
    RunResult,
    SchedulerConfig,
    TransportConfig,
    shard_assignment,
)
from .fork_join import run_fork_join
from .message_passing import run_message_passing
from .serial import run_serial

_RUNNERS = {
    "serial": run_serial,
    "fork_join": run_fork_join,
    "async_ws": run_async_ws,
    "message_passing": run_message_passing,
}


def run(graph: TaskGraph, config: BackendConfig) -> RunResult:
    """Execute ``graph`` under the configured backend and measure it."""
    config.validate()
    if graph.spec.kernel.kind == "compute_bound":
        warm_up_kernel()  # JIT load is setup, never measured
    return _RUNNERS[config.kind](graph, config)


__all__ = [
    "BACKEND_KINDS",
    "PRIORITY_MODES",
    "TRANSPORT_MEDIA",
    "WORKER_STACKS",
    "BackendConfig",
    "RunResult",
    "SchedulerConfig",
    "TransportConfig",
    "run",
    "run_serial",
    "run_fork_join",
    "run_async_ws",
    "run_message_passing",
    "shard_assignment",
]
