"""Backend configuration and run-result types."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import BackendError

BACKEND_KINDS = ("serial", "fork_join", "async_ws", "message_passing")
PRIORITY_MODES = ("none", "fixed64", "bitvector")
TRANSPORT_MEDIA = ("shared_queue", "local_socket")
WORKER_STACKS = ("small", "default")

# Stack size handed to threading.stack_size() for the "small" setting.
SMALL_STACK_BYTES = 512 * 1024


@dataclass(frozen=True)
class SchedulerConfig:
    """Scheduling knobs for the work-stealing backend.

    ``priority_mode`` picks the ready-queue ordering key: ``none`` keeps the
    plain deque discipline, ``fixed64`` orders by a 64-bit integer key and
    ``bitvector`` by an arbitrary-length byte string. ``idle_detection``
    adds a quiescence poll to every scheduling iteration (a removable cost).
    """

    work_stealing: bool = True
    priority_mode: str = "none"
    idle_detection: bool = False
    worker_stack: str = "default"

    def validate(self) -> None:
        if self.priority_mode not in PRIORITY_MODES:
            raise BackendError(f"unknown priority_mode {self.priority_mode!r}")
        if self.worker_stack not in WORKER_STACKS:
            raise BackendError(f"unknown worker_stack {self.worker_stack!r}")


@dataclass(frozen=True)
class TransportConfig:
    """Message medium for the message-passing backend."""

    medium: str = "shared_queue"

    def validate(self) -> None:
        if self.medium not in TRANSPORT_MEDIA:
            raise BackendError(f"unknown transport medium {self.medium!r}")


@dataclass(frozen=True)
class BackendConfig:
    """Which executor runs a graph and with how many workers.

    ``shards_per_core`` is the overdecomposition factor: graphs built to
    match a config have width = cores * shards_per_core, though backends
    accept any width (message_passing still requires divisibility by the
    rank count).
    """

    kind: str = "serial"
    cores: int = 1
    shards_per_core: int = 1
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    transport: TransportConfig = field(default_factory=TransportConfig)
    # Harness knobs, not scheduling semantics:
    watchdog_seconds: float | None = None  # None = derive from the analytic bound
    ns_per_iteration_hint: float | None = None  # calibration value for the bound
    instrument: bool = False  # record per-task start/finish timestamps

    def validate(self) -> None:
        if self.kind not in BACKEND_KINDS:
            raise BackendError(f"unknown backend {self.kind!r}")
        if self.cores < 1:
            raise BackendError(f"cores must be >= 1, got {self.cores}")
        if self.shards_per_core < 1:
            raise BackendError(
                f"shards_per_core must be >= 1, got {self.shards_per_core}"
            )
        self.scheduler.validate()
        self.transport.validate()

    def natural_width(self) -> int:
        return self.cores * self.shards_per_core


@dataclass
class RunResult:
    """One measured execution of a graph under one backend."""

    wall_seconds: float
    tasks_executed: int
    edges_satisfied: int
    dataflow_checksum: int
    flops_executed: int
    backend: str = ""
    cores: int = 1
    # Only populated when BackendConfig.instrument is set:
    task_spans: dict[tuple[int, int], tuple[int, int]] | None = None


def shard_assignment(width: int, cores: int, shards_per_core: int) -> dict[int, int]:
    """Map each point index to its owning worker as contiguous blocks."""
    if width != cores * shards_per_core:
        raise BackendError(
            f"width {width} != cores {cores} x shards_per_core {shards_per_core}"
        )
    return {i: i // shards_per_core for i in range(width)}
