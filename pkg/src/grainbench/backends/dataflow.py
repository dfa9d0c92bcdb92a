"""Checksum plumbing shared by every backend.

Each task's kernel seed is derived from its coordinates and a fold of its
dependencies' checksums, so a backend that mis-routes a payload or runs a
task before its inputs produces a different run checksum. The run-level
checksum XORs the per-task checksums, which makes it independent of
completion order while staying sensitive to every per-task value.
"""

from __future__ import annotations

import time

from ..graphs import TaskGraph
from ..kernel import execute_kernel

_MASK64 = (1 << 64) - 1
_MASK63 = (1 << 63) - 1

BASE_SEED = 0x51AB6B2D90210F3D

# Watchdog floor; the analytic lower bound is ~0 for empty kernels.
WATCHDOG_FLOOR_SECONDS = 5.0
WATCHDOG_FACTOR = 100.0


def mix64(v: int) -> int:
    """splitmix64-style finalizer, truncated to 63 bits."""
    v &= _MASK64
    v = ((v ^ (v >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    v = ((v ^ (v >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (v ^ (v >> 31)) & _MASK63


def fold_checksums(values) -> int:
    """Order-sensitive fold; callers pass dependency checksums in sorted-index order."""
    acc = 0
    for v in values:
        acc = ((acc * 0x100000001B3) ^ v) & _MASK64
    return acc & _MASK63


def task_seed(t: int, i: int, dep_fold: int) -> int:
    return mix64(BASE_SEED ^ (t * 0x9E3779B97F4A7C15) ^ (i * 0xC2B2AE3D27D4EB4F) ^ dep_fold)


class ChecksumTable:
    """Per-task checksum storage for one run, indexed by (t, i).

    A plain list of ints: element assignment is a single atomic operation
    under the GIL, and the dependence protocol (barrier or counter
    decrement) orders each write before any read of it.
    """

    def __init__(self, graph: TaskGraph):
        self.width = graph.width
        self.values = [0] * (graph.width * graph.timesteps)

    def set(self, t: int, i: int, value: int) -> None:
        self.values[t * self.width + i] = value

    def get(self, t: int, i: int) -> int:
        return self.values[t * self.width + i]


def execute_task(graph: TaskGraph, table: ChecksumTable, t: int, i: int) -> int:
    """Run one task against shared checksum storage; returns its edge count."""
    deps = graph.dependencies(t, i)
    if deps:
        row = (t - 1) * table.width
        dep_fold = fold_checksums(table.values[row + j] for j in deps)
    else:
        dep_fold = 0
    table.set(t, i, execute_kernel(graph.spec.kernel, task_seed(t, i, dep_fold)))
    return len(deps)


def analytic_lower_bound_seconds(graph: TaskGraph, cores: int, ns_per_iteration: float | None) -> float:
    """Ideal compute-only wall time: total kernel time spread over all cores."""
    if ns_per_iteration is None or graph.spec.kernel.kind == "empty":
        return 0.0
    total_ns = graph.total_tasks() * graph.spec.kernel.iterations * ns_per_iteration
    return total_ns / cores / 1e9


def watchdog_seconds(graph: TaskGraph, config) -> float:
    if config.watchdog_seconds is not None:
        return config.watchdog_seconds
    bound = analytic_lower_bound_seconds(graph, config.cores, config.ns_per_iteration_hint)
    return max(WATCHDOG_FLOOR_SECONDS, WATCHDOG_FACTOR * bound)


class SpanRecorder:
    """Optional per-task (start_ns, end_ns) capture for dependency audits."""

    def __init__(self, enabled: bool):
        self.enabled = enabled
        self.spans: list[tuple[int, int, int, int]] = []

    def record(self, t: int, i: int, start_ns: int, end_ns: int) -> None:
        self.spans.append((t, i, start_ns, end_ns))

    @staticmethod
    def now() -> int:
        return time.perf_counter_ns()

    def merge(self, others) -> dict[tuple[int, int], tuple[int, int]]:
        merged = {}
        for rec in others:
            for t, i, s, e in rec.spans:
                merged[(t, i)] = (s, e)
        return merged
