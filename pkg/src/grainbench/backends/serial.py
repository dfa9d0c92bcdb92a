"""Reference executor: one thread, (t, then i) order.

Defines the canonical dataflow checksum every other backend must match.
A straight loop cannot block, so no watchdog applies here.
"""

from __future__ import annotations

import time

from ..graphs import TaskGraph
from .config import BackendConfig, RunResult
from .dataflow import ChecksumTable, SpanRecorder, execute_task


def run_serial(graph: TaskGraph, config: BackendConfig) -> RunResult:
    table = ChecksumTable(graph)
    recorder = SpanRecorder(config.instrument)
    edges = 0

    t0 = time.perf_counter_ns()
    if recorder.enabled:
        for t in range(graph.timesteps):
            for i in range(graph.width):
                s = recorder.now()
                edges += execute_task(graph, table, t, i)
                recorder.record(t, i, s, recorder.now())
    else:
        for t in range(graph.timesteps):
            for i in range(graph.width):
                edges += execute_task(graph, table, t, i)
    wall = (time.perf_counter_ns() - t0) / 1e9

    checksum = 0
    for value in table.values:
        checksum ^= value
    return RunResult(
        wall_seconds=wall,
        tasks_executed=graph.total_tasks(),
        edges_satisfied=edges,
        dataflow_checksum=checksum,
        flops_executed=graph.total_tasks() * graph.spec.kernel.flops(),
        backend="serial",
        cores=config.cores,
        task_spans=recorder.merge([recorder]) if recorder.enabled else None,
    )
