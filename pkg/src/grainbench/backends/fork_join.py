"""Barrier executor: static partition per timestep, barrier between steps.

Workers are persistent threads; each owns a contiguous slice of the row
and synchronizes on a barrier after every timestep, so step t reads of
step t-1 checksums are ordered by the barrier.
"""

from __future__ import annotations

import threading
import time

from ..errors import DeadlockError
from ..graphs import TaskGraph
from .config import SMALL_STACK_BYTES, BackendConfig, RunResult
from .dataflow import ChecksumTable, SpanRecorder, execute_task, watchdog_seconds


def _slice_bounds(width: int, cores: int, w: int) -> tuple[int, int]:
    # Balanced contiguous slices; equals the shard blocks when width = cores * spc.
    return (width * w // cores, width * (w + 1) // cores)


def run_fork_join(graph: TaskGraph, config: BackendConfig) -> RunResult:
    cores = config.cores
    table = ChecksumTable(graph)
    barrier = threading.Barrier(cores)
    start = threading.Event()
    done = threading.Event()
    stop = threading.Event()
    edge_counts = [0] * cores
    recorders = [SpanRecorder(config.instrument) for _ in range(cores)]
    errors: list[BaseException] = []

    def worker(w: int) -> None:
        lo, hi = _slice_bounds(graph.width, cores, w)
        recorder = recorders[w]
        edges = 0
        start.wait()
        try:
            for t in range(graph.timesteps):
                if stop.is_set():
                    return
                if recorder.enabled:
                    for i in range(lo, hi):
                        s = recorder.now()
                        edges += execute_task(graph, table, t, i)
                        recorder.record(t, i, s, recorder.now())
                else:
                    for i in range(lo, hi):
                        edges += execute_task(graph, table, t, i)
                barrier.wait()
        except threading.BrokenBarrierError:
            return
        except BaseException as exc:  # worker bug; surface to the caller
            errors.append(exc)
            barrier.abort()
            return
        finally:
            edge_counts[w] = edges
        if w == 0:
            done.set()

    prev_stack = None
    if config.scheduler.worker_stack == "small":
        prev_stack = threading.stack_size(SMALL_STACK_BYTES)
    try:
        threads = [
            threading.Thread(target=worker, args=(w,), name=f"fj-{w}", daemon=True)
            for w in range(cores)
        ]
    finally:
        if prev_stack is not None:
            threading.stack_size(prev_stack)
    for th in threads:
        th.start()

    limit = watchdog_seconds(graph, config)
    t0 = time.perf_counter_ns()
    start.set()
    # Poll in short slices so worker exceptions surface promptly; Event.wait
    # returns the moment the flag is set, so the slice size never pads the
    # measured wall time.
    deadline = t0 + int(limit * 1e9)
    finished = False
    while True:
        finished = done.wait(timeout=0.05)
        if finished or errors:
            break
        if time.perf_counter_ns() > deadline:
            break
    wall = (time.perf_counter_ns() - t0) / 1e9
    if not finished:
        stop.set()
        barrier.abort()
        for th in threads:
            th.join(timeout=1.0)
        if errors:
            raise errors[0]
        raise DeadlockError(
            f"fork_join run exceeded watchdog {limit:.3f}s "
            f"(graph {graph!r}, cores={cores}); dependency handling is suspect"
        )
    for th in threads:
        th.join()
    if errors:
        raise errors[0]

    checksum = 0
    for value in table.values:
        checksum ^= value
    return RunResult(
        wall_seconds=wall,
        tasks_executed=graph.total_tasks(),
        edges_satisfied=sum(edge_counts),
        dataflow_checksum=checksum,
        flops_executed=graph.total_tasks() * graph.spec.kernel.flops(),
        backend="fork_join",
        cores=cores,
        task_spans=recorders[0].merge(recorders) if config.instrument else None,
    )
