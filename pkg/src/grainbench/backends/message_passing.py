"""Rank executor: one thread per rank, explicit payload exchange.

Each rank owns a contiguous block of columns and keeps all of its state
private; the only hand-off between ranks is the transport medium. Per
timestep a rank sends the previous step's outputs along cross-rank edges,
receives every payload its own tasks need, then executes its tasks.
Intra-rank edges bypass the transport entirely.
"""

from __future__ import annotations

import threading
import time

from ..errors import BackendError, DeadlockError
from ..graphs import TaskGraph
from ..kernel import execute_kernel
from .config import SMALL_STACK_BYTES, BackendConfig, RunResult
from .dataflow import SpanRecorder, fold_checksums, task_seed, watchdog_seconds
from .transport import decode_payload, encode_payload, open_medium

_RECV_SLICE = 0.05


def run_message_passing(graph: TaskGraph, config: BackendConfig) -> RunResult:
    ranks = config.cores
    width, steps = graph.width, graph.timesteps
    if width % ranks:
        raise BackendError(
            f"message_passing needs width divisible by the rank count "
            f"(width {width}, ranks {ranks})"
        )
    if steps * width > 0xFFFFFFFF:
        raise BackendError("graph too large for 32-bit edge ids")
    block = width // ranks
    payload_bytes = graph.spec.output_bytes

    def owner(i: int) -> int:
        return i // block

    medium = open_medium(config.transport.medium, ranks)

    start = threading.Event()
    done = threading.Event()
    stop = threading.Event()
    done_lock = threading.Lock()
    finished_ranks = [0]
    partials = [None] * ranks  # (checksum, edges) per rank
    recorders = [SpanRecorder(config.instrument) for _ in range(ranks)]
    errors: list[BaseException] = []

    def rank_loop(rank: int) -> None:
        lo = rank * block
        mine = range(lo, lo + block)
        own = [0] * (steps * block)  # rank-private checksum storage
        remote: dict[int, dict[int, int]] = {}  # source step -> {j: checksum}
        arrived: dict[int, int] = {}  # destination step -> payload count
        recorder = recorders[rank]
        edges = 0
        kernel = graph.spec.kernel
        start.wait()
        try:
            for t in range(steps):
                if stop.is_set():
                    return
                if t > 0:
                    src = t - 1
                    for i in mine:
                        cs = own[src * block + (i - lo)]
                        payload = None
                        for j in graph.reverse_dependencies(src, i):
                            dst = owner(j)
                            if dst != rank:
                                if payload is None:
                                    payload = encode_payload(cs, payload_bytes)
                                medium.send(rank, dst, src * width + i, payload)
                    needed = 0
                    for i in mine:
                        for j in graph.dependencies(t, i):
                            if owner(j) != rank:
                                needed += 1
                    while arrived.get(t, 0) < needed:
                        if stop.is_set():
                            return
                        msg = medium.recv(rank, _RECV_SLICE)
                        if msg is None:
                            continue
                        edge_id, payload = msg
                        src_step, j = divmod(edge_id, width)
                        remote.setdefault(src_step, {})[j] = decode_payload(payload)
                        arrived[src_step + 1] = arrived.get(src_step + 1, 0) + 1
                    arrived.pop(t, None)
                prev_remote = remote.get(t - 1, {})
                for i in mine:
                    deps = graph.dependencies(t, i)
                    if deps:
                        src_row = (t - 1) * block
                        dep_fold = fold_checksums(
                            own[src_row + (j - lo)]
                            if owner(j) == rank
                            else prev_remote[j]
                            for j in deps
                        )
                        edges += len(deps)
                    else:
                        dep_fold = 0
                    if recorder.enabled:
                        s = recorder.now()
                        own[t * block + (i - lo)] = execute_kernel(
                            kernel, task_seed(t, i, dep_fold)
                        )
                        recorder.record(t, i, s, recorder.now())
                    else:
                        own[t * block + (i - lo)] = execute_kernel(
                            kernel, task_seed(t, i, dep_fold)
                        )
                remote.pop(t - 1, None)
            checksum = 0
            for value in own:
                checksum ^= value
            partials[rank] = (checksum, edges)
            with done_lock:
                finished_ranks[0] += 1
                if finished_ranks[0] == ranks:
                    done.set()
        except BaseException as exc:
            errors.append(exc)
            stop.set()

    prev_stack = None
    if config.scheduler.worker_stack == "small":
        prev_stack = threading.stack_size(SMALL_STACK_BYTES)
    try:
        threads = [
            threading.Thread(target=rank_loop, args=(r,), name=f"mp-{r}", daemon=True)
            for r in range(ranks)
        ]
    finally:
        if prev_stack is not None:
            threading.stack_size(prev_stack)
    for th in threads:
        th.start()

    limit = watchdog_seconds(graph, config)
    t0 = time.perf_counter_ns()
    start.set()
    deadline = t0 + int(limit * 1e9)
    finished = False
    while True:
        finished = done.wait(timeout=0.05)
        if finished or errors:
            break
        if time.perf_counter_ns() > deadline:
            break
    wall = (time.perf_counter_ns() - t0) / 1e9
    stop.set()
    for th in threads:
        th.join(timeout=2.0)
    medium.close()
    if errors:
        raise errors[0]
    if not finished:
        raise DeadlockError(
            f"message_passing run exceeded watchdog {limit:.3f}s with "
            f"{ranks - finished_ranks[0]} ranks unfinished; "
            f"dependency handling is suspect"
        )

    checksum = 0
    edges = 0
    for part in partials:
        assert part is not None
        checksum ^= part[0]
        edges += part[1]
    return RunResult(
        wall_seconds=wall,
        tasks_executed=graph.total_tasks(),
        edges_satisfied=edges,
        dataflow_checksum=checksum,
        flops_executed=graph.total_tasks() * graph.spec.kernel.flops(),
        backend="message_passing",
        cores=ranks,
        task_spans=recorders[0].merge(recorders) if config.instrument else None,
    )
