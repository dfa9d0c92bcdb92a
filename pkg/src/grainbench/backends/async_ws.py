"""Work-stealing dataflow executor.

Every task carries a dependence counter, initialized from the graph at
execution start (inside the measured region). A completed task decrements
the counters of its dependents; a counter reaching zero makes the task
runnable and pushes it onto its home worker's ready queue.

Queue discipline:

- ``priority_mode="none"``: a plain deque per worker. Owners pop LIFO,
  thieves steal FIFO from the other end. CPython deque operations are
  single bytecodes, so no further locking is needed.
- ``fixed64`` / ``bitvector``: a locked min-heap per worker ordered by the
  priority key (earlier timestep = higher priority); the key is a machine
  integer for fixed64 and an arbitrary-length byte string for bitvector.
  Heap order supersedes the LIFO/FIFO discipline.

``idle_detection`` adds a quiescence poll (a locked read of the remaining
counter) to every scheduling iteration; it is the removable cost knob.
"""

from __future__ import annotations

import heapq
import threading
import time
from collections import deque

from ..errors import DeadlockError
from ..graphs import TaskGraph
from .config import SMALL_STACK_BYTES, BackendConfig, RunResult
from .dataflow import ChecksumTable, SpanRecorder, execute_task, watchdog_seconds

_N_STRIPES = 16
_SPIN_LIMIT = 64
_BACKOFF_SECONDS = 5e-05


def _priority_key(mode: str, t: int):
    if mode == "fixed64":
        return t
    # Arbitrary-length bit-vector key: minimal big-endian bytes, ordered
    # numerically via the (length, bytes) pair.
    bv = t.to_bytes((t.bit_length() + 7) // 8 or 1, "big")
    return (len(bv), bv)


class _DequeQueue:
    __slots__ = ("items",)

    def __init__(self):
        self.items = deque()

    def push(self, mode: str, t: int, i: int) -> None:
        self.items.append((t, i))

    def pop_own(self):
        try:
            return self.items.pop()  # LIFO
        except IndexError:
            return None

    def pop_steal(self):
        try:
            return self.items.popleft()  # FIFO
        except IndexError:
            return None

    def __len__(self):
        return len(self.items)


class _HeapQueue:
    __slots__ = ("items", "lock", "seq")

    def __init__(self):
        self.items = []
        self.lock = threading.Lock()
        self.seq = 0

    def push(self, mode: str, t: int, i: int) -> None:
        key = _priority_key(mode, t)
        with self.lock:
            self.seq += 1
            heapq.heappush(self.items, (key, self.seq, t, i))

    def _pop(self):
        with self.lock:
            if not self.items:
                return None
            entry = heapq.heappop(self.items)
        return (entry[2], entry[3])

    pop_own = _pop
    pop_steal = _pop

    def __len__(self):
        return len(self.items)


def run_async_ws(graph: TaskGraph, config: BackendConfig) -> RunResult:
    cores = config.cores
    sched = config.scheduler
    width, steps = graph.width, graph.timesteps
    shard = max(1, -(-width // cores))  # ceil; == shards_per_core when width matches

    def home(i: int) -> int:
        return min(i // shard, cores - 1)

    table = ChecksumTable(graph)
    queue_cls = _DequeQueue if sched.priority_mode == "none" else _HeapQueue
    queues = [queue_cls() for _ in range(cores)]
    counters = [0] * (width * steps)
    stripes = [threading.Lock() for _ in range(_N_STRIPES)]
    remaining = [0]
    remaining_lock = threading.Lock()
    drained = [False]

    start = threading.Event()
    done = threading.Event()
    stop = threading.Event()
    edge_counts = [0] * cores
    recorders = [SpanRecorder(config.instrument) for _ in range(cores)]
    errors: list[BaseException] = []
    mode = sched.priority_mode

    def worker(w: int) -> None:
        my_queue = queues[w]
        victims = [queues[v] for v in range(cores) if v != w]
        recorder = recorders[w]
        edges = 0
        misses = 0
        start.wait()
        try:
            while not stop.is_set():
                if sched.idle_detection:
                    with remaining_lock:  # quiescence poll (removable path)
                        _ = remaining[0]
                task = my_queue.pop_own()
                if task is None and sched.work_stealing:
                    for victim in victims:
                        task = victim.pop_steal()
                        if task is not None:
                            break
                if task is None:
                    if drained[0]:
                        break
                    misses += 1
                    time.sleep(_BACKOFF_SECONDS if misses > _SPIN_LIMIT else 0)
                    continue
                misses = 0
                t, i = task
                if recorder.enabled:
                    s = recorder.now()
                    edges += execute_task(graph, table, t, i)
                    recorder.record(t, i, s, recorder.now())
                else:
                    edges += execute_task(graph, table, t, i)
                if t + 1 < steps:
                    base = (t + 1) * width
                    for j in graph.reverse_dependencies(t, i):
                        idx = base + j
                        with stripes[idx % _N_STRIPES]:
                            counters[idx] -= 1
                            ready = counters[idx] == 0
                        if ready:
                            queues[home(j)].push(mode, t + 1, j)
                with remaining_lock:
                    remaining[0] -= 1
                    finished = remaining[0] == 0
                if finished:
                    drained[0] = True
                    done.set()
        except BaseException as exc:
            errors.append(exc)
            stop.set()
        finally:
            edge_counts[w] = edges

    prev_stack = None
    if sched.worker_stack == "small":
        prev_stack = threading.stack_size(SMALL_STACK_BYTES)
    try:
        threads = [
            threading.Thread(target=worker, args=(w,), name=f"ws-{w}", daemon=True)
            for w in range(cores)
        ]
    finally:
        if prev_stack is not None:
            threading.stack_size(prev_stack)
    for th in threads:
        th.start()

    limit = watchdog_seconds(graph, config)
    t0 = time.perf_counter_ns()
    # Dependence counters are part of the measured region. Any task whose
    # counter starts at zero (all of timestep 0; every task of the trivial
    # pattern) is immediately runnable.
    initially_ready = [(0, i) for i in range(width)]
    idx = width
    for t in range(1, steps):
        for i in range(width):
            count = len(graph.dependencies(t, i))
            counters[idx] = count
            if count == 0:
                initially_ready.append((t, i))
            idx += 1
    remaining[0] = width * steps
    for t, i in initially_ready:
        queues[home(i)].push(mode, t, i)
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
    stop.set()  # idle workers exit their scheduling loop
    for th in threads:
        th.join(timeout=2.0)
    if errors:
        raise errors[0]
    if not finished:
        with remaining_lock:
            left = remaining[0]
        sizes = [len(q) for q in queues]
        raise DeadlockError(
            f"async_ws run exceeded watchdog {limit:.3f}s with {left} tasks "
            f"unfinished (queue sizes {sizes}); dependency handling is suspect"
        )

    checksum = 0
    for value in table.values:
        checksum ^= value
    return RunResult(
        wall_seconds=wall,
        tasks_executed=graph.total_tasks(),
        edges_satisfied=sum(edge_counts),
        dataflow_checksum=checksum,
        flops_executed=graph.total_tasks() * graph.spec.kernel.flops(),
        backend="async_ws",
        cores=cores,
        task_spans=recorders[0].merge(recorders) if config.instrument else None,
    )
