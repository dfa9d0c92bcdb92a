"""Calibrated compute-bound task kernel.

The kernel body is a fixed chain of 16 independent multiply-add
accumulators, compiled with numba so that (a) the floating-point loop
cannot be elided or reassociated away, and (b) the GIL is released while
it runs, letting the threaded backends scale across cores. One iteration
performs 16 multiply-adds, i.e. 32 floating-point operations.

The checksum folds the raw bits of every accumulator together with the
seed, so the result depends on both the seed and the iteration count and
the loop has observable output.
"""

from __future__ import annotations

import datetime
import hashlib
import platform
import statistics
import time
from dataclasses import dataclass

import numba
import numpy as np

from .errors import CalibrationError, ClockResolutionError, InvalidSpecError

KERNEL_KINDS = ("compute_bound", "empty")

ACCUMULATORS = 16
FLOPS_PER_ITERATION = 2 * ACCUMULATORS

# Checksum of the no-op kernel; any fixed 63-bit constant works.
EMPTY_KERNEL_CHECKSUM = 0x3C79AC492BA7B653

_MASK63 = (1 << 63) - 1


@dataclass(frozen=True)
class KernelConfig:
    """What each task executes: kernel kind and grain size (iterations)."""

    kind: str = "compute_bound"
    iterations: int = 0
    flops_per_iteration: int = FLOPS_PER_ITERATION

    def validate(self) -> None:
        if self.kind not in KERNEL_KINDS:
            raise InvalidSpecError(
                f"unknown kernel kind {self.kind!r}; expected one of {KERNEL_KINDS}"
            )
        if self.iterations < 0:
            raise InvalidSpecError(f"iterations must be >= 0, got {self.iterations}")
        if self.kind == "compute_bound" and self.flops_per_iteration != FLOPS_PER_ITERATION:
            raise InvalidSpecError(
                f"this build performs {FLOPS_PER_ITERATION} FLOPs per iteration, "
                f"got flops_per_iteration={self.flops_per_iteration}"
            )

    def flops(self) -> int:
        """FLOPs one execution of this kernel performs."""
        if self.kind == "empty":
            return 0
        return self.iterations * self.flops_per_iteration


@numba.njit(cache=True, nogil=True)
def _fma_chain(iterations, seed):  # pragma: no cover - exercised via execute_kernel
    # Derive a per-seed multiplier/addend pair that keeps every accumulator
    # bounded near 1.0 (fixed point c / (1 - x)), far from denormals.
    s = np.uint64(seed) * np.uint64(0x9E3779B97F4A7C15)
    s = (s ^ (s >> np.uint64(31))) * np.uint64(0xBF58476D1CE4E5B9)
    frac = np.float64(s & np.uint64(0xFFFFF)) / np.float64(0x100000)
    x = 0.999999 + frac * 1e-7
    c = 1e-6 + frac * 1e-8
    a0 = 1.00
    a1 = 1.01
    a2 = 1.02
    a3 = 1.03
    a4 = 1.04
    a5 = 1.05
    a6 = 1.06
    a7 = 1.07
    a8 = 1.08
    a9 = 1.09
    a10 = 1.10
    a11 = 1.11
    a12 = 1.12
    a13 = 1.13
    a14 = 1.14
    a15 = 1.15
    for _ in range(iterations):
        a0 = a0 * x + c
        a1 = a1 * x + c
        a2 = a2 * x + c
        a3 = a3 * x + c
        a4 = a4 * x + c
        a5 = a5 * x + c
        a6 = a6 * x + c
        a7 = a7 * x + c
        a8 = a8 * x + c
        a9 = a9 * x + c
        a10 = a10 * x + c
        a11 = a11 * x + c
        a12 = a12 * x + c
        a13 = a13 * x + c
        a14 = a14 * x + c
        a15 = a15 * x + c
    buf = np.empty(16, np.float64)
    buf[0] = a0
    buf[1] = a1
    buf[2] = a2
    buf[3] = a3
    buf[4] = a4
    buf[5] = a5
    buf[6] = a6
    buf[7] = a7
    buf[8] = a8
    buf[9] = a9
    buf[10] = a10
    buf[11] = a11
    buf[12] = a12
    buf[13] = a13
    buf[14] = a14
    buf[15] = a15
    bits = buf.view(np.uint64)
    h = np.uint64(seed) ^ np.uint64(0xD6E8FEB86659FD93)
    for k in range(16):
        h = (h ^ bits[k]) * np.uint64(0x100000001B3)
    return np.int64(h >> np.uint64(1))


def execute_kernel(config: KernelConfig, seed: int) -> int:
    """Run the kernel once and return its 63-bit checksum.

    Deterministic for a fixed (config, seed); the compute_bound kind
    performs exactly ``iterations * flops_per_iteration`` FLOPs.
    """
    if config.kind == "empty":
        return EMPTY_KERNEL_CHECKSUM
    return int(_fma_chain(config.iterations, seed & _MASK63))


def warm_up_kernel() -> None:
    """Force JIT compilation outside any timed region."""
    _fma_chain(1, 1)


# -- calibration ----------------------------------------------------------


@dataclass(frozen=True)
class Calibration:
    """Measured per-iteration cost of the compute kernel on this host."""

    ns_per_iteration: float
    samples: int
    dispersion: float  # (max - min) / median over the samples
    flops_per_iteration: int = FLOPS_PER_ITERATION
    timestamp: str = ""
    host: str = ""

    def peak_flops(self, cores: int) -> float:
        return peak_flops(self, cores)


def calibrate(
    kind: str = "compute_bound",
    target_duration_ms: float = 50.0,
    samples: int = 5,
) -> Calibration:
    """Time the kernel and return the median ns per iteration.

    Doubles the iteration count until a single timed execution exceeds
    ``target_duration_ms``, then takes ``samples`` (>= 5) measurements at
    that count. Must run on an otherwise idle process; not thread-safe.
    """
    if kind == "empty":
        raise CalibrationError("the empty kernel does no work to calibrate")
    if kind != "compute_bound":
        raise CalibrationError(f"unknown kernel kind {kind!r}")
    if target_duration_ms < 1.0:
        raise ClockResolutionError(
            f"target duration must be >= 1 ms, got {target_duration_ms} ms"
        )
    resolution_ns = time.get_clock_info("perf_counter").resolution * 1e9
    if resolution_ns > target_duration_ms * 1e6 / 100.0:
        raise ClockResolutionError(
            f"perf_counter resolution {resolution_ns:.0f} ns cannot resolve "
            f"{target_duration_ms} ms to 1%"
        )
    samples = max(5, int(samples))
    target_ns = target_duration_ms * 1e6

    warm_up_kernel()
    iterations = 1 << 12
    while True:
        t0 = time.perf_counter_ns()
        _fma_chain(iterations, 1)
        elapsed = time.perf_counter_ns() - t0
        if elapsed >= target_ns:
            break
        iterations *= 2

    per_iter = []
    for k in range(samples):
        t0 = time.perf_counter_ns()
        _fma_chain(iterations, k + 1)
        per_iter.append((time.perf_counter_ns() - t0) / iterations)
    median = statistics.median(per_iter)
    dispersion = (max(per_iter) - min(per_iter)) / median
    return Calibration(
        ns_per_iteration=median,
        samples=samples,
        dispersion=dispersion,
        flops_per_iteration=FLOPS_PER_ITERATION,
        timestamp=datetime.datetime.now(datetime.timezone.utc).isoformat(),
        host=platform.node(),
    )


def peak_flops(calibration: Calibration, cores: int) -> float:
    """Calibration-derived peak FLOP/s for ``cores`` workers."""
    if cores < 1:
        raise ValueError(f"cores must be >= 1, got {cores}")
    return cores * calibration.flops_per_iteration / (calibration.ns_per_iteration * 1e-9)


# -- calibration file -----------------------------------------------------

_CAL_FIELDS = (
    "ns_per_iteration",
    "samples",
    "dispersion",
    "flops_per_iteration",
    "timestamp",
    "host",
)


def save_calibration(calibration: Calibration, path) -> None:
    """Write a calibration as flat ``key=value`` lines."""
    lines = []
    for name in _CAL_FIELDS:
        value = getattr(calibration, name)
        if isinstance(value, float):
            value = repr(value)
        lines.append(f"{name}={value}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_calibration(path) -> Calibration:
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise CalibrationError(f"bad calibration line {line!r} in {path}")
            values[key.strip()] = value.strip()
    missing = [name for name in _CAL_FIELDS if name not in values]
    if missing:
        raise CalibrationError(f"calibration file {path} missing {missing}")
    return Calibration(
        ns_per_iteration=float(values["ns_per_iteration"]),
        samples=int(values["samples"]),
        dispersion=float(values["dispersion"]),
        flops_per_iteration=int(values["flops_per_iteration"]),
        timestamp=values["timestamp"],
        host=values["host"],
    )


def calibration_fingerprint(calibration: Calibration) -> str:
    """Short stable id identifying one calibration result."""
    canon = "|".join(
        [
            repr(calibration.ns_per_iteration),
            str(calibration.flops_per_iteration),
            calibration.timestamp,
            calibration.host,
        ]
    )
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]
