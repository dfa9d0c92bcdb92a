"""Task graphs laid out as (timestep, point) lattices.

A graph is ``timesteps`` rows of ``width`` points. Every dependence edge
goes from a point at timestep ``t - 1`` to a point at timestep ``t``; the
pattern decides which points. Dependence sets are computed on demand from
closed-form neighbor rules so a graph costs O(1) memory no matter how many
tasks it describes.

Neighbor rules, for a task ``(t, i)`` with ``t >= 1`` (timestep 0 never has
predecessors):

- ``trivial``              no predecessors at all
- ``no_comm``              only ``i`` itself
- ``stencil_1d``           ``{i-1, i, i+1}`` clipped to the row
- ``stencil_1d_periodic``  ``{i-1, i, i+1}`` modulo ``width``
- ``nearest(r)``           ``[i-r, i+r]`` clipped to the row
- ``fft``                  butterfly: ``{i, i XOR 2^((t-1) mod log2 width)}``
- ``tree``                 ``{i, i XOR 2^(t-1)}`` while ``t-1 < ceil(log2 width)``,
                           afterwards just ``{i}``; partners beyond the row
                           are dropped
- ``all_to_all``           every point of the previous row
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import InvalidSpecError
from .kernel import KernelConfig

PATTERN_KINDS = (
    "trivial",
    "no_comm",
    "stencil_1d",
    "stencil_1d_periodic",
    "fft",
    "tree",
    "nearest",
    "all_to_all",
)


@dataclass(frozen=True)
class Pattern:
    """A dependency pattern name plus its parameters (radius for nearest)."""

    kind: str
    radius: int = 1

    def __post_init__(self):
        if self.kind not in PATTERN_KINDS:
            raise InvalidSpecError(
                f"unknown pattern {self.kind!r}; expected one of {', '.join(PATTERN_KINDS)}"
            )
        if self.kind == "nearest" and self.radius < 1:
            raise InvalidSpecError(f"nearest radius must be >= 1, got {self.radius}")

    @classmethod
    def parse(cls, text: str) -> "Pattern":
        """Parse ``"stencil_1d"`` or ``"nearest:2"`` style pattern names."""
        name, sep, arg = text.partition(":")
        name = name.strip()
        if not sep:
            return cls(name)
        if name != "nearest":
            raise InvalidSpecError(f"pattern {name!r} takes no parameter")
        try:
            radius = int(arg)
        except ValueError:
            raise InvalidSpecError(f"bad nearest radius {arg!r}") from None
        return cls(name, radius)

    def label(self) -> str:
        if self.kind == "nearest":
            return f"nearest:{self.radius}"
        return self.kind


@dataclass(frozen=True)
class TaskPoint:
    """One vertex of the lattice."""

    timestep: int
    index: int


@dataclass(frozen=True)
class GraphSpec:
    """Immutable description of a benchmark graph instance."""

    width: int
    timesteps: int
    pattern: Pattern
    kernel: KernelConfig = field(default_factory=KernelConfig)
    output_bytes: int = 16

    def validate(self) -> None:
        if self.width < 1:
            raise InvalidSpecError(f"width must be >= 1, got {self.width}")
        if self.timesteps < 1:
            raise InvalidSpecError(f"timesteps must be >= 1, got {self.timesteps}")
        if self.output_bytes < 0:
            raise InvalidSpecError(f"output_bytes must be >= 0, got {self.output_bytes}")
        if self.pattern.kind == "fft" and self.width & (self.width - 1):
            raise InvalidSpecError(
                f"fft pattern needs a power-of-two width, got {self.width}"
            )
        self.kernel.validate()


class TaskGraph:
    """A validated graph with O(deps) dependence queries.

    Immutable after construction; queries are read-only and safe to call
    from any number of worker threads concurrently.
    """

    def __init__(self, spec: GraphSpec):
        spec.validate()
        self.spec = spec
        self.width = spec.width
        self.timesteps = spec.timesteps
        # Stage counts for the XOR-partner patterns.
        self._log2_width = self.width.bit_length() - 1  # exact for fft (power of two)
        self._ceil_log2_width = (self.width - 1).bit_length()
        self._total_edges: int | None = None

    # -- queries ---------------------------------------------------------

    def _check_point(self, t: int, i: int) -> None:
        if not (0 <= t < self.timesteps and 0 <= i < self.width):
            raise IndexError(
                f"point (t={t}, i={i}) outside graph "
                f"({self.timesteps} timesteps x {self.width} points)"
            )

    def dependencies(self, t: int, i: int) -> tuple[int, ...]:
        """Predecessors of (t, i) at timestep t-1, sorted ascending."""
        self._check_point(t, i)
        if t == 0:
            return ()
        return self._neighbors(i, t - 1)

    def reverse_dependencies(self, t: int, i: int) -> tuple[int, ...]:
        """Successors of (t, i) at timestep t+1, sorted ascending."""
        self._check_point(t, i)
        if t >= self.timesteps - 1:
            return ()
        # Every in-scope rule is symmetric in i, so the dependents of (t, i)
        # follow the same neighbor rule evaluated at the receiving step.
        return self._neighbors(i, t)

    def _neighbors(self, i: int, stage: int) -> tuple[int, ...]:
        """Neighbor set for the edge bundle between steps ``stage`` and ``stage+1``."""
        kind = self.spec.pattern.kind
        w = self.width
        if kind == "trivial":
            return ()
        if kind == "no_comm":
            return (i,)
        if kind == "stencil_1d":
            lo = i - 1 if i > 0 else 0
            hi = i + 1 if i + 1 < w else w - 1
            return tuple(range(lo, hi + 1))
        if kind == "stencil_1d_periodic":
            if w == 1:
                return (0,)
            if w == 2:
                return (0, 1)
            return tuple(sorted({(i - 1) % w, i, (i + 1) % w}))
        if kind == "nearest":
            r = self.spec.pattern.radius
            lo = max(0, i - r)
            hi = min(w - 1, i + r)
            return tuple(range(lo, hi + 1))
        if kind == "fft":
            if self._log2_width == 0:
                return (i,)
            partner = i ^ (1 << (stage % self._log2_width))
            return (i, partner) if i < partner else (partner, i)
        if kind == "tree":
            if stage >= self._ceil_log2_width:
                return (i,)
            partner = i ^ (1 << stage)
            if partner >= w:
                return (i,)
            return (i, partner) if i < partner else (partner, i)
        if kind == "all_to_all":
            return tuple(range(w))
        raise AssertionError(f"unhandled pattern {kind!r}")

    # -- totals ----------------------------------------------------------

    def total_tasks(self) -> int:
        return self.width * self.timesteps

    def total_edges(self) -> int:
        if self._total_edges is None:
            count = 0
            for t in range(1, self.timesteps):
                for i in range(self.width):
                    count += len(self.dependencies(t, i))
            self._total_edges = count
        return self._total_edges

    def __repr__(self) -> str:
        return (
            f"TaskGraph({self.spec.pattern.label()}, width={self.width}, "
            f"timesteps={self.timesteps})"
        )


def build_graph(spec: GraphSpec) -> TaskGraph:
    """Validate ``spec`` and return a queryable graph."""
    return TaskGraph(spec)
