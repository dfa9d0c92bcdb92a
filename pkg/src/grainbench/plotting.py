"""SVG chart rendering for persisted results.

Presentation only: reads the values out of CSV rows and draws them,
never recomputing any metric.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

_THRESHOLD_STYLE = dict(color="red", linestyle="--", linewidth=1)


def _series_label(knobs_row: dict) -> str:
    label = knobs_row["backend"]
    extras = []
    if knobs_row["backend"] == "async_ws" and knobs_row["work_stealing"] == "false":
        extras.append("no-steal")
    if knobs_row["backend"] == "message_passing":
        extras.append(knobs_row["transport"])
    if int(knobs_row["shards_per_core"]) != 1:
        extras.append(f"spc={knobs_row['shards_per_core']}")
    if extras:
        label += " (" + ", ".join(extras) + ")"
    return label


def _group_rows(rows: list[dict], columns: tuple[str, ...]) -> dict[tuple, list[dict]]:
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        groups.setdefault(tuple(row[c] for c in columns), []).append(row)
    return groups


def plot_efficiency_curves(rows: list[dict], out_dir) -> list[str]:
    """One log-log efficiency-vs-granularity chart per pattern."""
    written = []
    for (pattern,), pattern_rows in _group_rows(rows, ("pattern",)).items():
        fig, ax = plt.subplots(figsize=(6, 4.5))
        series_cols = (
            "backend",
            "shards_per_core",
            "work_stealing",
            "priority_mode",
            "idle_detection",
            "transport",
            "cores",
        )
        for _, series in _group_rows(pattern_rows, series_cols).items():
            series = sorted(series, key=lambda r: float(r["granularity_us"]))
            ax.plot(
                [float(r["granularity_us"]) for r in series],
                [max(float(r["efficiency"]), 1e-6) for r in series],
                marker="o",
                markersize=3,
                label=_series_label(series[0]),
            )
        ax.axhline(0.5, **_THRESHOLD_STYLE)
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("task granularity (us)")
        ax.set_ylabel("efficiency")
        ax.set_title(f"efficiency vs task granularity ({pattern})")
        ax.legend(fontsize=7)
        ax.grid(True, which="both", alpha=0.3)
        path = os.path.join(out_dir, f"efficiency_{pattern.replace(':', '_')}.svg")
        fig.savefig(path, format="svg", bbox_inches="tight")
        plt.close(fig)
        written.append(path)
    return written


def plot_flops_curves(rows: list[dict], out_dir) -> list[str]:
    """One log-log FLOP/s-vs-grain chart per pattern."""
    written = []
    for (pattern,), pattern_rows in _group_rows(rows, ("pattern",)).items():
        fig, ax = plt.subplots(figsize=(6, 4.5))
        series_cols = (
            "backend",
            "shards_per_core",
            "work_stealing",
            "priority_mode",
            "idle_detection",
            "transport",
            "cores",
        )
        peak = None
        for _, series in _group_rows(pattern_rows, series_cols).items():
            series = sorted(series, key=lambda r: int(r["grain_iterations"]))
            ax.plot(
                [int(r["grain_iterations"]) for r in series],
                [max(float(r["flops_per_second"]), 1.0) for r in series],
                marker="o",
                markersize=3,
                label=_series_label(series[0]),
            )
            peak = max(peak or 0.0, float(series[0]["peak_flops_per_second"]))
        if peak:
            ax.axhline(0.5 * peak, **_THRESHOLD_STYLE)
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("grain size (iterations)")
        ax.set_ylabel("FLOP/s")
        ax.set_title(f"FLOP/s vs grain size ({pattern})")
        ax.legend(fontsize=7)
        ax.grid(True, which="both", alpha=0.3)
        path = os.path.join(out_dir, f"flops_{pattern.replace(':', '_')}.svg")
        fig.savefig(path, format="svg", bbox_inches="tight")
        plt.close(fig)
        written.append(path)
    return written


def plot_metg_table(rows: list[dict], out_dir) -> list[str]:
    """METG vs overdecomposition factor, one chart per pattern."""
    written = []
    for (pattern,), pattern_rows in _group_rows(rows, ("pattern",)).items():
        fig, ax = plt.subplots(figsize=(6, 4.5))
        series_cols = ("backend", "work_stealing", "transport", "cores")
        for _, series in _group_rows(pattern_rows, series_cols).items():
            series = [r for r in series if r["metg_us"]]
            if not series:
                continue
            series = sorted(series, key=lambda r: int(r["shards_per_core"]))
            ax.plot(
                [int(r["shards_per_core"]) for r in series],
                [float(r["metg_us"]) for r in series],
                marker="s",
                markersize=4,
                label=_series_label(series[0]),
            )
        ax.set_yscale("log")
        ax.set_xlabel("shards per core (overdecomposition factor)")
        ax.set_ylabel("METG (us)")
        ax.set_title(f"METG vs overdecomposition ({pattern})")
        ax.legend(fontsize=7)
        ax.grid(True, which="both", alpha=0.3)
        path = os.path.join(out_dir, f"metg_{pattern.replace(':', '_')}.svg")
        fig.savefig(path, format="svg", bbox_inches="tight")
        plt.close(fig)
        written.append(path)
    return written
