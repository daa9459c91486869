"""CSV and figure output for experiments and intervention logs."""
from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, Sequence

from cellkit.bt.trace import TraceEvent
from cellkit.harness.mtui import MTUIReport

UPTIME_FIELDS = ["run", "seed", "watchdog", "index", "start_s", "end_s", "uptime_s", "censored", "cause", "component"]
RESTART_FIELDS = ["run", "seed", "time_s", "component", "mode", "outcome", "delay_s"]
TRACE_FIELDS = ["run", "tick_index", "node_path", "old_status", "new_status", "timestamp_us"]
SUMMARY_FIELDS = ["key", "value"]


def _write(path: Path, fields: list[str], rows: Iterable[dict]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for row in rows:
            w.writerow(row)
    return path


def uptime_rows(report: MTUIReport, horizon_s: float, run: int = 0, seed: int | str = "",
                watchdog: bool | str = "", start_s: float = 0.0) -> list[dict]:
    """Completed uptimes plus one censored row for the interval still open at the horizon."""
    rows = []
    start = start_s
    for i, (up, iv) in enumerate(zip(report.uptimes_s, report.interventions)):
        rows.append({"run": run, "seed": seed, "watchdog": int(watchdog) if watchdog != "" else "", "index": i,
                     "start_s": f"{start:.6f}", "end_s": f"{iv.time_s:.6f}", "uptime_s": f"{up:.6f}",
                     "censored": 0, "cause": iv.cause, "component": iv.component})
        start = iv.time_s
    if horizon_s > start:
        rows.append({"run": run, "seed": seed, "watchdog": int(watchdog) if watchdog != "" else "",
                     "index": len(report.uptimes_s), "start_s": f"{start:.6f}", "end_s": f"{horizon_s:.6f}",
                     "uptime_s": f"{horizon_s - start:.6f}", "censored": 1, "cause": "", "component": ""})
    return rows


def write_uptimes(path: Path, rows: Iterable[dict]) -> Path:
    return _write(path, UPTIME_FIELDS, rows)


def write_restarts(path: Path, rows: Iterable[dict]) -> Path:
    return _write(path, RESTART_FIELDS, rows)


def trace_rows(events: Iterable[TraceEvent], run: int = 0) -> Iterable[dict]:
    for ev in events:
        yield {"run": run, "tick_index": ev.tick_index, "node_path": ev.node_path,
               "old_status": ev.old_status.value, "new_status": ev.new_status.value, "timestamp_us": ev.timestamp_us}


def write_trace(path: Path, rows: Iterable[dict]) -> Path:
    return _write(path, TRACE_FIELDS, rows)


def write_summary(path: Path, report: MTUIReport, extra: dict | None = None) -> Path:
    data = dict(report.to_dict())
    data.update(extra or {})
    return _write(path, SUMMARY_FIELDS, ({"key": k, "value": "" if v is None else v} for k, v in data.items()))


def read_uptimes(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# -- figures ----------------------------------------------------------------------

def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def plot_uptimes(path: Path, report: MTUIReport, oracle_mean_s: float | None = None) -> Path:
    """Histogram of completed uptimes with the exponential density of the same mean."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    ups = report.uptimes_s
    if ups:
        top = max(ups)
        bins = max(5, min(40, int(math.sqrt(len(ups))) * 2))
        ax.hist(ups, bins=bins, density=True, color="0.7", edgecolor="0.3", label=f"uptimes (n={len(ups)})")
        xs = [top * i / 200 for i in range(201)]
        for mean, style, name in ((report.mean_s, "-", "sample mean"), (oracle_mean_s, "--", "oracle")):
            if mean and math.isfinite(mean):
                ax.plot(xs, [math.exp(-x / mean) / mean for x in xs], style, color="black",
                        label=f"Exp, {name} {mean:.1f} s")
        ax.set_xlabel("uptime until intervention [s]")
        ax.set_ylabel("density")
        ax.legend(frameon=False, fontsize=8)
    else:
        ax.text(0.5, 0.5, f"no intervention\nMTUI > {report.mean_s:.0f} s (censored)", ha="center",
                va="center", transform=ax.transAxes)
        ax.set_axis_off()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_timeline(path: Path, runs: Sequence[tuple[str, Sequence[float], Sequence[float]]], horizon_s: float) -> Path:
    """One row per run: interventions as crosses, autonomous restarts as ticks."""
    plt = _pyplot()
    n = max(1, len(runs))
    fig, ax = plt.subplots(figsize=(7.0, 1.0 + 0.25 * n))
    for row, (label, interventions, restarts) in enumerate(runs):
        if restarts:
            ax.plot(restarts, [row] * len(restarts), "|", color="0.5", markersize=6)
        if interventions:
            ax.plot(interventions, [row] * len(interventions), "x", color="black", markersize=5)
    ax.set_xlim(0, horizon_s)
    ax.set_ylim(-0.5, n - 0.5)
    if n <= 20:
        ax.set_yticks(range(n))
        ax.set_yticklabels([r[0] for r in runs], fontsize=7)
    else:
        ax.set_ylabel("run")
    ax.set_xlabel("simulated time [s]")
    ax.set_title("interventions (x) and component restarts (|)", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
