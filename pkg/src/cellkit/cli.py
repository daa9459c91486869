"""``cellkit run|replay|report|validate``.

Exit codes: 0 success, 1 experiment error, 2 configuration or usage error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from collections import Counter
from pathlib import Path

from cellkit.bt.status import NodeStatus
from cellkit.bt.trace import TickTrace, TraceError, TraceEvent, replay
from cellkit.harness import report as rpt
from cellkit.harness.experiment import ExperimentResult, load_config, run_experiment, validate_config
from cellkit.harness.mtui import LogOrderError, compute_mtui, superposition_mean
from cellkit.sim.scenario import ConfigError
from cellkit.watchdog.interventions import InterventionLog

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cellkit", description="robot cell experiments: run, replay, report, validate")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", metavar="{run,replay,report,validate}")

    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("config")
    run.add_argument("--out", help="output directory (default: config output_dir or ./results)")
    run.add_argument("--runs", type=int)
    run.add_argument("--duration", type=float, help="simulated seconds per run")
    run.add_argument("--seed", type=int)
    run.add_argument("--watchdog", choices=("on", "off"))
    run.add_argument("--no-figures", action="store_true")
    run.add_argument("--no-trace", action="store_true", help="skip trace.csv")

    rep = sub.add_parser("replay", help="replay a tick trace and summarise it")
    rep.add_argument("trace", help="trace file (one event per line) or trace.csv")
    rep.add_argument("--out", help="directory for trace.csv")

    rp = sub.add_parser("report", help="MTUI statistics from an intervention log")
    rp.add_argument("log")
    rp.add_argument("--horizon", type=float, help="end of observation in seconds (default: last intervention)")
    rp.add_argument("--start", type=float, default=0.0)
    rp.add_argument("--oracle-mean", type=float, help="draw an exponential of this mean for comparison")
    rp.add_argument("--out", default=".")
    rp.add_argument("--no-figures", action="store_true")

    val = sub.add_parser("validate", help="check an experiment config and what it references")
    val.add_argument("config")
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = _parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if args.command is None:
        ap.print_usage(sys.stderr)
        return EXIT_CONFIG
    handler = {"run": cmd_run, "replay": cmd_replay, "report": cmd_report, "validate": cmd_validate}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TraceError, LogOrderError, OSError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    scenario, tree = validate_config(cfg)
    n_faults = len(cfg.faults if cfg.faults is not None else scenario.faults)
    print(f"{args.config}: ok ({len(scenario.components)} components, {n_faults} fault specs, "
          f"tree '{tree.root.name}', {cfg.runs} run(s) x {cfg.duration_s:g} s, "
          f"watchdog {'on' if cfg.watchdog else 'off'})")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    changes = {}
    if args.runs is not None:
        changes["runs"] = args.runs
    if args.duration is not None:
        changes["duration_s"] = args.duration
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.watchdog is not None:
        changes["watchdog"] = args.watchdog == "on"
    if args.no_trace:
        changes["keep_trace"] = False
    cfg = cfg.with_changes(**changes)
    scenario, _ = validate_config(cfg)
    out = Path(args.out or cfg.output_dir or "results")

    def progress(i, r):
        print(f"run {i + 1}/{cfg.runs} seed {r.seed}: {len(r.interventions)} interventions, "
              f"{len(r.restarts)} restarts, {r.cycles_completed} cycles ({r.wall_s:.1f} s wall)", flush=True)

    result = run_experiment(cfg, progress)
    faults = cfg.faults if cfg.faults is not None else scenario.faults
    oracle = superposition_mean(f.rate_per_s or 0.0 for f in faults if f.mode == "crash")
    paths = write_experiment(result, out, figures=not args.no_figures, oracle_mean_s=oracle)
    print(result.report.summary())
    for p in paths:
        print(f"wrote {p}")
    return EXIT_OK


def write_experiment(result: ExperimentResult, out: Path, figures: bool = True,
                     oracle_mean_s: float | None = None) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    cfg = result.config
    up_rows, rs_rows, tr_rows = [], [], []
    (out / "interventions").mkdir(exist_ok=True)
    paths = []
    for i, r in enumerate(result.runs):
        up_rows += rpt.uptime_rows(r.report(), r.horizon_s, i, r.seed, r.watchdog)
        rs_rows += [{"run": i, "seed": r.seed, "time_s": f"{e.time_s:.6f}", "component": e.component, "mode": e.mode,
                     "outcome": e.outcome, "delay_s": f"{e.delay_s:.3f}"} for e in r.restarts]
        if cfg.keep_trace:
            tr_rows.extend(rpt.trace_rows(r.trace, i))
        log = InterventionLog()
        log.records.extend(r.interventions)
        log.write(out / "interventions" / f"run{i:03d}.log")
    paths.append(rpt.write_uptimes(out / "uptimes.csv", up_rows))
    paths.append(rpt.write_restarts(out / "restarts.csv", rs_rows))
    paths.append(rpt.write_trace(out / "trace.csv", tr_rows))
    report = result.report
    extra = {"watchdog": cfg.watchdog, "duration_s": cfg.duration_s, "oracle_mean_s": oracle_mean_s,
             "restarts": len(rs_rows), "wall_s": round(result.wall_s, 3)}
    paths.append(rpt.write_summary(out / "summary.csv", report, extra))
    if figures:
        paths.append(rpt.plot_uptimes(out / "mtui.png", report, oracle_mean_s))
        runs = [(f"{i}", [iv.time_s for iv in r.interventions], [e.time_s for e in r.restarts])
                for i, r in enumerate(result.runs)]
        paths.append(rpt.plot_timeline(out / "timeline.png", runs, cfg.duration_s))
    return paths


def _read_traces(path: Path) -> dict[str, TickTrace]:
    """One trace per run; a bare trace file or a csv without a run column counts as run 0."""
    if path.suffix != ".csv":
        return {"0": TickTrace.read(path)}
    runs: dict[str, list[TraceEvent]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), 2):
            try:
                ev = TraceEvent(int(row["tick_index"]), row["node_path"], NodeStatus(row["old_status"]),
                                NodeStatus(row["new_status"]), int(row["timestamp_us"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise TraceError(f"line {lineno}: {exc}") from None
            runs.setdefault(row.get("run") or "0", []).append(ev)
    return {run: TickTrace(events) for run, events in runs.items()}


def cmd_replay(args) -> int:
    path = Path(args.trace)
    if not path.is_file():
        raise ConfigError(f"trace file not found: {path}", str(path))
    traces = _read_traces(path)
    for run, trace in traces.items():
        seq = replay(trace)
        final: dict[str, NodeStatus] = {}
        for node, status in seq:
            final[node] = status
        counts = Counter(status.value for _, status in seq)
        ticks = trace.events[-1].tick_index if trace.events else 0
        print(f"run {run}: {len(seq)} transitions over {ticks} ticks; "
              + ", ".join(f"{k} {v}" for k, v in sorted(counts.items())))
        for node, status in final.items():
            print(f"  {status.value:<8} {node}")
    if args.out:
        rows = [row for run, trace in traces.items() for row in rpt.trace_rows(trace.events, run)]
        p = rpt.write_trace(Path(args.out) / "trace.csv", rows)
        print(f"wrote {p}")
    return EXIT_OK


def cmd_report(args) -> int:
    path = Path(args.log)
    if not path.is_file():
        raise ConfigError(f"intervention log not found: {path}", str(path))
    log = InterventionLog.read(path)
    horizon = args.horizon
    if horizon is None:
        if not len(log):
            raise ConfigError("empty log needs --horizon", "horizon")
        horizon = log.records[-1].time_s
    report = compute_mtui(log, horizon, args.start)
    out = Path(args.out)
    paths = [rpt.write_uptimes(out / "uptimes.csv", rpt.uptime_rows(report, horizon, start_s=args.start)),
             rpt.write_summary(out / "summary.csv", report, {"horizon_s": horizon})]
    if not args.no_figures:
        paths.append(rpt.plot_uptimes(out / "mtui.png", report, args.oracle_mean))
    print(report.summary())
    for p in paths:
        print(f"wrote {p}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
