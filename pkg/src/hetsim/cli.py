"""Command line: ``hetsim run`` and ``hetsim steady``.

Exit codes: 0 success, 1 invalid input, 2 simulation diverged, 3 chain has no
unique stationary distribution.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from hetsim.markov import ChainError, NonUniqueStationary, parse_chain_text, steady_state
from hetsim.metrics import avg_completion_time
from hetsim.netsim import SimulationDiverged, SimulationReport, run_scenario
from hetsim.scenario import (
    ScenarioConfig,
    ScenarioError,
    parse_scenario,
    reference_scenario,
    serialize_scenario,
)

CSV_VERSION = 1
SERIES_COLUMNS = (
    "window_start_s", "terminal_id", "link_id", "throughput_bps", "goodput_pct", "channel_util_pct",
)
COMPLETION_COLUMNS = ("file_size_bytes", "completion_s")

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED, EXIT_NON_UNIQUE = 0, 1, 2, 3


def _f3(x: Optional[float]) -> str:
    return "" if x is None else f"{x:.3f}"


def series_csv(report: SimulationReport) -> str:
    """One row per (window, terminal), then one per link without a terminal."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SERIES_COLUMNS)
    attached = set(report.attach_links.values())
    spare = [lid for lid in sorted(report.link_util_pct) if lid not in attached]
    for k, start in enumerate(report.window_starts):
        for tid in sorted(report.terminals):
            ms = report.terminals[tid]
            w.writerow((
                f"{start:.3f}", tid, report.attach_links[tid], f"{ms.throughput_bps[k]:.0f}",
                _f3(ms.goodput_pct[k]), _f3(ms.channel_util_pct[k]),
            ))
        for lid in spare:
            w.writerow((f"{start:.3f}", "", lid, "", "", _f3(report.link_util_pct[lid][k])))
    return buf.getvalue()


def completions_csv(report: SimulationReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COMPLETION_COLUMNS)
    for size, secs in report.completions:
        w.writerow((size, f"{secs:.3f}"))
    return buf.getvalue()


def summary(report: SimulationReport, label: str) -> str:
    gp = report.mean_goodput_pct()
    cov = report.util_cov()
    lines = [
        f"== {label} (seed {report.seed}) ==",
        f"aggregate throughput: {report.aggregate_throughput_bps():.0f} b/s",
        f"mean goodput: {_f3(gp) or 'n/a'} %",
        f"mean channel utilization: {report.mean_channel_util_pct():.3f} %",
        f"channel utilization CoV: {'n/a' if cov is None else f'{cov:.3f}'}",
        f"transfers: {report.totals['transfers_started']} started, "
        f"{report.totals['transfers_completed']} completed, "
        f"{report.totals['transfers_aborted']} aborted, {report.totals['transfers_failed']} failed",
        f"packets: {report.totals['transmissions']} sent, {report.totals['acked']} acked, "
        f"{report.totals['drops']} dropped, {report.totals['losses']} lost",
    ]
    if report.completions:
        lines.append("mean completion time by file size:")
        for size, mean in avg_completion_time(report.completions):
            lines.append(f"  {size} B: {mean:.3f} s")
    return "\n".join(lines)


def load_config(path: str, overrides: Sequence[str] = ()) -> ScenarioConfig:
    if path.startswith("builtin:"):
        base = reference_scenario(path.split(":", 1)[1])
        if not overrides:
            return base
        return parse_scenario(serialize_scenario(base), overrides)
    return parse_scenario(Path(path).read_text(encoding="utf-8"), overrides)


def cmd_run(args) -> int:
    try:
        config = load_config(args.config, args.set)
    except OSError as exc:
        print(f"error: cannot read {args.config}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ScenarioError, ValueError) as exc:
        print(f"error: {args.config}: {exc}", file=sys.stderr)
        return EXIT_INVALID

    modes = {"multitask": [True], "single": [False], "compare": [True, False]}[args.mode]
    reports = []
    try:
        for enabled in modes:
            reports.append(run_scenario(config.with_multitasking(enabled), args.seed))
    except SimulationDiverged as exc:
        print(f"error: simulation diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED

    out = Path(args.out)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True)
    for enabled, report in zip(modes, reports):
        stem = out.name if args.mode != "compare" else f"{out.name}.{'multitask' if enabled else 'single'}"
        (out.parent / f"{stem}.csv").write_text(series_csv(report), encoding="utf-8")
        (out.parent / f"{stem}.completions.csv").write_text(completions_csv(report), encoding="utf-8")
        print(summary(report, "multitask" if enabled else "single"))
    if args.mode == "compare":
        multi, single = reports
        ratio = (
            multi.aggregate_throughput_bps() / single.aggregate_throughput_bps()
            if single.aggregate_throughput_bps() > 0
            else float("inf")
        )
        print(f"throughput multitask/single: {ratio:.3f}")
    return EXIT_OK


def cmd_steady(args) -> int:
    try:
        chain = parse_chain_text(Path(args.chain).read_text(encoding="utf-8"))
        pi = steady_state(chain)
    except OSError as exc:
        print(f"error: cannot read {args.chain}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_INVALID
    except NonUniqueStationary as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NON_UNIQUE
    except ChainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    for label, p in zip(chain.states, pi.probs):
        print(f"{label}\t{p:.6f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hetsim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate a scenario and write CSV metrics")
    run.add_argument("--config", required=True, help="scenario file, or builtin:campus / builtin:minimal")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--mode", choices=("multitask", "single", "compare"), default="multitask")
    run.add_argument("--out", default="run", help="output prefix")
    run.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                     help="override a scenario key, e.g. duration=100 or link.12.loss=0.01")
    run.set_defaults(func=cmd_run)

    steady = sub.add_parser("steady", help="print the stationary distribution of a chain file")
    steady.add_argument("chain")
    steady.set_defaults(func=cmd_steady)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    if getattr(args, "seed", 0) < 0:
        print("error: seed must be non-negative", file=sys.stderr)
        return EXIT_INVALID
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
