"""Command line: ``bondsim run | plotdata | dump-topology``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

from .engine import RngStream
from .experiment import (CoverageError, ExperimentConfig, _atomic_write, emit_plotdata, plotdata_csv,
                         read_rows, run)
from .mac import Method
from .scenario import Case, HighwayConfig, build_topology, topology_csv
from .simulation import TOPOLOGY_STREAM


def _csv_list(conv):
    def parse(text: str):
        try:
            return tuple(conv(t.strip()) for t in text.split(",") if t.strip())
        except ValueError as e:
            raise argparse.ArgumentTypeError(str(e)) from None
    return parse


def _add_sweep_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with experiment settings; flags override it")
    p.add_argument("--method", type=_csv_list(Method.parse), help="comma list: edca,bond_n,bond_bd,bond_bd_fallback")
    p.add_argument("--cw", type=_csv_list(int), help="comma list of contention windows")
    p.add_argument("--vehicles", type=_csv_list(int), help="comma list of vehicle counts (even)")
    p.add_argument("--case", type=_csv_list(Case.parse), help="symmetric, asymmetric or both")
    p.add_argument("--duration", type=float, help="simulated seconds per run")
    p.add_argument("--seeds", type=int, help="replications per sweep point")
    p.add_argument("--base-seed", type=int, help="seed of the first replication")
    p.add_argument("--warmup", type=float, help="seconds excluded from the metrics")
    p.add_argument("--research-cw", action="store_true", default=None,
                   help="allow contention windows outside the standard set")


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    over = {
        "methods": args.method, "cws": args.cw, "vehicles": args.vehicles, "cases": args.case,
        "duration_s": args.duration, "seeds": args.seeds, "base_seed": args.base_seed,
        "warmup_s": args.warmup, "research_cw": args.research_cw,
    }
    over = {k: v for k, v in over.items() if v is not None}
    return dataclasses.replace(cfg, **over)


def _progress(done: int, total: int) -> None:
    print(f"\r{done}/{total} runs", end="" if done < total else "\n", file=sys.stderr, flush=True)


def cmd_run(args) -> int:
    cfg = build_config(args)
    if args.show_config:
        print(json.dumps(cfg.to_dict(), indent=2))
        return 0
    rows = run(cfg, args.out, workers=args.workers, trace_out=args.trace, messages_out=args.log_messages,
               progress=None if args.quiet else _progress)
    if args.out is None:
        from .experiment import rows_to_csv
        sys.stdout.write(rows_to_csv(rows))
    return 0


def cmd_plotdata(args) -> int:
    rows = []
    for path in args.inputs:
        rows.extend(read_rows(path))
    text = plotdata_csv(emit_plotdata(rows, args.figure))
    if args.out:
        _atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_dump_topology(args) -> int:
    if len(args.case) != 1 or len(args.vehicles) != 1:
        raise ValueError("dump-topology takes a single case and vehicle count")
    stations = build_topology(args.vehicles[0], HighwayConfig(), args.case[0], RngStream(args.seed, TOPOLOGY_STREAM))
    text = topology_csv(stations)
    if args.out:
        _atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bondsim", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a sweep and write one CSV row per (point, seed)")
    _add_sweep_flags(r)
    r.add_argument("--out", help="result CSV (stdout if omitted)")
    r.add_argument("--trace", metavar="CSV", help="write every automaton state transition")
    r.add_argument("--log-messages", metavar="CSV", help="write one line per measured message")
    r.add_argument("--workers", type=int, help="worker processes (default: $BONDSIM_WORKERS or 1)")
    r.add_argument("--show-config", action="store_true", help="print the resolved configuration and exit")
    r.add_argument("--quiet", action="store_true")
    r.set_defaults(func=cmd_run)

    p = sub.add_parser("plotdata", help="aggregate result CSVs into a figure table")
    p.add_argument("figure", choices=("fig2", "fig3", "fig4", "fig5"))
    p.add_argument("inputs", nargs="+", help="result CSV files")
    p.add_argument("--out")
    p.set_defaults(func=cmd_plotdata)

    t = sub.add_parser("dump-topology", help="write the initial station layout as CSV")
    t.add_argument("--vehicles", type=_csv_list(int), default=(100,))
    t.add_argument("--case", type=_csv_list(Case.parse), default=(Case.SYMMETRIC,))
    t.add_argument("--seed", type=int, default=1)
    t.add_argument("--out")
    t.set_defaults(func=cmd_dump_topology)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as e:
        if isinstance(e, CoverageError):
            print(f"bondsim: {e}", file=sys.stderr)
            return 3
        print(f"bondsim: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
