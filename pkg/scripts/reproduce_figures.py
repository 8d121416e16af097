"""Run the sweeps behind the four figure tables and write their plot data.

    python scripts/reproduce_figures.py --out results/figures
    python scripts/reproduce_figures.py --duration 5 --warmup 1 --seeds 2 --vehicles 20,60,100   # quick look

Raw per-run CSVs land next to the tables (``raw-<figure>.csv``). Runs are
parallel when ``--workers`` or ``BONDSIM_WORKERS`` is above one.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from bondsim import experiment
from bondsim.experiment import ExperimentConfig, emit_plotdata, plotdata_csv
from bondsim.mac import STANDARD_CW, Method
from bondsim.scenario import Case


def sweeps(vehicles: tuple[int, ...], duration: float, warmup: float, seeds: int) -> dict[str, ExperimentConfig]:
    common = dict(duration_s=duration, warmup_s=warmup, seeds=seeds)
    return {
        "fig2": ExperimentConfig(methods=tuple(Method), cws=(15,), vehicles=vehicles, cases=(Case.SYMMETRIC,),
                                 **common),
        "fig3": ExperimentConfig(methods=tuple(Method), cws=STANDARD_CW, vehicles=(100,), cases=(Case.SYMMETRIC,),
                                 **common),
        "fig4": ExperimentConfig(methods=tuple(Method), cws=(15,), vehicles=vehicles, cases=(Case.ASYMMETRIC,),
                                 **common),
        "fig5": ExperimentConfig(methods=(Method.BOND_N,), cws=(15, 511), vehicles=vehicles, cases=tuple(Case),
                                 **common),
    }


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="results/figures")
    ap.add_argument("--figures", default="fig2,fig3,fig4,fig5")
    ap.add_argument("--vehicles", default="20,40,60,80,100")
    ap.add_argument("--duration", type=float, default=60.0)
    ap.add_argument("--warmup", type=float, default=2.0)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--workers", type=int)
    args = ap.parse_args(argv)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    vehicles = tuple(int(v) for v in args.vehicles.split(","))
    plan = sweeps(vehicles, args.duration, args.warmup, args.seeds)
    for fig in args.figures.split(","):
        cfg = plan[fig]
        total = len(cfg.points())

        def progress(done, n, fig=fig):
            print(f"\r{fig}: {done}/{n}", end="" if done < n else "\n", file=sys.stderr, flush=True)

        print(f"{fig}: {total} runs", file=sys.stderr)
        rows = experiment.run(cfg, out / f"raw-{fig}.csv", workers=args.workers, progress=progress)
        (out / f"{fig}.csv").write_text(plotdata_csv(emit_plotdata(rows, fig)), encoding="utf-8")
        print(f"{fig}: wrote {out / f'{fig}.csv'}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
