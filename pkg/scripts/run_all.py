"""Run every registered experiment at its default settings.

Writes one report per experiment plus summary.csv into the output
directory and exits non-zero if any checked bound fails.

    python3 scripts/run_all.py --output runs/all --seed 0 --workers 1
"""

import argparse
import csv
import sys
from pathlib import Path

from sheetlab import harness


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--output", default="runs/all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--skip", nargs="*", default=[], help="experiment names to leave out")
    args = p.parse_args(argv)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for name, info in harness.EXPERIMENTS.items():
        if name in args.skip:
            continue
        kw = {"seed": args.seed}
        if "workers" in info.run.__wrapped__.__code__.co_varnames:
            kw["workers"] = args.workers
        rep = info.run(**kw)
        (out / f"{name}.json").write_text(rep.to_json())
        (out / f"{name}.csv").write_text(rep.to_csv())
        rows.append((name, rep.passed, f"{rep.runtime_seconds:.2f}"))
        print(f"{name:14s} {'pass' if rep.passed else 'FAIL'}  {rep.runtime_seconds:8.2f}s", flush=True)
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["experiment", "passed", "runtime_seconds"])
        w.writerows(rows)
    return 0 if all(r[1] for r in rows) else 1


if __name__ == "__main__":
    sys.exit(main())
