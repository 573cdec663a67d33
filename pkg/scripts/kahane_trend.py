"""Image voxel measure of B(F) under joint refinement, for sets on both sides of d/2.

Prints a plot-ready CSV (set, voxel, points_per_axis, mean, standard_error).

    python3 scripts/kahane_trend.py --replicates 200 --workers 1 > kahane.csv
"""

import argparse
import sys

from sheetlab import harness


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--replicates", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--voxels", type=float, nargs="+", default=[0.1, 0.05, 0.025])
    p.add_argument("--ratio", type=float, default=0.2)
    args = p.parse_args(argv)
    print("set,dimension,voxel,points_per_axis,mean,standard_error")
    status = 0
    for kind in ("translated_cube", "cantor_product"):
        rep = harness.exp_kahane(N=2, d=3, set_kind=kind, replicates=args.replicates,
                                 voxel_schedule=args.voxels, seed=args.seed, ratio=args.ratio,
                                 workers=args.workers, batches=min(10, args.replicates))
        for v, n in zip(args.voxels, rep.parameters["points_per_axis"]):
            m, se = rep.estimate(f"measure(voxel={v:g})")
            print(f"{kind},{rep.parameters['dimF']:.6g},{v:g},{n},{m:.6g},{se:.3g}")
        print(f"# {kind}: {'; '.join(rep.notes)}; passed={rep.passed}", file=sys.stderr)
        status |= 0 if rep.passed else 1
    return status


if __name__ == "__main__":
    sys.exit(main())
