"""Interior detection rate of B(theta F) against the smoothing radius eps.

Prints CSV (eps, h, detected_fraction, mean_candidates, passed).

    python3 scripts/interior_sweep.py --replicates 50
"""

import argparse

from sheetlab import harness


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--replicates", type=int, default=50)
    p.add_argument("--rotations", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, nargs="+", default=[0.08, 0.04, 0.02, 0.01])
    args = p.parse_args(argv)
    print("eps,h,detected_fraction,mean_candidates,passed")
    for eps in args.eps:
        h = eps / 2
        rep = harness.exp_interior(rotations=args.rotations, replicates=args.replicates, seed=args.seed,
                                   eps=eps, h=h)
        frac = rep.estimate("all_rotations_detected_fraction")[0]
        cand = rep.estimate("mean_candidates")[0]
        print(f"{eps:g},{h:g},{frac:.4g},{cand:.4g},{rep.passed}")


if __name__ == "__main__":
    main()
