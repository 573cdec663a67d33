"""Riesz capacity of [1, 2]^N and of Cantor products as the discretization refines.

For alpha >= N the capacity of any set tends to zero; below N it settles.
Prints CSV (set, N, alpha, size, capacity, iterations, converged).

    python3 scripts/capacity_refinement.py --N 1 --alphas 0.5 1 1.5
"""

import argparse

from sheetlab.potential import KernelSpec, capacity, make_test_set


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--N", type=int, default=1)
    p.add_argument("--alphas", type=float, nargs="+", default=[0.5, 1.0, 1.5])
    p.add_argument("--ratio", type=float, default=1 / 3)
    p.add_argument("--levels", type=int, nargs="+", default=[2, 3, 4, 5])
    args = p.parse_args(argv)
    print("set,N,alpha,size,capacity,iterations,converged")
    for alpha in args.alphas:
        kern = KernelSpec.riesz(alpha, "cell_average")
        for k in args.levels:
            sets = {
                "cube": make_test_set("translated_cube", N=args.N, points=2**k if args.N == 1 else 2 + 2 * k),
                "cantor": make_test_set("cantor_product", N=args.N, level=k, ratio=args.ratio),
            }
            for name, F in sets.items():
                res = capacity(F, kern)
                print(f"{name},{args.N},{alpha:g},{len(F)},{res.capacity:.10g},{res.iterations},{res.converged}")


if __name__ == "__main__":
    main()
