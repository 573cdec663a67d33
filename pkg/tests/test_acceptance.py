"""The eleven acceptance criteria at their stated tolerances and runtime limits.

Each test prints one PASS/FAIL line; the lines are repeated in the
terminal summary.
"""

import itertools
import math
import time

import numpy as np
import pytest

from sheetlab import cli, harness
from sheetlab.order import DiscreteSet
from sheetlab.potential import DiscreteMeasure, KernelSpec, capacity, energy, kernel_matrix, make_test_set
from sheetlab.rng import make_rng


def failed(rep):
    return [b.label for b in rep.bounds_checked if not b.satisfied]


def test_criterion_01_conditioning(criterion):
    rep = harness.exp_conditioning(trials=10_000, seed=0)
    err = max(rep.estimate("case1_max_relative_error")[0], rep.estimate("case2_max_relative_error")[0])
    ok = rep.passed and err <= 1e-10 and rep.runtime_seconds < 10
    criterion(1, ok, f"closed forms vs Schur, max rel err {err:.2e}, {rep.runtime_seconds:.1f}s")
    assert ok, failed(rep)


def test_criterion_02_lnd(criterion):
    rep = harness.exp_lnd(trials=1000, seed=0, max_N=3, max_n=5, corners=(0.5, 1.0, 2.0))
    pt = rep.estimate("point_violations")[0]
    inc = rep.estimate("increment_violations")[0]
    wide = rep.estimate("wide_box_point_violations")[0], rep.estimate("wide_box_increment_violations")[0]
    ok = rep.passed and pt == 0 and inc == 0 and rep.runtime_seconds < 30
    criterion(2, ok, f"violations point={pt:g} increment={inc:g} on [a,2a]^N "
                     f"(wide box, reported only: {wide[0]:g}/{wide[1]:g}), {rep.runtime_seconds:.1f}s")
    assert ok, failed(rep)


def test_criterion_03_sampler(criterion):
    rep = harness.exp_sampler(points=5, N=2, replicates=10_000, seed=0, se_margin=5.0)
    err = rep.estimate("implied_max_abs_error")[0]
    z = rep.estimate("empirical_max_z")[0]
    ok = rep.passed and err <= 1e-10 and z <= 5 and rep.runtime_seconds < 60
    criterion(3, ok, f"implied cov err {err:.1e}, empirical max z {z:.2f}, {rep.runtime_seconds:.1f}s")
    assert ok, failed(rep)


def test_criterion_04_bridges(criterion):
    rep = harness.exp_bridge_suite(N=2, trials=10_000, seed=0)
    cov = rep.estimate("independence_max_abs_cov")[0]
    ok = rep.passed and cov < 1e-12 and rep.runtime_seconds < 60
    criterion(4, ok, f"max |cov| {cov:.1e}, bracket and ball estimate violations 0, {rep.runtime_seconds:.1f}s")
    assert ok, failed(rep)


def _enumerate_min(K):
    m = K.shape[0]
    best = math.inf
    for k in range(1, m + 1):
        for S in itertools.combinations(range(m), k):
            S = list(S)
            A = np.block([[2 * K[np.ix_(S, S)], -np.ones((k, 1))], [np.ones((1, k)), np.zeros((1, 1))]])
            rhs = np.zeros(k + 1)
            rhs[-1] = 1
            try:
                w = np.linalg.solve(A, rhs)[:k]
            except np.linalg.LinAlgError:
                continue
            if np.all(w >= -1e-12):
                best = min(best, float(w @ K[np.ix_(S, S)] @ w))
    return best


def _lattice_min(K, res=200):
    m = K.shape[0]
    best = math.inf
    for head in itertools.product(range(res + 1), repeat=m - 2):
        rest = res - sum(head)
        if rest < 0:
            continue
        a = np.arange(rest + 1)
        W = np.zeros((a.size, m))
        W[:, : m - 2] = head
        W[:, m - 2] = a
        W[:, m - 1] = rest - a
        W /= res
        best = min(best, float(np.einsum("ij,jk,ik->i", W, K, W).min()))
    return best


def test_criterion_05_capacity(criterion):
    t0 = time.perf_counter()
    worst = 0.0
    lattice_ok = True
    rng = make_rng(5)
    for trial in range(24):
        m = 2 + trial % 11
        N = 1 + trial % 2
        F = DiscreteSet(rng.uniform(1, 2, (m, N)), cell=0.05)
        kern = KernelSpec.riesz(float(rng.uniform(0.3, 1.8)), "cell_average")
        res = capacity(F, kern, tol=1e-10)
        K = kernel_matrix(F, kern)
        exact = _enumerate_min(K)
        worst = max(worst, abs(res.energy - exact) / (1 + exact))
        if m <= 4:
            lat = _lattice_min(K)
            lattice_ok &= res.energy <= lat + 1e-10
    F = DiscreteSet(np.linspace(0, 1, 256)[:, None])
    e256 = energy(DiscreteMeasure.uniform(F), KernelSpec.riesz(0.5, "cell_average"))
    rel = abs(e256 - 8 / 3) / (8 / 3)
    trends = []
    for N, alpha, sizes in ((1, 1.0, (8, 16, 32, 64)), (1, 1.5, (8, 16, 32, 64)), (2, 2.0, (4, 6, 9, 13))):
        kind = "interval" if N == 1 else "translated_cube"
        caps = [capacity(make_test_set(kind, N=N, points=n), KernelSpec.riesz(alpha, "cell_average")).capacity
                for n in sizes]
        trends.append(bool(np.all(np.diff(caps) < 0)))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-6 and lattice_ok and rel < 0.01 and all(trends) and dt < 300
    criterion(5, ok, f"FW vs exact max err {worst:.1e}, lattice consistent {lattice_ok}, "
                     f"uniform energy rel err {rel:.2%}, Taylor trends {trends}, {dt:.1f}s")
    assert ok


def test_criterion_06_commutation(criterion):
    rep = harness.exp_commutation(N=2, points=3, pi=None, trials=100, replicates=10_000, seed=0, se_margin=3.0)
    resid = max(v for lab, v, _ in rep.estimates if lab.endswith("projection_residual"))
    margin = min(v for lab, v, _ in rep.estimates if lab.endswith("margin_in_se"))
    ok = rep.passed and resid < 1e-10 and margin >= 3 and rep.runtime_seconds < 120
    criterion(6, ok, f"4 orders, residual {resid:.1e}, smallest Cairoli margin {margin:.0f} SE, "
                     f"{rep.runtime_seconds:.1f}s")
    assert ok, failed(rep)


@pytest.mark.parametrize("kind", ["translated_cube", "cantor_product"])
def test_criterion_07_image_measure(criterion, kind):
    rep = harness.exp_kahane(N=2, d=3, set_kind=kind, replicates=200, voxel_schedule=(0.1, 0.05, 0.025),
                             seed=0, ratio=0.2)
    means = [rep.estimate(f"measure(voxel={v:g})")[0] for v in (0.1, 0.05, 0.025)]
    frac = rep.estimate("trend_batch_fraction")[0]
    if kind == "translated_cube":
        shape_ok = harness.classify_trend(means) == "stable" and min(means) > 0
    else:
        shape_ok = bool(np.all(np.diff(means) < 0))
    ok = rep.passed and shape_ok and frac >= 0.95 and rep.runtime_seconds < 600
    criterion(7, ok, f"{kind}: means {[round(m, 4) for m in means]}, batch fraction {frac:.2f}, "
                     f"{rep.runtime_seconds:.0f}s")
    assert ok, failed(rep)


def test_criterion_08_interior(criterion):
    rep = harness.exp_interior(N=2, d=1, rotations=8, replicates=50, seed=0)
    frac = rep.estimate("all_rotations_detected_fraction")[0]
    cov = rep.bound("coverage_of_detected_replicates").rhs
    ok = rep.passed and frac >= 0.95 and cov == 1.0 and rep.runtime_seconds < 600
    criterion(8, ok, f"{rep.estimate('rotations_in_cover')[0]:g} rotations, all detected in {frac:.0%}, "
                     f"coverage {cov:g}, {rep.runtime_seconds:.1f}s")
    assert ok, failed(rep)


def test_criterion_09_self_intersection(criterion):
    rep = harness.exp_mountford(replicates=50, configs=1000, seed=0)
    found = rep.estimate("detection_fraction")[0]
    bad = rep.estimate("lnd_violations")[0]
    ok = rep.passed and found >= 0.95 and bad == 0 and rep.runtime_seconds < 300
    criterion(9, ok, f"detected in {found:.0%}, bound violations {bad:g}, {rep.runtime_seconds:.1f}s")
    assert ok, failed(rep)


def test_criterion_10_occupation_density_formula(criterion):
    rep = harness.exp_odf(N=2, d=1, halvings=3, seed=0)
    const = rep.estimate("constant_max_discrepancy")[0]
    disc = [v for lab, v, _ in rep.estimates if lab.startswith("x1_discrepancy")]
    ok = rep.passed and const < 1e-10 and all(b < a for a, b in zip(disc, disc[1:])) \
        and rep.runtime_seconds < 120
    criterion(10, ok, f"f=1 discrepancy {const:.1e}, f=x1 {['%.1e' % v for v in disc]}, "
                      f"{rep.runtime_seconds:.1f}s")
    assert ok, failed(rep)


def test_criterion_11_cli_determinism(criterion, tmp_path):
    t0 = time.perf_counter()
    mismatched = []
    for name in harness.EXPERIMENTS:
        extra = ["--replicates", "10"] if name == "kahane" else []
        outs = []
        for tag, workers in (("a", "1"), ("b", "1"), ("c", "2")):
            out = tmp_path / f"{name}_{tag}"
            code = cli.main(["verify", "--experiment", name, "--seed", "11", "--workers", workers,
                             *extra, "--output", str(out)])
            assert code in (0, 1)
            outs.append((out / "report.json").read_bytes())
        if len(set(outs)) != 1:
            mismatched.append(name)
    dt = time.perf_counter() - t0
    ok = not mismatched
    criterion(11, ok, f"{len(harness.EXPERIMENTS)} experiments x (rerun, --workers 2) byte-identical; "
                      f"mismatched {mismatched}, {dt:.0f}s")
    assert ok
