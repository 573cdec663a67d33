import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import norm

from sheetlab import localtime
from sheetlab.localtime import (
    InteriorBall,
    SpatialGrid,
    count_voxels,
    holder_modulus,
    image_measure,
    interior_detect,
    largest_ball,
    local_time_field,
    merge_candidates,
    occupation_density,
    occupation_field,
    odf_check,
    theory_exponents,
)
from sheetlab.order import DiscreteSet
from sheetlab.potential import DiscreteMeasure, make_test_set
from sheetlab.sampler import GridSpec, sample_sheet


def cube_setup(points=9, d=1, seed=0, replicates=1):
    F = make_test_set("translated_cube", N=2, points=points)
    grid = GridSpec.for_set(F)
    mu = DiscreteMeasure.uniform(F)
    samples = [sample_sheet(grid, d, seed, stream=r) for r in range(replicates)]
    return F, mu, samples


def atom(point):
    return DiscreteMeasure(DiscreteSet(np.array([point])), np.ones(1))


def test_occupation_density_examples():
    F, mu, (smp,) = cube_setup(d=2)
    s = F.points[4]
    x = smp.at(s)[0]
    for eps in (1e-3, 0.1, 2.0):
        assert occupation_density(smp, atom(s), x, eps) == pytest.approx((2 * eps) ** -2)
    far = np.abs(smp.values).max() + 1.0
    assert occupation_density(smp, mu, [far, far], 0.5) == 0
    with pytest.raises(ValueError):
        occupation_density(smp, atom([1.1, 1.0]), x, 0.1)
    with pytest.raises(ValueError):
        occupation_density(smp, mu, x, 0.0)


def test_expected_occupation_density():
    F, mu, _ = cube_setup(points=3)
    grid = GridSpec.for_set(F)
    n = 10_000
    eps, x = 0.1, 0.3
    # coordinates of one wide draw are independent replicates
    vals = sample_sheet(grid, n, seed=9).values.reshape(n, -1)
    l = ((np.abs(vals - x) <= eps) * mu.weights).sum(axis=1) / (2 * eps)
    sd = np.sqrt(np.prod(F.points, axis=1))
    want = float(mu.weights @ (norm.cdf((x + eps) / sd) - norm.cdf((x - eps) / sd))) / (2 * eps)
    assert abs(l.mean() - want) < 5 * l.std(ddof=1) / math.sqrt(n)
    one = sample_sheet(grid, 1, seed=9)
    assert occupation_density(one, mu, [x], eps) == pytest.approx(l[0])


@pytest.mark.parametrize("x", [0.0, 1.2])
def test_expected_occupation_lower_bound(x):
    # Gaussian density bounds on [1, 2]^2 give an explicit floor for E l^eps(x)
    F, mu, samples = cube_setup(points=5, replicates=2000, seed=3)
    eps = 0.1
    l = np.array([occupation_density(s, mu, [x], eps) for s in samples])
    a_pow, b_pow = 1.0, 4.0
    floor = (2 * math.pi * b_pow) ** -0.5 * math.exp(-((abs(x) + eps) ** 2) / (2 * a_pow))
    assert l.mean() - 4 * l.std(ddof=1) / math.sqrt(l.size) >= floor


@given(st.floats(1e-3, 1.0), st.floats(1e-3, 1.0))
def test_rescaled_density_monotone_in_eps(e1, e2):
    _, mu, (smp,) = cube_setup(d=2, seed=5)
    lo, hi = sorted((e1, e2))
    x = [0.1, -0.2]
    assert (2 * lo) ** 2 * occupation_density(smp, mu, x, lo) <= (2 * hi) ** 2 * occupation_density(smp, mu, x, hi)


@pytest.mark.parametrize("d", [1, 2])
def test_local_time_mass_and_bump(d):
    F, mu, samples = cube_setup(d=d, replicates=3)
    allv = np.vstack([s.on_set(F) for s in samples])
    eps, h = 0.05, 0.01
    xg = SpatialGrid.covering(allv, h, eps + h)
    est = local_time_field(samples, mu, xg, eps)
    assert est.values.shape == (3, *xg.shape)
    assert np.all(est.values >= 0)
    np.testing.assert_allclose(est.mass(), 1.0, atol=1e-10)
    bump = local_time_field(samples[:1], atom(F.points[0]), xg, eps)
    assert bump.values.max() == pytest.approx((2 * eps) ** -d)
    assert np.count_nonzero(bump.values) <= (int(2 * eps / h) + 2) ** d
    side = est.sidecar(1)
    assert side["epsilon"] == eps and side["h"] == h and side["seed"] == 1
    assert len(est.to_csv(0).splitlines()) == 1 + int(np.prod(xg.shape))


def test_field_rejects_small_grid():
    with pytest.raises(ValueError):
        occupation_field(np.array([[0.0]]), np.ones(1), SpatialGrid((0.0,), 0.1, (2,)), 0.5)


def test_odf_check():
    F, mu, (smp,) = cube_setup(points=17, seed=2)
    lhs, rhs = odf_check(smp, mu, lambda v: np.ones(len(v)), 0.05, 0.013)
    assert lhs == pytest.approx(1.0, abs=1e-14) and abs(lhs - rhs) < 1e-10
    lhs, rhs = odf_check(smp, mu, lambda v: v[:, 0], 0.05, 0.013)
    assert abs(lhs - rhs) < 1e-3
    top = np.abs(smp.values).max() + 1.0
    away = lambda v: (v[:, 0] > top).astype(float)  # noqa: E731
    assert odf_check(smp, mu, away, 0.05, 0.013) == (0.0, 0.0)


def test_theory_exponents():
    t = theory_exponents(2, 1, 2.0)
    assert t.eta_max == 1 and t.tau == pytest.approx(1 / 6)
    assert 0 < t.gamma < min(1, 2 * 2.0 - 1)
    assert theory_exponents(1, 1, 1.0).eta_max == 0.5
    with pytest.raises(ValueError):
        theory_exponents(2, 2, 1.0)


def test_holder_modulus():
    xg = SpatialGrid((0.0,), 0.01, (400,))
    const = localtime.OccupationEstimate(xg, np.ones((2, 400)), 0.05, None, (0, 1))
    _, lags, mods = holder_modulus(const)
    assert np.all(mods == 0) and lags.size >= 7
    small = localtime.OccupationEstimate(SpatialGrid((0.0,), 0.1, (20,)), np.ones((1, 20)), 0.2, None, (0,))
    with pytest.raises(ValueError):
        holder_modulus(small)
    # cube in N = 2, d = 1: the modulus grows no faster than sqrt(lag) up to a fitted constant
    F, mu, samples = cube_setup(points=65, replicates=4, seed=1)
    allv = np.vstack([s.on_set(F) for s in samples])
    fits = []
    for eps in (0.04, 0.02):
        xg = SpatialGrid.covering(allv, 0.005, eps + 0.005)
        est = local_time_field(samples, mu, xg, eps)
        slope, lags, mods = holder_modulus(est)
        C = (mods / np.sqrt(lags)).max()
        assert np.all(mods <= C * np.sqrt(lags) + 1e-12)
        assert slope > 0
        fits.append(slope)
    assert abs(fits[0] - fits[1]) < 0.5


def test_image_measure():
    F, _, (smp,) = cube_setup(d=3)
    single = DiscreteSet(F.points[:1])
    assert image_measure(smp, single, 0.1) == pytest.approx(0.1**3)
    # the sheet vanishes nowhere on [1, 2]^2 so take two points with values in one voxel
    pair = DiscreteSet(F.points[:2])
    v = smp.on_set(pair)
    big = float(np.abs(v).max() * 4 + 1)
    assert image_measure(smp, pair, big) in (big**3, 2 * big**3)
    vals = np.array([[0.01, 0.02], [0.03, 0.04]])
    assert count_voxels(vals, 0.1) == 1


@given(st.lists(st.tuples(st.integers(-50, 50), st.integers(-50, 50)), min_size=1, max_size=40))
def test_count_voxels_matches_rowwise_unique(cells):
    vals = (np.array(cells, dtype=float) + 0.5) * 0.1
    assert count_voxels(vals, 0.1) == np.unique(np.array(cells), axis=0).shape[0]


def test_count_voxels_wide_span_fallback():
    vals = np.array([[0.0, 0.0, 0.0], [1e7, 1e7, 1e7], [1e7, 1e7, 1e7 + 0.5]])
    assert count_voxels(vals, 1e-3) == 3


def test_largest_ball():
    xg = SpatialGrid((0.0,), 0.1, (30,))
    fld = np.zeros(30)
    fld[5:20] = 1.0
    center, radius = largest_ball(fld, xg, 0.5, 0.1)
    assert center[0] == pytest.approx(xg.centers(0)[12])
    assert radius == pytest.approx((8 - 1.5) * 0.1 - 0.1)
    assert largest_ball(np.zeros(30), xg, 0.5, 0.1) == ((), 0.0)


def test_atomic_measure_has_no_interior():
    F, _, samples = cube_setup(replicates=5)
    allv = np.vstack([s.on_set(F) for s in samples])
    xg = SpatialGrid.covering(allv, 0.01, 0.04)
    est = local_time_field(samples, atom(F.points[3]), xg, 0.02)
    balls = interior_detect([est])
    assert len(balls) == 5 and all(b.radius == 0 for b in balls)


def test_cube_interior_detected():
    F, mu, samples = cube_setup(points=33, replicates=20, seed=4)
    allv = np.vstack([s.on_set(F) for s in samples])
    xg = SpatialGrid.covering(allv, 0.01, 0.03)
    est = local_time_field(samples, mu, xg, 0.02)
    balls = interior_detect([est])
    assert sum(b.radius > 0 for b in balls) >= 19
    with pytest.raises(ValueError):
        bad = localtime.OccupationEstimate(SpatialGrid((0.0,), 0.5, (3,)), np.ones((1, 3)), 0.1, mu, (0,))
        interior_detect([est, bad])


def test_merge_candidates():
    balls = [InteriorBall(0, 0, (0.0,), 1.0), InteriorBall(1, 0, (0.5,), 1.0),
             InteriorBall(2, 0, (5.0,), 0.2), InteriorBall(3, 0, (), 0.0)]
    cands, cov = merge_candidates(balls)
    assert len(cands) == 2
    for b in balls[:3]:
        assert any(b.contains(z) for z in cands)
    assert cov == 0.75
    assert merge_candidates([]) == ([], 0.0)
    assert "rotation" in localtime.detections_json(balls)
