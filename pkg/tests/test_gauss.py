import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from scipy.stats import norm

from sheetlab import gauss
from sheetlab.gauss import (
    Combination,
    ConditioningError,
    SelfIntersectionSpec,
    bm_cond_var_case1,
    bm_cond_var_case2,
    cond_var,
    det_cov_chain,
    gaussian_shift_bound,
    general_field_integrand,
    holder_weight,
    increment_variance_bounds,
    incremental_variance,
    lnd_increment_lower_bound,
    lnd_lower_bound,
    normal_ball_prob,
    sheet_cov,
    sheet_cov_matrix,
    si_cond_var,
    si_cov,
    si_lnd_bound,
)


def det_ratio_cond_var(target_pts, coeffs, conds):
    """Independent oracle: Var(Y | C) = det Cov(Y, C) / det Cov(C)."""
    P = np.vstack([target_pts, conds])
    K = sheet_cov_matrix(P)
    m = len(target_pts)
    # covariance of (Y, X_C) with Y = coeffs . X_target
    T = np.zeros((1 + len(conds), m + len(conds)))
    T[0, :m] = coeffs
    T[1:, m:] = np.eye(len(conds))
    J = T @ K @ T.T
    return np.linalg.det(J) / np.linalg.det(J[1:, 1:])


def test_sheet_cov_examples():
    assert sheet_cov((1, 2), (2, 1)) == 1
    assert sheet_cov((1, 1), (1, 1)) == 1
    assert sheet_cov((0, 5), (3, 3)) == 0
    with pytest.raises(ValueError):
        sheet_cov((-1, 1), (1, 1))


@given(st.lists(st.floats(0, 5), min_size=3, max_size=3), st.lists(st.floats(0, 5), min_size=3, max_size=3),
       st.floats(0.1, 4), st.integers(0, 2))
def test_sheet_cov_symmetric_homogeneous(s, t, c, k):
    s, t = np.array(s), np.array(t)
    v = sheet_cov(s, t)
    assert v == sheet_cov(t, s) and v >= 0
    s2, t2 = s.copy(), t.copy()
    s2[k] *= c
    t2[k] *= c
    assert sheet_cov(s2, t2) == pytest.approx(c * v, rel=1e-12, abs=1e-300)


def test_incremental_variance_examples():
    assert incremental_variance([3], [1]) == 2
    assert incremental_variance((1, 1), (1, 2)) == 1
    assert incremental_variance((1.5, 2), (1.5, 2)) == 0


@given(st.lists(st.floats(0, 5), min_size=2, max_size=2), st.lists(st.floats(0, 5), min_size=2, max_size=2))
def test_incremental_variance_matches_covariance(u, v):
    direct = np.prod(u) + np.prod(v) - 2 * sheet_cov(u, v)
    assert incremental_variance(u, v) == pytest.approx(direct, abs=1e-12)
    assert incremental_variance(u, v) >= 0


def test_increment_bounds_examples():
    assert increment_variance_bounds((1.5, 1.2), (1.5, 1.2), 1, 2) == (0, 0)
    assert increment_variance_bounds([1], [2], 1, 2) == (1, 1)
    lo, hi = increment_variance_bounds((1, 1), (1, 2), 1, 2)
    assert lo == pytest.approx(1 / math.sqrt(2)) and hi == 4
    with pytest.raises(ValueError):
        increment_variance_bounds((0.5, 1), (1, 1), 1, 2)


@given(st.integers(1, 4), st.floats(0.2, 3), st.floats(1.05, 4), st.data())
def test_increment_bounds_bracket(N, a, ratio, data):
    b = a * ratio
    pt = st.lists(st.floats(a, b), min_size=N, max_size=N)
    u, v = data.draw(pt), data.draw(pt)
    lo, hi = increment_variance_bounds(u, v, a, b)
    var = incremental_variance(u, v)
    assert lo - gauss.bound_slack(lo) <= var <= hi + gauss.bound_slack(hi)


def test_cond_var_examples():
    assert cond_var([2.0], []) == 2
    assert cond_var([2.0], [[1.0]]) == pytest.approx(1.0, abs=1e-14)
    inc = Combination.increment([2.0], [1.0])
    assert cond_var(inc, [[0.5], [4.0]]) == pytest.approx(5 / 7, abs=1e-12)


def test_cond_var_errors():
    with pytest.raises(ConditioningError):
        cond_var([2.0], [[1.0], [1.0]])
    with pytest.raises(ConditioningError):
        cond_var([2.0], [[1.0], [1.0 + 1e-14]])
    with pytest.raises(ValueError):
        cond_var([0.0, 1.0], [[1.0, 1.0]])


def test_case1_value():
    # (0,1,2,3,4,6): 1*1/2 + 2*1/3 = 7/6; X(0) = 0 carries no information
    assert bm_cond_var_case1(0, 1, 2, 3, 4, 6) == pytest.approx(7 / 6)
    got = cond_var(Combination.increment([4.0], [1.0]), [[2.0], [3.0], [6.0]])
    assert got == pytest.approx(7 / 6, abs=1e-12)


def test_case_forms_degenerate_and_errors():
    # s close to s1 leaves only the second term
    assert bm_cond_var_case1(1, 1 + 1e-12, 2, 3, 4, 6) == pytest.approx(2 / 3, abs=1e-9)
    with pytest.raises(ValueError):
        bm_cond_var_case1(0, 1, 3, 2, 4, 6)
    with pytest.raises(ValueError):
        bm_cond_var_case2(1, 3, 2, 4)


@st.composite
def sorted_times(draw, n):
    xs = draw(st.lists(st.floats(0.05, 10), min_size=n, max_size=n, unique=True))
    xs = sorted(xs)
    assume(min(np.diff(xs)) > 1e-3)
    return xs


@given(sorted_times(6), st.booleans())
def test_case1_matches_schur(ts, tie):
    s1, s, s2, s3, t, s4 = ts
    if tie:
        s3 = s2
    exact = bm_cond_var_case1(s1, s, s2, s3, t, s4)
    conds = np.unique([s1, s2, s3, s4])[:, None]
    got = cond_var(Combination.increment([t], [s]), conds)
    assert got == pytest.approx(exact, rel=1e-10, abs=1e-10)


@given(sorted_times(4))
def test_case2_matches_schur(ts):
    s1, s, t, s2 = ts
    got = cond_var(Combination.increment([t], [s]), [[s1], [s2]])
    assert got == pytest.approx(bm_cond_var_case2(s1, s, t, s2), rel=1e-10, abs=1e-10)


@given(st.integers(1, 3), st.integers(1, 4), st.data())
def test_cond_var_matches_determinant_ratio(N, n, data):
    pt = st.lists(st.floats(0.5, 3), min_size=N, max_size=N)
    conds = np.array(data.draw(st.lists(pt, min_size=n, max_size=n)))
    u, v = np.array(data.draw(pt)), np.array(data.draw(pt))
    assume(np.unique(conds, axis=0).shape[0] == n)
    try:
        got = cond_var(Combination.increment(u, v), conds)
    except ConditioningError:
        assume(False)
    want = det_ratio_cond_var(np.vstack([u, v]), np.array([1.0, -1.0]), conds)
    assert got == pytest.approx(max(want, 0.0), abs=1e-7 * (1 + np.prod(u) + np.prod(v)))


@given(st.integers(1, 3), st.integers(1, 4), st.data())
def test_conditioning_monotone(N, n, data):
    pt = st.lists(st.floats(0.5, 3), min_size=N, max_size=N)
    conds = np.array(data.draw(st.lists(pt, min_size=n + 1, max_size=n + 1)))
    u = np.array(data.draw(pt))
    assume(np.unique(conds, axis=0).shape[0] == n + 1)
    try:
        more = cond_var(u, conds)
        less = cond_var(u, conds[:n])
    except ConditioningError:
        assume(False)
    assert more <= less + gauss.bound_slack(less)


def test_lnd_examples():
    assert lnd_lower_bound([1.0, 2.0], [[1.0, 2.0], [3, 3]], 1) == 0
    assert lnd_lower_bound([2.0], [[1.0]], 1) == 0.5
    assert cond_var([2.0], [[1.0]]) >= 0.5
    T = [[1.0, 1.0], [2.0, 2.0]]
    assert lnd_lower_bound([1.5, 1.5], T, 1) == 0.5
    # determinant ratio by hand: (35/16) / 3
    assert cond_var([1.5, 1.5], T) == pytest.approx(35 / 48, abs=1e-12)
    assert lnd_increment_lower_bound([2.0], [2.0], [[1.0]], 1) == 0
    assert lnd_increment_lower_bound([2.0], [3.0], [[1.0], [4.0]], 1) == 0.5
    exact = cond_var(Combination.increment([3.0], [2.0]), [[1.0], [4.0]])
    assert exact == pytest.approx(bm_cond_var_case2(1, 2, 3, 4)) and exact == pytest.approx(2 / 3)
    with pytest.raises(ValueError):
        lnd_lower_bound([0.5], [[1.0]], 1)
    with pytest.raises(ValueError):
        lnd_increment_lower_bound([2.0], [3.0], [], 1)


@st.composite
def lnd_config(draw):
    N = draw(st.integers(1, 3))
    n = draw(st.integers(1, 5))
    a = draw(st.sampled_from([0.5, 1.0, 2.0]))
    pt = st.lists(st.floats(a, 2 * a), min_size=N, max_size=N)
    T = np.array(draw(st.lists(pt, min_size=n, max_size=n)))
    return a, np.array(draw(pt)), np.array(draw(pt)), T


@given(lnd_config())
def test_lnd_bounds_hold_on_doubling_box(cfg):
    a, u, v, T = cfg
    assume(np.unique(T, axis=0).shape[0] == len(T))
    try:
        pt = cond_var(u, T)
        inc = cond_var(Combination.increment(u, v), T)
    except ConditioningError:
        assume(False)
    lb = lnd_lower_bound(u, T, a)
    assert pt >= lb - gauss.bound_slack(lb)
    lb2 = lnd_increment_lower_bound(u, v, T, a)
    assert inc >= lb2 - gauss.bound_slack(lb2)


def test_lnd_bound_needs_bounded_spread():
    # far from the corner the sum of distances outgrows the true variance
    assert cond_var([1.0], [[10.0]]) == pytest.approx(0.9)
    assert lnd_lower_bound([1.0], [[10.0]], 1) == 4.5


def test_det_chain_examples():
    assert det_cov_chain([[1.5, 2.0]]) == pytest.approx(3.0)
    assert det_cov_chain([[1.0], [2.0]]) == pytest.approx(1.0)
    with pytest.raises(ConditioningError):
        det_cov_chain([[1.0], [1.0]])


@given(st.integers(1, 3), st.integers(1, 6), st.data())
def test_det_chain_matches_determinant_and_pd(N, n, data):
    pt = st.lists(st.floats(0.5, 3), min_size=N, max_size=N)
    P = np.array(data.draw(st.lists(pt, min_size=n, max_size=n)))
    assume(np.unique(P, axis=0).shape[0] == n)
    K = sheet_cov_matrix(P)
    ev = np.linalg.eigvalsh(K)
    assume(ev[-1] / max(ev[0], 1e-300) < 1e8)
    assert ev[0] > 1e-12 * np.trace(K)
    assert det_cov_chain(P) == pytest.approx(np.linalg.det(K), rel=1e-8)


def test_si_examples():
    spec = SelfIntersectionSpec((1, 1), ((1, 2), (3, 4)))
    assert si_cov(spec, (1, 3), (2, 4)) == 7
    neg = SelfIntersectionSpec((1, -1), ((0.5, 1.5), (1.75, 2.5)))
    assert si_cov(neg, (1, 2), (1, 2)) == 1
    one = SelfIntersectionSpec((3,), ((1, 2),))
    assert si_cov(one, (1.5,), (1.5,)) == pytest.approx(9 * 1.5)
    assert si_lnd_bound(spec, (1.5, 3.5), [(1.5, 3.5)]) == 0
    assert si_lnd_bound(spec, (1.5, 3.5), [(1, 3)]) == 0.25
    with pytest.raises(ValueError):
        si_cov(spec, (2.5, 3), (1, 3))
    with pytest.raises(ValueError):
        SelfIntersectionSpec((1, 1), ((1, 3), (2, 4)))
    with pytest.raises(ValueError):
        SelfIntersectionSpec((1, 0), ((1, 2), (3, 4)))


@given(st.integers(1, 5), st.data())
def test_si_bound_holds(n, data):
    spec = SelfIntersectionSpec((1, 1), ((1, 2), (3, 4)))
    pt = st.tuples(st.floats(1, 2), st.floats(3, 4))
    T = np.array(data.draw(st.lists(pt, min_size=n, max_size=n)))
    u = np.array(data.draw(pt))
    assume(np.unique(T, axis=0).shape[0] == n)
    try:
        lhs = si_cond_var(spec, u, T)
    except ConditioningError:
        assume(False)
    rhs = si_lnd_bound(spec, u, T)
    assert lhs >= rhs - gauss.bound_slack(rhs)


def test_normal_ball_prob():
    assert normal_ball_prob(1.0, 1.0) == pytest.approx(norm.cdf(1) - norm.cdf(-1), abs=1e-15)
    assert normal_ball_prob(2.0, 0.5, 1.0) == pytest.approx(norm.cdf(0.75) - norm.cdf(0.25), abs=1e-15)
    assert normal_ball_prob(0.0, 0.5, 0.2) == 1.0


def test_shift_bound_examples():
    b = gaussian_shift_bound(1, 1, 1, 0, 0.5)
    assert b == pytest.approx(math.exp(-1.5) * normal_ball_prob(1, 0.5))
    assert b <= normal_ball_prob(1, 0.5)
    b = gaussian_shift_bound(1, 1, 1, 1, 0.5)
    assert b == pytest.approx(math.exp(-1.5) * (2 * norm.cdf(0.5) - 1))
    assert norm.cdf(1.5) - norm.cdf(0.5) >= b
    b = gaussian_shift_bound(1, 1, 1, 0.5, 2)
    assert b == pytest.approx(math.sqrt(2 / math.pi) * math.exp(-2))
    assert normal_ball_prob(1, 2, 0.5) >= b
    with pytest.raises(ValueError):
        gaussian_shift_bound(1, 1, 1, 2, 0.5)


@given(st.floats(0.05, 20), st.floats(0.05, 3), st.floats(0.05, 3), st.floats(-1, 1), st.floats(1e-3, 10))
def test_shift_bound_holds(sigma, alpha, beta, frac, eps_rel):
    x = frac * alpha * sigma
    eps = eps_rel * sigma
    b = gaussian_shift_bound(sigma, alpha, beta, x, eps)
    assert normal_ball_prob(sigma, eps, x) >= b - gauss.bound_slack(b)


def test_general_field_integrand():
    assert general_field_integrand([1, 1], 1, 0.3, 3) == pytest.approx(1.0)
    assert general_field_integrand([4], 4, 0.5, 2) == pytest.approx(0.125)
    pts = np.array([[1.0, 1.5], [1.7, 1.2], [1.9, 1.9]])
    cvs = [cond_var(pts[j], pts[:j]) for j in range(3)]
    val = general_field_integrand(cvs, det_cov_chain(pts), 0.5, 1)
    assert math.isfinite(val) and val > 0
    with pytest.raises(ValueError):
        general_field_integrand([0.0], 1, 0.5, 1)
    with pytest.raises(ValueError):
        general_field_integrand([1.0], 1, 1.5, 1)


def test_holder_weight():
    assert holder_weight(0.25, 0.5) == 0.5
    assert holder_weight(-4, 0.5) == 1.0
    assert holder_weight(0, 0.5) == 0.0
