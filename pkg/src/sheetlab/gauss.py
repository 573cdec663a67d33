"""Second-order structure of the sheet and its relatives.

Conditional variances are Schur complements of small covariance matrices.
Everything here concerns one coordinate process; the d coordinates of the
sheet are independent copies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import linalg
from scipy.special import ndtr

COND_LIMIT = 1e12


class ConditioningError(ValueError):
    """Conditioning set is singular or too ill-conditioned to trust."""


def bound_slack(value: float) -> float:
    """One-sided rounding allowance used by every inequality check."""
    return 1e-10 * (1.0 + abs(value))


def _points(pts) -> np.ndarray:
    arr = np.asarray(pts, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    return arr


def _check_nonneg(*arrs):
    for a in arrs:
        if np.any(np.asarray(a) < 0):
            raise ValueError("sheet parameters must be non-negative")


def sheet_cov(s, t) -> float:
    """E[B_1(s) B_1(t)] = prod_k min(s_k, t_k)."""
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    _check_nonneg(s, t)
    return float(np.prod(np.minimum(s, t)))


def sheet_cov_matrix(P, Q=None) -> np.ndarray:
    """Matrix of sheet covariances between rows of P and rows of Q."""
    P = _points(P)
    Q = P if Q is None else _points(Q)
    _check_nonneg(P, Q)
    return np.prod(np.minimum(P[:, None, :], Q[None, :, :]), axis=2)


def incremental_variance(u, v) -> float:
    """E[(B(u) - B(v))^2]."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    _check_nonneg(u, v)
    w = np.minimum(u, v)
    # sigma(u, u^v) + sigma(v, u^v); each term is >= 0, so no cancellation below 0
    return float((np.prod(u) - np.prod(w)) + (np.prod(v) - np.prod(w)))


def _in_box(p: np.ndarray, a: float, b: float) -> bool:
    return bool(np.all(p >= a) and np.all(p <= b))


def increment_variance_bounds(u, v, a: float, b: float) -> tuple[float, float]:
    """Two-sided bracket for the incremental variance on [a, b]^N."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if not 0 < a < b:
        raise ValueError("need 0 < a < b")
    if not (_in_box(u, a, b) and _in_box(v, a, b)):
        raise ValueError(f"points must lie in [{a}, {b}]^N")
    N = u.size
    dist = float(np.linalg.norm(u - v))
    return a ** (N - 1) * dist / math.sqrt(N), N * b ** (N - 1) * dist


# ------------------------------------------------------------------ conditioning


@dataclass(frozen=True)
class Combination:
    """The Gaussian variable sum_i coeffs[i] * G(points[i])."""

    points: np.ndarray
    coeffs: np.ndarray

    @classmethod
    def of(cls, target) -> "Combination":
        if isinstance(target, Combination):
            return target
        return cls(_points(target), np.ones(1))

    @classmethod
    def increment(cls, u, v) -> "Combination":
        """G(u) - G(v)."""
        return cls(_points([u, v]), np.array([1.0, -1.0]))


def schur_cond_var(var_t: float, cross: np.ndarray, Kcc: np.ndarray) -> float:
    """var_t - cross^T Kcc^{-1} cross, with a rank guard on Kcc."""
    if Kcc.shape[0] == 0:
        return max(float(var_t), 0.0)
    # eigenvalues double as the condition-number estimate for a symmetric matrix
    ev = np.linalg.eigvalsh(Kcc)
    if ev[0] <= 0:
        raise ConditioningError("conditioning covariance is singular (duplicate or degenerate points)")
    cond = ev[-1] / ev[0]
    if cond > COND_LIMIT:
        raise ConditioningError(
            f"conditioning covariance has condition number {cond:.3g} > {COND_LIMIT:.0e}; "
            "coarsen the grid or drop near-duplicate conditioners"
        )
    c, low = linalg.cho_factor(Kcc, lower=True)
    sol = linalg.cho_solve((c, low), cross)
    out = float(var_t - cross @ sol)
    return max(out, 0.0)


Kernel = Callable[[np.ndarray, np.ndarray], np.ndarray]


def cond_var(target, conditioners, kernel: Kernel = sheet_cov_matrix, positive: bool = True) -> float:
    """Var(target | G at conditioners) for the centered field with covariance ``kernel``.

    ``target`` is a point or a :class:`Combination`. With the default
    sheet kernel all points must lie in (0, inf)^N.
    """
    tgt = Combination.of(target)
    C = _points(conditioners) if len(conditioners) else np.empty((0, tgt.points.shape[1]))
    if positive:
        if np.any(tgt.points <= 0) or np.any(C <= 0):
            raise ValueError("conditional variances need points in (0, inf)^N")
    if C.shape[0] and np.unique(C, axis=0).shape[0] != C.shape[0]:
        raise ConditioningError("duplicate conditioning points")
    var_t = float(tgt.coeffs @ kernel(tgt.points, tgt.points) @ tgt.coeffs)
    if C.shape[0] == 0:
        return max(var_t, 0.0)
    cross = kernel(C, tgt.points) @ tgt.coeffs
    return schur_cond_var(var_t, cross, kernel(C, C))


def bm_cond_var_case1(s1, s, s2, s3, t, s4) -> float:
    """Var(X(t) - X(s) | X(s1), X(s2), X(s3), X(s4)) when s1 < s < s2 <= s3 < t < s4."""
    if not (s1 < s < s2 <= s3 < t < s4):
        raise ValueError("need s1 < s < s2 <= s3 < t < s4")
    return (s2 - s) * (s - s1) / (s2 - s1) + (s4 - t) * (t - s3) / (s4 - s3)


def bm_cond_var_case2(s1, s, t, s2) -> float:
    """Var(X(t) - X(s) | X(s1), X(s2)) when s1 < s < t < s2."""
    if not (s1 < s < t < s2):
        raise ValueError("need s1 < s < t < s2")
    return (t - s) * (s2 - s1 - t + s) / (s2 - s1)


def _corner(points_list, a):
    allpts = np.vstack([_points(p) for p in points_list if len(p)])
    if a is None:
        # the corner must sit below every input; this weakens the bound when scales differ
        a = float(allpts.min())
    if a <= 0:
        raise ValueError("corner a must be positive")
    if np.any(allpts < a):
        raise ValueError(f"point below the corner <{a}>")
    return a


def lnd_lower_bound(u, conditioners, a: float | None = None) -> float:
    """(a^{N-1}/2) sum_k min_j |u_k - t^j_k|."""
    u = np.asarray(u, dtype=float)
    T = _points(conditioners)
    if T.shape[0] == 0:
        raise ValueError("need at least one conditioner")
    a = _corner([u, T], a)
    N = u.size
    near = np.abs(u[None, :] - T).min(axis=0)
    return a ** (N - 1) / 2 * float(near.sum())


def lnd_increment_lower_bound(u, v, conditioners, a: float | None = None) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    T = _points(conditioners)
    if T.shape[0] == 0:
        raise ValueError("need at least one conditioner")
    a = _corner([u, v, T], a)
    N = u.size
    du = np.abs(u[None, :] - T).min(axis=0)
    dv = np.abs(v[None, :] - T).min(axis=0)
    return a ** (N - 1) / 2 * float(np.minimum(du + dv, np.abs(u - v)).sum())


def det_cov_chain(points, kernel: Kernel = sheet_cov_matrix) -> float:
    """det Cov(Z_1..Z_n) as Var(Z_1) * prod_j Var(Z_j | Z_1..Z_{j-1})."""
    P = _points(points)
    if np.unique(P, axis=0).shape[0] != P.shape[0]:
        raise ConditioningError("duplicate points")
    out = 1.0
    for j in range(P.shape[0]):
        out *= cond_var(P[j], P[:j], kernel=kernel)
    return out


# ------------------------------------------------------------ self-intersection


@dataclass(frozen=True)
class SelfIntersectionSpec:
    """S(t) = sum_j r_j X(t_j) with t_j restricted to the block [a_j, b_j]."""

    weights: tuple
    blocks: tuple

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights)
        blk = tuple((float(lo), float(hi)) for lo, hi in self.blocks)
        if len(w) != len(blk) or not w:
            raise ValueError("need one weight per block")
        if any(x == 0 for x in w):
            raise ValueError("weights must be nonzero")
        edges = [e for lo_hi in blk for e in lo_hi]
        if edges[0] <= 0 or any(x >= y for x, y in zip(edges, edges[1:])):
            raise ValueError("blocks must satisfy 0 < a_1 < b_1 < a_2 < ... < b_N")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "blocks", blk)

    @property
    def N(self) -> int:
        return len(self.weights)

    def well_separated(self) -> bool:
        """Every block width is at most every gap between consecutive blocks."""
        widths = [hi - lo for lo, hi in self.blocks]
        gaps = [self.blocks[j + 1][0] - self.blocks[j][1] for j in range(self.N - 1)]
        return not gaps or max(widths) <= min(gaps)

    def check(self, P: np.ndarray) -> None:
        for k, (lo, hi) in enumerate(self.blocks):
            if np.any(P[:, k] < lo) or np.any(P[:, k] > hi):
                raise ValueError(f"coordinate {k + 1} outside its block [{lo}, {hi}]")

    def cov_matrix(self, P, Q=None) -> np.ndarray:
        P = _points(P)
        Q = P if Q is None else _points(Q)
        self.check(P)
        self.check(Q)
        r = np.asarray(self.weights)
        m = np.minimum(P[:, None, :, None], Q[None, :, None, :])
        return np.einsum("j,k,abjk->ab", r, r, m)


def si_cov(spec: SelfIntersectionSpec, s, t) -> float:
    """Cov(S_1(s), S_1(t)) = sum_{j,k} r_j r_k min(s_j, t_k)."""
    return float(spec.cov_matrix(s, t)[0, 0])


def si_cond_var(spec: SelfIntersectionSpec, u, conditioners) -> float:
    return cond_var(u, conditioners, kernel=spec.cov_matrix)


def si_lnd_bound(spec: SelfIntersectionSpec, u, conditioners) -> float:
    """(min_k r_k^2 / 2N) sum_k min_j |u_k - t^j_k|."""
    u = np.asarray(u, dtype=float)
    T = _points(conditioners)
    spec.check(u[None, :])
    spec.check(T)
    r2 = min(x * x for x in spec.weights)
    near = np.abs(u[None, :] - T).min(axis=0)
    return r2 / (2 * spec.N) * float(near.sum())


# ------------------------------------------------------------------ 1-D Gaussians


def normal_ball_prob(sigma: float, eps: float, shift: float = 0.0) -> float:
    """P{|Y - shift| <= eps} for Y ~ N(0, sigma^2)."""
    if sigma == 0:
        return float(abs(shift) <= eps)
    return float(ndtr((shift + eps) / sigma) - ndtr((shift - eps) / sigma))


def gaussian_shift_bound(sigma: float, alpha: float, beta: float, x: float, eps: float) -> float:
    """Lower bound on P{|Y - x| <= eps} for Y ~ N(0, sigma^2) and |x| <= alpha sigma.

    In the wide-window branch the exponent is -(alpha + beta)^2 / 2, which is
    what the change of variables w = z / sigma actually yields.
    """
    if sigma <= 0 or alpha <= 0 or beta <= 0:
        raise ValueError("sigma, alpha, beta must be positive")
    if abs(x) > alpha * sigma:
        raise ValueError("need |x| <= alpha * sigma")
    if eps <= beta * sigma:
        return math.exp(-0.5 * alpha**2 - alpha * beta) * normal_ball_prob(sigma, eps)
    return math.sqrt(2 / math.pi) * beta * math.exp(-((alpha + beta) ** 2) / 2)


def general_field_integrand(cond_vars: Sequence[float], detcov: float, gamma: float, d: int) -> float:
    """prod_j cond_var_j^{-gamma} / detcov^{d/2}."""
    cv = np.asarray(cond_vars, dtype=float)
    if np.any(cv <= 0) or detcov <= 0:
        raise ValueError("conditional variances and the determinant must be positive")
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    return float(np.exp(-gamma * np.log(cv).sum() - d / 2 * math.log(detcov)))


def holder_weight(u: float, gamma: float) -> float:
    """min(1, |u|^gamma)."""
    return min(1.0, abs(u) ** gamma)
