"""Riesz and f-energies of atomic measures, capacities and dimension proxies."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.spatial.distance import pdist, squareform

from .order import DiscreteSet
from .rng import make_rng

SUBLATTICE = 8


@dataclass(frozen=True)
class DiscreteMeasure:
    support: DiscreteSet
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).ravel()
        if w.size != len(self.support):
            raise ValueError("one weight per support point")
        if np.any(w < -1e-15):
            raise ValueError("weights must be non-negative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        w = np.clip(w, 0.0, None)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, F: DiscreteSet) -> "DiscreteMeasure":
        return cls(F, np.full(len(F), 1.0 / len(F)))

    def to_csv(self) -> str:
        cols = [f"t{k + 1}" for k in range(self.support.N)] + ["weight"]
        rows = [",".join(cols)]
        for p, w in zip(self.support.points, self.weights):
            rows.append(",".join(f"{x:.17g}" for x in (*p, w)))
        return "\n".join(rows) + "\n"


@dataclass(frozen=True)
class KernelSpec:
    """Kernel k(r) plus the rule for the diagonal of the energy matrix.

    ``kind`` is "riesz" (k(r) = r^-alpha) or "generic" (k = f, non-increasing).
    ``diagonal`` is "exclude" (drop i = j terms) or "cell_average" (use the
    mean of k(|x - y|) over x, y uniform in a cube of side ``cell_size``).
    """

    kind: str = "riesz"
    alpha: float | None = None
    f: Callable[[np.ndarray], np.ndarray] | None = field(default=None, compare=False)
    diagonal: str = "exclude"
    cell_size: float | None = None

    def __post_init__(self):
        if self.kind == "riesz":
            if self.alpha is None or not self.alpha > 0:
                raise ValueError("Riesz kernel needs alpha > 0")
        elif self.kind == "generic":
            if self.f is None:
                raise ValueError("generic kernel needs f")
            r = np.logspace(-6, 3, 40)
            vals = np.asarray(self.f(r), dtype=float)
            if not np.all(np.isfinite(vals)):
                raise ValueError("f must be finite on (0, inf)")
            if np.any(np.diff(vals) > 1e-12 * (1 + np.abs(vals[:-1]))):
                raise ValueError("f must be non-increasing")
        else:
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.diagonal not in ("exclude", "cell_average"):
            raise ValueError(f"unknown diagonal policy {self.diagonal!r}")
        if self.cell_size is not None and not self.cell_size > 0:
            raise ValueError("cell_size must be positive")

    @classmethod
    def riesz(cls, alpha: float, diagonal: str = "exclude", cell_size: float | None = None) -> "KernelSpec":
        return cls("riesz", alpha=alpha, diagonal=diagonal, cell_size=cell_size)

    @classmethod
    def generic(cls, f, diagonal: str = "exclude", cell_size: float | None = None) -> "KernelSpec":
        return cls("generic", f=f, diagonal=diagonal, cell_size=cell_size)

    def with_cell(self, cell: float) -> "KernelSpec":
        return KernelSpec(self.kind, self.alpha, self.f, "cell_average", cell)

    def __call__(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if self.kind == "riesz":
            return r ** (-self.alpha)
        return np.asarray(self.f(r), dtype=float)

    def label(self) -> str:
        return f"riesz({self.alpha:g})" if self.kind == "riesz" else "generic"


def _sublattice_self_energy(kernel: KernelSpec, cell: float, N: int, q: int = SUBLATTICE) -> float:
    g = (np.arange(q) + 0.5) / q * cell
    pts = np.stack([m.ravel() for m in np.meshgrid(*([g] * N), indexing="ij")], axis=1)
    vals = kernel(pdist(pts))
    # mean over ordered pairs of distinct sub-points
    return float(2 * vals.sum() / (pts.shape[0] * (pts.shape[0] - 1)))


def cell_self_energy(kernel: KernelSpec, cell: float, N: int) -> float:
    """Mean of k(|x - y|) over x, y independent and uniform in a cube of side ``cell``.

    The difference x - y has density prod_k (1 - |z_k|/c)/c on [-c, c]^N,
    which reduces the 2N-fold integral to a radial one for N <= 2. When
    the integral diverges (Riesz with alpha >= N) or N > 2, the mean over
    distinct pairs of an 8^N midpoint sub-lattice is used instead; that
    value grows like cell^-alpha and is finite.
    """
    if kernel.kind == "riesz" and kernel.alpha >= N or N > 2:
        return _sublattice_self_energy(kernel, cell, N)
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            if N == 1:
                val, _ = integrate.quad(lambda z: kernel(cell * z) * (1 - z), 0, 1, limit=200)
                return float(2 * val)

            def radial(phi):
                c, s = math.cos(phi), math.sin(phi)
                rmax = 1.0 / max(c, s)
                inner, _ = integrate.quad(
                    lambda r: kernel(cell * r) * r * (1 - r * c) * (1 - r * s), 0, rmax, limit=200
                )
                return inner

            half, _ = integrate.quad(radial, 0, math.pi / 4, limit=200)
            # symmetric about phi = pi/4; factor 4 from the four quadrants of z
            return float(4 * 2 * half)
        except integrate.IntegrationWarning:
            return _sublattice_self_energy(kernel, cell, N)


def kernel_matrix(F: DiscreteSet, kernel: KernelSpec) -> np.ndarray:
    """Energy matrix: off-diagonal k(|s_i - s_j|), diagonal per policy."""
    if len(F) == 1:
        K = np.zeros((1, 1))
    else:
        d = pdist(F.points)
        if np.any(d == 0):
            raise ValueError("coincident support points")
        K = squareform(kernel(d))
    if kernel.diagonal == "cell_average":
        cell = kernel.cell_size if kernel.cell_size is not None else F.scale()
        np.fill_diagonal(K, cell_self_energy(kernel, cell, F.N))
    else:
        np.fill_diagonal(K, 0.0)
    return K


def energy(mu: DiscreteMeasure, kernel: KernelSpec) -> float:
    K = kernel_matrix(mu.support, kernel)
    w = mu.weights
    return max(float(w @ K @ w), 0.0)


# --------------------------------------------------------------------- capacity


@dataclass(frozen=True)
class CapacityResult:
    capacity: float
    energy: float
    equilibrium: DiscreteMeasure
    gap: float
    iterations: int
    converged: bool
    diagonal_policy: str
    alpha: float | None = None

    def record(self) -> dict:
        return {
            "alpha": self.alpha,
            "size": len(self.equilibrium.support),
            "energy": self.energy,
            "capacity": self.capacity,
            "gap": self.gap,
            "iterations": self.iterations,
            "converged": self.converged,
            "diagonal_policy": self.diagonal_policy,
        }


def frank_wolfe_simplex(
    K: np.ndarray, tol: float = 1e-8, max_iters: int | None = None, w0: np.ndarray | None = None
) -> tuple[np.ndarray, float, float, int, bool]:
    """Minimize w^T K w over the probability simplex by away-step Frank-Wolfe.

    Returns ``(w, value, gap, iterations, converged)``; ``gap`` is the
    Frank-Wolfe duality gap of the returned point. Ties in vertex selection
    go to the lowest index.
    """
    m = K.shape[0]
    if max_iters is None:
        max_iters = 50 * m
    w = np.full(m, 1.0 / m) if w0 is None else np.asarray(w0, dtype=float).copy()
    Kw = K @ w
    diag = np.diag(K)
    it = 0
    converged = False
    gap = math.inf
    while True:
        val = float(w @ Kw)
        g = 2 * Kw
        s = int(np.argmin(g))
        gap = float(g @ w - g[s])
        if gap < tol * (1 + abs(val)):
            converged = True
            break
        if it >= max_iters:
            break
        it += 1
        active = np.flatnonzero(w > 0)
        v = int(active[np.argmax(g[active])])
        fw_gain = g @ w - g[s]
        away_gain = g[v] - g @ w
        if fw_gain >= away_gain or w[v] >= 1.0:
            # d = e_s - w
            Kd = K[:, s] - Kw
            gmax = 1.0
            curv = diag[s] - 2 * Kw[s] + val
            slope = Kw[s] - val
            step = _line_step(slope, curv, gmax)
            w *= 1 - step
            w[s] += step
        else:
            # d = w - e_v
            Kd = Kw - K[:, v]
            gmax = w[v] / (1 - w[v])
            curv = val - 2 * Kw[v] + diag[v]
            slope = val - Kw[v]
            step = _line_step(slope, curv, gmax)
            w *= 1 + step
            w[v] -= step
            if step == gmax:
                w[v] = 0.0
        Kw = Kw + step * Kd
        w = np.clip(w, 0.0, None)
        if it % 50 == 0:
            w /= w.sum()
            Kw = K @ w
    w /= w.sum()
    Kw = K @ w
    val = float(w @ Kw)
    if not converged:
        g = 2 * Kw
        gap = float(g @ w - g.min())
    return w, val, gap, it, converged


def _line_step(slope: float, curv: float, gmax: float) -> float:
    # f(w + g d) = f + 2 g slope + g^2 curv, with slope < 0 for a descent direction
    if curv <= 0:
        return gmax
    return float(min(max(-slope / curv, 0.0), gmax))


def capacity(
    F: DiscreteSet,
    kernel: KernelSpec,
    tol: float = 1e-8,
    max_iters: int | None = None,
    init: str = "uniform",
    seed: int = 0,
) -> CapacityResult:
    """Capacity 1 / min_w w^T K w over probability vectors on F.

    A zero minimal energy (one atom under the exclude policy) is reported
    as capacity ``inf``.
    """
    K = kernel_matrix(F, kernel)
    m = len(F)
    if init == "uniform":
        w0 = None
    elif init == "random":
        w0 = make_rng(seed).dirichlet(np.ones(m))
    else:
        raise ValueError(f"unknown init {init!r}")
    w, val, gap, iters, conv = frank_wolfe_simplex(K, tol, max_iters, w0)
    cap = math.inf if val <= 0 else 1.0 / val
    eq = DiscreteMeasure(F, w)
    return CapacityResult(cap, val, eq, gap, iters, conv, kernel.diagonal, kernel.alpha)


def f_capacity(F: DiscreteSet, f, tol: float = 1e-8, max_iters: int | None = None,
               diagonal: str = "cell_average", cell_size: float | None = None) -> float:
    return capacity(F, KernelSpec.generic(f, diagonal, cell_size), tol, max_iters).capacity


def frostman_constant(mu: DiscreteMeasure, exponent: float, candidates: np.ndarray | None = None) -> float:
    """max over probe points s of sum_{t != s} w_t |s - t|^-exponent.

    Probe points are the atoms plus optional ``candidates``; a candidate
    that coincides with an atom skips that atom.
    """
    P = mu.support.points
    probes = P if candidates is None else np.vstack([P, np.atleast_2d(candidates)])
    best = 0.0
    for start in range(0, probes.shape[0], 512):
        blk = probes[start:start + 512]
        dist = np.linalg.norm(blk[:, None, :] - P[None, :, :], axis=2)
        with np.errstate(divide="ignore"):
            k = np.where(dist > 0, dist ** (-exponent), 0.0)
        best = max(best, float((k @ mu.weights).max()))
    return best


# -------------------------------------------------------------------- dimension


def box_dimension(F: DiscreteSet, scales, origin: float | None = None) -> tuple[float, float]:
    """Least-squares slope of log N(scale) against log(1/scale).

    Boxes are the closed-open cubes of side ``scale`` aligned at ``origin``
    (default: F.lower when set, else the minimum coordinate). Returns
    ``(estimate, rms_residual)``.
    """
    sc = np.sort(np.asarray(scales, dtype=float))
    if sc.size < 3 or np.any(sc <= 0) or sc[-1] / sc[0] < 10 * (1 - 1e-9):
        raise ValueError("need >= 3 positive scales spanning at least one decade")
    o = origin if origin is not None else (F.lower if F.lower is not None else float(F.points.min()))
    counts = []
    for s in sc:
        # tiny shift keeps points that sit exactly on a box edge inside the lower box
        cells = np.floor((F.points - o) / s + 1e-9).astype(np.int64)
        counts.append(np.unique(cells, axis=0).shape[0])
    x = np.log(1 / sc)
    y = np.log(np.asarray(counts, dtype=float))
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    return float(coef[0]), float(np.sqrt(np.mean(resid**2)))


# -------------------------------------------------------------------- test sets


def cantor_intervals(level: int, ratio: float, lower: float = 0.0, upper: float = 1.0) -> np.ndarray:
    """Left ends and common length of the 2^level pieces of a symmetric Cantor set."""
    if not 0 < ratio < 0.5:
        raise ValueError("ratio must lie in (0, 1/2)")
    if level < 0:
        raise ValueError("level must be >= 0")
    left = np.array([float(lower)])
    length = float(upper - lower)
    for _ in range(level):
        new = length * ratio
        left = np.concatenate([left, left + length - new])
        length = new
    return np.sort(left), length


def cantor_points(level: int, ratio: float, lower: float, upper: float, per_piece: int = 1) -> tuple[np.ndarray, float]:
    """Midpoints of ``per_piece`` equal sub-cells of every level-``level`` piece."""
    left, length = cantor_intervals(level, ratio, lower, upper)
    sub = length / per_piece
    offs = (np.arange(per_piece) + 0.5) * sub
    return (left[:, None] + offs[None, :]).ravel(), sub


def make_test_set(
    kind: str,
    N: int = 1,
    lower: float = 1.0,
    upper: float = 2.0,
    points: int = 128,
    level: int = 5,
    ratio: float = 1 / 3,
    per_piece: int = 1,
) -> DiscreteSet:
    """Discretized test sets with known dimension.

    kinds: "interval" (N = 1 segment), "translated_cube" ([lower, upper]^N),
    "cantor" (N = 1 middle-ratio Cantor set), "cantor_product" (its N-fold product).
    Cube sets use ``points`` equally spaced values per axis and record the
    spacing as their cell size.
    """
    if not 0 < lower < upper:
        raise ValueError("need 0 < lower < upper")
    if kind in ("interval", "translated_cube"):
        n = int(points)
        if n < 1:
            raise ValueError("points must be >= 1")
        if kind == "interval":
            N = 1
        ax = np.linspace(lower, upper, n) if n > 1 else np.array([lower])
        cell = (upper - lower) / max(n - 1, 1)
    elif kind in ("cantor", "cantor_product"):
        if kind == "cantor":
            N = 1
        ax, cell = cantor_points(level, ratio, lower, upper, per_piece)
    else:
        raise ValueError(f"unknown set kind {kind!r}")
    mesh = np.meshgrid(*([ax] * N), indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    return DiscreteSet(pts, cell=cell, lower=lower, upper=upper)


def cantor_dimension(ratio: float) -> float:
    """Solution s of 2 ratio^s = 1."""
    return math.log(2) / math.log(1 / ratio)
