"""Exact sampling of the Brownian sheet on product grids, and bridged sheets.

The one-dimensional kernel min(s, t) on sorted times t_1 < ... < t_n has
the lower-triangular factor L = tril(1) diag(sqrt(dt)), i.e. "scale the
increments, then cumulate". Applying that factor along every tensor axis
of an i.i.d. standard normal array gives a field with covariance
prod_k min(s_k, t_k) at every pair of grid points, in time proportional to
the number of grid points times N and without ever forming a dense
covariance matrix.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .gauss import sheet_cov_matrix
from .order import DiscreteSet, PartialOrderMask, leq_pi
from .rng import make_rng

MAX_BYTES = 2 * 1024**3


class GridTooLarge(MemoryError):
    def __init__(self, nbytes: int, limit: int):
        self.nbytes = nbytes
        self.limit = limit
        super().__init__(f"sample would need about {nbytes:,} bytes (limit {limit:,})")


@dataclass(frozen=True)
class GridSpec:
    """Product grid inside [lower, upper]^N.

    By default axis k holds ``points_per_axis[k]`` equally spaced values
    from ``lower`` to ``upper``. Explicit ``axes`` override that, which is
    how grids for Cantor-type sets are built.
    """

    lower: float
    upper: float
    points_per_axis: tuple
    axes: tuple | None = field(default=None, compare=False)

    def __post_init__(self):
        if not 0 < self.lower < self.upper:
            raise ValueError("need 0 < lower < upper")
        ppa = tuple(int(n) for n in self.points_per_axis)
        if not ppa or any(n < 1 for n in ppa):
            raise ValueError("points_per_axis must be positive")
        object.__setattr__(self, "points_per_axis", ppa)
        if self.axes is None:
            axes = tuple(_linspace(self.lower, self.upper, n) for n in ppa)
        else:
            axes = tuple(np.asarray(ax, dtype=float) for ax in self.axes)
            if tuple(len(ax) for ax in axes) != ppa:
                raise ValueError("axes lengths disagree with points_per_axis")
        for ax in axes:
            if np.any(np.diff(ax) <= 0):
                raise ValueError("axis coordinates must be strictly increasing")
            if ax[0] < self.lower - 1e-12 or ax[-1] > self.upper + 1e-12:
                raise ValueError("axis coordinates leave [lower, upper]")
            ax.setflags(write=False)
        object.__setattr__(self, "axes", axes)

    @classmethod
    def cube(cls, lower: float, upper: float, n: int, N: int) -> "GridSpec":
        return cls(lower, upper, (n,) * N)

    @classmethod
    def from_axes(cls, axes: Sequence[np.ndarray]) -> "GridSpec":
        axes = tuple(np.asarray(a, dtype=float) for a in axes)
        lo = min(float(a[0]) for a in axes)
        hi = max(float(a[-1]) for a in axes)
        if hi <= lo:
            hi = lo + 1.0
        return cls(lo, hi, tuple(len(a) for a in axes), axes)

    @classmethod
    def for_set(cls, F: DiscreteSet) -> "GridSpec":
        """Smallest product grid containing every point of F."""
        return cls.from_axes(F.axes())

    @property
    def N(self) -> int:
        return len(self.points_per_axis)

    @property
    def shape(self) -> tuple:
        return self.points_per_axis

    @property
    def size(self) -> int:
        return int(np.prod(self.points_per_axis))

    def points(self) -> np.ndarray:
        """All grid points, row-major in axis order, shape (size, N)."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def index_of(self, pts) -> np.ndarray:
        """Multi-indices of grid points; raises KeyError for off-grid points."""
        P = np.atleast_2d(np.asarray(pts, dtype=float))
        idx = np.empty(P.shape, dtype=np.int64)
        for k, ax in enumerate(self.axes):
            j = np.clip(np.searchsorted(ax, P[:, k]), 0, len(ax) - 1)
            jm = np.clip(j - 1, 0, len(ax) - 1)
            pick = np.where(np.abs(ax[jm] - P[:, k]) < np.abs(ax[j] - P[:, k]), jm, j)
            tol = 1e-9 * max(1.0, float(abs(ax[-1])))
            off = np.abs(ax[pick] - P[:, k]) > tol
            if np.any(off):
                bad = P[np.flatnonzero(off)[0]]
                raise KeyError(f"point {bad.tolist()} is not on the grid")
            idx[:, k] = pick
        return idx

    def flat_index(self, pts) -> np.ndarray:
        return np.ravel_multi_index(tuple(self.index_of(pts).T), self.shape)


def _linspace(lo: float, hi: float, n: int) -> np.ndarray:
    return np.array([lo]) if n == 1 else np.linspace(lo, hi, n)


@dataclass(frozen=True)
class FieldSample:
    """One realization on a grid; ``values`` has shape (d, *grid.shape)."""

    grid: GridSpec
    values: np.ndarray
    seed: int
    stream: int = 0

    def __post_init__(self):
        if self.values.shape[1:] != self.grid.shape:
            raise ValueError("values do not match the grid shape")
        self.values.setflags(write=False)

    @property
    def d(self) -> int:
        return self.values.shape[0]

    def at(self, pts) -> np.ndarray:
        """Field values at grid points, shape (m, d)."""
        flat = self.grid.flat_index(pts)
        return self.values.reshape(self.d, -1)[:, flat].T

    def on_set(self, F: DiscreteSet) -> np.ndarray:
        return self.at(F.points)


def increment_scales(axis: np.ndarray) -> np.ndarray:
    """sqrt of successive gaps, with the origin as the left end."""
    return np.sqrt(np.diff(np.concatenate([[0.0], axis])))


def sheet_from_noise(grid: GridSpec, noise: np.ndarray) -> np.ndarray:
    """Apply the per-axis min-kernel factor to ``noise`` of shape (d, *grid.shape)."""
    out = noise.astype(float, copy=True)
    for k, ax in enumerate(grid.axes):
        shape = [1] * out.ndim
        shape[k + 1] = len(ax)
        out *= increment_scales(ax).reshape(shape)
        np.cumsum(out, axis=k + 1, out=out)
    return out


def estimate_bytes(grid: GridSpec, d: int) -> int:
    # noise array plus the working copy
    return 2 * 8 * d * grid.size


def sample_sheet(grid: GridSpec, d: int, seed: int, stream: int = 0, max_bytes: int = MAX_BYTES) -> FieldSample:
    if d < 1:
        raise ValueError("d must be >= 1")
    nbytes = estimate_bytes(grid, d)
    if nbytes > max_bytes:
        raise GridTooLarge(nbytes, max_bytes)
    rng = make_rng(seed, stream)
    noise = rng.standard_normal((d, *grid.shape))
    return FieldSample(grid, sheet_from_noise(grid, noise), seed, stream)


def implied_covariance(grid: GridSpec) -> np.ndarray:
    """Covariance the sampler realizes: L L^T with L the sampler's map on unit noise."""
    n = grid.size
    basis = np.eye(n).reshape((n, *grid.shape))
    L = sheet_from_noise(grid, basis).reshape(n, n).T
    return L @ L.T


def sample_bm(times: np.ndarray, d: int, seed: int, stream: int = 0) -> np.ndarray:
    """Standard Brownian motion at sorted times, shape (d, len(times))."""
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) <= 0) or times[0] < 0:
        raise ValueError("times must be non-negative and strictly increasing")
    rng = make_rng(seed, stream)
    z = rng.standard_normal((d, times.size))
    return np.cumsum(z * increment_scales(times)[None, :], axis=1)


# ---------------------------------------------------------------------- bridges


def bridge_coefficient(s, t) -> float:
    """C_{s,t} = prod_j min(s_j, t_j) / s_j, with 0/0 read as 1."""
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    num = np.minimum(s, t)
    ratio = np.divide(num, s, out=np.ones_like(s), where=s != 0)
    return float(np.prod(ratio))


def bridge_coefficients(s, T: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    T = np.atleast_2d(T)
    num = np.minimum(T, s[None, :])
    ratio = np.divide(num, s[None, :], out=np.ones_like(num), where=s[None, :] != 0)
    return np.prod(ratio, axis=1)


@dataclass(frozen=True)
class BridgeSample:
    anchor: np.ndarray
    base: FieldSample
    values: np.ndarray


def bridge_sample(base: FieldSample, s) -> BridgeSample:
    """B_s(t) = B(t) - C_{s,t} B(s) on the base grid.

    An anchor with a zero coordinate is allowed (B vanishes there); any
    other anchor must be a grid point.
    """
    s = np.asarray(s, dtype=float)
    coef = bridge_coefficients(s, base.grid.points()).reshape(base.grid.shape)
    if np.any(s == 0):
        bs = np.zeros(base.d)
    else:
        bs = base.at(s)[0]
    vals = base.values - coef[None, ...] * bs.reshape((base.d,) + (1,) * base.grid.N)
    if np.all(s > 0):
        # exact zero at the anchor, not just to rounding
        idx = tuple(base.grid.index_of(s)[0])
        vals[(slice(None),) + idx] = 0.0
    return BridgeSample(s, base, vals)


def bridge_var(s, t) -> float:
    """Var B_s(t) = prod t - C_{s,t}^2 prod s."""
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    c = bridge_coefficient(s, t)
    return float(np.prod(t) - c * c * np.prod(s))


def bridge_increment_var(s, u, v) -> float:
    """E[(B_s(u) - B_s(v))^2] = Var(B(u) - B(v) | B(s))."""
    s = np.asarray(s, dtype=float)
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    w = np.minimum(u, v)
    inc = (np.prod(u) - np.prod(w)) + (np.prod(v) - np.prod(w))
    ps = np.prod(s)
    if ps == 0:
        return float(inc)
    diff = np.prod(np.minimum(u, s)) - np.prod(np.minimum(v, s))
    return float(max(inc - diff * diff / ps, 0.0))


def bridge_independence_cov(s, t, u, pi: PartialOrderMask) -> float:
    """E[B_s(t) B(u)]; only defined for u <=_pi s <=_pi t, where it must vanish."""
    if not (leq_pi(u, s, pi) and leq_pi(s, t, pi)):
        raise ValueError("need u <=_pi s <=_pi t")
    cov = sheet_cov_matrix(np.vstack([t, s]), np.asarray(u, dtype=float)[None, :])[:, 0]
    return float(cov[0] - bridge_coefficient(s, t) * cov[1])


# ---------------------------------------------------------------- corner paths


def corner_processes(base: FieldSample, a: float) -> list[tuple[np.ndarray, np.ndarray]]:
    """Axis paths X_k(r) = (B(<a> + r e_k) - B(<a>)) / a^{(N-1)/2}.

    Returns one ``(r, values)`` pair per axis with ``values`` of shape (d, len(r)).
    """
    grid = base.grid
    N = grid.N
    corner = np.full(N, float(a))
    b0 = base.at(corner)[0]
    out = []
    for k, ax in enumerate(grid.axes):
        r_axis = ax[ax >= a - 1e-12]
        pts = np.tile(corner, (r_axis.size, 1))
        pts[:, k] = r_axis
        vals = base.at(pts).T - b0[:, None]
        out.append((r_axis - a, vals / a ** ((N - 1) / 2)))
    return out


# --------------------------------------------------------------------- export

def write_binary(sample: FieldSample, path: str | Path) -> None:
    """Header of little-endian 64-bit ints (N, d, counts..., seed), then float64 arrays.

    The seed is stored unsigned; arrays follow per coordinate, row-major.
    """
    g = sample.grid
    hdr = [g.N, sample.d, *g.shape]
    buf = io.BytesIO()
    buf.write(struct.pack("<" + "q" * len(hdr) + "Q", *hdr, int(sample.seed)))
    buf.write(np.ascontiguousarray(sample.values, dtype="<f8").tobytes())
    Path(path).write_bytes(buf.getvalue())


def read_binary(path: str | Path) -> tuple[dict, np.ndarray]:
    raw = Path(path).read_bytes()
    N, d = struct.unpack_from("<qq", raw, 0)
    counts = struct.unpack_from("<" + "q" * N, raw, 16)
    (seed,) = struct.unpack_from("<Q", raw, 16 + 8 * N)
    off = 24 + 8 * N
    vals = np.frombuffer(raw, dtype="<f8", offset=off).reshape((d, *counts))
    return {"N": N, "d": d, "counts": list(counts), "seed": seed}, vals


def write_csv(sample: FieldSample, path: str | Path, max_points: int = 100_000) -> None:
    g = sample.grid
    if g.size > max_points:
        raise ValueError(f"CSV export is for small grids (<= {max_points} points)")
    pts = g.points()
    vals = sample.values.reshape(sample.d, -1).T
    head = ",".join([f"t{k + 1}" for k in range(g.N)] + [f"B{i + 1}" for i in range(sample.d)])
    body = np.hstack([pts, vals])
    np.savetxt(path, body, delimiter=",", header=head, comments="", fmt="%.17g")
