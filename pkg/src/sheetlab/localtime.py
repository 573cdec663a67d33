"""Occupation densities, local-time fields and interior-point detection.

The spatial norm is the max-norm, so the eps-box around a point is a
product of intervals and every box probability factors into 1-D normal
CDFs. Local-time fields are stored as exact cell averages of the
smoothed density: each atom spreads mass w uniformly over its eps-box and
each cell records the mass it receives divided by its volume. The total
mass on a grid that covers the padded range is then exactly one.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from .potential import DiscreteMeasure
from .sampler import FieldSample


@dataclass(frozen=True)
class SpatialGrid:
    """Cells of side h; cell i has center lower + (i + 1/2) h along each axis."""

    lower: tuple
    h: float
    shape: tuple

    @property
    def d(self) -> int:
        return len(self.shape)

    @classmethod
    def covering(cls, values: np.ndarray, h: float, pad: float) -> "SpatialGrid":
        """Cells aligned to multiples of h covering [min - pad, max + pad] per axis."""
        values = np.atleast_2d(values)
        lo = np.floor((values.min(axis=0) - pad) / h) - 1
        hi = np.ceil((values.max(axis=0) + pad) / h) + 1
        return cls(tuple(float(x) * h for x in lo), float(h), tuple(int(n) for n in hi - lo))

    def centers(self, axis: int) -> np.ndarray:
        return self.lower[axis] + (np.arange(self.shape[axis]) + 0.5) * self.h

    def center_points(self) -> np.ndarray:
        mesh = np.meshgrid(*[self.centers(k) for k in range(self.d)], indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "h": self.h, "shape": list(self.shape)}


@dataclass(frozen=True)
class OccupationEstimate:
    """Per-replicate local-time fields; ``values`` has shape (replicates, *x_grid.shape)."""

    x_grid: SpatialGrid
    values: np.ndarray
    epsilon: float
    mu: DiscreteMeasure
    seeds: tuple

    def mass(self) -> np.ndarray:
        axes = tuple(range(1, self.values.ndim))
        return self.values.sum(axis=axes) * self.x_grid.h ** self.x_grid.d

    def mu_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.mu.support.points).tobytes())
        h.update(np.ascontiguousarray(self.mu.weights).tobytes())
        return h.hexdigest()[:16]

    def to_csv(self, replicate: int = 0) -> str:
        pts = self.x_grid.center_points()
        vals = self.values[replicate].ravel()
        head = ",".join([f"x{k + 1}" for k in range(self.x_grid.d)] + ["value"])
        rows = [head] + [",".join(f"{v:.17g}" for v in (*p, val)) for p, val in zip(pts, vals)]
        return "\n".join(rows) + "\n"

    def sidecar(self, replicate: int = 0) -> dict:
        return {"epsilon": self.epsilon, "h": self.x_grid.h, "seed": self.seeds[replicate],
                "mu_hash": self.mu_hash()}


def _support_values(sample: FieldSample, mu: DiscreteMeasure) -> np.ndarray:
    try:
        return sample.on_set(mu.support)
    except KeyError as exc:
        raise ValueError(f"measure support is off the sample grid: {exc}") from None


def occupation_density(sample: FieldSample, mu: DiscreteMeasure, x, eps: float) -> float:
    """sum_s w_s 1{|B(s) - x|_max <= eps} / (2 eps)^d."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    vals = _support_values(sample, mu)
    hit = np.all(np.abs(vals - x[None, :]) <= eps, axis=1)
    return float(mu.weights[hit].sum() / (2 * eps) ** sample.d)


def _axis_masses(centers: np.ndarray, eps: float, lower: float, h: float, ncell: int):
    """Fraction of each atom's eps-interval falling in each cell: (start index, masses)."""
    width = int(math.ceil(2 * eps / h)) + 2
    start = np.floor((centers - eps - lower) / h).astype(np.int64)
    edges = lower + (start[:, None] + np.arange(width + 1)[None, :]) * h
    cdf = np.clip((edges - (centers[:, None] - eps)) / (2 * eps), 0.0, 1.0)
    masses = np.diff(cdf, axis=1)
    if np.any(start < 0) or np.any(start + width > ncell):
        raise ValueError("spatial grid does not cover the eps-padded range of the sample")
    return start, masses


def occupation_field(values: np.ndarray, weights: np.ndarray, x_grid: SpatialGrid, eps: float) -> np.ndarray:
    """Cell-averaged l^eps for atoms at ``values`` (m, d) with ``weights``."""
    m, d = values.shape
    if d != x_grid.d:
        raise ValueError("spatial grid dimension differs from the field dimension")
    starts, masses = [], []
    for k in range(d):
        st, ms = _axis_masses(values[:, k], eps, x_grid.lower[k], x_grid.h, x_grid.shape[k])
        starts.append(st)
        masses.append(ms)
    width = masses[0].shape[1]
    out = np.zeros(int(np.prod(x_grid.shape)))
    offs = np.arange(width)
    # build the d-fold outer product of per-axis masses, atom by atom in vectorized form
    contrib = weights[:, None] * masses[0]
    idx = starts[0][:, None] + offs[None, :]
    for k in range(1, d):
        contrib = (contrib[:, :, None] * masses[k][:, None, :]).reshape(m, -1)
        idx_k = starts[k][:, None] + offs[None, :]
        idx = (idx[:, :, None] * x_grid.shape[k] + idx_k[:, None, :]).reshape(m, -1)
    np.add.at(out, idx.ravel(), contrib.ravel())
    return out.reshape(x_grid.shape) / x_grid.h**d


def local_time_field(
    samples: Sequence[FieldSample], mu: DiscreteMeasure, x_grid: SpatialGrid, eps: float
) -> OccupationEstimate:
    if eps <= 0:
        raise ValueError("eps must be positive")
    fields = []
    for smp in samples:
        fields.append(occupation_field(_support_values(smp, mu), mu.weights, x_grid, eps))
    seeds = tuple(int(s.seed) ^ int(s.stream) for s in samples)
    return OccupationEstimate(x_grid, np.stack(fields), float(eps), mu, seeds)


def odf_check(
    sample: FieldSample, mu: DiscreteMeasure, f: Callable[[np.ndarray], np.ndarray], eps: float, h: float
) -> tuple[float, float]:
    """Both sides of the occupation-density formula for one realization.

    Returns (sum_s w_s f(B(s)), sum_cells f(x_cell) l(x_cell) h^d).
    """
    vals = _support_values(sample, mu)
    lhs = float(mu.weights @ np.asarray(f(vals), dtype=float))
    grid = SpatialGrid.covering(vals, h, eps + h)
    field = occupation_field(vals, mu.weights, grid, eps)
    fx = np.asarray(f(grid.center_points()), dtype=float)
    rhs = float(fx @ field.ravel() * h**sample.d)
    return lhs, rhs


# ---------------------------------------------------------------- exponents


@dataclass(frozen=True)
class TheoryExponents:
    N: int
    d: int
    dimF: float
    gamma: float
    eta_max: float
    tau: float


def theory_exponents(N: int, d: int, dimF: float) -> TheoryExponents:
    """Frostman exponent gamma, Holder ceiling eta_max and rotation index tau."""
    excess = dimF - d / 2
    if excess <= 0:
        raise ValueError(f"dim F = {dimF} does not exceed d/2 = {d / 2}")
    gamma = min(2 * dimF - d, 1.0) / 2
    eta_max = min(1.0, 2 / (N + 1) * excess)
    tau = excess / (2 * dimF + N * (d + 1) + 1)
    return TheoryExponents(N, d, float(dimF), gamma, eta_max, tau)


def holder_modulus(estimate: OccupationEstimate, replicate: int | None = None,
                   min_decades: float = 2.0) -> tuple[float, np.ndarray, np.ndarray]:
    """Log-log fit of the sup-modulus max |l(x + lag) - l(x)| against lag.

    Lags are dyadic multiples of the cell size along every axis. Returns
    (fitted exponent, lags, moduli), the moduli averaged over replicates
    unless one ``replicate`` is named.
    """
    vals = estimate.values if replicate is None else estimate.values[replicate:replicate + 1]
    n = min(estimate.x_grid.shape)
    lags_cells = 2 ** np.arange(int(math.floor(math.log2(max(n - 1, 1)))) + 1)
    lags_cells = lags_cells[lags_cells < n]
    if lags_cells.size < 2 or math.log10(lags_cells[-1] / lags_cells[0]) < min_decades - 1e-9:
        raise ValueError("spatial grid too small: need at least two decades of lags")
    mods = []
    for lag in lags_cells:
        best = np.zeros(vals.shape[0])
        for ax in range(1, vals.ndim):
            a = np.take(vals, np.arange(lag, vals.shape[ax]), axis=ax)
            b = np.take(vals, np.arange(0, vals.shape[ax] - lag), axis=ax)
            diff = np.abs(a - b).reshape(vals.shape[0], -1).max(axis=1)
            best = np.maximum(best, diff)
        mods.append(best.mean())
    mods = np.asarray(mods)
    lags = lags_cells * estimate.x_grid.h
    ok = mods > 0
    if ok.sum() < 2:
        return math.nan, lags, mods
    slope = np.polyfit(np.log(lags[ok]), np.log(mods[ok]), 1)[0]
    return float(slope), lags, mods


# -------------------------------------------------------------- image / interior


def image_measure(sample: FieldSample, F, voxel: float) -> float:
    """(number of distinct voxels hit by B(F)) * voxel^d."""
    vals = sample.on_set(F)
    return float(count_voxels(vals, voxel) * voxel**sample.d)


def count_voxels(vals: np.ndarray, voxel: float) -> int:
    """Number of distinct cubes floor(x / voxel) among the rows of ``vals``."""
    cells = np.floor(vals / voxel).astype(np.int64)
    cells -= cells.min(axis=0)
    span = cells.max(axis=0) + 1
    if float(np.prod(span.astype(float))) < 2**62:
        # one int64 key per row; a 1-D unique is far cheaper than a row-wise one
        keys = np.ravel_multi_index(tuple(cells.T), tuple(int(x) for x in span))
        return int(np.unique(keys).size)
    return int(np.unique(cells, axis=0).shape[0])


@dataclass(frozen=True)
class InteriorBall:
    rotation: int
    replicate: int
    center: tuple
    radius: float

    def contains(self, z) -> bool:
        if self.radius <= 0:
            return False
        return float(np.max(np.abs(np.asarray(z) - np.asarray(self.center)))) < self.radius

    def to_dict(self) -> dict:
        return {"rotation": self.rotation, "replicate": self.replicate,
                "center": list(self.center), "radius": self.radius}


def largest_ball(field: np.ndarray, grid: SpatialGrid, threshold: float, eps: float) -> tuple[tuple, float]:
    """Largest max-norm ball of cell centers on which ``field`` exceeds ``threshold``.

    The radius is shrunk by the smoothing radius eps and one cell, so the
    eps-box smear around a single atom never counts as an open set.
    """
    mask = field > threshold
    if not mask.any():
        return (), 0.0
    padded = np.pad(mask, 1, constant_values=False)
    # chessboard distance to the nearest cell not above threshold
    dist = ndimage.distance_transform_cdt(padded, metric="chessboard")[tuple(slice(1, -1) for _ in mask.shape)]
    flat = int(np.argmax(dist))
    idx = np.unravel_index(flat, mask.shape)
    center = tuple(float(grid.centers(k)[i]) for k, i in enumerate(idx))
    radius = (float(dist[idx]) - 1.5) * grid.h - eps
    return center, max(radius, 0.0)


def interior_detect(
    estimates: Sequence[OccupationEstimate], threshold: float | None = None, fraction: float = 0.1
) -> list[InteriorBall]:
    """One ball per (rotation, replicate); radius 0 marks a failed detection.

    With ``threshold=None`` each field is thresholded at ``fraction`` of its
    own maximum.
    """
    grids = {e.x_grid for e in estimates}
    if len(grids) > 1:
        raise ValueError("estimates must share one spatial grid")
    out = []
    for r, est in enumerate(estimates):
        for i, fld in enumerate(est.values):
            thr = fraction * float(fld.max()) if threshold is None else threshold
            center, radius = largest_ball(fld, est.x_grid, thr, est.epsilon)
            out.append(InteriorBall(r, i, center, radius))
    return out


def merge_candidates(balls: Sequence[InteriorBall]) -> tuple[list[tuple], float]:
    """Greedy finite list of points, each interior to some detected ball.

    Centers are added until every nonempty ball contains one of them.
    Returns the list and the coverage, the fraction of all balls (empty
    ones included) containing a listed point.
    """
    live = [b for b in balls if b.radius > 0]
    cands: list[tuple] = []
    pending = list(live)
    while pending:
        # pick the center covering the most uncovered balls; ties by order
        best, best_cov = None, -1
        for b in pending:
            cov = sum(o.contains(b.center) for o in pending)
            if cov > best_cov:
                best, best_cov = b.center, cov
        cands.append(best)
        pending = [o for o in pending if not o.contains(best)]
    covered = sum(any(b.contains(z) for z in cands) for b in balls)
    return cands, (covered / len(balls) if balls else 0.0)


def detections_json(balls: Sequence[InteriorBall]) -> str:
    return json.dumps([b.to_dict() for b in balls], indent=2)
