"""Order structure of R^N: the 2^N partial orders, meets, point sets and rotations."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .rng import make_rng


class DimensionMismatch(ValueError):
    pass


class RotationLeavesOrthant(ValueError):
    """Raised when a rotated point has a negative coordinate."""

    def __init__(self, point: np.ndarray, source: np.ndarray):
        self.point = np.asarray(point)
        self.source = np.asarray(source)
        super().__init__(
            f"rotation maps {self.source.tolist()} to {self.point.tolist()}, outside R^N_+"
        )


def as_point(p, nonneg: bool = True) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(p, dtype=float))
    if arr.ndim != 1:
        raise ValueError(f"a point must be one-dimensional, got shape {arr.shape}")
    if nonneg and np.any(arr < 0):
        raise ValueError(f"point {arr.tolist()} has a negative coordinate")
    return arr


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if a.shape != b.shape:
        raise DimensionMismatch(f"points of dimension {a.shape} and {b.shape}")
    return a, b


@dataclass(frozen=True)
class PartialOrderMask:
    """A subset pi of {1..N}; axes in pi are ordered by <=, the others by >=.

    Members are stored 1-based, as in the usual notation.
    """

    members: frozenset
    N: int

    def __post_init__(self):
        object.__setattr__(self, "members", frozenset(int(i) for i in self.members))
        if any(i < 1 or i > self.N for i in self.members):
            raise ValueError(f"members {sorted(self.members)} not within 1..{self.N}")

    @classmethod
    def full(cls, N: int) -> "PartialOrderMask":
        return cls(frozenset(range(1, N + 1)), N)

    @classmethod
    def all_orders(cls, N: int) -> list["PartialOrderMask"]:
        out = []
        for bits in range(2**N):
            out.append(cls(frozenset(i + 1 for i in range(N) if bits >> i & 1), N))
        return out

    def indicator(self) -> np.ndarray:
        """Boolean array, True on axes in pi (0-based positions)."""
        ind = np.zeros(self.N, dtype=bool)
        for i in self.members:
            ind[i - 1] = True
        return ind

    def __repr__(self) -> str:
        return f"PartialOrderMask({sorted(self.members)}, N={self.N})"


def _mask(pi, N: int) -> np.ndarray:
    if isinstance(pi, PartialOrderMask):
        if pi.N != N:
            raise DimensionMismatch(f"order on N={pi.N} used with points of dimension {N}")
        return pi.indicator()
    return PartialOrderMask(frozenset(pi), N).indicator()


def leq_pi(a, b, pi) -> bool:
    """``a <=_pi b``: a_i <= b_i on pi and a_i >= b_i off pi."""
    a, b = _pair(a, b)
    m = _mask(pi, a.size)
    return bool(np.all(np.where(m, a <= b, a >= b)))


def find_pi(a, b) -> PartialOrderMask:
    """The order pi(a, b) = {i : a_i <= b_i}; ties count as members."""
    a, b = _pair(a, b)
    return PartialOrderMask(frozenset(int(i) + 1 for i in np.flatnonzero(a <= b)), a.size)


def meet_pi(a, b, pi) -> np.ndarray:
    """The pi-meet: the point whose pi-shadow is the intersection of both shadows."""
    a, b = _pair(a, b)
    m = _mask(pi, a.size)
    return np.where(m, np.minimum(a, b), np.maximum(a, b))


@dataclass(frozen=True)
class DiscreteSet:
    """A finite set of distinct points in R^N_+.

    ``cell`` is the side length of the cube each point stands for; it is
    the discretization scale used by kernels with a cell-averaged diagonal.
    """

    points: np.ndarray
    cell: float | None = None
    lower: float | None = None
    upper: float | None = None

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError("a DiscreteSet needs at least one point")
        if np.any(pts < 0):
            raise ValueError("points must lie in R^N_+")
        if np.unique(pts, axis=0).shape[0] != pts.shape[0]:
            raise ValueError("points of a DiscreteSet must be pairwise distinct")
        if self.lower is not None and self.upper is not None:
            tol = 1e-12 * max(1.0, abs(self.upper))
            if np.any(pts < self.lower - tol) or np.any(pts > self.upper + tol):
                raise ValueError(f"points leave [{self.lower}, {self.upper}]^N")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def N(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]

    def axes(self) -> list[np.ndarray]:
        """Sorted distinct coordinate values along each axis."""
        return [np.unique(self.points[:, k]) for k in range(self.N)]

    def scale(self) -> float:
        """``cell`` if set, otherwise the smallest nonzero nearest-neighbour gap."""
        if self.cell is not None:
            return float(self.cell)
        if len(self) == 1:
            return 1.0
        from scipy.spatial import cKDTree

        dist, _ = cKDTree(self.points).query(self.points, k=2)
        return float(dist[:, 1].min())


@dataclass(frozen=True)
class RotationMatrix:
    entries: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.entries, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("rotation must be a square matrix")
        if not np.allclose(m.T @ m, np.eye(m.shape[0]), atol=1e-10, rtol=0):
            raise ValueError("matrix is not orthogonal to 1e-10")
        if abs(np.linalg.det(m) - 1.0) > 1e-10:
            raise ValueError("rotation must have determinant +1")
        m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)

    @classmethod
    def identity(cls, N: int) -> "RotationMatrix":
        return cls(np.eye(N))

    @classmethod
    def planar(cls, angle: float) -> "RotationMatrix":
        c, s = math.cos(angle), math.sin(angle)
        return cls(np.array([[c, -s], [s, c]]))

    def to_json(self) -> str:
        return json.dumps(self.entries.tolist())

    @classmethod
    def from_json(cls, text: str) -> "RotationMatrix":
        return cls(np.array(json.loads(text), dtype=float))


def apply_rotation(theta: RotationMatrix, F: DiscreteSet, tol: float = 1e-12) -> DiscreteSet:
    """Return theta F, refusing rotations that push a point out of R^N_+."""
    img = F.points @ theta.entries.T
    bad = np.flatnonzero(np.any(img < -tol, axis=1))
    if bad.size:
        i = bad[0]
        raise RotationLeavesOrthant(img[i], F.points[i])
    img = np.maximum(img, 0.0)
    return DiscreteSet(img, cell=F.cell)


def _random_rotation(N: int, rng: np.random.Generator) -> np.ndarray:
    if N == 1:
        return np.eye(1)
    if N == 2:
        phi = rng.uniform(0.0, 2 * math.pi)
        return RotationMatrix.planar(phi).entries
    q, r = np.linalg.qr(rng.standard_normal((N, N)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def rotation_cover(
    count: int, F: DiscreteSet, seed: int = 0, max_tries: int | None = None
) -> list[RotationMatrix]:
    """Identity plus up to ``count - 1`` random rotations that keep F in R^N_+.

    Candidates are drawn until ``count`` rotations qualify or ``max_tries``
    candidates (default ``200 * count``) have been examined.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = make_rng(seed)
    out = [RotationMatrix.identity(F.N)]
    tries = 0
    limit = 200 * count if max_tries is None else max_tries
    while len(out) < count and tries < limit:
        tries += 1
        q = _random_rotation(F.N, rng)
        if np.all(F.points @ q.T >= 0):
            out.append(RotationMatrix(q))
    return out


def snap_to_axes(points: np.ndarray, axes: Sequence[np.ndarray]) -> np.ndarray:
    """Index of the nearest axis coordinate, per axis (points of shape (m, N))."""
    idx = np.empty(points.shape, dtype=np.int64)
    for k, ax in enumerate(axes):
        j = np.clip(np.searchsorted(ax, points[:, k]), 1, len(ax) - 1)
        left = ax[j - 1]
        right = ax[j]
        idx[:, k] = np.where(points[:, k] - left <= right - points[:, k], j - 1, j)
        if len(ax) == 1:
            idx[:, k] = 0
    return idx


# ---------------------------------------------------------------- set files


def read_set_file(path: str | Path, cell: float | None = None) -> DiscreteSet:
    """Read one point per line (whitespace-separated); '#' starts a comment line."""
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        rows.append([float(x) for x in line.split()])
    if not rows:
        raise ValueError(f"{path}: no points")
    if len({len(r) for r in rows}) != 1:
        raise ValueError(f"{path}: rows have differing dimension")
    return DiscreteSet(np.array(rows), cell=cell)


def write_set_file(path: str | Path, F: DiscreteSet, comment: str | None = None) -> None:
    lines = []
    if comment:
        lines.extend("# " + c for c in comment.splitlines())
    lines.extend(" ".join(repr(float(x)) for x in p) for p in F.points)
    Path(path).write_text("\n".join(lines) + "\n")

