"""Compact supports inside [-1, 1]^d (or any box), with structural equalities."""

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .errors import ConfigError

MAX_GRID = 10**6


@dataclass
class SupportSet:
    """Known compact support of ``T``.

    Parameters
    ----------
    dimension : int
        Number of coordinates ``d``.
    box : array_like, shape (d, 2)
        Closed interval per coordinate.
    discrete : dict
        ``{axis: values}`` for coordinates restricted to a finite set.
    derived : dict
        ``{axis: f}`` where ``f(points) -> values`` pins a coordinate as a
        function of the others (structural equalities such as
        ``v = d v(1) + (1 - d) v(0)``).  Applied in insertion order.
    constraints : list
        Extra predicates ``g(points) -> bool-like``; a point belongs to the
        support only where every ``g`` is non-zero.
    finite_points : array_like, optional
        Explicit point list; when given it *is* the support.
    """

    dimension: int
    box: np.ndarray = None
    discrete: dict = field(default_factory=dict)
    derived: dict = field(default_factory=dict)
    constraints: list = field(default_factory=list)
    finite_points: np.ndarray = None
    tol: float = 1e-9

    def __post_init__(self):
        d = int(self.dimension)
        if d < 1:
            raise ConfigError("support dimension must be positive")
        self.dimension = d
        if self.box is None:
            self.box = np.tile([-1.0, 1.0], (d, 1))
        self.box = np.asarray(self.box, dtype=float).reshape(d, 2)
        if np.any(self.box[:, 0] > self.box[:, 1]):
            raise ConfigError("support box has an empty interval")
        self.discrete = {int(k): np.asarray(sorted(v), dtype=float) for k, v in self.discrete.items()}
        for k in list(self.discrete) + list(self.derived):
            if not 0 <= k < d:
                raise ConfigError(f"support axis {k} out of range for dimension {d}")
        if self.finite_points is not None:
            pts = np.atleast_2d(np.asarray(self.finite_points, dtype=float))
            if pts.shape[1] != d:
                raise ConfigError(f"finite support points must have {d} coordinates")
            if pts.shape[0] == 0:
                raise ConfigError("finite support is empty")
            self.finite_points = pts

    @classmethod
    def box_support(cls, box):
        box = np.asarray(box, dtype=float)
        return cls(box.shape[0], box)

    @classmethod
    def finite(cls, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        return cls(pts.shape[1], np.column_stack([lo, hi]), finite_points=pts)

    @property
    def is_finite(self):
        return self.finite_points is not None

    @property
    def free_continuous_axes(self):
        if self.is_finite:
            return []
        return [i for i in range(self.dimension) if i not in self.discrete and i not in self.derived]

    def complete(self, points):
        """Fill derived coordinates in place and return the array."""
        for axis, fn in self.derived.items():
            points[:, axis] = fn(points)
        return points

    def contains(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if self.is_finite:
            return self._match_finite(points) >= 0
        tol = self.tol
        ok = np.all((points >= self.box[:, 0] - tol) & (points <= self.box[:, 1] + tol), axis=1)
        for axis, vals in self.discrete.items():
            ok &= np.min(np.abs(points[:, axis, None] - vals[None, :]), axis=1) <= tol
        for axis, fn in self.derived.items():
            ok &= np.abs(points[:, axis] - fn(points)) <= tol * (1 + np.abs(points[:, axis]))
        for g in self.constraints:
            ok &= np.asarray(g(points)) != 0
        return ok

    def _match_finite(self, points):
        """Index of the matching finite point per row, -1 when absent."""
        dist = np.max(np.abs(points[:, None, :] - self.finite_points[None, :, :]), axis=2)
        idx = np.argmin(dist, axis=1)
        return np.where(dist[np.arange(points.shape[0]), idx] <= self.tol, idx, -1)

    def axis_values(self, axis, resolution):
        if axis in self.discrete:
            return self.discrete[axis]
        lo, hi = self.box[axis]
        if lo == hi:
            return np.array([lo])
        return np.linspace(lo, hi, resolution)

    def grid(self, resolution=21, max_points=MAX_GRID):
        """Deterministic grid of support points (the finite list when given)."""
        if self.is_finite:
            return self.finite_points.copy()
        free = [i for i in range(self.dimension) if i not in self.derived]
        n_cont = sum(1 for i in free if i not in self.discrete)
        n_disc = math.prod(len(self.discrete[i]) for i in free if i in self.discrete)
        res = int(resolution)
        if n_cont and n_disc * res**n_cont > max_points:
            res = max(2, int((max_points / n_disc) ** (1.0 / n_cont)))
        axes = [self.axis_values(i, res) for i in free]
        mesh = np.array(list(itertools.product(*axes)), dtype=float).reshape(-1, len(free))
        pts = np.zeros((mesh.shape[0], self.dimension))
        pts[:, free] = mesh
        self.complete(pts)
        pts = pts[self.contains(pts)]
        if pts.shape[0] == 0:
            raise ConfigError("support grid is empty; check the box, equalities and constraints")
        return pts

    def spacing(self, resolution):
        width = self.box[:, 1] - self.box[:, 0]
        return width / max(int(resolution) - 1, 1)

    def corners(self, max_axes=6):
        """Box corners over the first ``max_axes`` free axes, others at their centre."""
        if self.is_finite:
            return np.empty((0, self.dimension))
        free = self.free_continuous_axes[:max_axes]
        centre = self.box.mean(axis=1)
        for axis, vals in self.discrete.items():
            centre[axis] = vals[0]
        out = []
        for bits in itertools.product((0, 1), repeat=len(free)):
            p = centre.copy()
            for axis, b in zip(free, bits):
                p[axis] = self.box[axis, b]
            out.append(p)
        pts = self.complete(np.array(out).reshape(-1, self.dimension))
        return pts[self.contains(pts)]

    def interior_points(self, n=16):
        """Deterministic low-discrepancy points (unscrambled Halton) in the support."""
        if self.is_finite:
            return np.empty((0, self.dimension))
        free = [i for i in range(self.dimension) if i not in self.derived]
        if not free:
            return np.empty((0, self.dimension))
        u = qmc.Halton(d=len(free), scramble=False).random(n + 1)[1:]
        pts = np.zeros((n, self.dimension))
        for k, axis in enumerate(free):
            if axis in self.discrete:
                vals = self.discrete[axis]
                pts[:, axis] = vals[np.minimum((u[:, k] * len(vals)).astype(int), len(vals) - 1)]
            else:
                lo, hi = self.box[axis]
                pts[:, axis] = lo + (hi - lo) * u[:, k]
        self.complete(pts)
        return pts[self.contains(pts)]
