"""Optimal transport as a special case, plus brute-force LP oracles.

* :func:`linear_spline_basis` builds tensor hat functions; their means pin
  the marginals in the discrete block of :func:`build_ot_system`.
* :func:`finite_got_lp` solves a finite-support problem directly as an LP over
  the probability simplex.
* :func:`discrete_ot_value` solves the transportation LP.

All LPs go through :mod:`got.lp`.
"""

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels, lp, projection, sip_solver
from .errors import ConfigError, InfeasibleError
from .moment_system import (
    AnalyticTarget,
    DiscreteLaw,
    EmpiricalTarget,
    Law,
    RestrictionKind,
    RestrictionSpec,
    build_system,
    encode_discrete_moments,
)
from .sip_solver import NormBall
from .support import SupportSet


# --------------------------------------------------------------------------
# splines


@dataclass(frozen=True)
class SplineBlock:
    """``k^d`` tensor hat functions on equally spaced knots over ``box``.

    Index ``j`` enumerates knot multi-indices in row-major order.
    """

    k: int
    d: int
    box: tuple = None

    def __post_init__(self):
        if int(self.k) < 2:
            raise ConfigError(f"spline resolution k must be at least 2, got {self.k}")
        if self.d < 1:
            raise ConfigError("spline dimension must be positive")
        if self.box is None:
            object.__setattr__(self, "box", tuple((-1.0, 1.0) for _ in range(self.d)))

    @property
    def knots(self):
        """Per-axis knot arrays."""
        return [lo + (hi - lo) * np.arange(self.k) / (self.k - 1) for lo, hi in self.box]

    @property
    def size(self):
        return self.k**self.d

    @property
    def spacing(self):
        return np.array([(hi - lo) / (self.k - 1) for lo, hi in self.box])

    def knot_points(self):
        return np.array(list(itertools.product(*self.knots))).reshape(-1, self.d)

    def evaluate(self, T):
        """Hat function values ``(n, k^d)`` at points ``T (n, d)``."""
        T = np.atleast_2d(np.asarray(T, dtype=float))
        if T.shape[1] != self.d:
            raise ConfigError(f"spline block expects {self.d} coordinates, got {T.shape[1]}")
        out = np.ones((T.shape[0], 1))
        for axis, (knots, h) in enumerate(zip(self.knots, self.spacing)):
            uni = np.maximum(0.0, 1.0 - np.abs(T[:, axis, None] - knots[None, :]) / h)
            out = (out[:, :, None] * uni[:, None, :]).reshape(T.shape[0], -1)
        return out

    def function(self, j):
        return _HatFunction(self, int(j))

    @property
    def functions(self):
        return [self.function(j) for j in range(self.size)]

    def interpolate(self, f):
        """Piecewise-multilinear interpolant of ``f`` through the knots."""
        vals = np.asarray(f(self.knot_points()), dtype=float)
        return lambda T: self.evaluate(T) @ vals


class _HatFunction:
    def __init__(self, block, j):
        self.block, self.j = block, j

    def __call__(self, T):
        return self.block.evaluate(T)[:, self.j]

    def __repr__(self):
        return f"hat(k={self.block.k}, d={self.block.d}, j={self.j})"


def linear_spline_basis(k, d, box=None):
    """Tensor linear splines with knots ``-1 + 2 i / (k - 1)`` (or spread over ``box``)."""
    return SplineBlock(int(k), int(d), None if box is None else tuple(map(tuple, np.asarray(box, float))))


# --------------------------------------------------------------------------
# OT as a moment system


def _as_law(marginal):
    """Return ``(points, weights)`` of a marginal given as samples, a law, or a pair."""
    if isinstance(marginal, Law):
        return marginal.nodes()
    if isinstance(marginal, AnalyticTarget) and marginal.law is not None:
        return marginal.law.nodes()
    if isinstance(marginal, EmpiricalTarget):
        u = marginal.samples
        return u, np.full(u.shape[0], 1.0 / u.shape[0])
    if isinstance(marginal, tuple) and len(marginal) == 2:
        pts = np.asarray(marginal[0], dtype=float)
        pts = pts.reshape(pts.shape[0], -1)
        w = np.asarray(marginal[1], dtype=float)
        return pts, w
    pts = np.asarray(marginal, dtype=float)
    pts = pts.reshape(pts.shape[0], -1)
    return pts, np.full(pts.shape[0], 1.0 / pts.shape[0])


def lipschitz_estimate(cost, support, resolution=21):
    """Largest difference quotient of ``cost`` between grid neighbours."""
    best = 0.0
    grid = support.grid(resolution)
    vals = np.asarray(cost(grid), dtype=float)
    for axis in range(support.dimension):
        step = np.zeros(support.dimension)
        step[axis] = (support.box[axis, 1] - support.box[axis, 0]) / max(resolution - 1, 1)
        if step[axis] == 0:
            continue
        nb = grid + step
        ok = support.contains(nb)
        if ok.any():
            q = np.abs(np.asarray(cost(nb[ok])) - vals[ok]) / step[axis]
            best = max(best, float(q.max()))
    return best


def build_ot_system(marginal1, marginal2, k1, k2, cost, kernels_=(None, None), support=None, lipschitz=None,
                    with_kernel_blocks=True, full_cube=True):
    """Moment system whose GOT value is the optimal transport value.

    Parameters
    ----------
    marginal1, marginal2
        Each a sample array ``(n, d_i)``, a ``(points, weights)`` pair, or a
        :class:`~got.moment_system.Law`.
    k1, k2 : int
        Spline resolution per marginal (``>= 2``).
    cost : callable
        ``cost(T)`` for ``T (n, d1 + d2)``.
    support : SupportSet, optional
        Defaults to the bounding box of both marginals.
    lipschitz : float, optional
        Lipschitz constant of the cost; estimated on the grid when omitted.

    The recommended :class:`NormBall` (split, with the discrete radius
    ``(2 ||b||_inf + L) (2 + k1^d1 + k2^d2)``) is stored under
    ``metadata["recommended_ball"]``.
    """
    p1, w1 = _as_law(marginal1)
    p2, w2 = _as_law(marginal2)
    for w in (w1, w2):
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ConfigError("marginal weights must be non-negative and sum to one")
    d1, d2 = p1.shape[1], p2.shape[1]
    d = d1 + d2
    if support is None:
        lo = np.concatenate([p1.min(axis=0), p2.min(axis=0)])
        hi = np.concatenate([p1.max(axis=0), p2.max(axis=0)])
        support = SupportSet.box_support(np.column_stack([lo, hi]))
    if support.dimension != d:
        raise ConfigError(f"support dimension {support.dimension} does not match marginals ({d1} + {d2})")
    I1, I2 = tuple(range(d1)), tuple(range(d1, d))
    s1 = SplineBlock(k1, d1, tuple(map(tuple, support.box[list(I1)])))
    s2 = SplineBlock(k2, d2, tuple(map(tuple, support.box[list(I2)])))
    fns = [_Restricted(s1, j, I1) for j in range(s1.size)] + [_Restricted(s2, j, I2) for j in range(s2.size)]
    targets = np.concatenate([w1 @ s1.evaluate(p1), w2 @ s2.evaluate(p2)])
    disc = encode_discrete_moments(fns, targets, indices=tuple(range(d)), support=support, label="splines")

    specs = []
    if with_kernel_blocks:
        for idx, (pts, w), kern in ((I1, (p1, w1), kernels_[0]), (I2, (p2, w2), kernels_[1])):
            kern = kern or kernels.exponential(len(idx))
            specs.append(RestrictionSpec(RestrictionKind.MARGINAL, (idx,), kernel=kern,
                                         target=AnalyticTarget(law=DiscreteLaw(tuple(map(tuple, pts)), tuple(w))),
                                         full_cube=full_cube))
    specs.append(disc)

    grid = support.grid(21)
    b_inf = float(np.max(np.abs(cost(grid))))
    L = lipschitz_estimate(cost, support) if lipschitz is None else float(lipschitz)
    gamma_disc = (2.0 * b_inf + L) * (2.0 + k1**d1 + k2**d2)
    gamma_cont = max(1.0, float(max(k1, k2)) ** (max(d1, d2) / 2.0))
    meta = {
        "ot": {"k": [int(k1), int(k2)], "dims": [d1, d2], "lipschitz": L, "b_inf": b_inf},
        "recommended_ball": NormBall("split", gamma_disc, (gamma_cont, gamma_disc)),
        "sandwich_slack": 2.0 * L * (math.sqrt(d1) / (k1 - 1) + math.sqrt(d2) / (k2 - 1)),
    }
    return build_system(support, specs, cost, metadata=meta)


class _Restricted:
    """Hat function of one marginal's coordinates, called on the full point."""

    def __init__(self, block, j, axes):
        self.block, self.j, self.axes = block, j, list(axes)

    def __call__(self, T):
        T = np.atleast_2d(T)
        return self.block.evaluate(T[:, self.axes])[:, self.j]


# --------------------------------------------------------------------------
# finite instances


@dataclass
class FiniteInstance:
    """Finite-support problem ``max cost'p  s.t.  rows p = targets, p >= 0``.

    A normalisation row of ones with target 1 is appended when absent.
    """

    points: np.ndarray
    moment_rows: np.ndarray
    targets: np.ndarray
    cost: np.ndarray
    labels: list = field(default=None)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim == 1:
            self.points = self.points[:, None]
        P = self.points.shape[0]
        self.moment_rows = np.asarray(self.moment_rows, dtype=float).reshape(-1, P)
        self.targets = np.asarray(self.targets, dtype=float).ravel()
        self.cost = np.asarray(self.cost, dtype=float).ravel()
        if self.moment_rows.shape[0] != self.targets.size:
            raise ConfigError(f"{self.moment_rows.shape[0]} moment rows but {self.targets.size} targets")
        if self.cost.size != P:
            raise ConfigError(f"cost has {self.cost.size} entries for {P} points")
        ones = np.all(np.abs(self.moment_rows - 1.0) < 1e-15, axis=1) & (np.abs(self.targets - 1.0) < 1e-15)
        if not ones.any():
            self.moment_rows = np.vstack([self.moment_rows, np.ones(P)])
            self.targets = np.append(self.targets, 1.0)

    @property
    def normalization_index(self):
        ones = np.all(self.moment_rows == 1.0, axis=1) & (self.targets == 1.0)
        return int(np.flatnonzero(ones)[-1])


@dataclass
class FiniteResult:
    status: str
    value: float = None
    p: np.ndarray = None
    dual: np.ndarray = None

    @property
    def feasible(self):
        return self.status == lp.LPStatus.OPTIMAL.value


def finite_got_lp(instance):
    """Exact optimum of a :class:`FiniteInstance`.

    ``dual`` is a certificate ``lambda`` with ``rows' lambda >= cost`` and
    ``targets' lambda = value``.
    """
    status, z, obj, y = lp.solve_standard(instance.moment_rows, instance.targets, -instance.cost)
    if status is lp.LPStatus.INFEASIBLE:
        return FiniteResult(status.value)
    if status is not lp.LPStatus.OPTIMAL:
        return FiniteResult(status.value)
    return FiniteResult(status.value, -obj, z, -y)


def discrete_ot_value(mu1, mu2, cost_matrix):
    """Maximal expected cost over couplings of two discrete marginals."""
    mu1 = np.asarray(mu1, dtype=float).ravel()
    mu2 = np.asarray(mu2, dtype=float).ravel()
    C = np.asarray(cost_matrix, dtype=float)
    if C.shape != (mu1.size, mu2.size):
        raise ConfigError(f"cost matrix shape {C.shape} does not match marginals ({mu1.size}, {mu2.size})")
    for name, mu in (("mu1", mu1), ("mu2", mu2)):
        if np.any(mu < 0) or abs(mu.sum() - 1.0) > 1e-9:
            raise ConfigError(f"{name} must be non-negative weights summing to one (sum = {mu.sum()!r})")
    n1, n2 = mu1.size, mu2.size
    rows = np.zeros((n1 + n2, n1 * n2))
    for i in range(n1):
        rows[i, i * n2:(i + 1) * n2] = 1.0
    for j in range(n2):
        rows[n1 + j, j::n2] = 1.0
    status, z, obj, _ = lp.solve_standard(rows, np.concatenate([mu1, mu2]), -C.ravel())
    if status is not lp.LPStatus.OPTIMAL:
        raise InfeasibleError(f"transportation LP ended with status {status.value}")
    return -obj


class _PointTable:
    """Function on a finite support given by its value at each point."""

    def __init__(self, support, values):
        self.support = support
        self.values = np.asarray(values, dtype=float)

    def __call__(self, T):
        idx = self.support._match_finite(np.atleast_2d(T))
        if np.any(idx < 0):
            raise ConfigError("point outside the finite support")
        return self.values[idx]


def system_from_instance(instance, cost=None):
    """Moment system with one discrete node per non-normalisation row."""
    support = SupportSet.finite(instance.points)
    keep = [i for i in range(instance.targets.size) if i != instance.normalization_index]
    specs = []
    if keep:
        fns = [_PointTable(support, instance.moment_rows[i]) for i in keep]
        specs.append(encode_discrete_moments(fns, instance.targets[keep], indices=tuple(range(support.dimension)),
                                             support=support, label="finite"))
    return build_system(support, specs, cost or _PointTable(support, instance.cost))


def random_finite_instance(rng, max_points=12, max_rows=8, dim=2):
    """Random feasible instance: 0/1 moment rows, targets from a Dirichlet point."""
    P = int(rng.integers(3, max_points + 1))
    R = int(rng.integers(1, max_rows))
    pts = np.unique(np.round(rng.uniform(-1, 1, (P, dim)), 6), axis=0)
    P = pts.shape[0]
    rows = rng.integers(0, 2, (R, P)).astype(float)
    p0 = rng.dirichlet(np.ones(P))
    return FiniteInstance(pts, rows, rows @ p0, rng.uniform(-1, 1, P))


# --------------------------------------------------------------------------
# binary instrumental-variable bounds


def balke_pearl_instance(joint):
    """Sharp bounds on the average treatment effect with binary ``Y, D, Z``.

    ``joint[z][(y, d)] = P(Y = y, D = d | Z = z)``.  Support points are the
    sixteen response types ``(d(0), d(1), y(0), y(1))``; the cost is the
    individual effect ``y(1) - y(0)``.
    """
    pts = np.array(list(itertools.product((0, 1), repeat=4)), dtype=float)
    rows, targets, labels = [], [], []
    for z in (0, 1):
        for y in (0, 1):
            for d in (0, 1):
                dz = pts[:, z]
                yd = pts[:, 2 + d]
                rows.append(((dz == d) & (yd == y)).astype(float))
                targets.append(float(joint[z][(y, d)]))
                labels.append(f"P(Y={y},D={d}|Z={z})")
    cost = pts[:, 3] - pts[:, 2]
    return FiniteInstance(pts, np.array(rows), np.array(targets), cost, labels)


def balke_pearl_from_dgp(p_types):
    """Observed conditionals implied by a distribution over the 16 response types."""
    pts = np.array(list(itertools.product((0, 1), repeat=4)), dtype=float)
    p = np.asarray(p_types, dtype=float)
    joint = {}
    for z in (0, 1):
        joint[z] = {}
        for y in (0, 1):
            for d in (0, 1):
                joint[z][(y, d)] = float(p[(pts[:, z] == d) & (pts[:, 2 + d] == y)].sum())
    return joint


def transport_instance(mu1, mu2, cost_matrix):
    """The transportation LP as a :class:`FiniteInstance` over index pairs ``(i, j)``."""
    mu1 = np.asarray(mu1, dtype=float).ravel()
    mu2 = np.asarray(mu2, dtype=float).ravel()
    C = np.asarray(cost_matrix, dtype=float)
    if C.shape != (mu1.size, mu2.size):
        raise ConfigError(f"cost matrix shape {C.shape} does not match marginals ({mu1.size}, {mu2.size})")
    pts = np.array([(i, j) for i in range(mu1.size) for j in range(mu2.size)], dtype=float)
    rows = np.vstack([(pts[:, 0] == i).astype(float) for i in range(mu1.size)]
                     + [(pts[:, 1] == j).astype(float) for j in range(mu2.size)])
    return FiniteInstance(pts, rows, np.concatenate([mu1, mu2]), C.ravel())


def pipeline_finite(instance, gamma=None, tol=1e-9, sense=1.0):
    """Solve a finite instance with the SIP pipeline.

    ``sense=-1`` maximises the negated cost; the returned value is then the
    lower bound.  ``gamma`` defaults to ``10 (1 + max |cost|)``.
    """
    cost = sense * instance.cost
    system = system_from_instance(instance, _PointTable(SupportSet.finite(instance.points), cost))
    problem = projection.project(system, projection.make_basis(system, []))
    gamma = 10.0 * (1.0 + float(np.abs(cost).max())) if gamma is None else float(gamma)
    sol = sip_solver.solve(problem, sip_solver.NormBall("linf", gamma), tol=tol)
    return sense * sol.value, sol
