"""Cutting-plane solver for the penalised, norm-ball constrained projected problem.

    minimise  <c, x> + s   over  x in B_gamma, s >= 0,
    subject to  s >= b(t) - <row(t), x>  for every support point t.

The master LP over the current cut set lives in :class:`got.lp.MasterLP`;
the most violated support point comes from a grid scan followed by a
coordinate-wise golden-section polish.
"""

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, SimplexError
from .lp import MasterLP

log = logging.getLogger(__name__)

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
GRID_CHUNK = 20_000


class BallKind(str, enum.Enum):
    LINF = "linf"
    L1 = "l1"
    SPLIT = "split"


@dataclass(frozen=True)
class NormBall:
    """Compactifying constraint on the coefficients (the slack is never in it).

    ``split_radii = (gamma_cont, gamma_disc)`` applies to :attr:`BallKind.SPLIT`:
    an l-infinity bound on continuous-block coefficients and an l1 bound on
    the discrete nodes together with the atom.
    """

    kind: BallKind = BallKind.LINF
    radius: float = 5.0
    split_radii: tuple = None

    def __post_init__(self):
        object.__setattr__(self, "kind", BallKind(self.kind))
        if self.kind is BallKind.SPLIT:
            if self.split_radii is None:
                object.__setattr__(self, "split_radii", (float(self.radius), float(self.radius)))
            if len(self.split_radii) != 2 or min(self.split_radii) <= 0:
                raise ConfigError("split ball needs two positive radii")
        elif not self.radius > 0:
            raise ConfigError(f"ball radius must be positive, got {self.radius}")

    def scaled(self, factor):
        radii = None if self.split_radii is None else tuple(r * factor for r in self.split_radii)
        return NormBall(self.kind, self.radius * factor, radii)

    def master_params(self, continuous_mask):
        """``(box_mask, r_box, r_l1)`` for :class:`MasterLP`."""
        n = continuous_mask.size
        if self.kind is BallKind.LINF:
            return np.ones(n, dtype=bool), self.radius, 0.0
        if self.kind is BallKind.L1:
            return np.zeros(n, dtype=bool), 0.0, self.radius
        return continuous_mask.copy(), self.split_radii[0], self.split_radii[1]

    def contains(self, x, continuous_mask, tol=1e-9):
        box, rb, r1 = self.master_params(continuous_mask)
        ok = np.all(np.abs(x[box]) <= rb + tol)
        return bool(ok and np.abs(x[~box]).sum() <= r1 + tol) if (~box).any() else bool(ok)

    def to_dict(self):
        return {"kind": self.kind.value, "radius": self.radius,
                "split_radii": list(self.split_radii) if self.split_radii else None}


@dataclass
class SolverOptions:
    tol: float = 1e-6
    max_iter: int = 500
    grid_resolution: int = 21
    max_grid_points: int = 10**6
    polish_iters: int = 40
    polish_sweeps: int = 3
    # grid cuts are used unpolished while the grid violation exceeds this
    polish_below: float = 1e-4
    cuts_per_iter: int = 1
    initial_interior: int = 16
    corner_axes: int = 6

    def __post_init__(self):
        if not self.tol > 0:
            raise ConfigError("tol must be positive")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be at least 1")
        if self.grid_resolution < 2:
            raise ConfigError("grid resolution must be at least 2")


class SolveStatus(str, enum.Enum):
    CONVERGED = "converged"
    MAX_ITER = "max_iter"


@dataclass
class SipSolution:
    value: float
    coefficients: np.ndarray
    slack: float
    cuts: np.ndarray
    final_violation: float
    iterations: int
    trace: list = field(default_factory=list)
    status: SolveStatus = SolveStatus.CONVERGED
    ball: NormBall = None

    @property
    def converged(self):
        return self.status is SolveStatus.CONVERGED

    def diagnostics(self):
        return {
            "value": self.value,
            "slack": self.slack,
            "final_violation": self.final_violation,
            "iterations": self.iterations,
            "status": self.status.value,
            "n_cuts": int(self.cuts.shape[0]),
            "trace": [{"value": v, "violation": g} for v, g in self.trace],
        }


class InnerMaximizer:
    """Grid scan plus coordinate golden-section polish of ``b(t) - <row(t), x>``."""

    def __init__(self, problem, resolution=21, max_points=10**6, polish_iters=40, polish_sweeps=3):
        self.problem = problem
        self.support = problem.support
        self.grid = self.support.grid(resolution, max_points)
        self.exact = self.support.is_finite
        self.polish_iters = polish_iters
        self.polish_sweeps = polish_sweeps
        self.step = self.support.spacing(self._effective_resolution(resolution, max_points))
        self.rows = None
        if self.grid.shape[0] * problem.size <= 4e7:
            self.rows = problem.row_eval(self.grid)
        self.costs = problem.cost_eval(self.grid)

    def _effective_resolution(self, resolution, max_points):
        free = len(self.support.free_continuous_axes)
        n_disc = max(1, math.prod(len(v) for v in self.support.discrete.values()))
        if free and n_disc * resolution**free > max_points:
            return max(2, int((max_points / n_disc) ** (1.0 / free)))
        return resolution

    def scan(self, x, s=0.0):
        """Values ``b(t) - <row(t), x> - s`` on the grid."""
        if self.rows is not None:
            return self.costs - self.rows @ x - s
        out = np.empty(self.grid.shape[0])
        for lo in range(0, self.grid.shape[0], GRID_CHUNK):
            sl = slice(lo, lo + GRID_CHUNK)
            out[sl] = self.costs[sl] - self.problem.row_eval(self.grid[sl]) @ x - s
        return out

    def __call__(self, x, s=0.0, k=1, polish_below=np.inf):
        """Top ``k`` grid points by violation, polished when the best grid
        violation is below ``polish_below``."""
        vals = self.scan(x, s)
        order = np.argsort(-vals, kind="stable")[:k]
        pts = self.grid[order].copy()
        best = vals[order].copy()
        if best[0] > polish_below:
            return pts, best
        if not self.exact and self.polish_iters > 0 and self.support.free_continuous_axes:
            for i in range(pts.shape[0]):
                pts[i], best[i] = self._polish(pts[i], best[i], x, s)
        return pts, best

    def _value(self, t, x, s):
        t = t[None, :].copy()
        self.support.complete(t)
        if not self.support.contains(t)[0]:
            return -np.inf
        return float(self.problem.cost_eval(t)[0] - self.problem.row_eval(t)[0] @ x - s)

    def _polish(self, t, val, x, s):
        box = self.support.box
        t = t.copy()
        for _ in range(self.polish_sweeps):
            start = val
            for axis in self.support.free_continuous_axes:
                lo = max(box[axis, 0], t[axis] - self.step[axis])
                hi = min(box[axis, 1], t[axis] + self.step[axis])
                if hi <= lo:
                    continue
                cand, cval = self._golden(t, axis, lo, hi, x, s)
                if cval > val:
                    t, val = cand, cval
            if val - start <= 1e-15:
                break
        return t, val

    def _golden(self, t, axis, lo, hi, x, s):
        def f(v):
            p = t.copy()
            p[axis] = v
            return self._value(p, x, s), p

        a, b = lo, hi
        c, d = b - GOLDEN * (b - a), a + GOLDEN * (b - a)
        fc, pc = f(c)
        fd, pd = f(d)
        for _ in range(self.polish_iters):
            if fc >= fd:
                b, d, fd, pd = d, c, fc, pc
                c = b - GOLDEN * (b - a)
                fc, pc = f(c)
            else:
                a, c, fc, pc = c, d, fd, pd
                d = a + GOLDEN * (b - a)
                fd, pd = f(d)
        # also consider the bracket ends, which golden section never evaluates
        best_val, best_pt = (fc, pc) if fc >= fd else (fd, pd)
        for v in (lo, hi):
            fv, pv = f(v)
            if fv > best_val:
                best_val, best_pt = fv, pv
        best_pt = best_pt.copy()
        self.support.complete(best_pt[None, :])
        return best_pt, best_val


def initial_cuts(support, opts):
    if support.is_finite:
        return support.finite_points.copy()
    pts = [support.corners(opts.corner_axes), support.interior_points(opts.initial_interior)]
    pts = np.vstack([p for p in pts if p.size] or [support.grid(3)])
    if pts.shape[0] == 0:
        pts = support.grid(3)
    return pts


def master_lp(cuts, c_vec, ball, continuous_mask=None, cut_rows=None, cut_costs=None):
    """Exact optimum ``(x, s, value)`` of the master LP over a finite cut set.

    ``cut_rows``/``cut_costs`` give the rows ``row(t_k)`` and costs ``b(t_k)``
    of the cuts (``cuts`` is kept for symmetry with :func:`solve`).
    """
    c_vec = np.asarray(c_vec, dtype=float)
    if continuous_mask is None:
        continuous_mask = np.ones(c_vec.size, dtype=bool)
    box, rb, r1 = ball.master_params(np.asarray(continuous_mask, dtype=bool))
    m = MasterLP(c_vec, box, rb, r1)
    if cut_rows is not None and len(cut_rows):
        m.add_cuts(cut_rows, cut_costs)
    return m.solve()


def inner_max(problem, coefficients, slack=0.0, resolution=21):
    """Most violated support point ``(t*, violation)`` for ``(x, s)``."""
    im = InnerMaximizer(problem, resolution)
    pts, vals = im(np.asarray(coefficients, dtype=float), slack)
    return pts[0], float(vals[0])


def penalty_value(problem, coefficients, check_ball=None, resolution=21):
    """``<c, x> + (max_t b(t) - <row(t), x>)^+`` with the maximum over the grid."""
    x = np.asarray(coefficients, dtype=float)
    if check_ball is not None and not check_ball.contains(x, problem.continuous_mask):
        raise ConfigError("coefficients lie outside the norm ball")
    im = InnerMaximizer(problem, resolution, polish_iters=0)
    return float(problem.c_vec @ x + max(im.scan(x).max(), 0.0))


def max_violation(problem, coefficients, slack, resolution):
    """Violation on an independent grid (no polish), for re-checking solutions."""
    im = InnerMaximizer(problem, resolution, polish_iters=0)
    return float(im.scan(np.asarray(coefficients, dtype=float), slack).max())


def solve(problem, ball=None, tol=None, opts=None, inner=None):
    """Cutting-plane solution of the projected problem.

    Parameters
    ----------
    problem : ProjectedProblem
    ball : NormBall, optional
        Defaults to an l-infinity ball of radius 5.
    tol : float, optional
        Overrides ``opts.tol``.
    inner : InnerMaximizer, optional
        Reuse a precomputed grid evaluator across solves of the same problem.
    """
    opts = opts or SolverOptions()
    if tol is not None:
        opts = SolverOptions(**{**opts.__dict__, "tol": tol})
    ball = ball or NormBall()
    inner = inner or InnerMaximizer(problem, opts.grid_resolution, opts.max_grid_points, opts.polish_iters,
                                    opts.polish_sweeps)
    box, rb, r1 = ball.master_params(problem.continuous_mask)
    master = MasterLP(problem.c_vec, box, rb, r1)

    cuts = [initial_cuts(problem.support, opts)]
    if not problem.support.is_finite:
        # seed with the grid maximisers of the cost so the first master is informative
        top = np.argsort(-inner.costs, kind="stable")[:4]
        cuts.append(inner.grid[top])
    pts = np.vstack(cuts)
    master.add_cuts(problem.row_eval(pts), problem.cost_eval(pts))
    all_cuts = [pts]

    trace = []
    status = SolveStatus.MAX_ITER
    x, s, value, viol = None, 0.0, None, np.inf
    for it in range(1, opts.max_iter + 1):
        try:
            x, s, value = master.solve()
        except SimplexError as exc:
            raise exc.with_stage("master")
        new, vals = inner(x, s, opts.cuts_per_iter, opts.polish_below)
        viol = float(vals[0])
        trace.append((value, viol))
        log.debug("iteration %d value %.10g violation %.3g", it, value, viol)
        if viol <= opts.tol:
            status = SolveStatus.CONVERGED
            break
        keep = vals > opts.tol
        new = new[keep]
        master.add_cuts(problem.row_eval(new), problem.cost_eval(new))
        all_cuts.append(new)
    return SipSolution(
        value=float(value),
        coefficients=x,
        slack=float(s),
        cuts=np.vstack(all_cuts),
        final_violation=viol,
        iterations=len(trace),
        trace=trace,
        status=status,
        ball=ball,
    )
