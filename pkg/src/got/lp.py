"""Dense revised simplex for ``min f'z  s.t.  A z = b, z >= 0``.

The basis inverse is kept explicitly and updated with product-form pivots,
refactorised periodically.  Pricing is Dantzig's rule, switching to Bland's
smallest-index rule after a run of degenerate pivots so the method cannot
cycle.  Columns may be appended between solves; the current basis stays
feasible, which is what the cutting-plane master relies on.
"""

import enum

import numpy as np

from .errors import InfeasibleError, SimplexError

PIVOT_TOL = 1e-11
OPT_TOL = 1e-9
FEAS_TOL = 1e-9
REFACTOR_EVERY = 50
MAX_COND = 1e13
DEGENERATE_STREAK = 30
REL_PIVOT_TOL = 1e-9
HARRIS_TOL = 1e-8


class LPStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITERATION_LIMIT = "iteration_limit"


class DenseSimplex:
    """Standard-form LP solver supporting warm column additions.

    Parameters
    ----------
    A : ndarray, shape (m, n)
    b : ndarray, shape (m,)
    f : ndarray, shape (n,)
        Objective coefficients (minimised).
    basis : sequence of int, optional
        A feasible starting basis.  Without one, phase I with artificial
        variables finds a basis first.
    """

    def __init__(self, A, b, f, basis=None, max_iter=50_000):
        A = np.asarray(A, dtype=float)
        self.m, n = A.shape
        self.b = np.asarray(b, dtype=float).copy()
        self.shift = 0.0
        self._A = np.zeros((self.m, max(2 * n, 16)))
        self._A[:, :n] = A
        self._f = np.zeros(self._A.shape[1])
        self._f[:n] = np.asarray(f, dtype=float)
        self.n = n
        self.n_art = 0
        self.max_iter = max_iter
        self.pivots = 0
        self._since_refactor = 0
        self.status = None
        if basis is None:
            self._phase_one()
        else:
            self.basis = np.array(basis, dtype=int)
            if self.basis.size != self.m:
                raise SimplexError(f"basis has {self.basis.size} columns for {self.m} rows")
            self._refactor()
            if np.any(self.xB < -FEAS_TOL * (1 + np.abs(self.b).max(initial=0))):
                raise SimplexError("starting basis is not primal feasible")

    # -- storage ---------------------------------------------------------

    @property
    def A(self):
        return self._A[:, : self.n]

    @property
    def f(self):
        return self._f[: self.n]

    def add_columns(self, cols, costs):
        """Append columns ``cols (m, k)`` with objective ``costs (k,)``; returns their indices."""
        cols = np.asarray(cols, dtype=float).reshape(self.m, -1)
        k = cols.shape[1]
        need = self.n + k
        if need > self._A.shape[1]:
            cap = max(need, 2 * self._A.shape[1])
            A2 = np.zeros((self.m, cap))
            A2[:, : self.n] = self._A[:, : self.n]
            f2 = np.zeros(cap)
            f2[: self.n] = self._f[: self.n]
            self._A, self._f = A2, f2
        self._A[:, self.n:need] = cols
        self._f[self.n:need] = np.asarray(costs, dtype=float).ravel()
        idx = np.arange(self.n, need)
        self.n = need
        return idx

    # -- linear algebra --------------------------------------------------

    def _refactor(self):
        B = self._A[:, self.basis]
        try:
            cond = np.linalg.cond(B)
        except np.linalg.LinAlgError:
            cond = np.inf
        if not np.isfinite(cond) or cond > MAX_COND:
            raise SimplexError(f"basis matrix is singular or ill-conditioned (condition number {cond:.3e})")
        self.Binv = np.linalg.inv(B)
        self.xB = self.Binv @ self.b
        self._shift_negative()
        self._since_refactor = 0

    def _shift_negative(self, rows=None):
        """Perturb ``b`` so slightly negative basic values become exactly zero.

        The basis (hence the duals) does not depend on ``b``; the perturbation
        stays at rounding level and is tracked in ``self.shift``.
        """
        idx = np.flatnonzero(self.xB < 0) if rows is None else [r for r in rows if self.xB[r] < 0]
        for r in idx:
            delta = -self.xB[r]
            self.b += delta * self._A[:, self.basis[r]]
            self.shift += delta
            self.xB[r] = 0.0

    def _pivot(self, r, j, w):
        self._shift_negative([r])
        wr = w[r]
        self.Binv[r] /= wr
        other = np.arange(self.m) != r
        self.Binv[other] -= np.outer(w[other], self.Binv[r])
        theta = self.xB[r] / wr
        self.xB[other] -= theta * w[other]
        self.xB[r] = theta
        self.basis[r] = j
        self.pivots += 1
        self._since_refactor += 1
        if self._since_refactor >= REFACTOR_EVERY:
            self._refactor()

    # -- phases ----------------------------------------------------------

    def _phase_one(self):
        neg = self.b < 0
        self._A[neg, : self.n] *= -1
        self.b[neg] *= -1
        self._row_sign = np.where(neg, -1.0, 1.0)
        n0 = self.n
        f_real = self._f[:n0].copy()
        art = self.add_columns(np.eye(self.m), np.ones(self.m))
        self.n_art = self.m
        self._art_start = n0
        self._f[:n0] = 0.0
        self.basis = art.copy()
        self._refactor()
        self._run()
        infeas = float(self._f[self.basis] @ self.xB)
        if infeas > FEAS_TOL * (1 + np.abs(self.b).sum()):
            self.status = LPStatus.INFEASIBLE
            self._f[:n0] = f_real
            self._f[art] = 0.0
            return
        self._f[:n0] = f_real
        self._f[art] = 0.0
        self._drive_out_artificials()

    def _is_art(self, j):
        return self.n_art and self._art_start <= j < self._art_start + self.n_art

    def _drive_out_artificials(self):
        for r in range(self.m):
            if not self._is_art(self.basis[r]):
                continue
            row = self.Binv[r] @ self.A
            cand = [j for j in np.flatnonzero(np.abs(row) > 1e-9) if not self._is_art(j)]
            if cand:
                j = cand[0]
                self._pivot(r, j, self.Binv @ self._A[:, j])
            # otherwise the row is redundant; the artificial stays basic at zero

    def _price(self, bland):
        y = self._f[self.basis] @ self.Binv
        d = self._f[: self.n] - y @ self._A[:, : self.n]
        if self._phase2 and self.n_art:
            d[self._art_start:self._art_start + self.n_art] = np.inf
        d[self.basis] = 0.0
        scale = 1.0 + np.abs(self._f[: self.n]).max(initial=0.0)
        cand = np.flatnonzero(d < -OPT_TOL * scale)
        if cand.size == 0:
            return -1, 0.0
        j = int(cand[0]) if bland else int(cand[np.argmin(d[cand])])
        return j, float(d[j])

    _phase2 = False

    def _run(self):
        streak = 0
        it = 0
        while True:
            if it >= self.max_iter:
                return LPStatus.ITERATION_LIMIT
            bland = streak >= DEGENERATE_STREAK
            j, d_j = self._price(bland)
            if j < 0:
                return LPStatus.OPTIMAL
            w = self.Binv @ self._A[:, j]
            r = self._ratio(w, bland)
            if r < 0:
                return LPStatus.UNBOUNDED
            # a pivot counts as degenerate when it barely moves the objective
            gain = -d_j * max(self.xB[r], 0.0) / w[r]
            streak = streak + 1 if gain <= 1e-13 * (1.0 + abs(self.objective)) else 0
            self._pivot(r, j, w)
            it += 1

    def _ratio(self, w, bland=False):
        if self._phase2 and self.n_art:
            # artificials held at zero leave on any non-zero pivot entry
            for r in range(self.m):
                if self._is_art(self.basis[r]) and abs(w[r]) > 1e-9:
                    return r
        pos = np.flatnonzero(w > max(PIVOT_TOL, REL_PIVOT_TOL * np.abs(w).max()))
        if pos.size == 0:
            return -1
        xb = np.maximum(self.xB[pos], 0.0)
        if bland:
            ratios = xb / w[pos]
            best = ratios.min()
            ties = pos[ratios <= best + 1e-12 * (1 + best)]
            return int(ties[np.argmin(self.basis[ties])])
        # Harris two-pass: relax by the feasibility tolerance, then take the
        # largest pivot among rows whose exact ratio fits under the bound
        bound = np.min((xb + HARRIS_TOL) / w[pos])
        ok = pos[xb / w[pos] <= bound]
        return int(ok[np.argmax(w[ok])])

    def solve(self):
        """Run phase II from the current basis; returns the :class:`LPStatus`."""
        if self.status is LPStatus.INFEASIBLE:
            return self.status
        self._phase2 = True
        self.status = self._run()
        return self.status

    # -- results ---------------------------------------------------------

    @property
    def x(self):
        z = np.zeros(self.n)
        z[self.basis] = self.xB
        if self.n_art:
            z = np.delete(z, np.arange(self._art_start, self._art_start + self.n_art))
        return z

    @property
    def objective(self):
        return float(self._f[self.basis] @ self.xB)

    @property
    def duals(self):
        """Row multipliers ``y`` with ``A'y <= f`` at optimality (original row signs)."""
        y = self._f[self.basis] @ self.Binv
        if hasattr(self, "_row_sign"):
            y = y * self._row_sign
        return y


def solve_standard(A, b, f, max_iter=50_000):
    """Solve ``min f'z, A z = b, z >= 0``; returns ``(status, z, objective, duals)``."""
    lp = DenseSimplex(A, b, f, max_iter=max_iter)
    if lp.status is LPStatus.INFEASIBLE:
        return LPStatus.INFEASIBLE, None, None, None
    status = lp.solve()
    if status is not LPStatus.OPTIMAL:
        return status, lp.x, None, None
    return status, lp.x, lp.objective, lp.duals


class MasterLP:
    """Finite master of the penalised projected problem, solved through its dual.

    Primal:  min c'x + s  over  s >= 0,  s + r_k'x >= b_k  for every cut,
    ``|x_j| <= r_box`` on the box group and ``sum |x_j| <= r_l1`` on the l1
    group.  Each cut is a dual column, so adding cuts keeps the current
    dual basis feasible and the simplex warm-starts.
    """

    def __init__(self, c_vec, box_mask, r_box, r_l1):
        c = np.asarray(c_vec, dtype=float)
        N = c.size
        box = np.asarray(box_mask, dtype=bool)
        g1 = np.flatnonzero(~box)
        self.N, self.c = N, c
        self.g1 = g1
        m = N + g1.size + 1
        self.norm_row = m - 1
        cols, costs, basis = [], [], []
        # alpha_j (-e_j), beta_j (+e_j)
        l1_row = {j: N + k for k, j in enumerate(g1)}
        for j in range(N):
            for sign in (-1.0, 1.0):
                col = np.zeros(m)
                col[j] = sign
                if j in l1_row:
                    col[l1_row[j]] = 1.0
                    costs.append(0.0)
                else:
                    costs.append(float(r_box))
                cols.append(col)
            basis.append(len(cols) - 1 if c[j] >= 0 else len(cols) - 2)
        rho = {}
        for j in g1:
            col = np.zeros(m)
            col[l1_row[j]] = 1.0
            cols.append(col)
            costs.append(0.0)
            rho[j] = len(cols) - 1
        tau = None
        if g1.size:
            col = np.zeros(m)
            col[N:N + g1.size] = -1.0
            cols.append(col)
            costs.append(float(r_l1))
            tau = len(cols) - 1
            jstar = g1[np.argmax(np.abs(c[g1]))]
            for j in g1:
                basis.append(tau if j == jstar else rho[j])
        col = np.zeros(m)
        col[self.norm_row] = 1.0
        cols.append(col)
        costs.append(0.0)
        basis.append(len(cols) - 1)
        b = np.concatenate([c, np.zeros(g1.size), [1.0]])
        self.lp = DenseSimplex(np.column_stack(cols), b, np.array(costs), basis=basis)
        self.n_cuts = 0
        self.lp.solve()

    def add_cuts(self, rows, costs):
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        cols = np.zeros((self.lp.m, rows.shape[0]))
        cols[: self.N] = rows.T
        cols[self.norm_row] = 1.0
        self.lp.add_columns(cols, -np.asarray(costs, dtype=float))
        self.n_cuts += rows.shape[0]

    def solve(self):
        status = self.lp.solve()
        if status is not LPStatus.OPTIMAL:
            raise SimplexError(f"master LP ended with status {status.value}")
        y = self.lp.duals
        x = -y[: self.N]
        s = max(-y[self.norm_row], 0.0)
        return x, s, float(self.c @ x + s)

    @property
    def measure(self):
        """Weights the dual puts on each cut (a sub-probability vector)."""
        z = self.lp.x
        return z[z.size - self.n_cuts:] if self.n_cuts else np.zeros(0)


def check_feasible(status):
    if status is LPStatus.INFEASIBLE:
        raise InfeasibleError("linear program is infeasible")
