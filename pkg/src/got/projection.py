"""Tensor polynomial projection of a moment system.

On a continuous block with cube ``offset + scale * [-1, 1]^D`` the basis is

    phi_alpha(s) = scale^(-D/2) * prod_i psi_{alpha_i}((s_i - offset) / scale)

with ``psi_n`` either the monomial ``u^n`` or the orthonormal Legendre
polynomial ``sqrt((2n+1)/2) P_n(u)``.  Multi-indices run over
``max_i alpha_i <= J`` and are ordered by ``(max alpha, alpha)`` so that
raising ``J`` only appends entries.

The projected problem is a finite vector ``c_vec`` together with a row map
``t -> (<a(t), phi_alpha>)_alpha`` followed by the discrete node values and
the atom entry 1.
"""

import enum
import functools
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import legendre as npleg

from . import kernels
from .errors import ConfigError, DataError
from .kernels import KernelKind
from .moment_system import (
    AnalyticTarget,
    BlockKind,
    EmpiricalTarget,
    RestrictionKind,
    marginal_nodes,
)

ROW_CHUNK = 4096
QUAD_BUDGET = 4_000_000


class BasisKind(str, enum.Enum):
    MONOMIAL = "monomial"
    LEGENDRE = "legendre"


@functools.lru_cache(maxsize=32)
def change_of_basis(J, kind):
    """Matrix ``C`` with ``psi_n(u) = sum_j C[n, j] u^j`` for ``n, j <= J``."""
    kind = BasisKind(kind)
    if kind is BasisKind.MONOMIAL:
        C = np.eye(J + 1)
    else:
        C = np.zeros((J + 1, J + 1))
        for n in range(J + 1):
            coef = npleg.leg2poly(np.eye(J + 1)[n])
            C[n, : coef.size] = coef * math.sqrt((2 * n + 1) / 2.0)
    C.setflags(write=False)
    return C


def multi_indices(D, J):
    """All ``alpha`` in ``{0..J}^D`` sorted by ``(max alpha, alpha)``."""
    if D == 0:
        return np.zeros((1, 0), dtype=int)
    idx = sorted(itertools.product(range(J + 1), repeat=D), key=lambda a: (max(a), a))
    return np.array(idx, dtype=int).reshape(-1, D)


def eval_univariate(J, kind, u):
    """``psi_n(u)`` for ``n = 0..J``; shape ``u.shape + (J + 1,)``."""
    u = np.asarray(u, dtype=float)
    powers = u[..., None] ** np.arange(J + 1)
    return powers @ change_of_basis(J, kind).T


@dataclass(frozen=True)
class BlockBasis:
    block_id: int
    cube_dim: int
    degree: int
    kind: BasisKind
    alphas: np.ndarray = field(repr=False, compare=False)

    @property
    def size(self):
        return self.alphas.shape[0]


@dataclass(frozen=True)
class TensorBasis:
    kind: BasisKind
    degrees: tuple
    blocks: tuple

    @property
    def sizes(self):
        return tuple(b.size for b in self.blocks)


def make_basis(system, degrees, kind=BasisKind.LEGENDRE):
    """Tensor basis with per-block degree ``J_i`` (an int broadcasts)."""
    kind = BasisKind(kind)
    cont = system.continuous_blocks
    if np.isscalar(degrees):
        degrees = [int(degrees)] * len(cont)
    degrees = tuple(int(j) for j in degrees)
    if len(degrees) != len(cont):
        raise ConfigError(f"{len(degrees)} degrees given for {len(cont)} continuous blocks")
    if any(j < 0 for j in degrees):
        raise ConfigError("basis degrees must be non-negative")
    blocks = tuple(
        BlockBasis(b.block_id, b.cube_dim, j, kind, multi_indices(b.cube_dim, j)) for b, j in zip(cont, degrees)
    )
    return TensorBasis(kind, degrees, blocks)


def _z_factors(J, kind):
    """``int_{-1}^{1} psi_n(u) du`` for ``n = 0..J``."""
    j = np.arange(J + 1)
    mono = np.where(j % 2 == 0, 2.0 / (j + 1), 0.0)
    return change_of_basis(J, kind) @ mono


class _BlockRows:
    """Row and target evaluator of one continuous block."""

    def __init__(self, block, bb):
        self.block = block
        self.bb = bb
        self.J = bb.degree
        self.kind = bb.kind
        self.C = change_of_basis(self.J, self.kind)
        D = block.cube_dim
        self.scale = float(block.scale)
        A = bb.alphas
        used = set(block.axes)
        z = _z_factors(self.J, self.kind)
        self.const = np.full(A.shape[0], self.scale ** (D / 2.0))
        for i in range(D):
            if i not in used:
                self.const = self.const * z[A[:, i]]
        self.A = A
        self._m2 = None
        if block.restriction == RestrictionKind.INDEPENDENCE and block.kernel.kind is KernelKind.EXPONENTIAL:
            self._m2 = self._independence_mean()
        if block.restriction == RestrictionKind.CONDITIONAL_INDEPENDENCE:
            self._cond_setup()

    # -- helpers ---------------------------------------------------------

    def _E(self, tau):
        """``E_n(tau) = int psi_n(u) exp(tau u) du``; shape ``tau.shape + (J+1,)``."""
        return kernels.exp_monomial_table(self.J, tau) @ self.C.T

    def _exp_product(self, tc, positions):
        """Product over ``positions`` (into ``block.coords``) of ``E_{alpha_axis}``."""
        n = tc.shape[0]
        out = np.ones((n, self.A.shape[0]))
        if not positions:
            return out
        E = self._E(self.scale * tc[:, positions])
        for col, k in enumerate(positions):
            out *= E[:, col, :][:, self.A[:, self.block.axes[k]]]
        return out

    def _quad_setup(self, q):
        rule = kernels.default_rule(self.J)
        return rule.tensor(q)

    def _psi_used(self, pts, positions):
        """Basis factors over the used axes at quadrature nodes ``pts (Q, len(positions))``."""
        P = eval_univariate(self.J, self.kind, pts)
        out = np.ones((pts.shape[0], self.A.shape[0]))
        for col, k in enumerate(positions):
            out *= P[:, col, :][:, self.A[:, self.block.axes[k]]]
        return out

    def _independence_mean(self):
        b = self.block
        u, w = marginal_nodes(b.marginal)
        pos2 = [b.coords.index(i) for i in b.groups[1]]
        tc = np.zeros((u.shape[0], len(b.coords)))
        tc[:, pos2] = u
        acc = np.zeros(self.A.shape[0])
        for lo in range(0, u.shape[0], ROW_CHUNK):
            acc += w[lo:lo + ROW_CHUNK] @ self._exp_product(tc[lo:lo + ROW_CHUNK], pos2)
        return acc

    def _cond_setup(self):
        b = self.block
        self._p1 = [b.coords.index(i) for i in b.groups[0]]
        self._p23 = [b.coords.index(i) for i in b.groups[1] + b.groups[2]]
        self._p3 = [b.coords.index(i) for i in b.groups[2]]
        pts, wts = self._quad_setup(len(self._p1))
        self._cq_pts = pts
        # weighted basis over I1 axes, tensor-indexed by the I1 components of alpha
        self._cq_psi = self._psi_used(pts, self._p1) * wts[:, None]

    # -- rows ------------------------------------------------------------

    def rows(self, T):
        b = self.block
        tc = T[:, list(b.coords)]
        allpos = list(range(len(b.coords)))
        if b.restriction == RestrictionKind.MARGINAL:
            if b.kernel.kind is KernelKind.EXPONENTIAL:
                return self._exp_product(tc, allpos) * self.const
            return self._matern_rows(tc) * self.const
        if b.restriction == RestrictionKind.INDEPENDENCE:
            if self._m2 is not None:
                pos1 = [b.coords.index(i) for i in b.groups[0]]
                pos2 = [b.coords.index(i) for i in b.groups[1]]
                f1 = self._exp_product(tc, pos1)
                f2 = self._exp_product(tc, pos2)
                return f1 * (f2 - self._m2) * self.const
            return self._matern_independence_rows(tc) * self.const
        # conditional independence
        full = self._exp_product(tc, allpos)
        rest = self._exp_product(tc, self._p23)
        n, Q = tc.shape[0], self._cq_pts.shape[0]
        s1 = np.broadcast_to(self.scale * self._cq_pts[None], (n, Q, len(self._p1))).reshape(n * Q, -1)
        t3 = np.repeat(tc[:, self._p3], Q, axis=0)
        cm = np.asarray(b.cond_mgf(s1, t3), dtype=float).reshape(n, Q)
        if not np.all(np.isfinite(cm)):
            raise ConfigError("conditional MGF returned non-finite values")
        g = cm @ self._cq_psi
        return (full - g * rest) * self.const

    def _matern_rows(self, tc, pts_wts=None):
        q = tc.shape[1]
        pts, wts = pts_wts or self._quad_setup(q)
        psi = self._psi_used(pts, list(range(q))) * wts[:, None]
        out = np.empty((tc.shape[0], self.A.shape[0]))
        step = max(1, QUAD_BUDGET // pts.shape[0])
        for lo in range(0, tc.shape[0], step):
            K = kernels.kernel_matrix(self.block.kernel, tc[lo:lo + step], self.scale * pts)
            out[lo:lo + step] = K @ psi
        return out

    def _matern_independence_rows(self, tc):
        b = self.block
        u, w = marginal_nodes(b.marginal)
        pos2 = [b.coords.index(i) for i in b.groups[1]]
        pw = self._quad_setup(tc.shape[1])
        out = self._matern_rows(tc, pw)
        for uk, wk in zip(u, w):
            sub = tc.copy()
            sub[:, pos2] = uk
            out -= wk * self._matern_rows(sub, pw)
        return out

    # -- targets ---------------------------------------------------------

    def target(self):
        b = self.block
        if b.restriction != RestrictionKind.MARGINAL:
            return np.zeros(self.A.shape[0])
        tgt = b.target
        if isinstance(tgt, EmpiricalTarget):
            if not tgt.resolved:
                raise DataError(f"empirical target references unresolved dataset {tgt.dataset!r}")
            pts, wts = tgt.samples, np.full(tgt.samples.shape[0], 1.0 / tgt.samples.shape[0])
        elif isinstance(tgt, AnalyticTarget) and tgt.law is not None:
            pts, wts = tgt.law.nodes()
        elif isinstance(tgt, AnalyticTarget) and tgt.function is not None:
            return self._function_target(tgt.function)
        else:
            raise ConfigError("marginal target needs a law, a function or a sample")
        pts = np.atleast_2d(pts)
        if pts.shape[1] != len(b.coords):
            raise ConfigError(f"target has {pts.shape[1]} coordinates, restriction has {len(b.coords)}")
        full = np.zeros((pts.shape[0], max(b.coords) + 1))
        full[:, list(b.coords)] = pts
        acc = np.zeros(self.A.shape[0])
        for lo in range(0, pts.shape[0], ROW_CHUNK):
            acc += wts[lo:lo + ROW_CHUNK] @ self.rows(full[lo:lo + ROW_CHUNK])
        return acc

    def _function_target(self, fn):
        q = len(self.block.coords)
        pts, wts = self._quad_setup(q)
        vals = np.asarray(fn(self.scale * pts), dtype=float).ravel()
        if vals.shape != (pts.shape[0],) or not np.all(np.isfinite(vals)):
            raise ConfigError("target function must return one finite value per point")
        psi = self._psi_used(pts, list(range(q)))
        return (wts * vals) @ psi * self.const


@dataclass
class ProjectedProblem:
    """Finite image of a moment system under a tensor basis.

    ``groups`` maps each coefficient to ``"continuous"`` or ``"discrete"``
    (the atom counts as discrete).
    """

    system: object
    basis: TensorBasis
    c_vec: np.ndarray
    block_slices: tuple
    groups: np.ndarray
    _evaluators: tuple = field(repr=False, default=())

    @property
    def size(self):
        return self.c_vec.size

    @property
    def support(self):
        return self.system.support

    @property
    def continuous_mask(self):
        return self.groups == "continuous"

    def row_eval(self, T):
        """Constraint rows ``(n, size)`` for support points ``T (n, d)``."""
        T = np.atleast_2d(np.asarray(T, dtype=float))
        if T.shape[1] != self.system.support.dimension:
            raise ConfigError(f"points have {T.shape[1]} coordinates, support has {self.system.support.dimension}")
        out = np.empty((T.shape[0], self.size))
        for ev, sl in zip(self._evaluators, self.block_slices):
            out[:, sl] = ev(T)
        return out

    def cost_eval(self, T):
        T = np.atleast_2d(np.asarray(T, dtype=float))
        return np.asarray(self.system.cost(T), dtype=float).reshape(T.shape[0])


def _discrete_rows(block):
    def ev(T):
        out = np.empty((T.shape[0], len(block.nodes)))
        for j, node in enumerate(block.nodes):
            out[:, j] = node.function(T[:, list(node.indices)])
        return out

    return ev


def project_targets(system, basis):
    """Target coefficient vector ``c_vec``."""
    return project(system, basis).c_vec


def constraint_row(system, basis, t):
    """Row ``<a(t), phi>`` at a single point ``t``."""
    return project(system, basis).row_eval(np.asarray(t, dtype=float)[None, :])[0]


def project(system, basis):
    """Build the :class:`ProjectedProblem` of ``system`` on ``basis``."""
    evaluators, slices, targets, groups = [], [], [], []
    pos = 0
    cont = system.continuous_blocks
    if len(cont) != len(basis.blocks):
        raise ConfigError("basis does not match the system's continuous blocks")
    for block, bb in zip(cont, basis.blocks):
        br = _BlockRows(block, bb)
        evaluators.append(br.rows)
        slices.append(slice(pos, pos + bb.size))
        targets.append(br.target())
        groups += ["continuous"] * bb.size
        pos += bb.size
    disc = system.discrete_block
    if disc is not None:
        evaluators.append(_discrete_rows(disc))
        slices.append(slice(pos, pos + len(disc.nodes)))
        targets.append(np.array([n.target for n in disc.nodes], dtype=float))
        groups += ["discrete"] * len(disc.nodes)
        pos += len(disc.nodes)
    evaluators.append(lambda T: np.ones((T.shape[0], 1)))
    slices.append(slice(pos, pos + 1))
    targets.append(np.ones(1))
    groups.append("discrete")
    c_vec = np.concatenate(targets)
    if not np.all(np.isfinite(c_vec)):
        raise ConfigError("projected targets are not finite")
    return ProjectedProblem(system, basis, c_vec, tuple(slices), np.array(groups), tuple(evaluators))
