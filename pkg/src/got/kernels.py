"""Characteristic kernels and integrals of their sections against polynomials.

Two kernels are supported: the exponential kernel ``K(u, v) = exp(u'v)``,
whose mean embedding is the moment generating function, and the Matern
kernel in the normalisation

    K(x, y) = 2^(1-eta) / Gamma(eta) * (sqrt(2) eta r)^eta * K_eta(sqrt(2) eta r),

with ``r = ||x - y||`` and ``K_eta`` the modified Bessel function of the
second kind.  Sections of the exponential kernel integrate against monomials
in closed form (:func:`exp_monomial_integral`); Matern sections go through
tensor Gauss-Legendre quadrature (:func:`quad_integral`).
"""

import enum
import functools
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import ConfigError, NumericError

# below this |t| the closed-form recursion is replaced by quadrature
SMALL_T = 1e-4
SMALL_T_NODES = 40
SCALAR_PATH_MAX = 4


class KernelKind(str, enum.Enum):
    EXPONENTIAL = "exponential"
    MATERN = "matern"


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus its parameters.

    ``dimension`` is the ambient dimension of the pair of arguments, so each
    argument has ``dimension // 2`` coordinates.
    """

    kind: KernelKind = KernelKind.EXPONENTIAL
    smoothness: float = 0.5
    dimension: int = 2

    def __post_init__(self):
        object.__setattr__(self, "kind", KernelKind(self.kind))
        if self.dimension < 2 or self.dimension % 2:
            raise ConfigError(f"kernel dimension must be a positive even integer, got {self.dimension}")
        if self.kind is KernelKind.MATERN and not self.smoothness > 0:
            raise ConfigError(f"Matern smoothness must be positive, got {self.smoothness}")

    @property
    def arg_dim(self):
        return self.dimension // 2

    def with_arg_dim(self, q):
        return KernelSpec(self.kind, self.smoothness, 2 * q)


def exponential(q=1):
    return KernelSpec(KernelKind.EXPONENTIAL, dimension=2 * q)


def matern(eta, q=1):
    return KernelSpec(KernelKind.MATERN, smoothness=eta, dimension=2 * q)


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Legendre rule on [-1, 1], applied per axis."""

    nodes_per_axis: int
    points: np.ndarray = field(repr=False, compare=False, default=None)
    weights: np.ndarray = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        if self.nodes_per_axis < 1:
            raise ConfigError("nodes_per_axis must be positive")
        x, w = _leggauss(self.nodes_per_axis)
        object.__setattr__(self, "points", x)
        object.__setattr__(self, "weights", w)

    @property
    def exact_degree(self):
        return 2 * self.nodes_per_axis - 1

    @property
    def nodes(self):
        return list(zip(self.points.tolist(), self.weights.tolist()))

    def tensor(self, q):
        """Tensor-product nodes ``(Q**q, q)`` and weights ``(Q**q,)`` on [-1,1]^q."""
        return _tensor_rule(self.nodes_per_axis, q)


@functools.lru_cache(maxsize=64)
def _leggauss(n):
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@functools.lru_cache(maxsize=64)
def _tensor_rule(n, q):
    x, w = _leggauss(n)
    pts = np.array(list(itertools.product(x, repeat=q))).reshape(-1, q)
    wts = np.prod(np.array(list(itertools.product(w, repeat=q))).reshape(-1, q), axis=1)
    pts.setflags(write=False)
    wts.setflags(write=False)
    return pts, wts


def default_rule(degree):
    return QuadratureRule(max(20, int(degree) + 10))


def matern_profile(r, eta):
    """Matern kernel as a function of the distance ``r`` (vectorised)."""
    r = np.asarray(r, dtype=float)
    z = math.sqrt(2.0) * eta * r
    out = np.ones_like(z)
    pos = z > 0
    if np.any(pos):
        zp = z[pos]
        with np.errstate(over="ignore", invalid="ignore"):
            val = (2.0 ** (1.0 - eta) / special.gamma(eta)) * zp**eta * special.kv(eta, zp)
        bad = ~np.isfinite(val)
        if np.any(bad):
            # Bessel overflow only occurs extremely close to the diagonal
            tiny = zp < 1e-3
            if np.any(bad & ~tiny):
                r_bad = float(r[pos][bad & ~tiny][0])
                raise NumericError(f"Matern evaluation overflowed at distance {r_bad!r}")
            val[bad] = 1.0
        out[pos] = val
    return out


def kernel_matrix(spec, S, T):
    """Kernel values ``K(S[i], T[j])`` for point arrays ``S (n, q)``, ``T (m, q)``."""
    S = np.atleast_2d(np.asarray(S, dtype=float))
    T = np.atleast_2d(np.asarray(T, dtype=float))
    q = spec.arg_dim
    if S.shape[1] != q or T.shape[1] != q:
        raise ConfigError(f"kernel expects arguments of length {q}, got {S.shape[1]} and {T.shape[1]}")
    if spec.kind is KernelKind.EXPONENTIAL:
        return np.exp(S @ T.T)
    diff = S[:, None, :] - T[None, :, :]
    r = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return matern_profile(r, spec.smoothness)


def kernel_eval(spec, s, t):
    """Evaluate ``K(s, t)`` for two points of length ``spec.dimension / 2``."""
    s = np.asarray(s, dtype=float).ravel()
    t = np.asarray(t, dtype=float).ravel()
    q = spec.arg_dim
    if s.size != q or t.size != q:
        raise ConfigError(f"kernel expects arguments of length {q}, got {s.size} and {t.size}")
    if spec.kind is KernelKind.EXPONENTIAL:
        return float(math.exp(float(np.dot(s, t))))
    r = float(np.sqrt(np.sum((s - t) ** 2)))
    return float(matern_profile(np.array([r]), spec.smoothness)[0])


def exp_monomial_table(J, t):
    """``I_j(t) = int_{-1}^{1} exp(t s) s^j ds`` for ``j = 0..J`` and every ``t``.

    Returns an array of shape ``t.shape + (J + 1,)``.

    The two-term recursion ``I_j = (e^t + (-1)^[j even] e^-t)/t - (j/t) I_{j-1}``
    amplifies rounding error by ``j/|t|`` per step, so it is run upward only
    while ``j <= |t|``; the remaining indices come from the same recursion run
    downward from a power-series seed at ``j = J``.  ``t = 0`` uses the closed
    form and ``0 < |t| < SMALL_T`` uses 40-node Gauss-Legendre.
    """
    t = np.asarray(t, dtype=float)
    shape = t.shape
    t = t.ravel()
    J = int(J)
    if J < 0:
        raise ValueError("J must be non-negative")
    if t.size <= SCALAR_PATH_MAX:
        # the cutting-plane polish evaluates single points; skip array overhead
        return np.array([_table_scalar(J, float(v)) for v in t]).reshape(shape + (J + 1,))
    out = np.empty((t.size, J + 1))
    a = np.abs(t)
    j = np.arange(J + 1)

    zero = a == 0.0
    if np.any(zero):
        out[zero] = np.where(j % 2 == 0, 2.0 / (j + 1), 0.0)

    small = (a > 0) & (a < SMALL_T)
    if np.any(small):
        x, w = _leggauss(SMALL_T_NODES)
        e = np.exp(np.outer(a[small], x)) * w
        out[small] = e @ (x[:, None] ** j[None, :])

    big = a >= SMALL_T
    if np.any(big):
        out[big] = _recursion_table(J, a[big])

    odd = (t < 0)[:, None] & (j % 2 == 1)[None, :]
    out = np.where(odd, -out, out)
    return out.reshape(shape + (J + 1,))


def _table_scalar(J, t):
    a = abs(t)
    if a == 0.0:
        return [2.0 / (j + 1) if j % 2 == 0 else 0.0 for j in range(J + 1)]
    if a < SMALL_T:
        x, w = _leggauss(SMALL_T_NODES)
        e = np.exp(a * x) * w
        res = list(e @ (x[:, None] ** np.arange(J + 1)[None, :]))
    else:
        ep, em = math.exp(a), math.exp(-a)
        bnd = (ep - em, ep + em)
        res = [0.0] * (J + 1)
        res[0] = bnd[0] / a
        m = min(int(math.floor(a)), J)
        for j in range(1, m + 1):
            res[j] = (bnd[j % 2] - j * res[j - 1]) / a
        if m < J:
            cur = float(_series(J, np.array([a]))[0])
            res[J] = cur
            for j in range(J, m + 1, -1):
                cur = (bnd[j % 2] - a * cur) / j
                res[j - 1] = cur
    if t < 0:
        res = [-v if j % 2 else v for j, v in enumerate(res)]
    return res


def _recursion_table(J, a):
    n = a.size
    res = np.empty((n, J + 1))
    ep, em = np.exp(a), np.exp(-a)
    # boundary terms e^a + (-1)^[j even] e^-a
    bnd_even, bnd_odd = ep - em, ep + em
    res[:, 0] = bnd_even / a
    # highest index reached stably by the upward pass, per point
    m = np.minimum(np.floor(a).astype(int), J)
    for jj in range(1, J + 1):
        up = m >= jj
        if not np.any(up):
            break
        bnd = bnd_even if jj % 2 == 0 else bnd_odd
        res[up, jj] = (bnd[up] - jj * res[up, jj - 1]) / a[up]
    down = m < J
    if np.any(down):
        ad = a[down]
        seed = _series(J, ad)
        cur = seed
        block = np.empty((ad.size, J + 1))
        block[:, J] = seed
        for jj in range(J, 0, -1):
            bnd = (bnd_even if jj % 2 == 0 else bnd_odd)[down]
            cur = (bnd - ad * cur) / jj
            block[:, jj - 1] = cur
        md = m[down]
        keep = np.arange(J + 1)[None, :] > md[:, None]
        sub = res[down]
        sub[keep] = block[keep]
        res[down] = sub
    return res


def _series(J, a):
    """Power series of ``I_J(a)`` for ``a >= 0`` (all terms non-negative)."""
    # I_J(a) = sum_m a^m / m! * 2 [J + m even] / (J + m + 1); terms peak near
    # m = a and decay factorially afterwards, so a fixed length suffices
    amax = float(np.max(a)) if a.size else 0.0
    M = int(3 * amax) + 40
    m = np.arange(0, M + 1, dtype=float)
    keep = (J + m) % 2 == 0
    m = m[keep]
    logfact = special.gammaln(m + 1)
    with np.errstate(divide="ignore"):
        loga = np.log(a)[:, None]
    logterm = np.where(m[None, :] == 0, 0.0, m[None, :] * loga) - logfact[None, :]
    return np.exp(logterm) @ (2.0 / (J + m + 1))


def exp_monomial_integral(j, t):
    """``int_{-1}^{1} exp(t s) s^j ds`` for a single non-negative integer ``j``."""
    if j < 0:
        raise ValueError("j must be non-negative")
    return float(exp_monomial_table(j, np.array([float(t)]))[0, j])


def quad_integral(spec, fixed_arg, monomial_exponents, rule=None):
    """``int_{[-1,1]^q} K(s, fixed_arg) prod_i s_i^alpha_i ds`` by tensor quadrature."""
    fixed_arg = np.asarray(fixed_arg, dtype=float).ravel()
    alpha = np.asarray(monomial_exponents, dtype=int).ravel()
    q = spec.arg_dim
    if fixed_arg.size != q or alpha.size != q:
        raise ConfigError(f"expected {q} coordinates, got fixed_arg={fixed_arg.size}, exponents={alpha.size}")
    if np.any(alpha < 0):
        raise ValueError("monomial exponents must be non-negative")
    if rule is None:
        rule = default_rule(int(alpha.max(initial=0)))
    if int(alpha.max(initial=0)) > rule.exact_degree:
        raise ConfigError(
            f"quadrature with {rule.nodes_per_axis} nodes is exact to degree {rule.exact_degree}, "
            f"requested monomial degree {int(alpha.max())}"
        )
    pts, wts = rule.tensor(q)
    k = kernel_matrix(spec, pts, fixed_arg[None, :])[:, 0]
    mono = np.prod(pts ** alpha[None, :], axis=1)
    return float(np.sum(wts * k * mono))
