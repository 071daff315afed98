"""Identification restrictions encoded as moment blocks.

Every restriction becomes a family of moment equalities
``E_P[a(T)(s)] = c(s)`` indexed by ``s`` in a block of the index space:

* continuous blocks live on disjoint shifted cubes (side ``2 * scale``) with
  Lebesgue measure; identified marginals, independence and conditional
  independence each produce one such block;
* all finitely many moments of bounded functions are merged into a single
  discrete block (counting measure);
* a final atom ``s*`` with ``a(t)(s*) = c(s*) = 1`` pins total mass.

Coordinates are 0-based throughout the Python API.
"""

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .errors import ConfigError, DataError, UnsupportedRestrictionError
from .kernels import KernelKind, KernelSpec
from .support import SupportSet

GRID_CHECK_RESOLUTION = 9
BOUNDED_LIMIT = 1e12


class RestrictionKind(str, enum.Enum):
    MARGINAL = "marginal"
    INDEPENDENCE = "independence"
    CONDITIONAL_INDEPENDENCE = "conditional_independence"
    DISCRETE_MOMENTS = "discrete_moments"


class BlockKind(str, enum.Enum):
    CONTINUOUS = "continuous"
    DISCRETE = "discrete"
    ATOM = "atom"


# --------------------------------------------------------------------------
# targets


class Law:
    """A known distribution of a sub-vector, represented by weighted nodes."""

    def nodes(self):
        raise NotImplementedError

    def expect(self, fn):
        pts, wts = self.nodes()
        return np.tensordot(wts, fn(pts), axes=(0, 0))


@dataclass(frozen=True)
class UniformLaw(Law):
    """Product of independent uniforms on ``box`` (one row per coordinate)."""

    box: tuple
    nodes_per_axis: int = 24

    def nodes(self):
        box = np.asarray(self.box, dtype=float).reshape(-1, 2)
        u, w = kernels.QuadratureRule(self.nodes_per_axis).tensor(box.shape[0])
        lo, hi = box[:, 0], box[:, 1]
        pts = lo + (u + 1.0) * 0.5 * (hi - lo)
        return pts, w / 2.0 ** box.shape[0]

    @property
    def dim(self):
        return len(self.box)


@dataclass(frozen=True)
class DiscreteLaw(Law):
    points: tuple
    probs: tuple

    def nodes(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        p = np.asarray(self.probs, dtype=float)
        if pts.shape[0] != p.size:
            raise ConfigError("discrete law needs one probability per point")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ConfigError("discrete law probabilities must be non-negative and sum to one")
        return pts, p

    @property
    def dim(self):
        return np.atleast_2d(np.asarray(self.points)).shape[1]


def point_mass(point):
    return DiscreteLaw((tuple(np.atleast_1d(point).tolist()),), (1.0,))


@dataclass(frozen=True)
class AnalyticTarget:
    """Population target: either a law of ``T_I`` or a function ``c(s_I)``.

    With a law, the target is ``E_law[K(s_I, T_I)]`` for every ``s``.  A bare
    function is integrated against the basis directly.  For discrete moment
    blocks ``values`` holds the target of each function.
    """

    law: Law = None
    function: object = None
    values: tuple = None


@dataclass(frozen=True)
class EmpiricalTarget:
    """Sample-based target.  ``samples`` holds the rows restricted to the
    restriction's indices; ``dataset`` names the dataset to take them from."""

    dataset: str = None
    samples: np.ndarray = field(default=None, compare=False, repr=False)

    @property
    def resolved(self):
        return self.samples is not None


@dataclass
class Dataset:
    """Sample of some coordinates of ``T``.

    ``columns`` maps a 0-based coordinate of ``T`` to a column of ``rows``.
    """

    name: str
    columns: dict
    rows: np.ndarray

    def __post_init__(self):
        self.rows = np.atleast_2d(np.asarray(self.rows, dtype=float))
        self.columns = {int(k): int(v) for k, v in self.columns.items()}
        if self.rows.shape[0] < 1:
            raise DataError(f"dataset {self.name!r} has no rows")
        if np.any(~np.isfinite(self.rows)):
            raise DataError(f"dataset {self.name!r} contains missing or non-finite values")
        if len(set(self.columns.values())) != len(self.columns):
            raise DataError(f"dataset {self.name!r} maps two coordinates to the same column")
        if max(self.columns.values(), default=-1) >= self.rows.shape[1]:
            raise DataError(f"dataset {self.name!r} column map exceeds the number of columns")

    @property
    def n(self):
        return self.rows.shape[0]

    def select(self, indices, who=""):
        missing = [i for i in indices if i not in self.columns]
        if missing:
            names = ", ".join(f"t{i + 1}" for i in missing)
            raise DataError(f"dataset {self.name!r} does not cover {names}{' needed by ' + who if who else ''}")
        return self.rows[:, [self.columns[i] for i in indices]]

    def check_support(self, support):
        for coord, col in self.columns.items():
            lo, hi = support.box[coord]
            vals = self.rows[:, col]
            bad = np.flatnonzero((vals < lo - 1e-12) | (vals > hi + 1e-12))
            if bad.size:
                raise DataError(
                    f"dataset {self.name!r}: value {float(vals[bad[0]])!r} in row {bad[0] + 1} for t{coord + 1} "
                    f"lies outside the support interval [{lo}, {hi}]"
                )


# --------------------------------------------------------------------------
# restrictions and blocks


@dataclass(frozen=True)
class RestrictionSpec:
    """Declarative identification restriction.

    ``indices`` holds one index tuple for marginals and discrete moments, two
    for independence (``I1``, ``I2``) and three for conditional independence.
    """

    kind: RestrictionKind
    indices: tuple
    kernel: KernelSpec = None
    target: object = None
    cond_mgf: object = None
    functions: tuple = None
    delta: float = 1.0
    full_cube: bool = True
    label: str = None

    def __post_init__(self):
        object.__setattr__(self, "kind", RestrictionKind(self.kind))
        idx = tuple(tuple(int(i) for i in group) for group in self.indices)
        object.__setattr__(self, "indices", idx)


def _check_indices(groups, d, disjoint=True):
    seen = set()
    for g in groups:
        if not g:
            raise ConfigError("restriction index sets must be non-empty")
        if len(set(g)) != len(g):
            raise ConfigError(f"repeated index in {g}")
        for i in g:
            if not 0 <= i < d:
                raise ConfigError(f"index {i} out of range for dimension {d}")
        if disjoint and seen & set(g):
            raise ConfigError(f"index sets {groups} must be disjoint")
        seen |= set(g)


@dataclass(frozen=True)
class DiscreteNode:
    function: object
    indices: tuple
    target: float


@dataclass(frozen=True)
class MomentBlock:
    """One sub-domain of the index space with its constraint map and target.

    For continuous blocks the cube is ``offset + scale * [-1, 1]^cube_dim``;
    ``axes[k]`` is the cube axis that the kernel reads for coordinate
    ``coords[k]`` of ``T``.
    """

    block_id: int
    block_kind: BlockKind
    restriction: str
    offset: float = 0.0
    cube_dim: int = 0
    scale: float = 1.0
    kernel: KernelSpec = None
    coords: tuple = ()
    axes: tuple = ()
    groups: tuple = ()
    target: object = None
    marginal: object = None
    cond_mgf: object = None
    nodes: tuple = ()
    label: str = None

    @property
    def n_nodes(self):
        if self.block_kind is BlockKind.DISCRETE:
            return len(self.nodes)
        return 1 if self.block_kind is BlockKind.ATOM else 0

    def local(self, s):
        """Map a point of the shifted cube to kernel-argument coordinates."""
        return np.asarray(s, dtype=float) - self.offset

    def a_eval(self, t, s):
        """``a(t)(s)`` at a single support point ``t``.

        ``s`` is a point of the block's cube for continuous blocks and a node
        index for discrete blocks (ignored for the atom).
        """
        t = np.asarray(t, dtype=float).ravel()
        if self.block_kind is BlockKind.ATOM:
            return 1.0
        if self.block_kind is BlockKind.DISCRETE:
            node = self.nodes[int(s)]
            return float(node.function(t[list(node.indices)][None, :])[0])
        sig = self.local(s).ravel()
        sig_c = sig[list(self.axes)]
        t_c = t[list(self.coords)]
        if self.restriction == RestrictionKind.MARGINAL:
            return kernels.kernel_eval(self.kernel, sig_c, t_c)
        if self.restriction == RestrictionKind.INDEPENDENCE:
            return float(independence_section(self, sig_c[None, :], t_c[None, :])[0, 0])
        return float(cond_independence_section(self, sig_c[None, :], t_c[None, :])[0, 0])

    def c_eval(self, s):
        """Target ``c(s)`` (continuous blocks: a cube point; discrete: node index)."""
        if self.block_kind is BlockKind.ATOM:
            return 1.0
        if self.block_kind is BlockKind.DISCRETE:
            return float(self.nodes[int(s)].target)
        if self.restriction != RestrictionKind.MARGINAL:
            return 0.0
        sig_c = self.local(s).ravel()[list(self.axes)]
        tgt = self.target
        if isinstance(tgt, EmpiricalTarget):
            return float(np.mean(kernels.kernel_matrix(self.kernel, sig_c[None, :], tgt.samples)[0]))
        if tgt.function is not None:
            return float(np.asarray(tgt.function(sig_c[None, :])).ravel()[0])
        return float(tgt.law.expect(lambda pts: kernels.kernel_matrix(self.kernel, pts, sig_c[None, :])[:, 0]))


def marginal_nodes(marginal):
    """Weighted points ``(u, w)`` of an independence block's reference marginal."""
    if isinstance(marginal, EmpiricalTarget):
        u = marginal.samples
        return u, np.full(u.shape[0], 1.0 / u.shape[0])
    if isinstance(marginal, AnalyticTarget) and marginal.law is not None:
        return marginal.law.nodes()
    raise ConfigError("independence restrictions need the marginal of T_I2 as a law or a sample")


def independence_section(block, sig, tc):
    """``a(t)(s)`` of an independence block for kernel args ``sig (m, k)`` and ``tc (n, k)``.

    Returns ``(n, m)``.
    """
    n1 = len(block.groups[0])
    pos1 = [block.coords.index(i) for i in block.groups[0]]
    pos2 = [block.coords.index(i) for i in block.groups[1]]
    joint = kernels.kernel_matrix(block.kernel, tc, sig)
    u, w = marginal_nodes(block.marginal)
    avg = np.zeros_like(joint)
    for uk, wk in zip(u, w):
        sub = tc.copy()
        sub[:, pos2] = uk
        avg += wk * kernels.kernel_matrix(block.kernel, sub, sig)
    del n1, pos1
    return joint - avg


def cond_independence_section(block, sig, tc):
    """``a(t)(s)`` of a conditional-independence block; ``(n, m)``."""
    p1 = [block.coords.index(i) for i in block.groups[0]]
    p23 = [block.coords.index(i) for i in block.groups[1] + block.groups[2]]
    p3 = [block.coords.index(i) for i in block.groups[2]]
    full = np.exp(tc @ sig.T)
    rest = np.exp(tc[:, p23] @ sig[:, p23].T)
    n, m = tc.shape[0], sig.shape[0]
    s1 = np.repeat(sig[None, :, :][:, :, p1], n, axis=0).reshape(n * m, len(p1))
    t3 = np.repeat(tc[:, None, p3], m, axis=1).reshape(n * m, len(p3))
    cm = np.asarray(block.cond_mgf(s1, t3), dtype=float).reshape(n, m)
    return full - cm * rest


# --------------------------------------------------------------------------
# encoders


def _cube_layout(indices, d, full_cube):
    coords = tuple(sorted(indices))
    if full_cube:
        return d, coords
    return len(coords), tuple(range(len(coords)))


def _kernel_for(kernel, q):
    if kernel is None:
        kernel = kernels.exponential(q)
    if kernel.arg_dim != q:
        raise ConfigError(f"kernel dimension {kernel.dimension} does not match 2*|I| = {2 * q}")
    return kernel


def encode_marginal(support, indices, kernel=None, target=None, full_cube=True, label=None):
    """Identified joint distribution of ``T_I``: ``a(t)(s) = K(s_I, t_I)``."""
    indices = tuple(int(i) for i in indices)
    _check_indices([indices], support.dimension)
    if tuple(sorted(indices)) != indices:
        raise ConfigError(f"marginal indices must be listed in increasing order, got {indices}")
    kernel = _kernel_for(kernel, len(indices))
    if target is None:
        raise ConfigError("marginal restriction needs a target (law, function, or sample)")
    target = _as_target(target)
    cube_dim, axes = _cube_layout(indices, support.dimension, full_cube)
    return MomentBlock(
        block_id=-1,
        block_kind=BlockKind.CONTINUOUS,
        restriction=RestrictionKind.MARGINAL,
        cube_dim=cube_dim,
        kernel=kernel,
        coords=indices,
        axes=axes,
        groups=(indices,),
        target=target,
        label=label,
    )


def encode_independence(support, indices1, indices2, kernel=None, marginal=None, full_cube=True, label=None):
    """``T_I1`` independent of ``T_I2`` given the identified marginal of ``T_I2``."""
    g1 = tuple(sorted(int(i) for i in indices1))
    g2 = tuple(sorted(int(i) for i in indices2))
    _check_indices([g1, g2], support.dimension)
    if marginal is None:
        raise ConfigError("independence restriction requires the marginal of T_I2 (analytic law or sample)")
    marginal = _as_target(marginal)
    if isinstance(marginal, AnalyticTarget) and marginal.law is None:
        raise ConfigError("independence restriction requires the marginal of T_I2 as a law, not a function")
    coords = tuple(sorted(g1 + g2))
    kernel = _kernel_for(kernel, len(coords))
    cube_dim, axes = _cube_layout(coords, support.dimension, full_cube)
    return MomentBlock(
        block_id=-1,
        block_kind=BlockKind.CONTINUOUS,
        restriction=RestrictionKind.INDEPENDENCE,
        cube_dim=cube_dim,
        kernel=kernel,
        coords=coords,
        axes=axes,
        groups=(g1, g2),
        target=AnalyticTarget(values=(0.0,)),
        marginal=marginal,
        label=label,
    )


def encode_conditional_independence(support, indices1, indices2, indices3, cond_mgf=None, delta=1.0,
                                    full_cube=True, label=None):
    """``T_I1`` independent of ``T_I2`` given ``T_I3``, via a user-supplied
    conditional MGF ``cond_mgf(s1 (m, |I1|), t3 (m, |I3|)) -> (m,)``."""
    g = [tuple(sorted(int(i) for i in grp)) for grp in (indices1, indices2, indices3)]
    _check_indices(g, support.dimension)
    if cond_mgf is None:
        raise UnsupportedRestrictionError(
            "conditional independence needs the conditional MGF of T_I1 given T_I3; "
            "estimating it from data is not supported"
        )
    if not delta > 0:
        raise ConfigError("delta must be positive")
    coords = tuple(sorted(g[0] + g[1] + g[2]))
    cube_dim, axes = _cube_layout(coords, support.dimension, full_cube)
    return MomentBlock(
        block_id=-1,
        block_kind=BlockKind.CONTINUOUS,
        restriction=RestrictionKind.CONDITIONAL_INDEPENDENCE,
        cube_dim=cube_dim,
        scale=float(delta),
        kernel=kernels.exponential(len(coords)),
        coords=coords,
        axes=axes,
        groups=tuple(g),
        target=AnalyticTarget(values=(0.0,)),
        cond_mgf=cond_mgf,
        label=label,
    )


def encode_discrete_moments(functions, targets, indices=None, support=None, label=None):
    """Moments ``E[B_j(T_I)] = c_j`` of bounded functions, one node each.

    ``functions`` take point arrays ``(n, |I|)``.  ``targets`` is a sequence of
    numbers, an :class:`AnalyticTarget` with ``values``, or an
    :class:`EmpiricalTarget` whose samples (restricted to ``I``) give the
    sample means.
    """
    functions = tuple(functions)
    if not functions:
        raise ConfigError("discrete moments need at least one function")
    if support is not None and indices is None:
        indices = tuple(range(support.dimension))
    indices = tuple(int(i) for i in indices)
    if isinstance(targets, EmpiricalTarget):
        if not targets.resolved:
            raise DataError(f"empirical target for discrete moments references unresolved dataset {targets.dataset!r}")
        vals = [float(np.mean(fn(targets.samples))) for fn in functions]
    elif isinstance(targets, AnalyticTarget):
        vals = list(targets.values)
    else:
        vals = [float(v) for v in np.atleast_1d(targets)]
    if len(vals) != len(functions):
        raise ConfigError(f"{len(functions)} functions but {len(vals)} targets")
    if support is not None:
        grid = support.grid(GRID_CHECK_RESOLUTION, max_points=20_000)
        for j, fn in enumerate(functions):
            v = np.asarray(fn(grid[:, list(indices)]), dtype=float)
            if np.any(~np.isfinite(v)) or np.max(np.abs(v), initial=0.0) > BOUNDED_LIMIT:
                raise ConfigError(f"discrete moment function {j} is unbounded on the support grid")
    nodes = tuple(DiscreteNode(fn, indices, v) for fn, v in zip(functions, vals))
    return MomentBlock(
        block_id=-1,
        block_kind=BlockKind.DISCRETE,
        restriction=RestrictionKind.DISCRETE_MOMENTS,
        nodes=nodes,
        label=label,
    )


def _as_target(target):
    if isinstance(target, (AnalyticTarget, EmpiricalTarget)):
        return target
    if isinstance(target, Law):
        return AnalyticTarget(law=target)
    if callable(target):
        return AnalyticTarget(function=target)
    arr = np.asarray(target, dtype=float)
    if arr.ndim == 2:
        return EmpiricalTarget(samples=arr)
    raise ConfigError(f"cannot interpret target {target!r}")


def _atom():
    return MomentBlock(block_id=-1, block_kind=BlockKind.ATOM, restriction="atom", label="atom")


# --------------------------------------------------------------------------
# systems


@dataclass(frozen=True)
class MomentSystem:
    support: SupportSet
    blocks: tuple
    cost: object
    metadata: dict = field(default_factory=dict, compare=False)

    @property
    def continuous_blocks(self):
        return [b for b in self.blocks if b.block_kind is BlockKind.CONTINUOUS]

    @property
    def discrete_block(self):
        for b in self.blocks:
            if b.block_kind is BlockKind.DISCRETE:
                return b
        return None

    @property
    def atom(self):
        return next(b for b in self.blocks if b.block_kind is BlockKind.ATOM)

    @property
    def n_discrete_nodes(self):
        return sum(b.n_nodes for b in self.blocks if b.block_kind is not BlockKind.CONTINUOUS)

    def cube_bounds(self, block):
        half = block.scale
        return block.offset - half, block.offset + half


def resolve_target(target, indices, datasets, who):
    if isinstance(target, EmpiricalTarget) and not target.resolved:
        if not datasets or target.dataset not in datasets:
            raise DataError(f"{who} references unknown dataset {target.dataset!r}")
        return EmpiricalTarget(dataset=target.dataset, samples=datasets[target.dataset].select(indices, who))
    return target


def encode(support, spec, datasets=None):
    """Encode one :class:`RestrictionSpec` as a moment block."""
    who = spec.label or spec.kind.value
    if spec.kind is RestrictionKind.MARGINAL:
        (idx,) = spec.indices
        tgt = resolve_target(spec.target, idx, datasets, who)
        return encode_marginal(support, idx, spec.kernel, tgt, spec.full_cube, spec.label)
    if spec.kind is RestrictionKind.INDEPENDENCE:
        i1, i2 = spec.indices
        tgt = resolve_target(spec.target, tuple(sorted(i2)), datasets, who)
        return encode_independence(support, i1, i2, spec.kernel, tgt, spec.full_cube, spec.label)
    if spec.kind is RestrictionKind.CONDITIONAL_INDEPENDENCE:
        i1, i2, i3 = spec.indices
        return encode_conditional_independence(support, i1, i2, i3, spec.cond_mgf, spec.delta, spec.full_cube,
                                               spec.label)
    idx = spec.indices[0] if spec.indices else tuple(range(support.dimension))
    tgt = resolve_target(spec.target, idx, datasets, who)
    return encode_discrete_moments(spec.functions, tgt, idx, support, spec.label)


def build_system(support, specs, cost, datasets=None, metadata=None):
    """Assemble restrictions into a :class:`MomentSystem`.

    Continuous blocks get disjoint cubes in declaration order (centres 0, 3,
    6, ... for unit scale); every discrete moment is merged into one discrete
    block; the normalisation atom comes last.
    """
    blocks = [s if isinstance(s, MomentBlock) else encode(support, s, datasets) for s in specs]
    continuous, nodes, labels = [], [], []
    offset, prev_half = None, None
    for b in blocks:
        if b.block_kind is BlockKind.CONTINUOUS:
            offset = 0.0 if offset is None else offset + prev_half + 1.0 + b.scale
            prev_half = b.scale
            continuous.append(replace(b, block_id=len(continuous), offset=offset))
        elif b.block_kind is BlockKind.DISCRETE:
            nodes.extend(b.nodes)
            labels.append(b.label)
        else:
            raise ConfigError("atom blocks are added automatically")
    for i, a in enumerate(continuous):
        for b in continuous[i + 1:]:
            if abs(a.offset - b.offset) < a.scale + b.scale + 1e-12:
                raise AssertionError("continuous block cubes overlap")  # internal guard
    out = list(continuous)
    if nodes:
        out.append(MomentBlock(block_id=len(out), block_kind=BlockKind.DISCRETE,
                               restriction=RestrictionKind.DISCRETE_MOMENTS, nodes=tuple(nodes),
                               label=",".join(filter(None, labels)) or None))
    out.append(replace(_atom(), block_id=len(out)))

    grid = support.grid(GRID_CHECK_RESOLUTION, max_points=20_000)
    vals = np.asarray(cost(grid), dtype=float)
    if vals.shape != (grid.shape[0],) or np.any(~np.isfinite(vals)):
        raise ConfigError("cost must be finite at every support grid point")
    return MomentSystem(support, tuple(out), cost, dict(metadata or {}))
