"""JSON problem configuration (schema version 1) and CSV datasets.

Coordinates are named ``t1 .. td`` (1-based) throughout the configuration.
A minimal configuration::

    {
      "version": 1,
      "support": {"dimension": 1, "box": [[-1, 1]]},
      "cost": "t1",
      "restrictions": []
    }

See ``configs/`` for complete examples of every section.
"""

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, DataError
from .expr import Expression, PointFunction, parse_assignment, point_names
from .moment_system import (
    AnalyticTarget,
    Dataset,
    DiscreteLaw,
    EmpiricalTarget,
    RestrictionKind,
    RestrictionSpec,
    UniformLaw,
)
from .support import SupportSet

SCHEMA_VERSION = 1
_TOP_KEYS = {"version", "name", "support", "cost", "restrictions", "datasets", "solver", "simulation", "oracle",
             "outputs"}
_SOLVER_KEYS = {"gamma", "degrees", "schedule", "tol", "max_iter", "grid_resolution", "ball", "basis", "seed",
                "interval", "eta", "r_star", "max_degree", "split_radii", "gamma_check", "polish_iters"}


@dataclass
class SolverConfig:
    gamma: object = None
    degrees: object = None
    schedule: str = "fixed"
    tol: float = 1e-6
    max_iter: int = 500
    grid_resolution: int = 21
    ball: str = "linf"
    basis: str = "legendre"
    seed: int = 0
    interval: bool = False
    eta: float = 1.0
    r_star: int = 4
    max_degree: int = 8
    split_radii: list = None
    gamma_check: bool = False
    polish_iters: int = 40


@dataclass
class ProblemConfig:
    raw: dict
    support: SupportSet = None
    cost: object = None
    cost_source: str = None
    restrictions: list = field(default_factory=list)
    datasets: dict = field(default_factory=dict)
    dataset_specs: dict = field(default_factory=dict)
    solver: SolverConfig = field(default_factory=SolverConfig)
    simulation: dict = None
    oracle: dict = None
    outputs: dict = field(default_factory=dict)
    base_dir: str = "."

    @property
    def dimension(self):
        return self.support.dimension


def _require(obj, key, where):
    if key not in obj:
        raise ConfigError(f"{where}: missing required key {key!r}")
    return obj[key]


def _check_keys(obj, allowed, where):
    extra = set(obj) - set(allowed)
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {sorted(extra)}")


def _coord(name, d, where):
    """``"t3"`` or ``3`` -> 0-based index."""
    if isinstance(name, str):
        if name not in point_names(d):
            raise ConfigError(f"{where}: {name!r} is not one of t1..t{d}")
        return point_names(d).index(name)
    k = int(name)
    if not 1 <= k <= d:
        raise ConfigError(f"{where}: coordinate {k} out of range 1..{d}")
    return k - 1


def _coords(items, d, where):
    if isinstance(items, (str, int)):
        items = [items]
    return tuple(_coord(x, d, where) for x in items)


def parse_support(obj):
    _check_keys(obj, {"dimension", "box", "discrete", "equalities", "constraints", "points"}, "support")
    d = int(_require(obj, "dimension", "support"))
    if d < 1:
        raise ConfigError("support: dimension must be positive")
    if "points" in obj:
        pts = np.asarray(obj["points"], dtype=float)
        if pts.ndim != 2 or pts.shape[1] != d:
            raise ConfigError(f"support: points must be a list of {d}-vectors")
        return SupportSet.finite(pts)
    box = obj.get("box", [[-1.0, 1.0]] * d)
    box = np.asarray(box, dtype=float)
    if box.shape != (d, 2):
        raise ConfigError(f"support: box must have {d} rows of [lo, hi]")
    discrete = {_coord(k, d, "support.discrete"): v for k, v in obj.get("discrete", {}).items()}
    derived = {}
    for src in obj.get("equalities", []):
        axis, fn = parse_assignment(src, d)
        derived[axis] = fn
    constraints = [PointFunction(src, d) for src in obj.get("constraints", [])]
    return SupportSet(d, box, discrete=discrete, derived=derived, constraints=constraints)


def parse_kernel(obj, q):
    if obj is None:
        return kernels.exponential(q)
    if isinstance(obj, str):
        obj = {"kind": obj}
    _check_keys(obj, {"kind", "smoothness"}, "kernel")
    kind = obj.get("kind", "exponential")
    try:
        kind = kernels.KernelKind(kind)
    except ValueError:
        raise ConfigError(f"kernel: unknown kind {kind!r}") from None
    return kernels.KernelSpec(kind, float(obj.get("smoothness", 0.5)), 2 * q)


def parse_target(obj, q, where):
    """Target of a ``q``-dimensional sub-vector."""
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: target must be an object")
    if "dataset" in obj:
        return EmpiricalTarget(dataset=str(obj["dataset"]))
    if "function" in obj:
        expr = Expression(obj["function"], [f"s{i + 1}" for i in range(q)])
        names = [f"s{i + 1}" for i in range(q)]
        return AnalyticTarget(function=lambda S, e=expr: e({n: S[:, i] for i, n in enumerate(names)}))
    if "law" in obj:
        law = obj["law"]
        if "uniform" in law:
            box = np.asarray(law["uniform"], dtype=float)
            if box.shape != (q, 2):
                raise ConfigError(f"{where}: uniform law needs {q} intervals")
            return AnalyticTarget(law=UniformLaw(tuple(map(tuple, box))))
        if "discrete" in law:
            pts = np.asarray(_require(law["discrete"], "points", where), dtype=float).reshape(-1, q)
            probs = np.asarray(_require(law["discrete"], "probs", where), dtype=float)
            return AnalyticTarget(law=DiscreteLaw(tuple(map(tuple, pts)), tuple(probs)))
        raise ConfigError(f"{where}: law must be 'uniform' or 'discrete'")
    raise ConfigError(f"{where}: target needs one of 'dataset', 'function', 'law'")


def _cond_mgf(src, p1, i3, d):
    """Conditional MGF from an expression over ``s1..s_p1`` and the ``t`` names of ``I3``."""
    t_names = [point_names(d)[i] for i in i3]
    s_names = [f"s{i + 1}" for i in range(p1)]
    expr = Expression(src, s_names + t_names)

    def fn(S1, T3):
        env = {n: S1[:, i] for i, n in enumerate(s_names)}
        env.update({n: T3[:, i] for i, n in enumerate(t_names)})
        return np.broadcast_to(expr(env), (S1.shape[0],))

    return fn


def parse_restriction(obj, d, k):
    where = f"restrictions[{k}]"
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: must be an object")
    kind = _require(obj, "kind", where)
    try:
        kind = RestrictionKind(kind)
    except ValueError:
        raise ConfigError(f"{where}: unknown kind {kind!r}") from None
    label = obj.get("label", f"{kind.value}[{k}]")
    full_cube = bool(obj.get("full_cube", True))
    if kind is RestrictionKind.MARGINAL:
        _check_keys(obj, {"kind", "indices", "kernel", "target", "label", "full_cube"}, where)
        idx = tuple(sorted(_coords(_require(obj, "indices", where), d, where)))
        return RestrictionSpec(kind, (idx,), kernel=parse_kernel(obj.get("kernel"), len(idx)),
                               target=parse_target(_require(obj, "target", where), len(idx), where),
                               full_cube=full_cube, label=label)
    if kind is RestrictionKind.INDEPENDENCE:
        _check_keys(obj, {"kind", "indices", "kernel", "marginal", "label", "full_cube"}, where)
        groups = _require(obj, "indices", where)
        if len(groups) != 2:
            raise ConfigError(f"{where}: independence needs two index groups")
        g1, g2 = (tuple(sorted(_coords(g, d, where))) for g in groups)
        if "marginal" not in obj:
            raise ConfigError(f"{where}: independence requires the 'marginal' of the second group")
        return RestrictionSpec(kind, (g1, g2), kernel=parse_kernel(obj.get("kernel"), len(g1) + len(g2)),
                               target=parse_target(obj["marginal"], len(g2), where), full_cube=full_cube,
                               label=label)
    if kind is RestrictionKind.CONDITIONAL_INDEPENDENCE:
        _check_keys(obj, {"kind", "indices", "cond_mgf", "delta", "label", "full_cube"}, where)
        groups = _require(obj, "indices", where)
        if len(groups) != 3:
            raise ConfigError(f"{where}: conditional independence needs three index groups")
        g = [tuple(sorted(_coords(x, d, where))) for x in groups]
        mgf = obj.get("cond_mgf")
        return RestrictionSpec(kind, tuple(g), cond_mgf=None if mgf is None else _cond_mgf(mgf, len(g[0]), g[2], d),
                               delta=float(obj.get("delta", 1.0)), full_cube=full_cube, label=label)
    _check_keys(obj, {"kind", "indices", "functions", "targets", "label"}, where)
    idx = tuple(sorted(_coords(obj["indices"], d, where))) if "indices" in obj else tuple(range(d))
    names = [point_names(d)[i] for i in idx]
    srcs = _require(obj, "functions", where)
    fns = []
    for src in srcs:
        expr = Expression(src, names)
        fns.append(lambda T, e=expr: np.broadcast_to(e({n: T[:, i] for i, n in enumerate(names)}), (T.shape[0],)))
    tg = _require(obj, "targets", where)
    if isinstance(tg, dict):
        target = EmpiricalTarget(dataset=str(_require(tg, "dataset", where)))
    else:
        target = AnalyticTarget(values=tuple(float(v) for v in tg))
    return RestrictionSpec(kind, (idx,), functions=tuple(fns), target=target, label=label)


def parse_solver(obj):
    obj = dict(obj or {})
    _check_keys(obj, _SOLVER_KEYS, "solver")
    sc = SolverConfig(**obj)
    if sc.schedule not in ("fixed", "default", "ot"):
        raise ConfigError(f"solver: schedule must be 'fixed', 'default' or 'ot', got {sc.schedule!r}")
    if not sc.tol > 0:
        raise ConfigError("solver: tol must be positive")
    return sc


def read_csv(path, name=None):
    """Read a headered numeric CSV; returns ``(header, rows)``."""
    name = name or os.path.basename(path)
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if not header:
                raise DataError(f"dataset {name!r}: {path} is empty or has no header")
            header = [h.strip() for h in header]
            rows = []
            for lineno, rec in enumerate(reader, start=2):
                if not rec or all(not c.strip() for c in rec):
                    continue
                if len(rec) != len(header):
                    raise DataError(f"dataset {name!r}: line {lineno} has {len(rec)} fields, header has {len(header)}")
                try:
                    rows.append([float(c) for c in rec])
                except ValueError:
                    bad = next(h for h, c in zip(header, rec) if not _is_float(c))
                    raise DataError(f"dataset {name!r}: non-numeric value in column {bad!r} on line {lineno}") from None
    except OSError as exc:
        raise DataError(f"dataset {name!r}: cannot read {path}: {exc.strerror}") from None
    if not rows:
        raise DataError(f"dataset {name!r}: {path} has no data rows")
    return header, np.array(rows, dtype=float)


def _is_float(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def load_dataset(name, spec, d, path=None, base_dir="."):
    """Build a :class:`Dataset` from ``{"path": ..., "columns": {"t1": "colname"}}``."""
    path = path or spec.get("path")
    if path is None:
        raise DataError(f"dataset {name!r}: no CSV path given")
    if not os.path.isabs(path):
        path = os.path.join(base_dir, path)
    header, rows = read_csv(path, name)
    colmap = spec.get("columns") or {t: t for t in point_names(d) if t in header}
    if not colmap:
        raise DataError(f"dataset {name!r}: no column map and no header named t1..t{d}")
    columns = {}
    for coord, col in colmap.items():
        if col not in header:
            raise DataError(f"dataset {name!r}: column {col!r} (for {coord}) not found in {path}")
        columns[_coord(coord, d, f"datasets.{name}")] = header.index(col)
    return Dataset(name, columns, rows)


def load_config(path, overrides=None):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc.msg} at line {exc.lineno} column {exc.colno}") from None
    return parse_config(raw, os.path.dirname(os.path.abspath(path)), overrides)


def parse_config(raw, base_dir=".", overrides=None):
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    _check_keys(raw, _TOP_KEYS, "config")
    version = raw.get("version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported config version {version!r} (expected {SCHEMA_VERSION})")
    cfg = ProblemConfig(raw=raw, base_dir=base_dir)
    cfg.solver = parse_solver({**(raw.get("solver") or {}), **(overrides or {})})
    cfg.simulation = raw.get("simulation")
    cfg.oracle = raw.get("oracle")
    cfg.outputs = raw.get("outputs") or {}
    if "support" in raw:
        cfg.support = parse_support(raw["support"])
        d = cfg.support.dimension
        cfg.cost_source = str(raw.get("cost", "0"))
        cfg.cost = PointFunction(cfg.cost_source, d)
        cfg.restrictions = [parse_restriction(r, d, k) for k, r in enumerate(raw.get("restrictions", []))]
        cfg.dataset_specs = dict(raw.get("datasets") or {})
    elif cfg.oracle is None and cfg.simulation is None:
        raise ConfigError("config: missing required key 'support'")
    return cfg


def attach_datasets(cfg, csv_args=()):
    """Load every declared dataset; ``csv_args`` are ``name=path`` or bare paths
    assigned to the declared datasets in order."""
    names = list(cfg.dataset_specs)
    paths = {}
    bare = []
    for arg in csv_args:
        if "=" in arg and not os.path.exists(arg):
            n, p = arg.split("=", 1)
            if n not in cfg.dataset_specs:
                raise DataError(f"CSV given for undeclared dataset {n!r}")
            paths[n] = p
        else:
            bare.append(arg)
    remaining = [n for n in names if n not in paths]
    if len(bare) > len(remaining):
        raise DataError(f"{len(bare)} CSV files given but only {len(remaining)} datasets declared")
    paths.update(zip(remaining, bare))
    out = {}
    for n in names:
        p = paths.get(n)
        out[n] = load_dataset(n, cfg.dataset_specs[n], cfg.dimension, os.path.abspath(p) if p else None,
                              cfg.base_dir)
    cfg.datasets = out
    return out
