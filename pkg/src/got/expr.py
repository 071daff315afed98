"""A small, safe arithmetic expression language compiled to numpy callables.

Expressions are parsed with :mod:`ast` and only a whitelist of node types is
accepted: numbers, named variables, ``+ - * / ** ^`` (``^`` is a synonym for ``**``),
unary minus, comparisons (which evaluate to 0.0/1.0), ``and``/``or``/``not``,
and calls to ``exp log sqrt abs min max sin cos where``.
"""

import ast
import math

import numpy as np

from .errors import ConfigError

_FUNCS = {
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "sin": np.sin,
    "cos": np.cos,
    "tanh": np.tanh,
}
_CONSTS = {"pi": math.pi, "e": math.e}

_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
    ast.Mod: np.mod,
}
_CMPOPS = {
    ast.Lt: np.less,
    ast.LtE: np.less_equal,
    ast.Gt: np.greater,
    ast.GtE: np.greater_equal,
    ast.Eq: np.equal,
    ast.NotEq: np.not_equal,
}


def _loc(node):
    return f"column {getattr(node, 'col_offset', 0) + 1}"


class Expression:
    """Compiled expression; call with a mapping ``name -> array``."""

    def __init__(self, source, variables):
        self.source = source
        self.variables = tuple(variables)
        try:
            # '^' is power with power precedence, not Python's xor
            tree = ast.parse(source.strip().replace("^", "**"), mode="eval")
        except SyntaxError as exc:
            raise ConfigError(f"cannot parse expression {source!r}: {exc.msg} at column {exc.offset}") from None
        self._check(tree.body)
        self._tree = tree.body
        self.used = sorted({n.id for n in ast.walk(tree) if isinstance(n, ast.Name) and n.id in self.variables})

    def _check(self, node):
        allowed = set(self.variables) | set(_CONSTS)
        for sub in ast.walk(node):
            if isinstance(sub, ast.Name):
                if sub.id not in allowed and sub.id not in _FUNCS and sub.id not in ("min", "max", "where"):
                    raise ConfigError(f"unknown identifier {sub.id!r} in {self.source!r} at {_loc(sub)}")
            elif isinstance(sub, ast.Call):
                if not isinstance(sub.func, ast.Name) or sub.func.id not in (*_FUNCS, "min", "max", "where"):
                    raise ConfigError(f"unsupported function call in {self.source!r} at {_loc(sub)}")
                if sub.keywords:
                    raise ConfigError(f"keyword arguments are not supported in {self.source!r} at {_loc(sub)}")
            elif isinstance(sub, ast.BinOp):
                if type(sub.op) not in _BINOPS:
                    raise ConfigError(f"unsupported operator in {self.source!r} at {_loc(sub)}")
            elif isinstance(sub, ast.Compare):
                if any(type(op) not in _CMPOPS for op in sub.ops):
                    raise ConfigError(f"unsupported comparison in {self.source!r} at {_loc(sub)}")
            elif isinstance(sub, ast.Constant):
                if not isinstance(sub.value, (int, float)) or isinstance(sub.value, bool):
                    raise ConfigError(f"only numeric literals are allowed in {self.source!r} at {_loc(sub)}")
            elif not isinstance(
                sub,
                (ast.Expression, ast.UnaryOp, ast.UAdd, ast.USub, ast.Not, ast.BoolOp, ast.And, ast.Or,
                 ast.Load, ast.operator, ast.cmpop),
            ):
                raise ConfigError(f"unsupported syntax {type(sub).__name__} in {self.source!r} at {_loc(sub)}")

    def __call__(self, env):
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            return np.asarray(self._eval(self._tree, env), dtype=float)

    def _eval(self, node, env):
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            if node.id in env:
                return env[node.id]
            return _CONSTS[node.id]
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, env), self._eval(node.right, env))
        if isinstance(node, ast.UnaryOp):
            val = self._eval(node.operand, env)
            if isinstance(node.op, ast.USub):
                return np.negative(val)
            if isinstance(node.op, ast.Not):
                return np.logical_not(np.asarray(val) != 0).astype(float)
            return val
        if isinstance(node, ast.Compare):
            left = self._eval(node.left, env)
            result = True
            for op, comp in zip(node.ops, node.comparators):
                right = self._eval(comp, env)
                result = np.logical_and(result, _CMPOPS[type(op)](left, right))
                left = right
            return np.asarray(result, dtype=float)
        if isinstance(node, ast.BoolOp):
            vals = [np.asarray(self._eval(v, env)) != 0 for v in node.values]
            fn = np.logical_and if isinstance(node.op, ast.And) else np.logical_or
            out = vals[0]
            for v in vals[1:]:
                out = fn(out, v)
            return out.astype(float)
        if isinstance(node, ast.Call):
            name = node.func.id
            args = [self._eval(a, env) for a in node.args]
            if name in ("min", "max"):
                if not args:
                    raise ConfigError(f"{name}() needs at least one argument in {self.source!r}")
                fn = np.minimum if name == "min" else np.maximum
                out = args[0]
                for a in args[1:]:
                    out = fn(out, a)
                return out
            if name == "where":
                if len(args) != 3:
                    raise ConfigError(f"where() takes 3 arguments in {self.source!r}")
                return np.where(np.asarray(args[0]) != 0, args[1], args[2])
            if len(args) != 1:
                raise ConfigError(f"{name}() takes 1 argument in {self.source!r}")
            return _FUNCS[name](args[0])
        raise ConfigError(f"cannot evaluate node {type(node).__name__}")  # pragma: no cover


def point_names(d, prefix="t"):
    return [f"{prefix}{i + 1}" for i in range(d)]


class PointFunction:
    """Expression over ``t1..td`` evaluated on point arrays ``(n, d)``."""

    def __init__(self, source, d, prefix="t"):
        self.d = d
        self.prefix = prefix
        self.expr = Expression(source, point_names(d, prefix))

    @property
    def source(self):
        return self.expr.source

    def __call__(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        env = {name: points[:, i] for i, name in enumerate(point_names(self.d, self.prefix))}
        val = self.expr(env)
        return np.broadcast_to(val, (points.shape[0],)).astype(float)

    def __repr__(self):
        return f"PointFunction({self.source!r})"


def compile_point_function(source, d, prefix="t"):
    return PointFunction(source, d, prefix)


def parse_assignment(source, d):
    """Parse ``"t4 = t6*t2 + (1 - t6)*t1"`` into ``(3, PointFunction)``."""
    if source.count("=") - source.count("==") - source.count("<=") - source.count(">=") - source.count("!=") != 1:
        raise ConfigError(f"structural equality must have the form 't<k> = <expression>', got {source!r}")
    lhs, rhs = source.split("=", 1)
    lhs = lhs.strip()
    names = point_names(d)
    if lhs not in names:
        raise ConfigError(f"left-hand side of {source!r} must be one of t1..t{d}")
    return names.index(lhs), PointFunction(rhs, d)
