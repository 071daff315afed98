"""Plug-in estimation of bounds, tuning schedules, and the simulation design.

The estimator replaces every identified target by its sample analogue and
solves the projected problem with a schedule ``(gamma_n, J_n)``.  Upper
bounds come from :func:`estimate_upper`; lower bounds from the upper bound of
the negated cost.
"""

import math
import warnings as _warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import projection, sip_solver
from .errors import ConfigError, GotError
from .moment_system import (
    AnalyticTarget,
    Dataset,
    EmpiricalTarget,
    RestrictionKind,
    RestrictionSpec,
    UniformLaw,
    build_system,
)
from .sip_solver import NormBall, SolverOptions
from .support import SupportSet

DEFAULT_R_STAR = 4
DEFAULT_MAX_DEGREE = 8


@dataclass
class Schedule:
    """Tuning parameters of one estimate.

    ``gamma`` is a radius, or a pair ``(gamma_cont, gamma_disc)`` for the split
    ball.  ``degrees`` is one degree for every block or a per-block tuple.
    """

    gamma: object
    degrees: object
    spline_k: int = None
    eta: float = None
    r_star: int = DEFAULT_R_STAR
    ball_kind: str = "linf"
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        degs = [self.degrees] if np.isscalar(self.degrees) else list(self.degrees)
        if any(int(j) < 1 for j in degs):
            raise ConfigError("schedule degrees must be at least 1")
        if self.eta is not None and not 0 < self.eta <= 1:
            raise ConfigError(f"eta must lie in (0, 1], got {self.eta}")
        if self.r_star < 1:
            raise ConfigError("r_star must be at least 1")

    def ball(self):
        kind = sip_solver.BallKind(self.ball_kind)
        if isinstance(self.gamma, (tuple, list)):
            g = tuple(float(v) for v in self.gamma)
            if kind is sip_solver.BallKind.SPLIT:
                return NormBall(kind, max(g), g)
            return NormBall(kind, g[0])
        if kind is sip_solver.BallKind.SPLIT:
            return NormBall(kind, float(self.gamma), (float(self.gamma), float(self.gamma)))
        return NormBall(kind, float(self.gamma))

    def to_dict(self):
        d = asdict(self)
        if isinstance(d["gamma"], tuple):
            d["gamma"] = list(d["gamma"])
        if isinstance(d["degrees"], tuple):
            d["degrees"] = list(d["degrees"])
        return d


def default_schedule(n, r_star=DEFAULT_R_STAR, d=None, max_degree=DEFAULT_MAX_DEGREE):
    """``gamma = ln n`` and ``J = ceil(n^(1/(2 r*)) ln(1 + ln n))`` capped at ``max_degree``.

    ``d`` is accepted for signature symmetry with :func:`ot_schedule`; the
    rates do not depend on it.
    """
    if n < 2:
        raise ConfigError("default schedule needs n >= 2")
    gamma = math.log(n)
    kappa = max(1, math.ceil(n ** (1.0 / (2 * r_star)) * math.log(1.0 + math.log(n))))
    notes = []
    if kappa > max_degree:
        msg = f"degree {kappa} from the schedule capped at {max_degree}"
        _warnings.warn(msg, stacklevel=2)
        notes.append(msg)
        kappa = max_degree
    return Schedule(gamma=gamma, degrees=kappa, r_star=r_star, warnings=notes)


def ot_schedule(n, d, eta=1.0, r_star=DEFAULT_R_STAR, max_degree=DEFAULT_MAX_DEGREE):
    """Spline resolution ``k = max(2, ceil(n^(eta/(d+2))))`` and radii ``max(1, k^(d/2))``."""
    if not 0 < eta <= 1:
        raise ConfigError(f"eta must lie in (0, 1], got {eta}")
    if d < 1:
        raise ConfigError("d must be at least 1")
    k = max(2, math.ceil(n ** (eta / (d + 2))))
    g = max(1.0, k ** (d / 2.0))
    base = default_schedule(max(n, 2), r_star, d, max_degree)
    return Schedule(gamma=(g, g), degrees=base.degrees, spline_k=k, eta=eta, r_star=r_star, ball_kind="split",
                    warnings=base.warnings)


@dataclass
class EstimateReport:
    upper: float
    n: int
    schedule: Schedule
    lower: float = None
    diagnostics: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    tol: float = 1e-6

    @property
    def converged(self):
        return all(d.get("status") == "converged" for d in self.diagnostics.values())

    def to_dict(self):
        return {
            "upper": self.upper,
            "lower": self.lower,
            "n": self.n,
            "tol": self.tol,
            "schedule": self.schedule.to_dict(),
            "diagnostics": self.diagnostics,
            "warnings": list(self.warnings),
            "converged": self.converged,
        }


def _staged(stage, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except GotError as exc:
        if exc.stage is None:
            exc.with_stage(stage)
        raise


def empirical_system(support, specs, datasets, cost):
    """Moment system with every empirical target resolved against ``datasets``.

    ``datasets`` maps names to :class:`~got.moment_system.Dataset`; each
    dataset is checked against the support box first.
    """
    datasets = dict(datasets or {})
    for ds in datasets.values():
        ds.check_support(support)
    return build_system(support, specs, cost, datasets)


def sample_size(datasets):
    return max((ds.n for ds in (datasets or {}).values()), default=0)


def solve_system(system, schedule, tol=1e-6, basis_kind="legendre", opts=None):
    """Project and solve one system; returns ``(SipSolution, ProjectedProblem)``."""
    basis = _staged("projection", projection.make_basis, system, schedule.degrees, basis_kind)
    problem = _staged("projection", projection.project, system, basis)
    ball = schedule.ball()
    sol = _staged("solver", sip_solver.solve, problem, ball, tol, opts)
    return sol, problem


def estimate_upper(support, specs, datasets, cost, schedule=None, tol=1e-6, basis_kind="legendre", opts=None,
                   gamma_check=False):
    """Upper-bound estimate ``beta_J(theta_hat; gamma)`` with full diagnostics.

    With ``gamma_check`` the problem is re-solved at twice the radius and the
    drop in value is reported (a visible symptom of the compactification bias).
    """
    system = _staged("system", empirical_system, support, specs, datasets, cost)
    n = sample_size(datasets)
    if schedule is None:
        schedule = default_schedule(max(n, 2))
    sol, problem = solve_system(system, schedule, tol, basis_kind, opts)
    diag = sol.diagnostics()
    notes = list(schedule.warnings)
    if not sol.converged:
        notes.append(f"cutting planes stopped after {sol.iterations} iterations with violation {sol.final_violation:.3g}")
    if gamma_check:
        wide = sip_solver.solve(problem, sol.ball.scaled(2.0), tol, opts)
        diag["gamma_doubled_value"] = wide.value
        diag["gamma_drop"] = sol.value - wide.value
    return EstimateReport(upper=sol.value, n=n, schedule=schedule, diagnostics={"upper": diag}, warnings=notes,
                          tol=tol)


def negate(cost):
    return lambda T: -np.asarray(cost(T), dtype=float)


def estimate_interval(support, specs, datasets, cost, schedule=None, tol=1e-6, basis_kind="legendre", opts=None,
                      gamma_check=False):
    """Upper bound for ``cost`` and lower bound ``-(upper bound of -cost)``."""
    up = estimate_upper(support, specs, datasets, cost, schedule, tol, basis_kind, opts, gamma_check)
    neg = estimate_upper(support, specs, datasets, negate(cost), up.schedule, tol, basis_kind, opts, gamma_check)
    up.lower = -neg.upper
    up.diagnostics["lower"] = neg.diagnostics["upper"]
    up.warnings += [w for w in neg.warnings if w not in up.warnings]
    if up.lower > up.upper + 2 * tol:
        up.warnings.append(
            f"lower bound {up.lower:.6g} exceeds upper bound {up.upper:.6g}; the restrictions may be misspecified"
        )
    return up


# --------------------------------------------------------------------------
# the three-variable simulation design
#
# T = (T1, T2, T3) on [0, 1]^3 with (T1, T2) and (T2, T3) identified, cost
# T3 - T1.  Both marginals pin E[T1] and E[T3], so the sharp bound is the
# point E[T3] - E[T1] (zero under the default design).

SIM_COST_SOURCE = "t3 - t1"


def simulation_support():
    return SupportSet.box_support([[0.0, 1.0]] * 3)


def simulation_cost(T):
    T = np.atleast_2d(T)
    return T[:, 2] - T[:, 0]


def simulation_specs(targets=None):
    """Two exponential-kernel marginal restrictions on ``(T1, T2)`` and ``(T2, T3)``.

    ``targets`` is a pair of targets; default is the independent uniform law.
    """
    if targets is None:
        law = UniformLaw(((0.0, 1.0), (0.0, 1.0)))
        targets = (AnalyticTarget(law=law), AnalyticTarget(law=law))
    return [
        RestrictionSpec(RestrictionKind.MARGINAL, ((0, 1),), target=targets[0], label="T1,T2"),
        RestrictionSpec(RestrictionKind.MARGINAL, ((1, 2),), target=targets[1], label="T2,T3"),
    ]


def simulation_dataset(rows, name="sample"):
    return Dataset(name, {0: 0, 1: 1, 2: 2}, rows)


def simulation_empirical_specs(name="sample"):
    return simulation_specs((EmpiricalTarget(dataset=name), EmpiricalTarget(dataset=name)))


def simulation_schedule():
    """Fixed tuning of the simulation design: l-infinity radius 5, degree 3."""
    return Schedule(gamma=5.0, degrees=3)


def draw_uniform(rng, n):
    return rng.uniform(0.0, 1.0, size=(n, 3))


DGPS = {"uniform": draw_uniform}


def simulate_once(rng, n, tol=1e-6, basis_kind="monomial", schedule=None, dgp="uniform", opts=None):
    """One replication: ``(oracle mean of T3 - T1, GOT upper estimate, report)``."""
    rows = DGPS[dgp](rng, n) if isinstance(dgp, str) else dgp(rng, n)
    ds = simulation_dataset(rows)
    rep = estimate_upper(simulation_support(), simulation_empirical_specs(), {ds.name: ds}, simulation_cost,
                         schedule or simulation_schedule(), tol, basis_kind, opts)
    return float(np.mean(simulation_cost(rows))), rep.upper, rep
