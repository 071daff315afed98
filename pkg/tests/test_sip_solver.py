import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from got import estimation, moment_system as ms, ot_oracle, projection as pj, sip_solver as sp
from got.errors import ConfigError
from got.support import SupportSet


def atom_problem(cost, d=1):
    sup = SupportSet.box_support([[-1, 1]] * d)
    sysm = ms.build_system(sup, [], cost)
    return pj.project(sysm, pj.make_basis(sysm, []))


@pytest.mark.parametrize("gamma", [1e-3, 1.0, 50.0])
def test_atom_only_max_of_cost(gamma):
    sol = sp.solve(atom_problem(lambda T: T[:, 0]), sp.NormBall("linf", gamma), tol=1e-9)
    assert sol.converged
    assert sol.value == pytest.approx(1.0, abs=1e-9)
    assert sol.value == pytest.approx(sol.coefficients[-1] + sol.slack, abs=1e-12)


def test_atom_only_constant_cost():
    sol = sp.solve(atom_problem(lambda T: np.full(T.shape[0], 5.0)), sp.NormBall("linf", 2.0), tol=1e-9)
    assert sol.value == pytest.approx(5.0, abs=1e-12)


def test_finite_instance_matches_lp():
    joint = ot_oracle.balke_pearl_from_dgp(np.random.default_rng(0).dirichlet(np.ones(16)))
    inst = ot_oracle.balke_pearl_instance(joint)
    value, sol = ot_oracle.pipeline_finite(inst)
    assert sol.converged
    assert value == pytest.approx(ot_oracle.finite_got_lp(inst).value, abs=1e-6)


def test_inner_max_examples():
    prob = atom_problem(lambda T: T[:, 0], d=3)
    t, v = sp.inner_max(prob, np.zeros(prob.size), 0.0)
    assert t[0] == pytest.approx(1.0) and v == pytest.approx(1.0)
    x = np.array([1.0])
    _, v = sp.inner_max(prob, x, 0.0)
    assert v <= 0.0


def test_penalty_value_examples():
    prob = atom_problem(lambda T: np.zeros(T.shape[0]))
    assert sp.penalty_value(prob, np.zeros(1)) == 0.0
    prob = atom_problem(lambda T: T[:, 0])
    assert sp.penalty_value(prob, np.zeros(1)) == pytest.approx(1.0)
    with pytest.raises(ConfigError):
        sp.penalty_value(prob, np.array([10.0]), check_ball=sp.NormBall("linf", 1.0))


def test_penalty_at_feasible_point_is_linear_part():
    inst = ot_oracle.random_finite_instance(np.random.default_rng(11))
    sysm = ot_oracle.system_from_instance(inst)
    prob = pj.project(sysm, pj.make_basis(sysm, []))
    res = ot_oracle.finite_got_lp(inst)
    k = inst.normalization_index
    x = np.concatenate([np.delete(res.dual, k), [res.dual[k]]])
    x[-1] += 0.5  # strictly feasible: every constraint slack by 0.5
    assert sp.penalty_value(prob, x) == pytest.approx(prob.c_vec @ x, abs=1e-12)


def test_master_lp_without_cuts():
    c = np.array([1.0, -0.5, 2.0])
    x, s, v = sp.master_lp([], c, sp.NormBall("linf", 3.0))
    assert np.allclose(x, -3.0 * np.sign(c)) and s == 0.0
    assert v == pytest.approx(-3.0 * np.abs(c).sum())


def test_master_lp_two_cuts():
    x, s, v = sp.master_lp(np.array([[-1.0], [1.0]]), np.array([1.0]), sp.NormBall("linf", 5.0),
                           cut_rows=np.array([[1.0], [1.0]]), cut_costs=np.array([-1.0, 1.0]))
    assert v == pytest.approx(1.0)


def test_non_convergence_is_flagged():
    sysm = ms.build_system(SupportSet.box_support([[0, 1]] * 3), estimation.simulation_specs(),
                           estimation.simulation_cost)
    prob = pj.project(sysm, pj.make_basis(sysm, 2))
    sol = sp.solve(prob, sp.NormBall("linf", 5.0), opts=sp.SolverOptions(tol=1e-9, max_iter=2))
    assert sol.status is sp.SolveStatus.MAX_ITER
    assert not sol.converged
    assert np.isfinite(sol.value) and sol.iterations == 2


def test_ball_validation():
    with pytest.raises(ConfigError):
        sp.NormBall("linf", 0.0)
    with pytest.raises(ConfigError):
        sp.NormBall("split", 1.0, (1.0, -1.0))
    with pytest.raises(ConfigError):
        sp.SolverOptions(tol=0.0)


def one_dim_problem(seed, J):
    rng = np.random.default_rng(seed)
    pts = np.linspace(0, 1, 6)[:, None]
    law = ms.DiscreteLaw(tuple(map(tuple, pts)), tuple(rng.dirichlet(np.ones(6))))
    coef = rng.normal(size=4)
    cost = lambda T: np.polyval(coef, T[:, 0])
    sup = SupportSet.box_support([[0, 1]])
    sysm = ms.build_system(sup, [ms.RestrictionSpec("marginal", ((0,),), target=ms.AnalyticTarget(law=law))], cost)
    return pj.project(sysm, pj.make_basis(sysm, J, "legendre"))


@settings(max_examples=12, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_monotone_in_gamma_and_degree(seed):
    tol = 1e-7
    opts = sp.SolverOptions(tol=tol)
    p2, p3 = one_dim_problem(seed, 2), one_dim_problem(seed, 3)
    v_g = sp.solve(p2, sp.NormBall("linf", 2.0), opts=opts)
    v_G = sp.solve(p2, sp.NormBall("linf", 4.0), opts=opts)
    v_J = sp.solve(p3, sp.NormBall("linf", 2.0), opts=opts)
    assert v_G.value <= v_g.value + 2 * tol
    assert v_J.value <= v_g.value + 2 * tol
    for sol, prob in ((v_g, p2), (v_G, p2), (v_J, p3)):
        assert sol.converged and sol.final_violation <= tol
        assert sol.value == pytest.approx(prob.c_vec @ sol.coefficients + sol.slack, abs=1e-10)
        vals = [v for v, _ in sol.trace]
        assert all(b >= a - 2 * tol for a, b in zip(vals, vals[1:]))


@pytest.fixture(scope="module")
def sim_solution():
    rows = np.random.default_rng(2024).uniform(0, 1, (1000, 3))
    ds = estimation.simulation_dataset(rows)
    sysm = estimation.empirical_system(estimation.simulation_support(), estimation.simulation_empirical_specs(),
                                       {"sample": ds}, estimation.simulation_cost)
    prob = pj.project(sysm, pj.make_basis(sysm, 3, "monomial"))
    return prob, sp.solve(prob, sp.NormBall("linf", 5.0), tol=1e-6)


def test_simulation_solution_recheck_on_finer_grid(sim_solution):
    prob, sol = sim_solution
    assert sol.converged and sol.final_violation <= 1e-6
    assert sp.max_violation(prob, sol.coefficients, sol.slack, 61) <= 5e-6


def test_simulation_master_trace_is_anytime_lower_bound(sim_solution):
    prob, sol = sim_solution
    vals = [v for v, _ in sol.trace]
    assert all(b >= a - 2e-6 for a, b in zip(vals, vals[1:]))
    assert sol.value == pytest.approx(prob.c_vec @ sol.coefficients + sol.slack, abs=1e-10)
    assert np.abs(sol.coefficients).max() <= 5.0 + 1e-9
    d = sol.diagnostics()
    assert d["status"] == "converged" and len(d["trace"]) == sol.iterations
