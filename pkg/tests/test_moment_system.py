import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from got import kernels, moment_system as ms
from got.errors import ConfigError, DataError, UnsupportedRestrictionError
from got.ot_oracle import balke_pearl_instance, linear_spline_basis, system_from_instance
from got.support import SupportSet

CUBE3 = SupportSet.box_support([[0, 1]] * 3)
UNIF2 = ms.UniformLaw(((0, 1), (0, 1)))


def sim_system():
    specs = [ms.RestrictionSpec("marginal", ((0, 1),), target=ms.AnalyticTarget(law=UNIF2)),
             ms.RestrictionSpec("marginal", ((1, 2),), target=ms.AnalyticTarget(law=UNIF2))]
    return ms.build_system(CUBE3, specs, lambda T: T[:, 2] - T[:, 0])


def test_marginal_block_is_exponential_section():
    b = ms.encode_marginal(CUBE3, (0, 1), kernels.exponential(2), ms.AnalyticTarget(law=UNIF2))
    t = np.array([0.3, 0.9, 0.2])
    s = np.array([0.5, -0.4, 0.8])
    assert b.a_eval(t, s) == pytest.approx(np.exp(0.5 * 0.3 - 0.4 * 0.9))


def test_marginal_block_unit_at_zero_coordinates():
    b = ms.encode_marginal(CUBE3, (0, 1), None, ms.AnalyticTarget(law=UNIF2))
    rng = np.random.default_rng(0)
    for s in rng.uniform(-1, 1, (10, 3)):
        assert b.a_eval([0.0, 0.0, 0.7], s) == 1.0


def test_marginal_one_row_sample_target():
    w = np.array([[0.25, 0.75]])
    b = ms.encode_marginal(CUBE3, (0, 1), None, ms.EmpiricalTarget(samples=w))
    s = np.array([0.3, -0.6, 0.1])
    assert b.c_eval(s) == pytest.approx(np.exp(0.3 * 0.25 - 0.6 * 0.75))


def test_marginal_kernel_dimension_mismatch():
    with pytest.raises(ConfigError):
        ms.encode_marginal(CUBE3, (0, 1), kernels.exponential(3), ms.AnalyticTarget(law=UNIF2))
    with pytest.raises(ConfigError):
        ms.encode_marginal(CUBE3, (1, 0), None, ms.AnalyticTarget(law=UNIF2))
    with pytest.raises(ConfigError):
        ms.encode_marginal(CUBE3, (0, 1), None, None)


def test_independence_exponential_factorises():
    u = np.array([[0.1], [0.6], [0.9]])
    b = ms.encode_independence(CUBE3, (0,), (2,), None, ms.EmpiricalTarget(samples=u))
    t = np.array([0.4, 0.0, 0.3])
    s = np.array([0.7, 0.0, -0.5])
    m2 = np.mean(np.exp(-0.5 * u[:, 0]))
    assert b.a_eval(t, s) == pytest.approx(np.exp(0.7 * 0.4) * (np.exp(-0.5 * 0.3) - m2), abs=1e-14)
    assert b.c_eval(s) == 0.0


def test_independence_point_mass_marginal():
    b = ms.encode_independence(CUBE3, (0,), (1,), None, ms.point_mass([0.2]))
    t, s = np.array([0.5, 0.8, 0.0]), np.array([0.3, 0.9, 0.0])
    expected = np.exp(0.3 * 0.5 + 0.9 * 0.8) - np.exp(0.3 * 0.5 + 0.9 * 0.2)
    assert b.a_eval(t, s) == pytest.approx(expected, abs=1e-14)


def test_independence_requires_marginal():
    with pytest.raises(ConfigError):
        ms.encode_independence(CUBE3, (0,), (1,), None, None)
    with pytest.raises(ConfigError):
        ms.encode_independence(CUBE3, (0, 1), (1,), None, UNIF2)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_independence_mean_zero_under_product_measure(seed):
    # product of two discrete grids with product weights
    rng = np.random.default_rng(seed)
    g1 = np.linspace(0, 1, 7)
    w1 = rng.dirichlet(np.ones(7))
    g2 = np.linspace(0, 1, 5)
    w2 = rng.dirichlet(np.ones(5))
    law2 = ms.DiscreteLaw(tuple((v,) for v in g2), tuple(w2))
    b = ms.encode_independence(SupportSet.box_support([[0, 1]] * 2), (0,), (1,), None, law2)
    T = np.array(list(itertools.product(g1, g2)))
    W = np.outer(w1, w2).ravel()
    for s in rng.uniform(-1, 1, (20, 2)):
        avg = sum(wk * b.a_eval(tk, s) for tk, wk in zip(T, W))
        assert abs(avg) <= 1e-9


def test_conditional_independence_examples():
    sup = SupportSet.box_support([[0, 1]] * 3)
    one = lambda S1, T3: np.ones(S1.shape[0])
    b = ms.encode_conditional_independence(sup, (0,), (1,), (2,), one)
    rng = np.random.default_rng(1)
    for s in rng.uniform(-1, 1, (5, 3)):
        # T1 degenerate at 0: cond MGF is 1 and both terms coincide
        assert abs(b.a_eval([0.0, 0.4, 0.7], s)) <= 1e-14
    assert abs(b.a_eval([0.3, 0.4, 0.7], [0.0, 0.0, 0.0])) <= 1e-14
    with pytest.raises(UnsupportedRestrictionError):
        ms.encode_conditional_independence(sup, (0,), (1,), (2,), None)


def test_conditional_independence_reduces_to_independence():
    # cond MGF constant in t3 equals the marginal MGF of T1: U[0,1] has MGF (e^s - 1)/s
    sup = SupportSet.box_support([[0, 1]] * 3)

    def mgf(S1, T3):
        s = S1[:, 0]
        return np.where(np.abs(s) < 1e-12, 1.0, np.expm1(s) / np.where(s == 0, 1, s))

    ci = ms.encode_conditional_independence(sup, (0,), (1,), (2,), mgf)
    ind = ms.encode_independence(sup, (1, 2), (0,), None, ms.UniformLaw(((0, 1),), 30))
    rng = np.random.default_rng(2)
    for t in rng.uniform(0, 1, (5, 3)):
        for s in rng.uniform(-1, 1, (5, 3)):
            assert ci.a_eval(t, s) == pytest.approx(ind.a_eval(t, s), abs=1e-12)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_discrete_moments():
    b = ms.encode_discrete_moments([lambda T: T[:, 0]], ms.EmpiricalTarget(samples=np.array([[0.2], [0.4]])),
                                   indices=(0,))
    assert b.nodes[0].target == pytest.approx(0.3)
    with pytest.raises(ConfigError):
        ms.encode_discrete_moments([lambda T: 1.0 / T[:, 0]], [0.0], indices=(0,),
                                   support=SupportSet.box_support([[0, 1]]))


def test_spline_nodes_partition_of_unity():
    sb = linear_spline_basis(2, 1)
    sup = SupportSet.box_support([[-1, 1]])
    b = ms.encode_discrete_moments(sb.functions, [0.5, 0.5], indices=(0,), support=sup)
    sysm = ms.build_system(sup, [b], lambda T: T[:, 0])
    assert sysm.n_discrete_nodes == 3  # two hats plus the atom
    assert len(sysm.discrete_block.nodes) == 2
    g = sup.grid(101)
    rows = np.column_stack([n.function(g) for n in sysm.discrete_block.nodes])
    assert np.allclose(rows.sum(axis=1), 1.0, atol=1e-12)


def test_duplicate_atom_node_is_harmless():
    sup = SupportSet.box_support([[-1, 1]])
    b = ms.encode_discrete_moments([lambda T: np.ones(T.shape[0])], [1.0], indices=(0,), support=sup)
    sysm = ms.build_system(sup, [b], lambda T: T[:, 0])
    assert sysm.n_discrete_nodes == 2 and sysm.atom is not None


def test_simulation_system_layout():
    sysm = sim_system()
    assert len(sysm.blocks) == 3
    assert [b.offset for b in sysm.continuous_blocks] == [0.0, 3.0]
    assert sysm.atom.block_kind is ms.BlockKind.ATOM
    b2 = sysm.continuous_blocks[1]
    t = np.array([0.1, 0.5, 0.9])
    s = np.array([3.2, 3.4, 2.5])
    # second block reads (T2, T3) at its own offset
    assert b2.a_eval(t, s) == pytest.approx(np.exp(0.4 * 0.5 - 0.5 * 0.9))


def test_balke_pearl_encoding():
    joint = {z: {(y, d): 0.25 for y in (0, 1) for d in (0, 1)} for z in (0, 1)}
    sysm = system_from_instance(balke_pearl_instance(joint))
    assert not sysm.continuous_blocks
    assert len(sysm.discrete_block.nodes) == 8
    assert sysm.n_discrete_nodes == 9
    assert sysm.support.finite_points.shape == (16, 4)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_cost_must_be_finite():
    with pytest.raises(ConfigError):
        ms.build_system(SupportSet.box_support([[0, 1]]), [], lambda T: 1.0 / T[:, 0])


def test_dataset_validation():
    with pytest.raises(DataError):
        ms.Dataset("x", {0: 0}, np.array([[np.nan]]))
    ds = ms.Dataset("x", {0: 0, 2: 1}, np.array([[0.5, 1.5]]))
    with pytest.raises(DataError, match="t3"):
        ds.check_support(CUBE3)
    with pytest.raises(DataError, match="t2"):
        ds.select((0, 1), "spec")


@st.composite
def random_specs(draw):
    n = draw(st.integers(1, 4))
    out = []
    for _ in range(n):
        kind = draw(st.sampled_from(["marginal", "independence", "discrete"]))
        if kind == "marginal":
            idx = tuple(sorted(draw(st.sets(st.integers(0, 2), min_size=1, max_size=3))))
            out.append(ms.RestrictionSpec("marginal", (idx,), target=ms.AnalyticTarget(
                law=ms.UniformLaw(tuple((0, 1) for _ in idx), 4))))
        elif kind == "independence":
            out.append(ms.RestrictionSpec("independence", ((0,), (2,)), target=ms.AnalyticTarget(
                law=ms.UniformLaw(((0, 1),), 4))))
        else:
            out.append(ms.encode_discrete_moments([lambda T: T[:, 0]], [0.5], indices=(0, 1, 2)))
    return out


@settings(max_examples=30, deadline=None)
@given(random_specs(), st.floats(0.25, 2.0))
def test_built_systems_are_well_formed(specs, delta):
    specs = list(specs) + [ms.RestrictionSpec("conditional_independence", ((0,), (1,), (2,)),
                                              cond_mgf=lambda S, T: np.ones(S.shape[0]), delta=delta)]
    sysm = ms.build_system(CUBE3, specs, lambda T: T.sum(axis=1))
    atoms = [b for b in sysm.blocks if b.block_kind is ms.BlockKind.ATOM]
    assert len(atoms) == 1
    cont = sysm.continuous_blocks
    for i, a in enumerate(cont):
        for b in cont[i + 1:]:
            lo_a, hi_a = sysm.cube_bounds(a)
            lo_b, hi_b = sysm.cube_bounds(b)
            assert hi_a < lo_b or hi_b < lo_a
    rng = np.random.default_rng(0)
    for t in rng.uniform(0, 1, (5, 3)):
        assert sysm.atom.a_eval(t, None) == 1.0
    assert sysm.atom.c_eval(None) == 1.0
