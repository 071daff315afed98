import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from got.errors import ConfigError
from got.expr import Expression, PointFunction, parse_assignment
from got.support import SupportSet


def test_arithmetic_and_functions():
    f = PointFunction("max(t1, t2) - abs(t3) + exp(0) * 2^2", 3)
    assert f(np.array([[0.1, 0.5, -0.25]]))[0] == pytest.approx(0.5 - 0.25 + 4)


def test_comparison_is_indicator():
    f = PointFunction("(t1 > 0) * t2 + (t1 <= 0)", 2)
    assert list(f(np.array([[1.0, 3.0], [-1.0, 3.0]]))) == [3.0, 1.0]


def test_constant_broadcasts():
    assert list(PointFunction("5", 2)(np.zeros((3, 2)))) == [5.0] * 3


@pytest.mark.parametrize("src,where", [("t1 + * 2", "column"), ("t1 + foo", "column 6"), ("__import__('os')", "column")])
def test_rejects_bad_expressions(src, where):
    with pytest.raises(ConfigError, match=where):
        PointFunction(src, 2)


def test_rejects_attribute_access():
    with pytest.raises(ConfigError):
        Expression("t1.real", ["t1"])


def test_parse_assignment():
    axis, fn = parse_assignment("t3 = t1 * t2", 3)
    assert axis == 2
    assert fn(np.array([[2.0, 3.0, 0.0]]))[0] == 6.0
    with pytest.raises(ConfigError):
        parse_assignment("t1 + t2", 3)


def test_structural_equality_grid_membership():
    # t3 = t4*t2 + (1 - t4)*t1 with binary t4
    d = 4
    _, fn = parse_assignment("t3 = t4*t2 + (1 - t4)*t1", d)
    sup = SupportSet(d, [[0, 1]] * 4, discrete={3: [0, 1]}, derived={2: fn})
    g = sup.grid(5)
    assert np.all(sup.contains(g))
    assert np.all(g >= sup.box[:, 0]) and np.all(g <= sup.box[:, 1])
    assert np.allclose(g[:, 2], np.where(g[:, 3] == 1, g[:, 1], g[:, 0]))


def test_finite_support_membership_exact():
    pts = np.array([[0.0, 1.0], [0.5, 0.5], [1.0, 0.0]])
    sup = SupportSet.finite(pts)
    assert np.all(sup.contains(pts))
    assert not sup.contains(np.array([[0.0, 0.0]]))[0]
    assert np.array_equal(sup.grid(), pts)


@given(st.integers(2, 9), st.lists(st.tuples(st.floats(-1, 0), st.floats(0, 1)), min_size=1, max_size=3))
def test_box_grid_inside(res, box):
    sup = SupportSet.box_support(np.array(box))
    g = sup.grid(res)
    assert np.all(sup.contains(g))


def test_constraint_excludes_points():
    sup = SupportSet(2, [[0, 1], [0, 1]], constraints=[PointFunction("t1 <= t2", 2)])
    g = sup.grid(11)
    assert np.all(g[:, 0] <= g[:, 1])
    with pytest.raises(ConfigError):
        SupportSet(1, [[0, 1]], constraints=[PointFunction("t1 > 2", 1)]).grid(5)


def test_corners_and_interior():
    sup = SupportSet.box_support([[-1, 1]] * 3)
    assert sup.corners().shape == (8, 3)
    pts = sup.interior_points(16)
    assert pts.shape == (16, 3)
    assert np.array_equal(pts, sup.interior_points(16))
