import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from carnot_nonlocal.fields import ScalarField, coordinate, parse_expression
from carnot_nonlocal.group import (GroupValidationError, StratifiedGroup, UnsupportedStepError, abelian,
                                   builtin, dilate, group_from_config, heisenberg, homogeneous_norm,
                                   inverse, law_checks, left_jacobian, load_group, multiply,
                                   second_order_apply, taylor2, vector_field_apply)

coords = st.floats(-5, 5, allow_nan=False)
h1_points = arrays(float, 3, elements=coords)


def heis_matrix(x):
    """Upper unitriangular representation of exp(x1 X1 + x2 X2 + x3 X3)."""
    return np.array([[1.0, x[0], x[2] + 0.5 * x[0] * x[1]],
                     [0.0, 1.0, x[1]],
                     [0.0, 0.0, 1.0]])


def heis_coords(m):
    return np.array([m[0, 1], m[1, 2], m[0, 2] - 0.5 * m[0, 1] * m[1, 2]])


# ------------------------------------------------------------------ algebra

def test_builtin_groups_validate(any_group):
    any_group.validate()
    assert any_group.Q == int(np.sum(any_group.dilation_exponents))


def test_heisenberg_data():
    H = heisenberg()
    assert H.n == 3 and H.step == 2 and H.Q == 4
    assert list(H.dilation_exponents) == [1, 1, 2]


def test_multiply_examples():
    assert np.allclose(multiply(abelian(2), [1, 2], [3, 4]), [4, 6])
    assert np.allclose(multiply(heisenberg(), [1, 0, 0], [0, 1, 0]), [1, 1, 0.5])


@settings(max_examples=200, deadline=None)
@given(h1_points, h1_points)
def test_multiply_matches_matrix_representation(x, y):
    expect = heis_coords(heis_matrix(x) @ heis_matrix(y))
    assert np.allclose(multiply(heisenberg(), x, y), expect, atol=1e-12, rtol=0)


def test_inverse_examples():
    H = heisenberg()
    assert np.array_equal(inverse(H, [1, 2, 3]), [-1, -2, -3])
    assert np.array_equal(inverse(H, [0, 0, 0]), [0, 0, 0])
    assert np.array_equal(multiply(H, [1, 1, 0.5], inverse(H, [1, 1, 0.5])), [0, 0, 0])


def test_dilate_examples(rng):
    H = heisenberg()
    assert np.array_equal(dilate(H, 2.0, [1, 1, 1]), [2, 2, 4])
    x = rng.normal(size=(50, 3))
    assert np.array_equal(dilate(H, 1.0, x), x)
    r, s = rng.uniform(0.1, 10, (2, 50))
    assert np.allclose(dilate(H, r, dilate(H, s, x)), dilate(H, r * s, x), rtol=1e-14)
    with pytest.raises(ValueError):
        dilate(H, 0.0, [1, 1, 1])


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        multiply(heisenberg(), [1, 2], [3, 4])


def test_law_checks(any_group):
    res = law_checks(any_group, trials=10_000, seed=7)
    for key in ("associativity", "automorphism", "identity", "inverse"):
        assert res[key] <= 1e-12, key
    assert res["identity"] <= 1e-14 and res["inverse"] <= 1e-14
    assert res["jacobian_det"] <= 1e-10


# ------------------------------------------------------------------ config

def test_group_from_config_fills_antisymmetric_partner():
    G = group_from_config({"dimension": 3, "strata": [2, 1], "structure_constants": [[1, 2, 3, 1.0]]})
    assert G.structure_constants[1, 0, 2] == -1.0
    assert np.allclose(multiply(G, [1, 0, 0], [0, 1, 0]), [1, 1, 0.5])


@pytest.mark.parametrize("cfg", [
    {"dimension": 3, "strata": [2, 1], "structure_constants": [[1, 2, 3, 1.0], [2, 1, 3, 1.0]]},
    {"dimension": 3, "strata": [2, 1], "structure_constants": [[1, 3, 3, 1.0]]},
    {"dimension": 3, "strata": [2, 1], "structure_constants": []},
    {"dimension": 3, "strata": [2, 2], "structure_constants": []},
    {"dimension": 3, "strata": [2, 1], "structure_constants": [[1, 2, 4, 1.0]]},
])
def test_group_from_config_rejects(cfg):
    with pytest.raises(GroupValidationError):
        group_from_config(cfg)


def test_step_three_unsupported():
    with pytest.raises(UnsupportedStepError):
        StratifiedGroup((1, 1, 1), np.zeros((3, 3, 3)))


def test_load_group_round_trip(tmp_path):
    H = heisenberg()
    path = tmp_path / "g.json"
    path.write_text(json.dumps({"group": H.to_config()}))
    G = load_group(path)
    assert np.array_equal(G.structure_constants, H.structure_constants)
    assert builtin("heisenberg").name == "H1"
    with pytest.raises(KeyError):
        builtin("R9")


# ------------------------------------------------------------------ norm

def test_norm_examples():
    H = heisenberg()
    assert homogeneous_norm(H, [0, 0, 1]) == pytest.approx(1.0, rel=1e-12)
    assert homogeneous_norm(H, [0, 0, 4]) == pytest.approx(2.0, rel=1e-12)
    assert homogeneous_norm(H, [3, 4, 0]) == pytest.approx(5.0, rel=1e-12)
    assert homogeneous_norm(H, [0, 0, 0]) == 0.0
    with pytest.raises(ValueError):
        homogeneous_norm(H, [np.nan, 0, 0])


@settings(max_examples=200, deadline=None)
@given(h1_points, st.floats(0.01, 100))
def test_norm_homogeneity_and_symmetry(x, s):
    H = heisenberg()
    nx = homogeneous_norm(H, x)
    if nx < 1e-100:
        return
    assert homogeneous_norm(H, dilate(H, s, x)) == pytest.approx(s * nx, rel=1e-10)
    assert homogeneous_norm(H, inverse(H, x)) == pytest.approx(nx, rel=1e-10)


# ------------------------------------------------------------------ calculus

def test_vector_field_examples(rng):
    R2, H = abelian(2), heisenberg()
    x = rng.uniform(-2, 2, (20, 2))
    assert np.allclose(vector_field_apply(R2, 0, coordinate(0), x), 1.0, atol=1e-10)
    y = rng.uniform(-2, 2, (20, 3))
    assert np.allclose(vector_field_apply(H, 0, coordinate(2), y), -y[:, 1] / 2, atol=1e-9)
    f, g = parse_expression("sin(x1)*x3", 3), parse_expression("x2**2 + x3", 3)
    a, b = 0.7, -1.3
    fg = ScalarField(lambda z: a * f(z) + b * g(z))
    lhs = vector_field_apply(H, 1, fg, y)
    rhs = a * vector_field_apply(H, 1, f, y) + b * vector_field_apply(H, 1, g, y)
    assert np.allclose(lhs, rhs, atol=1e-8)
    with pytest.raises(IndexError):
        vector_field_apply(H, 3, f, y)


def test_second_order_examples(rng):
    R2, H = abelian(2), heisenberg()
    x = rng.uniform(-1, 1, (10, 2))
    assert np.allclose(second_order_apply(R2, 0, 1, parse_expression("x1*x2", 2), x), 1.0, atol=1e-7)
    y = rng.uniform(-1, 1, (10, 3))
    e3 = coordinate(2)
    comm = second_order_apply(H, 0, 1, e3, y) - second_order_apply(H, 1, 0, e3, y)
    assert np.allclose(comm, 1.0, atol=1e-6)
    assert np.allclose(second_order_apply(H, 0, 1, 7.0, y), 0.0)


@pytest.mark.parametrize("G", [abelian(2), heisenberg()], ids=lambda G: G.name)
def test_commutator_consistency(G, rng):
    f = parse_expression("sin(x1)*cos(x2)" + (" + x3*x1**2" if G.n == 3 else ""), G.n)
    x = rng.uniform(-1, 1, (10, G.n))
    c = G.structure_constants
    for i in range(G.n):
        for j in range(G.n):
            lhs = second_order_apply(G, i, j, f, x) - second_order_apply(G, j, i, f, x)
            rhs = sum(c[i, j, k] * vector_field_apply(G, k, f, x) for k in range(G.n))
            assert np.allclose(lhs, rhs, atol=1e-6)


def test_taylor2_examples():
    t = taylor2(abelian(1), lambda x: np.full(x.shape[:-1], 7.0), [0.3])
    assert t.value == 7.0 and np.allclose(t.gradient, 0) and np.allclose(t.hessian, 0)
    t = taylor2(abelian(1), parse_expression("x1**2", 1), [0.0])
    assert (t.value, t.gradient[0]) == pytest.approx((0.0, 0.0), abs=1e-9)
    assert t.hessian[0, 0] == pytest.approx(2.0, abs=1e-7)
    t = taylor2(heisenberg(), coordinate(2), [0.0, 0.0, 0.0])
    assert t.gradient[2] == pytest.approx(1.0, abs=1e-9)
    assert np.allclose(t.hessian, 0.0, atol=1e-7)


def test_scaled_remainder_decays(rng):
    H = heisenberg()
    f = parse_expression("sin(x1 + 0.5*x3)*exp(x2)", 3)
    x = np.array([0.2, -0.4, 0.3])
    T = taylor2(H, f, x)
    dirs = rng.normal(size=(32, 3))
    q = []
    for k in range(5):
        eps = 0.1 * 2.0 ** -k
        pts = multiply(H, x, dilate(H, eps, dirs))
        q.append(float(np.max(np.abs(f(pts) - T.predict(dilate(H, eps, dirs))))) / eps ** 2)
    assert all(b <= 0.75 * a for a, b in zip(q, q[1:])), q


def test_left_jacobian_columns(rng):
    H = heisenberg()
    Jx = left_jacobian(H, [1.0, 2.0, 0.0])
    assert np.allclose(Jx[:, 0], [1, 0, -1])
    x = rng.uniform(-3, 3, (20, 3))
    Jx = left_jacobian(H, x)
    assert np.allclose(Jx[:, :, 0], np.stack([np.ones(20), np.zeros(20), -x[:, 1] / 2], -1))
    assert np.allclose(Jx[:, :, 1], np.stack([np.zeros(20), np.ones(20), x[:, 0] / 2], -1))
    assert np.allclose(np.linalg.det(Jx), 1.0, atol=1e-14)
