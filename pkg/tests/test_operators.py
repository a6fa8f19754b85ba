import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from carnot_nonlocal.coefficients import CholeskyError, CoefficientSet, cholesky, derive, preset
from carnot_nonlocal.fields import coordinate, parse_expression
from carnot_nonlocal.group import abelian, dilate, heisenberg, multiply, second_order_apply, vector_field_apply
from carnot_nonlocal.harness import consistency_study
from carnot_nonlocal.kernel import make_bump_kernel
from carnot_nonlocal.operators import (K_stencil, apply_E_eps, apply_K_eps, apply_L_eps, apply_local_K,
                                       apply_local_L, apply_subLaplacian, compute_M_and_Fprime,
                                       direct_K_eps, eval_K_eps)
from carnot_nonlocal.polynomials import Poly, lie_derivative, random_homogeneous_poly

R1, R2, H = abelian(1), abelian(2), heisenberg()


def const(c):
    return lambda x: np.full(np.shape(x)[:-1], c)


# ------------------------------------------------------------------ coefficients

def test_derived_matrices(rng):
    cs = preset("sin-perturbed", H)
    x = rng.uniform(-2, 2, (40, 3))
    d = derive(cs, 0.1, x, 0.1)
    assert np.allclose(d.L @ np.swapaxes(d.L, -1, -2), d.A, atol=1e-12, rtol=0)
    assert np.allclose(d.L @ d.Linv, np.eye(3), atol=1e-10, rtol=0)
    assert np.allclose(np.linalg.det(d.A), np.linalg.det(cs.diffusion(x)), rtol=1e-12)
    # delta_eps commutes with the block-diagonal L
    t = rng.normal(size=(40, 3))
    lhs = dilate(H, 0.3, np.einsum("pij,pj->pi", d.L, t))
    rhs = np.einsum("pij,pj->pi", d.L, dilate(H, 0.3, t))
    assert np.allclose(lhs, rhs, atol=1e-14)
    # second-stratum drift is rescaled by 1/eps^2
    assert np.allclose(d.b_tilde[:, 2], cs.drift(x)[:, 2] / 0.01)
    assert cs.min_ellipticity(x) > 0


def test_cholesky_rejects_indefinite():
    with pytest.raises(CholeskyError):
        cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_fokker_planck_needs_mobility():
    with pytest.raises(ValueError):
        CoefficientSet(R1, "fokker-planck")


# ------------------------------------------------------------------ nonlocal operators

@pytest.mark.parametrize("G", [R1, R2, H], ids=lambda G: G.name)
def test_constants_annihilated_exactly(G, rng):
    J = make_bump_kernel(G)
    x = rng.uniform(-1, 1, (10, G.n))
    assert np.all(apply_E_eps(G, J, const(3.7), x, 0.1) == 0.0)
    assert np.all(apply_K_eps(preset("sin-perturbed", G), J, const(3.7), x, 0.1) == 0.0)
    a = parse_expression("2 + sin(x1)", G.n)
    u = lambda y: 5.0 / a(y)
    assert np.all(np.abs(apply_L_eps(G, J, a, u, x, 0.1)) <= 1e-9)


def test_E_examples():
    J = make_bump_kernel(1, shape="indicator")
    x = np.array([[0.3], [2.0], [-7.0]])
    for eps in (0.3, 0.1, 0.01):
        assert np.allclose(apply_E_eps(R1, J, coordinate(0) * coordinate(0), x, eps), 1 / 3, rtol=1e-12)
        assert np.allclose(apply_E_eps(R1, J, coordinate(0), x, eps), 0.0, atol=1e-12)


def test_K_examples():
    J2 = make_bump_kernel(2)
    u = parse_expression("x1**2 + x2**2", 2)
    for eps in (0.2, 0.05):
        assert apply_K_eps(CoefficientSet(R2), J2, u, [0.3, 0.4], eps) == pytest.approx(4.0, rel=1e-10)
    cs = CoefficientSet.from_expressions(R1, [["1"]], ["1"])
    assert apply_K_eps(cs, make_bump_kernel(1), coordinate(0), [0.3], 0.2) == pytest.approx(1.0, rel=1e-10)


def test_L_examples():
    J = make_bump_kernel(1)
    u2 = parse_expression("x1**2", 1)
    assert apply_L_eps(R1, J, 1.0, u2, [0.3], 0.1) == pytest.approx(2.0, rel=1e-10)
    a = parse_expression("x1 + 10", 1)
    assert apply_L_eps(R1, J, a, 1.0, [0.3], 0.1) == pytest.approx(0.0, abs=1e-10)


def test_eval_K_abelian_reduction(rng):
    J = make_bump_kernel(1, shape="indicator")
    cs = CoefficientSet(R1)
    eps = 0.1
    x = rng.uniform(0, 1, 200)[:, None]
    y = x + rng.uniform(-0.2, 0.2, x.shape)
    expect = np.where(np.abs(x - y)[:, 0] <= eps, (2 / J.C) * eps ** -3 * 0.5, 0.0)
    assert np.allclose(eval_K_eps(cs, J, x, y, eps), expect, rtol=1e-12)


def test_eval_K_symmetric_under_identity_coefficients(rng):
    J = make_bump_kernel(2)
    cs = CoefficientSet(R2)
    x = rng.uniform(0, 1, (100, 2))
    d = rng.normal(size=(100, 2)) * 0.05
    assert np.allclose(eval_K_eps(cs, J, x, x + d, 0.1), eval_K_eps(cs, J, x, x - d, 0.1))


def test_compute_M_examples():
    J = make_bump_kernel(1, shape="indicator")
    Lf = lambda y: np.ones((len(y), 1, 1))
    res = compute_M_and_Fprime(R1, J, ([0.0], [1.0]), Lf, 0.2)
    assert res.s_min == pytest.approx(-0.2, abs=1e-12)
    assert res.M == pytest.approx(2.2, abs=1e-12)
    assert np.all(res.M + res.points.sum(-1) >= 1.0 - 1e-12)
    res = compute_M_and_Fprime(R1, J, ([10.0], [11.0]), Lf, 0.2)
    assert res.s_min == pytest.approx(9.8) and res.M == 2.0
    with pytest.raises(ValueError):
        compute_M_and_Fprime(R1, J, ([1.0], [0.0]), Lf, 0.2)


@pytest.mark.parametrize("G", [R1, R2, H], ids=lambda G: G.name)
def test_kernel_nonnegative(G, rng):
    J = make_bump_kernel(G)
    cs = preset("sin-perturbed", G)
    lo, hi = np.zeros(G.n), np.ones(G.n)
    fp = compute_M_and_Fprime(G, J, (lo, hi), lambda y: derive(cs, J.C, y, 0.2).L, 0.2, sample_density=5)
    cs.M = fp.M
    x = rng.uniform(0, 1, (16, G.n))
    for eps in (0.2, 0.1, 0.05):
        st = K_stencil(cs, J, x, eps)
        xb = np.broadcast_to(x[:, None, :], st.points.shape)
        assert np.all(eval_K_eps(cs, J, xb, st.points, eps) >= 0)
        assert np.all(st.weights >= 0)


@pytest.mark.parametrize("G", [R1, R2, H], ids=lambda G: G.name)
@pytest.mark.parametrize("eps", [0.2, 0.05])
def test_transform_fidelity(G, eps, rng):
    # spherical kernel rule: no kink error, so both sides are spectrally accurate
    J = make_bump_kernel(G, nodes=24, rule="spherical")
    cs = preset("sin-perturbed", G)
    k = rng.uniform(0.5, 2.0, G.n)
    u = lambda y: np.sin(y @ k) + np.prod(y, -1)
    for x in rng.uniform(0, 1, (3, G.n)):
        a = apply_K_eps(cs, J, u, x, eps)
        b = direct_K_eps(cs, J, u, x, eps, nodes=24, method="polar")
        assert abs(a - b) <= 1e-6 * abs(a)


def test_box_oracle_agrees_loosely(rng):
    J = make_bump_kernel(2, nodes=24, rule="spherical")
    cs = preset("sin-perturbed", R2)
    u = parse_expression("sin(x1 + 2*x2)", 2)
    a = apply_K_eps(cs, J, u, [0.3, -0.2], 0.2)
    b = direct_K_eps(cs, J, u, [0.3, -0.2], 0.2, nodes=16, panels=8)
    assert abs(a - b) <= 1e-3 * abs(a)


# ------------------------------------------------------------------ local operators

def test_local_K_examples(rng):
    cs = CoefficientSet.from_expressions(R1, [["2"]], ["3"])
    x = rng.uniform(-1, 1, (10, 1))
    assert np.allclose(apply_local_K(R1, cs, parse_expression("x1**2", 1), x), 4 + 6 * x[:, 0], atol=1e-6)
    assert np.allclose(apply_local_K(R1, cs, const(2.0), x), 0.0)
    y = rng.uniform(-1, 1, (10, 3))
    v = parse_expression("x3**2", 3)
    assert np.allclose(apply_local_K(H, CoefficientSet(H), v, y), (y[:, 0] ** 2 + y[:, 1] ** 2) / 2, atol=1e-6)


def test_local_L_examples(rng):
    x = rng.uniform(-1, 1, (10, 1))
    x2 = parse_expression("x1**2", 1)
    assert np.allclose(apply_local_L(R1, 1.0, x2, x), 2.0, atol=1e-6)
    assert np.allclose(apply_local_L(R1, x2, x2, x), 12 * x[:, 0] ** 2, atol=1e-5)
    a = parse_expression("2 + sin(x1)", 1)
    assert np.allclose(apply_local_L(R1, a, lambda y: 3 / a(y), x), 0.0, atol=1e-6)


def test_sublaplacian_examples(rng):
    x = rng.uniform(-1, 1, (10, 2))
    assert np.allclose(apply_subLaplacian(R2, parse_expression("x1**2 + x2**2", 2), x), 4.0, atol=1e-6)
    y = rng.uniform(-1, 1, (10, 3))
    assert np.allclose(apply_subLaplacian(H, parse_expression("x1**2", 3), y), 2.0, atol=1e-6)
    assert np.allclose(apply_subLaplacian(H, parse_expression("3*x1 - x2 + 1", 3), y), 0.0, atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_lie_derivative_matches_differencing(seed):
    rng = np.random.default_rng(seed)
    p = random_homogeneous_poly(H, rng, max_degree=3)
    x = rng.uniform(-1, 1, (5, 3))
    for i in range(3):
        assert np.allclose(lie_derivative(H, p, i)(x), vector_field_apply(H, i, p, x), atol=1e-7)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([0.2, 0.1, 0.05]))
def test_polynomial_exactness(seed, eps):
    rng = np.random.default_rng(seed)
    G = (R2, H)[seed % 2]
    J = make_bump_kernel(G)
    cs = preset("sin-perturbed", G)
    p = random_homogeneous_poly(G, rng)
    x = rng.uniform(-1, 1, (4, G.n))
    exact = apply_local_K(G, cs, p, x)
    assert np.all(np.abs(apply_K_eps(cs, J, p, x, eps) - exact) <= 1e-8 * np.maximum(1, np.abs(exact)))


def test_poly_second_derivative_matches_differencing(rng):
    p = Poly(3, {(1, 1, 0): 1.0, (0, 0, 1): 2.0, (2, 0, 0): -1.0})
    x = rng.uniform(-1, 1, (5, 3))
    exact = lie_derivative(H, lie_derivative(H, p, 1), 0)(x)
    assert np.allclose(exact, second_order_apply(H, 0, 1, p, x), atol=1e-6)


# ------------------------------------------------------------------ consistency

def test_consistency_constant_field_zero():
    x = np.random.default_rng(0).uniform(-1, 1, (16, 2))
    tab = consistency_study("E", R2, make_bump_kernel(2), [const(1.0)], [0.2, 0.1, 0.05], x)
    assert tab.errors == [0.0, 0.0, 0.0] and tab.fit is None


def test_consistency_polynomial_exact():
    rng = np.random.default_rng(2)
    p = random_homogeneous_poly(H, rng)
    x = rng.uniform(-1, 1, (16, 3))
    tab = consistency_study("K", H, make_bump_kernel(H), [p], [0.2, 0.1, 0.05, 0.025], x,
                            preset("sin-perturbed", H))
    assert max(tab.errors) <= 1e-8


def test_consistency_E_slope_R2():
    x = np.random.default_rng(0).uniform(-1, 1, (64, 2))
    tab = consistency_study("E", R2, make_bump_kernel(2), [parse_expression("sin(x1)*cos(x2)", 2)],
                            [0.2, 0.1, 0.05, 0.025], x)
    assert tab.monotone and tab.slope == pytest.approx(2.0, abs=0.1)
