import numpy as np
import pytest

from carnot_nonlocal.kernel import (KernelJ, MomentError, QuadratureError, kernel_from_config,
                                    make_bump_kernel, spherical_rule, tensor_gauss_legendre,
                                    validate_moments)


def quartic(t):
    r2 = np.sum(np.asarray(t) ** 2, axis=-1)
    return np.where(r2 <= 1, (1 - r2) ** 2, 0.0)


def test_indicator_1d_closed_form():
    J = make_bump_kernel(1, shape="indicator", nodes=32)
    assert J.kappa == pytest.approx(0.5, abs=1e-14)
    assert validate_moments(J, 1e-10).C == pytest.approx(1 / 3, abs=1e-12)


def test_quartic_1d_closed_form():
    J = make_bump_kernel(1, shape="quartic-bump", nodes=32)
    assert J.kappa == pytest.approx(15 / 16, abs=1e-12)
    assert J.C == pytest.approx(1 / 7, abs=1e-12)


@pytest.mark.parametrize("n", [1, 2, 3])
@pytest.mark.parametrize("shape", ["quartic-bump", "truncated-gaussian"])
@pytest.mark.parametrize("rule", ["tensor", "spherical"])
def test_moment_suite(n, shape, rule):
    rep = validate_moments(make_bump_kernel(n, shape=shape, nodes=32 if rule == "tensor" else 24,
                                            rule=rule), 1e-10)
    assert rep.mass == pytest.approx(1.0, abs=1e-12)
    off = rep.second_moments - np.diag(np.diag(rep.second_moments))
    assert np.max(np.abs(off)) <= 1e-12


def test_shifted_profile_fails_first_moment():
    J = KernelJ(1, lambda t: quartic(np.asarray(t) - 0.1), 1.0, 32)
    with pytest.raises(MomentError, match="first moment"):
        validate_moments(J, 1e-10)


def test_anisotropic_profile_fails_second_moment():
    J = KernelJ(2, lambda t: quartic(np.asarray(t) * [1.0, 2.0]), 1.0, 32)
    with pytest.raises(MomentError, match="second moment"):
        validate_moments(J, 1e-10)


def test_even_and_compact(rng):
    for n in (1, 2, 3):
        J = make_bump_kernel(n)
        t = rng.uniform(-1.5, 1.5, (500, n))
        assert np.array_equal(J(t), J(-t))
        assert np.all(J(t[np.max(np.abs(t), -1) > 1]) == 0)


def test_spherical_rule_integrates_ball_volume():
    for n, vol in ((2, np.pi), (3, 4 * np.pi / 3)):
        _, w = spherical_rule(n, 12, 1.0)
        assert w.sum() == pytest.approx(vol, rel=1e-13)
    pts, w = tensor_gauss_legendre(2, 8, -1, 1)
    assert w.sum() == pytest.approx(4.0, rel=1e-14)


def test_spherical_rule_beats_tensor_on_kink():
    # quartic bump in 2D: C(J) = 1/8 exactly
    tensor = make_bump_kernel(2, nodes=32)
    sph = make_bump_kernel(2, nodes=32, rule="spherical")
    assert abs(sph.C - 0.125) < 1e-14
    assert abs(tensor.C - 0.125) > 1e-7


@pytest.mark.parametrize("kwargs", [dict(nodes=4), dict(R=0.0), dict(shape="cosine")])
def test_bad_construction(kwargs):
    with pytest.raises((ValueError, KeyError)):
        make_bump_kernel(2, **kwargs)


def test_unresolved_rule_raises():
    with pytest.raises(QuadratureError):
        make_bump_kernel(2, shape="indicator", nodes=8, rtol=1e-6)


def test_unknown_rule():
    with pytest.raises(ValueError):
        make_bump_kernel(2, rule="sparse")


def test_kernel_from_config():
    J = kernel_from_config({"shape": "truncated-gaussian", "R": 2.0, "nodes": 16, "rule": "spherical"}, 2)
    assert (J.R, J.nodes_per_axis, J.rule, J.shape) == (2.0, 16, "spherical", "truncated-gaussian")
    assert validate_moments(J).mass == pytest.approx(1.0)
