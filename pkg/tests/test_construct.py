import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from da_forge.construct import (
    apply,
    apply_inverse,
    apply_with_jacobian,
    center_derivative,
    deformation_centers,
    deformation_P,
    deformation_Q,
    inverse_system,
    iterate,
    jacobian,
    jacobian_standard,
    make_mixed_params,
    make_pve_params,
)
from da_forge.errors import ParameterError, UnsupportedVariantError
from da_forge.torus import nearest_offset, torus_matmul
from oracles import fd_jacobian, support_samples


def _gap(a, b):
    return np.max(np.abs(nearest_offset(np.asarray(a) - np.asarray(b))))


def test_round_trip_random_points(f_sys, G_sys):
    X = np.random.default_rng(0).random((5000, 3))
    for s in (f_sys, G_sys):
        assert _gap(apply_inverse(s, apply(s, X)), X) < 1e-9
        assert _gap(apply(s, apply_inverse(s, X)), X) < 1e-8


def test_round_trip_inside_supports(f_sys, g_sys, G_sys):
    rng = np.random.default_rng(1)
    for s in (f_sys, g_sys, G_sys):
        X = support_samples(s, 3000, rng)
        assert _gap(apply_inverse(s, apply(s, X)), X) < 1e-8


def test_inverse_system_is_inverse(f_sys, g_sys):
    X = np.random.default_rng(2).random((1000, 3))
    assert _gap(apply(g_sys, apply(f_sys, X)), X) < 1e-9
    assert inverse_system(g_sys).variant == "pve-f"
    assert g_sys.roles == {"ss": 0, "c": 1, "uu": 2}


_PVE = make_pve_params(7, 512, 1 / 1024, 4.330762)
_MIXED = make_mixed_params(3, 256, 1 / 1024, 0.499999)


@settings(max_examples=100, deadline=None)
@given(st.floats(-0.999, 0.999), st.floats(0.0, 0.999), st.floats(0.0, 6.28))
def test_newton_inverse_of_closed_form(u, rho, ang):
    for dfm in (_PVE.deformation, *_MIXED.deformations):
        abc = np.zeros((1, 3))
        abc[0, dfm.axis] = u * dfm.half_support
        t0, t1 = dfm.transverse
        abc[0, t0] = rho * dfm.profile.delta * np.cos(ang)
        abc[0, t1] = rho * dfm.profile.delta * np.sin(ang)
        img = abc.copy()
        img[0, dfm.axis] = dfm.closed(abc)[0]
        back = dfm.solve(img)[0]
        assert back == pytest.approx(abc[0, dfm.axis], abs=1e-13 * dfm.half_support)


def test_closed_form_is_scaled_q(pve_params):
    dfm = pve_params.deformation
    rng = np.random.default_rng(3)
    abc = rng.uniform(-1, 1, (500, 3)) * np.array([dfm.profile.delta, dfm.half_support, dfm.profile.delta])
    q, *_ = deformation_P(pve_params, abc[:, 0], abc[:, 1], abc[:, 2])
    assert np.allclose(dfm.closed(abc), dfm.scale * q, rtol=1e-12, atol=1e-20)


@pytest.mark.parametrize("name", ["f_sys", "g_sys", "G_sys"])
def test_jacobian_against_high_precision_differences(name, request):
    s = request.getfixturevalue(name)
    X = support_samples(s, 60, np.random.default_rng(4))
    J = jacobian_standard(s, X)
    for x, j in zip(X, J):
        fd = fd_jacobian(s, x)
        assert np.linalg.norm(j - fd) <= 1e-9 * np.linalg.norm(fd)


def test_apply_with_jacobian_consistent(G_sys):
    X = np.random.default_rng(5).random((100, 3))
    Y, J = apply_with_jacobian(G_sys, X)
    assert np.array_equal(Y, apply(G_sys, X))
    assert np.array_equal(J, jacobian(G_sys, X))


def test_fixed_point_jacobians(f_sys, G_sys, pve_params, mixed_params):
    p = np.zeros(3)
    assert np.allclose(jacobian(f_sys, p), np.diag([pve_params.lambda_uu, 2.0, pve_params.lambda_ss]), rtol=1e-12)
    q1, q2 = (np.asarray(c.center) for c in mixed_params.charts)
    lam = mixed_params
    assert np.allclose(jacobian(G_sys, q1), np.diag([lam.lambda_uu, 0.5, lam.lambda_ss]), rtol=1e-12, atol=1e-14)
    assert np.allclose(jacobian(G_sys, q2), np.diag([lam.lambda_uu, lam.lambda_u, 2.0]), rtol=1e-12, atol=1e-14)
    for x in (q1, q2):
        assert _gap(apply(G_sys, x), x) == 0.0


def test_linearized_system_is_the_linear_map(f_sys, pve_params):
    X = np.random.default_rng(6).random((200, 3))
    lin = f_sys.linearized()
    assert np.array_equal(apply(lin, X), torus_matmul(pve_params.linear.matrix, X))
    assert np.allclose(jacobian(lin, X), np.diag(pve_params.eigen.values))


def test_deformation_is_identity_outside_support(f_sys, G_sys):
    X = np.random.default_rng(7).random((20_000, 3))
    for s in (f_sys, G_sys):
        for step in s.deform_steps:
            dfm = step.deformation
            out = ~dfm.active(dfm.local(X))
            assert np.array_equal(step.forward(X[out]), X[out])


def test_center_derivative(g_sys, f_sys, pve_params):
    X = np.random.default_rng(8).random((100, 3))
    assert np.all(center_derivative(g_sys.linearized(), X) == 1.0 / pve_params.lambda_s)
    assert center_derivative(g_sys, np.zeros(3)) == pytest.approx(0.5)
    with pytest.raises(UnsupportedVariantError):
        center_derivative(f_sys, X)


def test_center_line_invariant_for_g(g_sys):
    # Dg has a zero (c, uu) and (c, ss) block pattern: E^s is invariant
    X = support_samples(g_sys, 500, np.random.default_rng(9))
    J = jacobian(g_sys, X)
    assert np.allclose(J[:, [0, 2], 1], 0.0)
    assert np.allclose(J[:, 1, 1], center_derivative(g_sys, X))


def test_mixed_partials_interface(mixed_params):
    q, qa, qb, qc = deformation_Q(mixed_params, 1, 0.0, 0.0, 0.0)
    assert q == 0.0 and qb == pytest.approx(0.5)
    with pytest.raises(ValueError):
        deformation_Q(mixed_params, 3, 0, 0, 0)


def test_iterate_and_centers(G_sys, mixed_params):
    x = np.array([0.1, 0.2, 0.3])
    assert _gap(iterate(G_sys, iterate(G_sys, x, 3), -3), x) < 1e-9
    centers = [c.coords for c in deformation_centers(G_sys)]
    assert centers == [c.center.coords for c in mixed_params.charts]


def test_parameter_validation():
    with pytest.raises(ParameterError):
        make_pve_params(7, 0, 1 / 1024, 4.0)
    with pytest.raises(ParameterError):
        make_pve_params(7, 1, 1 / 1024, 0.01, epsilon=0.05)
    with pytest.raises(ParameterError):
        make_mixed_params(3, 1, 1 / 1024, 0.05, epsilon=0.05)
    with pytest.raises(ParameterError):
        make_mixed_params(3, 1, 0.05, 0.4)
