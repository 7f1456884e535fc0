import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given
from hypothesis import strategies as st

from domperturb import geometry as geo
from domperturb.mesh import generate_mesh
from domperturb.pullback import (
    CoefficientError,
    build_coefficient_bundle,
    constant_anisotropic,
    ellipticity_check,
    identity_field,
    lipschitz_checkerboard,
    pullback_coefficients,
    s_matrix,
    smooth_varying,
)

from oracles import dense_grid_theta, inverse_2x2, square

ID = geo.IdentityMap()


@pytest.fixture(scope="module")
def mesh():
    return generate_mesh(square("bottom"), 0.1)


def random_graph_map(seed):
    rng = np.random.default_rng(seed)
    dom = square()
    g2 = geo.compact_bump(1.0, rng.uniform(-0.2, 0.2), rng.uniform(0.3, 0.7), rng.uniform(0.15, 0.3))
    return geo.build_graph_map(dom.graph, g2, dom.a, dom.b, dom.rho)


# ---------------------------------------------------------------------------
# pull-back coefficients


def test_identity_map_returns_field_values(mesh):
    A = smooth_varying(0.3)
    a, g = pullback_coefficients(A, ID, mesh, quadrature="centroid")
    np.testing.assert_allclose(a, A(mesh.centroids), rtol=0, atol=1e-15)
    np.testing.assert_array_equal(g, 1.0)


@pytest.mark.parametrize("quadrature", ["centroid", "average", "laminate"])
@pytest.mark.parametrize("s", [0.5, 2.0, 3.7])
def test_uniform_scaling(mesh, quadrature, s):
    a, g = pullback_coefficients(identity_field(), geo.AffineMap(s * np.eye(2)), mesh, quadrature)
    np.testing.assert_allclose(a, np.broadcast_to(np.eye(2) / s**2, a.shape), rtol=1e-14)
    np.testing.assert_allclose(g, s**2, rtol=1e-14)


@given(entries=st.lists(st.floats(-2, 2), min_size=4, max_size=4))
def test_affine_map_closed_form(entries):
    J = np.array(entries).reshape(2, 2)
    if abs(np.linalg.det(J)) < 0.05:
        J = J + 2 * np.eye(2)
    if abs(np.linalg.det(J)) < 0.05:
        return
    m = generate_mesh(square(), 0.25)
    a, g = pullback_coefficients(identity_field(), geo.AffineMap(J, [0.3, -0.2]), m)
    Jinv = inverse_2x2(J)
    expected = Jinv @ Jinv.T
    np.testing.assert_allclose(a, np.broadcast_to(expected, a.shape), rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(g, abs(J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]), rtol=1e-13)


def test_singular_jacobian_names_element(mesh):
    class Flatten(geo.DeformationMap):
        def __call__(self, x):
            x = np.asarray(x, dtype=float)
            return np.stack([x[..., 0], np.zeros(x.shape[:-1])], -1)

        def jacobian(self, x):
            jac = np.zeros(np.shape(x)[:-1] + (2, 2))
            jac[..., 0, 0] = 1.0
            return jac

    for quadrature in ("centroid", "laminate"):
        with pytest.raises(CoefficientError, match="element"):
            pullback_coefficients(identity_field(), Flatten(), mesh, quadrature)


def test_pulled_back_matrices_are_symmetric(mesh):
    a, _ = pullback_coefficients(smooth_varying(0.4), random_graph_map(3), mesh)
    np.testing.assert_array_equal(a, np.swapaxes(a, -1, -2))


# ---------------------------------------------------------------------------
# S and the weights


def test_s_is_identity_for_equal_maps(mesh):
    phi = random_graph_map(0)
    b = build_coefficient_bundle(smooth_varying(0.3), phi, phi, mesh)
    np.testing.assert_allclose(b.S, np.broadcast_to(np.eye(2), b.S.shape), atol=1e-14)
    np.testing.assert_allclose(b.w_e, 1.0, rtol=1e-15)
    np.testing.assert_allclose(b.w_nodes, 1.0, rtol=1e-15)


@pytest.mark.parametrize("s", [0.7, 1.3])
def test_s_for_scaled_map_matches_hand_reduction(mesh, s):
    # a = I, at = s^-2 I, w = 1/s, so S = s^2 * s^-2 I = I
    b = build_coefficient_bundle(identity_field(), ID, geo.AffineMap(s * np.eye(2)), mesh)
    np.testing.assert_allclose(b.a_t, np.broadcast_to(np.eye(2) / s**2, b.a_t.shape), rtol=1e-14)
    np.testing.assert_allclose(b.w_e, 1 / s, rtol=1e-14)
    np.testing.assert_allclose(b.S, np.broadcast_to(np.eye(2), b.S.shape), atol=1e-14)


@given(seed=st.integers(0, 2**31))
def test_s_matches_independent_matrix_root(seed):
    rng = np.random.default_rng(seed)
    J1 = np.eye(2) + 0.3 * rng.standard_normal((2, 2))
    J2 = np.eye(2) + 0.3 * rng.standard_normal((2, 2))
    if min(abs(np.linalg.det(J1)), abs(np.linalg.det(J2))) < 0.2:
        return
    a = np.linalg.inv(J1.T @ J1)
    at = np.linalg.inv(J2.T @ J2)
    w2 = abs(np.linalg.det(J1)) / abs(np.linalg.det(J2))
    root = np.real(scipy.linalg.sqrtm(a))
    expected = np.linalg.solve(root, np.linalg.solve(root, at).T).T / w2
    out = s_matrix(a[None], at[None], np.array([math.sqrt(w2)]))[0]
    np.testing.assert_allclose(out, expected, rtol=1e-12, atol=1e-13)


@given(seed=st.integers(0, 2**31), amp=st.floats(0.0, 0.5))
def test_transport_consistency_and_weight_identity(seed, amp):
    m = generate_mesh(square("bottom"), 0.2)
    phi, phi_t = random_graph_map(seed), random_graph_map(seed + 1)
    b = build_coefficient_bundle(smooth_varying(amp), phi, phi_t, m)
    np.testing.assert_allclose(b.w_e**2 * b.g_t, b.g, rtol=1e-15)
    rng = np.random.default_rng(seed)
    zeta = rng.standard_normal((100, 2))
    lam, Q = np.linalg.eigh(b.a)
    root = Q @ (np.sqrt(lam)[..., None] * np.swapaxes(Q, -1, -2))
    y = np.einsum("eij,qj->eqi", root, zeta)
    lhs = np.einsum("eqi,eij,eqj->eq", y, b.S, y) * b.g[:, None]
    rhs = np.einsum("qi,eij,qj->eq", zeta, b.a_t, zeta) * b.g_t[:, None]
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12)


@given(seed=st.integers(0, 2**31))
def test_bundle_spectral_certificates(seed):
    m = generate_mesh(square("bottom"), 0.2)
    A = smooth_varying(0.3)
    b = build_coefficient_bundle(A, random_graph_map(seed), random_graph_map(seed + 7), m)
    info = b.check_invariants()
    assert info["max_condition"] <= info["condition_bound"]
    assert info["min_eig_a_tilde"] >= 1 / (A.theta * b.tau_t**2) * (1 - 1e-12)
    assert np.all(np.linalg.eigvalsh(b.S) > 0)


def test_s_inverse_deviation_bound_shape():
    # |S^-1 - I| <= c (|grad phi - grad phi_t| + |A o phi - A o phi_t|) elementwise,
    # with c taken from one batch of random pairs and checked on others
    m = generate_mesh(square("bottom"), 0.1)
    A = smooth_varying(0.3)

    def worst_ratio(seeds):
        out = 0.0
        for s in seeds:
            phi, phi_t = random_graph_map(s), random_graph_map(s + 1000)
            b = build_coefficient_bundle(A, phi, phi_t, m, quadrature="centroid")
            x = m.centroids
            num = np.linalg.norm(np.linalg.inv(b.S) - np.eye(2), 2, axis=(-2, -1))
            den = np.linalg.norm(phi_t.jacobian(x) - phi.jacobian(x), 2, axis=(-2, -1)) + np.linalg.norm(
                A(phi_t(x)) - A(phi(x)), 2, axis=(-2, -1)
            )
            assert np.all(num[den == 0] < 1e-13)
            ok = den > 0
            if ok.any():
                out = max(out, float(np.max(num[ok] / den[ok])))
        return out

    c = worst_ratio(range(0, 10))
    for batch in (range(10, 20), range(20, 30)):
        assert worst_ratio(batch) <= 2 * c


# ---------------------------------------------------------------------------
# ellipticity certificates


def test_identity_is_elliptic_with_theta_one():
    assert ellipticity_check(identity_field(), theta=1.0).passed


def test_anisotropic_theta_threshold():
    A = constant_anisotropic(2.0, 0.5)
    assert ellipticity_check(A, theta=2.0).passed
    cert = ellipticity_check(A, theta=1.9)
    assert not cert.passed
    assert cert.worst_quotient == pytest.approx(2.0, rel=1e-12) or cert.worst_quotient == pytest.approx(0.5, rel=1e-12)
    assert cert.theta_estimate == pytest.approx(2.0, rel=1e-12)


def test_smooth_varying_theta_estimate_matches_dense_grid():
    A = smooth_varying(0.3)
    cert = ellipticity_check(A, samples=2000)
    oracle = dense_grid_theta(A)
    assert cert.passed
    assert cert.theta_estimate == pytest.approx(oracle, rel=0.01)
    assert cert.theta_estimate <= 1 / 0.7 * (1 + 1e-12)  # eigenvalues are 1 +- 0.3 |sin x1|


@given(contrast=st.floats(0.0, 0.9), seed=st.integers(0, 1000))
def test_declared_theta_is_valid(contrast, seed):
    assert ellipticity_check(lipschitz_checkerboard(contrast), samples=300, seed=seed).passed
    assert ellipticity_check(smooth_varying(contrast), samples=300, seed=seed).passed


def test_nonsymmetric_field_rejected():
    from domperturb.pullback import CoefficientField

    bad = CoefficientField(lambda x: np.broadcast_to(np.array([[1.0, 0.2], [0.0, 1.0]]), x.shape[:-1] + (2, 2)), 2.0)
    with pytest.raises(CoefficientError):
        ellipticity_check(bad)
