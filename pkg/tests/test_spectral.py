import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given
from hypothesis import strategies as st

from domperturb import geometry as geo
from domperturb.spectral import (
    Projector,
    SpectralError,
    cstar_partial,
    deift_residual,
    deviation_series,
    identity_decomposition,
    projector_distance,
    property_p_fit,
    resolvent_difference_norm,
    resolvent_singular_values,
    riesz_apply,
    riesz_projector,
    schatten,
    solve_eigs,
    spectral_projector,
)
from domperturb.study import dirichlet_square_bundle, random_pair_bundles

from oracles import ALL_SIDES, bundles_for, square

ID = geo.IdentityMap()


@pytest.fixture(scope="module")
def pair():
    return random_pair_bundles(np.random.default_rng(7), h=0.15)


@pytest.fixture(scope="module")
def square_system():
    mesh, dofmap, base = dirichlet_square_bundle(0.05)
    return mesh, dofmap, base, solve_eigs(base, 60)


def _inv(A):
    return np.linalg.inv(A)


# ---------------------------------------------------------------------------
# eigensolves


def test_eigensystem_invariants(square_system):
    _, _, base, es = square_system
    assert es.orthonormality_error() <= 1e-8
    assert np.all(es.residuals <= 1e-8)
    assert np.all(np.diff(es.values) >= 0)
    assert abs(es.values[0] - 2 * math.pi**2) / (2 * math.pi**2) < 0.02


def test_dense_and_shift_invert_agree(pair):
    base = pair[4]["base"]
    dense = solve_eigs(base, 10)
    sparse = solve_eigs(base, 10, dense_limit=10)
    np.testing.assert_allclose(sparse.values, dense.values, rtol=1e-10)
    assert sparse.orthonormality_error() <= 1e-8
    assert np.all(sparse.residuals <= 1e-8)


def test_solve_rejects_bad_k(pair):
    with pytest.raises(SpectralError):
        solve_eigs(pair[4]["base"], 0)
    with pytest.raises(SpectralError):
        solve_eigs(pair[4]["base"], pair[4]["base"].n + 1)


def test_neumann_zero_mode_is_simple():
    _, _, _, B = bundles_for(square(), 0.1, ID, ID)
    es = solve_eigs(B["base"], 4)
    assert abs(es.values[0]) < 1e-10
    assert es.cluster_of(0) == [0]


def test_degenerate_pair_is_one_cluster(square_system):
    es = square_system[3]
    assert es.cluster_of(1) == [1, 2]


def test_unitary_equivalence_of_tilde_operator(pair):
    B = pair[4]
    w = B["base"].w
    # eigenvalues of w^2 T*ST, with T*ST = M_g^-1 K_cross, from a symmetric generalized problem
    lam_direct = scipy.linalg.eigh(B["cross"].K.toarray(), np.diag(B["cross"].M / w**2), eigvals_only=True)
    lam_tilde = solve_eigs(B["tilde"], B["tilde"].n).values
    np.testing.assert_allclose(lam_tilde, lam_direct, rtol=1e-10, atol=1e-10)


def test_minmax_monotone_for_nested_gamma():
    specs = [("bottom",), ("bottom", "top"), ALL_SIDES]
    vals = []
    for sides in specs:
        _, _, _, B = bundles_for(square(*sides), 0.1, ID, ID)
        vals.append(solve_eigs(B["base"], 15).values)
    assert np.all(vals[0] <= vals[1] * (1 + 1e-12))
    assert np.all(vals[1] <= vals[2] * (1 + 1e-12))


@given(seed=st.integers(0, 2**31))
def test_auxiliary_operator_eigenvalue_comparison(seed):
    dom = square("bottom")
    rng = np.random.default_rng(seed)
    g2 = geo.compact_bump(1.0, rng.uniform(-0.2, 0.2), rng.uniform(0.3, 0.7), rng.uniform(0.15, 0.3))
    phi_t = geo.build_graph_map(dom.graph, g2, dom.a, dom.b, dom.rho)
    _, _, c, B = bundles_for(dom, 0.15, ID, phi_t)
    lam_aux = solve_eigs(B["cross"], 20).values
    lam_ref = solve_eigs(B["base"], 20).values
    tau = phi_t.tau
    const = 1 / (c.theta * tau**2 * 2 * tau**2)
    assert np.all(lam_aux >= const * lam_ref)


# ---------------------------------------------------------------------------
# Schatten norms and the eigenvalue series


def test_series_toy_example():
    assert deviation_series([1.0, 2.0], [1.0, 3.0], 2) == pytest.approx(1 / 12, rel=1e-15)


def test_series_vanishes_for_equal_lists():
    lam = np.linspace(1, 50, 20)
    for r in (1, 2, 3, math.inf):
        assert deviation_series(lam, lam, r) == 0.0


def test_series_tail_estimate_reported():
    lam = np.arange(1, 41) * 10.0
    value, tail = deviation_series(lam, lam * 1.01, 3, with_tail=True)
    assert value > 0 and 0 < tail < value


@given(sv=st.lists(st.floats(0, 10), min_size=1, max_size=30))
def test_schatten_definition_and_monotonicity(sv):
    sv = np.array(sv)
    top = sv.max()
    ref = top * math.sqrt(np.sum((sv / top) ** 2)) if top > 0 else 0.0
    assert schatten(sv, 2) == pytest.approx(ref, rel=1e-12)
    assert schatten(sv, math.inf) == sv.max()
    norms = [schatten(sv, r) for r in (1, 2, 3, 4, math.inf)]
    assert all(b <= a * (1 + 1e-12) for a, b in zip(norms, norms[1:]))


def test_resolvent_difference_vanishes_for_equal_maps():
    dom = square("bottom")
    phi = geo.build_graph_map(dom.graph, geo.sine_bump(1.0, 0.1), dom.a, dom.b, dom.rho)
    _, _, _, B = bundles_for(dom, 0.15, phi, phi)
    rep = resolvent_difference_norm(B["base"], B["tilde"], B["base"].w, -1.0, 2)
    assert rep.value <= 1e-12


def test_resolvent_report_matches_singular_values(pair):
    B = pair[4]
    w = B["base"].w
    rep2 = resolvent_difference_norm(B["base"], B["tilde"], w, -1.0, 2)
    repi = resolvent_difference_norm(B["base"], B["tilde"], w, -1.0, math.inf)
    assert rep2.value == pytest.approx(np.sqrt(np.sum(rep2.singular_values**2)), rel=1e-12)
    assert repi.value <= rep2.value
    # independent dense evaluation in the M_g-weighted space
    H = B["base"].H()
    E = (B["tilde"].K.toarray() / B["tilde"].M[:, None]) * w[None, :] / w[:, None]
    n = len(w)
    D = _inv(E + np.eye(n)) - _inv(H + np.eye(n))
    sm = np.sqrt(B["base"].M)
    sv = np.linalg.svd(sm[:, None] * D / sm[None, :], compute_uv=False)
    np.testing.assert_allclose(np.sort(rep2.singular_values)[::-1], sv, rtol=1e-8, atol=1e-13)


@pytest.mark.parametrize("seed", range(4))
def test_series_below_schatten_norm(seed):
    _, _, _, _, B = random_pair_bundles(np.random.default_rng(seed), h=0.15)
    es, et = solve_eigs(B["base"], B["base"].n), solve_eigs(B["tilde"], B["base"].n)
    sv = resolvent_singular_values(B["base"], B["tilde"], B["base"].w, -1.0)
    for r in (2, 3, math.inf):
        assert deviation_series(es.values, et.values, r) <= schatten(sv, r) + 1e-10
    # a truncated list only makes the series smaller
    assert deviation_series(es.values[:20], et.values[:20], 3) <= schatten(sv, 3) + 1e-10


def test_shift_near_spectrum_rejected(pair):
    B = pair[4]
    lam = solve_eigs(B["base"], 1).values[0]
    with pytest.raises(SpectralError):
        resolvent_singular_values(B["base"], B["tilde"], B["base"].w, lam)


# ---------------------------------------------------------------------------
# resolvent identity and commutation formula


@pytest.mark.parametrize("seed", range(3))
def test_identity_decomposition_exact(seed):
    _, _, _, _, B = random_pair_bundles(np.random.default_rng(seed), h=0.15)
    dec = identity_decomposition(B["base"], B["tilde"], B["cross"], xi=-1.0)
    assert dec.residual <= 1e-10


def test_identity_decomposition_terms_vanish_for_equal_maps():
    dom = square("bottom")
    phi = geo.build_graph_map(dom.graph, geo.sine_bump(1.0, 0.1), dom.a, dom.b, dom.rho)
    _, _, _, B = bundles_for(dom, 0.15, phi, phi)
    dec = identity_decomposition(B["base"], B["tilde"], B["cross"], xi=-1.0)
    for term in (dec.A1, dec.A2, dec.A3, dec.B, dec.lhs):
        assert np.abs(term).max() <= 1e-12


def test_b_term_is_auxiliary_resolvent_difference(pair):
    B = pair[4]
    dec = identity_decomposition(B["base"], B["tilde"], B["cross"], xi=-1.0)
    n = B["base"].n
    X = B["cross"].K.toarray() / B["cross"].M[:, None]
    expected = _inv(X + np.eye(n)) - _inv(B["base"].H() + np.eye(n))
    assert np.linalg.norm(dec.B - expected) / np.linalg.norm(expected) <= 1e-10


def test_deift_residual(pair):
    base = pair[4]["base"]
    assert deift_residual(base.T, base.WT, base.M, -1.0) <= 1e-11
    assert deift_residual(base.T, base.WT, base.M, -1e3) <= 1e-9


@given(e=st.floats(-10, 10), xi=st.floats(-100, -0.01))
def test_deift_scalar_case(e, xi):
    assert deift_residual(np.array([[e]]), np.array([1.0]), np.array([1.0]), xi) <= 1e-14


# ---------------------------------------------------------------------------
# projectors


def test_riesz_matches_spectral_sum(pair):
    base = pair[4]["base"]
    es = solve_eigs(base, 6)
    radius = 0.5 * (es.values[1] - es.values[0])
    P = riesz_projector(base, [0], es.values[0], radius, m=64, spectrum=es.values)
    Ps = spectral_projector(es, [0])
    assert projector_distance(P, Ps) <= 1e-8
    assert np.trace(P.matrix()) == pytest.approx(1.0, abs=1e-8)


def test_riesz_trapezoid_converged(pair):
    base = pair[4]["base"]
    es = solve_eigs(base, 6)
    radius = 0.5 * (es.values[1] - es.values[0])
    Y = np.random.default_rng(0).standard_normal((base.n, 3))
    a = riesz_apply(base, Y, es.values[0], radius, 64)
    b = riesz_apply(base, Y, es.values[0], radius, 128)
    assert np.abs(a - b).max() / np.abs(b).max() <= 1e-10


def test_riesz_for_degenerate_cluster(square_system):
    _, _, base, es = square_system
    c = es.cluster_of(1)
    center = es.values[1]
    radius = 0.5 * min(center - es.values[0], es.values[3] - center)
    P = riesz_projector(base, c, center, radius, spectrum=es.values)
    assert P.rank == 2
    assert projector_distance(P, spectral_projector(es, c)) <= 1e-8
    assert np.trace(P.matrix()) == pytest.approx(2.0, abs=1e-8)


def test_riesz_contour_too_close_rejected(pair):
    base = pair[4]["base"]
    es = solve_eigs(base, 6)
    with pytest.raises(SpectralError):
        riesz_projector(base, [0], es.values[0], 0.99 * (es.values[1] - es.values[0]), spectrum=es.values)


def test_projector_algebra(square_system):
    _, _, _, es = square_system
    P = spectral_projector(es, [1, 2]).matrix()
    M = es.M
    np.testing.assert_allclose(P @ P, P, atol=1e-10)
    np.testing.assert_allclose(M[:, None] * P, (M[:, None] * P).T, atol=1e-10)


@given(seed=st.integers(0, 2**31), m=st.integers(1, 4))
def test_projector_distance_orthogonal_ranges_is_one(seed, m):
    rng = np.random.default_rng(seed)
    n = 12
    M = rng.uniform(0.5, 2, n)
    Q, _ = np.linalg.qr(rng.standard_normal((n, 2 * m)))
    basis = Q / np.sqrt(M)[:, None]
    P = Projector(tuple(range(m)), basis[:, :m], M)
    Pt = Projector(tuple(range(m)), basis[:, m:], M)
    assert projector_distance(P, Pt) == pytest.approx(1.0, abs=1e-12)
    assert projector_distance(P, P) <= 1e-12
    # dense oracle: operator norm of M^{1/2} (P - Pt) M^{-1/2}
    sm = np.sqrt(M)
    D = sm[:, None] * (P.matrix() - Pt.matrix()) / sm[None, :]
    assert np.linalg.norm(D, 2) == pytest.approx(1.0, abs=1e-12)


def test_projector_weight_mismatch_rejected(square_system):
    es = square_system[3]
    P = spectral_projector(es, [0])
    with pytest.raises(SpectralError):
        projector_distance(P, Projector(P.indices, P.basis, 2 * P.M))


# ---------------------------------------------------------------------------
# series diagnostics


def test_cstar_single_value():
    assert cstar_partial([4.0], 2.0).partial == pytest.approx(1 / 16)


def test_cstar_summability(square_system):
    lam = square_system[3].values
    ok = cstar_partial(lam, 2.0)
    assert ok.summable and np.isfinite(ok.tail_estimate)
    n = np.arange(1, len(lam) + 1)
    # increments decay at least like n^-2 up to a constant
    assert np.all(ok.increments * n**2 <= 2 * ok.increments[0] * 4)
    bad = cstar_partial(lam, 0.9)
    assert not bad.summable and math.isinf(bad.tail_estimate)


def test_cstar_skips_zero_eigenvalue():
    assert cstar_partial([0.0, 2.0, 4.0], 1.5).increments.shape == (2,)


def test_property_p_exponents(square_system):
    mesh, dofmap, _, es = square_system
    fit = property_p_fit(es, mesh, dofmap, (5, 50))
    assert fit.gamma1 <= 0.5 + 0.2
    assert abs((fit.gamma2 - fit.gamma1) - 0.5) <= 0.2


def test_property_p_excludes_zero_mode():
    m, d, _, B = bundles_for(square(), 0.1, ID, ID)
    es = solve_eigs(B["base"], 40)
    fit = property_p_fit(es, m, d, (1, 40))
    assert 1 not in fit.indices
    with pytest.raises(SpectralError):
        property_p_fit(es, m, d, (1, 80))
