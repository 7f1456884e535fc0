import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from domperturb import geometry as geo
from domperturb.mesh import generate_mesh
from domperturb.pullback import constant_anisotropic, identity_field

from oracles import disk_symdiff_polar, finite_difference_jacobian, square

ID = geo.IdentityMap()


def graph_pair_map(eps, k=1, base=1.0):
    dom = square()
    return dom, geo.build_graph_map(dom.graph, geo.sine_bump(base, eps, k=k), dom.a, dom.b, dom.rho)


def interior_points(rng, n, phi, lo=0.02, hi=0.98, top=1.0, seam_gap=1e-4):
    x = rng.uniform(lo, hi, (4 * n, 2)) * np.array([1.0, top])
    if phi.seam is not None:
        x = x[np.abs(phi.seam(x)) > seam_gap]
    return x[:n]


# ---------------------------------------------------------------------------
# symmetric difference


def test_symmetric_difference_vanishes_for_equal_maps():
    dom, phi = graph_pair_map(0.1)
    assert geo.symmetric_difference(dom, phi, phi) == 0.0
    assert geo.symmetric_difference(dom, ID, ID) == 0.0


def test_symmetric_difference_constant_lift():
    dom = square()
    eps = 0.07
    phi = geo.build_graph_map(dom.graph, geo.constant_graph(1.0 + eps), dom.a, dom.b, dom.rho)
    assert geo.symmetric_difference(dom, ID, phi) == pytest.approx(eps, rel=1e-13)


@pytest.mark.parametrize("eps", [0.1, 0.05, 0.0125])
def test_symmetric_difference_sine_bump_closed_form(eps):
    dom, phi = graph_pair_map(eps)
    assert geo.symmetric_difference(dom, ID, phi) == pytest.approx(2 * eps / math.pi, rel=1e-12)


def test_symmetric_difference_crossing_graphs():
    # |sin(2 pi x)| integrates to 2/pi over (0, 1); the graphs cross at x = 1/2
    dom, phi = graph_pair_map(0.05, k=2)
    assert geo.symmetric_difference(dom, ID, phi) == pytest.approx(0.1 / math.pi, rel=1e-12)


# ---------------------------------------------------------------------------
# graph maps


def test_equal_graphs_give_identity():
    dom = square()
    phi = geo.build_graph_map(dom.graph, dom.graph, dom.a, dom.b, dom.rho)
    assert isinstance(phi, geo.IdentityMap)
    mesh = generate_mesh(dom, 0.1)
    assert geo.delta_p(ID, phi, identity_field(), 2, mesh) == 0.0


def test_graph_map_formula_when_graph_moves_down(rng):
    dom = square()
    eps = 0.1
    g2 = geo.sine_bump(1.0, -eps)  # g2 <= g1 = 1
    phi = geo.build_graph_map(dom.graph, g2, dom.a, dom.b, dom.rho)
    delta = dom.rho / (2 * (dom.b - dom.a))
    x = rng.uniform(0.01, 0.99, 500)
    g1v, g2v = np.ones_like(x), 1.0 - eps * np.sin(math.pi * x)
    g3 = np.minimum(g1v, g2v) - delta * np.abs(g1v - g2v)
    y = g3 + rng.uniform(0.001, 1.0, 500) * (1.0 - g3)
    expected = g2v + delta / (delta + 1) * (y - g1v)
    out = phi(np.stack([x, y], -1))
    np.testing.assert_allclose(out[:, 0], x, rtol=0, atol=0)
    np.testing.assert_allclose(out[:, 1], expected, rtol=1e-14, atol=1e-14)
    below = np.stack([x, 0.5 * g3], -1)
    np.testing.assert_array_equal(phi(below), below)


def test_displaced_measure_against_strip_integral():
    # moving the graph down by eps sin(pi x): the displaced set is the strip
    # between g3 and g1 of height (1 + delta) |g1 - g2|
    dom = square()
    eps = 0.1
    phi = geo.build_graph_map(dom.graph, geo.sine_bump(1.0, -eps), dom.a, dom.b, dom.rho)
    delta = dom.rho / (2 * (dom.b - dom.a))
    sd = geo.symmetric_difference(dom, ID, phi)
    dm = geo.displaced_measure(dom, ID, phi)
    assert dm == pytest.approx((1 + delta) * 2 * eps / math.pi, rel=1e-12)
    assert dm <= 2 * sd


@given(
    eps=st.floats(-0.2, 0.2).filter(lambda e: abs(e) > 1e-3),
    k=st.integers(1, 4),
    center=st.floats(0.3, 0.7),
    width=st.floats(0.1, 0.3),
    amp=st.floats(-0.2, 0.2),
)
def test_displaced_at_most_twice_symmetric_difference(eps, k, center, width, amp):
    dom = square()
    g1 = geo.sine_bump(1.0, eps, k=k)
    dom1 = geo.graph_cylinder(g1, rho=dom.rho, b=dom.b)
    g2 = geo.compact_bump(1.0, amp, center, width)
    phi = geo.build_graph_map(g1, g2, dom1.a, dom1.b, dom1.rho)
    sd = geo.symmetric_difference(dom1, ID, phi)
    dm = geo.displaced_measure(dom1, ID, phi)
    assert dm <= 2 * sd * (1 + 1e-12) + 1e-15


@given(eps=st.floats(-0.25, 0.25).filter(lambda e: abs(e) > 1e-3), k=st.integers(1, 3), seed=st.integers(0, 2**31))
def test_graph_map_jacobian_matches_finite_differences(eps, k, seed):
    _, phi = graph_pair_map(eps, k=k)
    x = interior_points(np.random.default_rng(seed), 1000, phi, top=1.0)
    ana = phi.jacobian(x)
    fd = finite_difference_jacobian(phi, x)
    scale = np.linalg.norm(ana, axis=(-2, -1))
    assert np.max(np.linalg.norm(fd - ana, axis=(-2, -1)) / scale) <= 1e-6


@given(eps=st.floats(-0.25, 0.25).filter(lambda e: abs(e) > 1e-3), k=st.integers(1, 3), seed=st.integers(0, 2**31))
def test_graph_map_bijective_on_sample(eps, k, seed):
    _, phi = graph_pair_map(eps, k=k)
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 1, (2000, 2))  # the closed unit square, i.e. below g1 = 1
    y = phi(x)
    g2 = 1.0 + eps * np.sin(k * math.pi * y[:, 0])
    assert np.all(y[:, 1] <= g2 + 1e-12)
    np.testing.assert_allclose(phi.inverse(y), x, rtol=0, atol=1e-8)
    # the graph itself is carried onto the new graph
    top = np.stack([x[:, 0], np.ones(len(x))], -1)
    np.testing.assert_allclose(phi(top)[:, 1], 1.0 + eps * np.sin(k * math.pi * x[:, 0]), atol=1e-13)


@given(eps=st.floats(-0.25, 0.25), seed=st.integers(0, 2**31))
def test_det_bounded_by_factorial_norm_power(eps, seed):
    _, phi = graph_pair_map(eps)
    x = np.random.default_rng(seed).uniform(0, 1, (500, 2))
    jac = phi.jacobian(x)
    assert np.all(np.abs(np.linalg.det(jac)) <= 2 * np.linalg.norm(jac, 2, axis=(-2, -1)) ** 2 * (1 + 1e-14))


def test_tau_certificate_covers_sample(rng):
    _, phi = graph_pair_map(0.1)
    x = rng.uniform(0, 1, (3000, 2))
    assert phi.certificate(x) <= phi.tau * (1 + 1e-12)


def test_band_violation_rejected():
    dom = square()
    with pytest.raises(geo.GeometryError):
        geo.build_graph_map(dom.graph, geo.constant_graph(1.6), dom.a, dom.b, dom.rho)
    with pytest.raises(geo.GeometryError):
        geo.build_graph_map(dom.graph, geo.constant_graph(1.1), dom.a, dom.b, 1.5)
    with pytest.raises(geo.GeometryError):
        geo.graph_cylinder(geo.constant_graph(0.4), rho=0.5)


# ---------------------------------------------------------------------------
# normal maps on the disk


def test_zero_normal_perturbation_is_identity():
    d = geo.disk()
    assert isinstance(geo.build_normal_map(d, geo.constant_graph(0.0, (0, 2 * math.pi)), 0.25), geo.IdentityMap)


@pytest.mark.parametrize("c", [0.05, 0.2])
def test_constant_normal_offset_gives_annulus(c):
    d = geo.disk(radius=1.0, t=0.5)
    phi = geo.build_normal_map(d, geo.constant_graph(c, (0, 2 * math.pi)), 0.25)
    assert geo.symmetric_difference(d, ID, phi) == pytest.approx(math.pi * ((1 + c) ** 2 - 1), rel=1e-12)
    theta = np.linspace(0, 2 * math.pi, 50, endpoint=False)
    boundary = np.stack([np.cos(theta), np.sin(theta)], -1)
    np.testing.assert_allclose(np.linalg.norm(phi(boundary), axis=1), 1 + c, rtol=1e-13)


def test_disk_symmetric_difference_two_quadratures():
    d = geo.disk(radius=1.0, t=0.5)
    eps = 0.05 * d.t
    g = geo.cosine_mode(0.0, eps, 3)
    phi = geo.build_normal_map(d, g, 0.25)
    lib = geo.symmetric_difference(d, ID, phi)
    polar = disk_symdiff_polar(1.0, lambda th: eps * math.cos(3 * th))
    assert lib == pytest.approx(polar, rel=1e-6)


@given(eps=st.floats(0.005, 0.2), mode=st.integers(1, 5), seed=st.integers(0, 2**31))
def test_normal_map_jacobian_and_inverse(eps, mode, seed):
    d = geo.disk(radius=1.0, t=0.5)
    phi = geo.build_normal_map(d, geo.cosine_mode(0.0, eps, mode), 0.25)
    rng = np.random.default_rng(seed)
    r = np.sqrt(rng.uniform(0.0, 0.99, 1500))
    th = rng.uniform(0, 2 * math.pi, 1500)
    x = np.stack([r * np.cos(th), r * np.sin(th)], -1)
    x = x[np.abs(phi.seam(x)) > 1e-4][:1000]
    ana = phi.jacobian(x)
    fd = finite_difference_jacobian(phi, x)
    assert np.max(np.linalg.norm(fd - ana, axis=(-2, -1)) / np.linalg.norm(ana, axis=(-2, -1))) <= 1e-6
    np.testing.assert_allclose(phi.inverse(phi(x)), x, atol=1e-8)
    rad = np.linalg.norm(phi(x), axis=1)
    ang = np.arctan2(x[:, 1], x[:, 0])
    assert np.all(rad <= 1 + eps * np.cos(mode * ang) + 1e-12)


def test_normal_map_with_polygon_reference_fits_mesh_boundary():
    d = geo.disk(radius=1.0, t=0.5, dirichlet=[geo.DirichletPiece("circle")])
    mesh = generate_mesh(d, 0.1)
    ref = mesh.radial_boundary_graph()
    eps = 0.05
    phi = geo.build_normal_map(d, geo.cosine_mode(0.0, eps, 3), 0.25, reference=ref)
    bnodes = mesh.nodes[np.unique(mesh.boundary_edges.ravel())]
    th = np.arctan2(bnodes[:, 1], bnodes[:, 0])
    np.testing.assert_allclose(
        np.linalg.norm(phi(bnodes), axis=1), np.linalg.norm(bnodes, axis=1) + eps * np.cos(3 * th), atol=1e-12
    )


# ---------------------------------------------------------------------------
# delta_p


def test_delta_p_vanishes_for_equal_maps():
    dom, phi = graph_pair_map(0.1)
    mesh = generate_mesh(dom, 0.1)
    for p in (2, 3, math.inf):
        assert geo.delta_p(phi, phi, identity_field(), p, mesh) == 0.0


def test_delta_p_constant_coefficient_has_no_second_summand():
    dom, phi = graph_pair_map(0.1)
    mesh = generate_mesh(dom, 0.1)
    aniso = constant_anisotropic(2.0, 0.5, 0.3)
    for p in (2, 3, math.inf):
        assert geo.delta_p(ID, phi, aniso, p, mesh) == pytest.approx(
            geo.delta_p(ID, phi, identity_field(), p, mesh), rel=1e-14
        )


@pytest.mark.parametrize("p", [2, 3])
def test_delta_p_power_bounded_by_symmetric_difference(p):
    dom = square()
    mesh = generate_mesh(dom, 0.05)
    ratios = []
    for eps in (0.1, 0.05, 0.025):
        _, phi = graph_pair_map(eps)
        sd = geo.symmetric_difference(dom, ID, phi)
        ratios.append(geo.delta_p(ID, phi, identity_field(), p, mesh) ** p / sd)
    c = ratios[0]
    assert all(r <= 1.05 * c for r in ratios)
    assert max(ratios) / min(ratios) < 1.05


def test_vicinity_report_identity_is_zero():
    dom = square("bottom")
    mesh = generate_mesh(dom, 0.1)
    rep = geo.vicinity_report(dom, ID, ID, identity_field(), mesh)
    assert rep.sym_diff == 0 and rep.displaced_measure == 0
    assert all(v == 0 for v in rep.delta_p.values())
