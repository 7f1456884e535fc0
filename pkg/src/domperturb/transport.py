"""L2 distances between functions living on two mapped copies of a reference mesh.

A nodal vector ``u`` on the reference mesh with map ``phi`` stands for the
function ``u o phi^{-1}`` on ``phi(Omega)``, extended by zero outside. The
distance between two such functions over ``phi(Omega) U phi_t(Omega)`` is
computed on the reference mesh by changing variables on each piece:

    int_Omega |u - U_t o phi|^2 g dx + int_Omega [phi_t(x) not in phi(Omega)] |u_t|^2 g_t dx

with ``U_t(y) = u_t(phi_t^{-1}(y))`` when ``phi_t^{-1}(y)`` lies in ``Omega``
and zero otherwise.
"""

from __future__ import annotations

import numpy as np

from domperturb.geometry import DeformationMap, IdentityMap
from domperturb.mesh import DofMap, Mesh
from domperturb.quadrature import cut_quadrature


def domain_level_set(mesh: Mesh):
    """Level set (negative inside) whose zero set is the polygonal mesh boundary.

    Graph cylinders use the height above the piecewise linear top boundary,
    disks the radial distance to the boundary polygon.
    """
    dom = mesh.domain
    if dom is None:
        raise ValueError("mesh carries no reference domain")
    bnodes = np.unique(mesh.boundary_edges.ravel())
    pts = mesh.nodes[bnodes]
    if dom.kind == "graph_cylinder":
        top = {}
        for x, y in pts:
            top[x] = max(top.get(x, -np.inf), y)
        xs = np.array(sorted(top))
        ys = np.array([top[x] for x in xs])

        def sigma(p):
            p = np.asarray(p, dtype=float)
            return p[..., 1] - np.interp(p[..., 0], xs, ys)

        return sigma

    offset = mesh.radial_boundary_graph()
    c = np.asarray(dom.center)

    def sigma(p):
        d = np.asarray(p, dtype=float) - c
        th = np.arctan2(d[..., 1], d[..., 0])
        return np.hypot(d[..., 0], d[..., 1]) - dom.radius - offset(th)

    return sigma


def _compose(outer, inner):
    return lambda x: outer(inner(x))


def _union_setup(mesh: Mesh, phi: DeformationMap, phi_t: DeformationMap, depth: int):
    """Cut quadrature on the reference mesh plus the maps between both copies."""
    sigma = domain_level_set(mesh)
    to_t = _compose(phi_t.inverse, phi)  # x -> phi_t^{-1}(phi(x))
    from_t = _compose(phi.inverse, phi_t)
    level_sets = [_compose(sigma, to_t), _compose(sigma, from_t)]
    for m in (phi, phi_t):
        if m.seam is not None:
            level_sets += [m.seam, _compose(m.seam, to_t), _compose(m.seam, from_t)]
    if isinstance(phi, IdentityMap) and isinstance(phi_t, IdentityMap):
        level_sets = []
    q = cut_quadrature(mesh.nodes, mesh.triangles, level_sets, depth=depth)
    return q, sigma, to_t, from_t


def union_norm(mesh: Mesh, f, phi: DeformationMap, phi_t: DeformationMap, depth: int = 3) -> float:
    """``||f||`` in ``L^2(phi(Omega) U phi_t(Omega))`` for a function ``f`` on the plane."""
    q, sigma, _, from_t = _union_setup(mesh, phi, phi_t, depth)
    own = np.sum(q.weights * np.abs(phi.det(q.points)) * f(phi(q.points)) ** 2)
    outside = sigma(from_t(q.points)) > 1e-12
    extra = np.sum(q.weights * np.abs(phi_t.det(q.points)) * outside * f(phi_t(q.points)) ** 2)
    return float(np.sqrt(own + extra))


def transport_distance(
    mesh: Mesh,
    dofmap: DofMap,
    u: np.ndarray,
    phi: DeformationMap,
    u_t: np.ndarray,
    phi_t: DeformationMap,
    depth: int = 3,
    return_parts: bool = False,
):
    """``||u o phi^{-1} - u_t o phi_t^{-1}||`` over ``phi(Omega) U phi_t(Omega)`` (zero extension).

    ``u`` and ``u_t`` are free-DOF vectors or blocks with matching columns.
    With ``return_parts`` the squared contributions over ``phi(Omega)`` and
    over the part of ``phi_t(Omega)`` outside ``phi(Omega)`` are returned
    separately.
    """
    u = np.atleast_2d(np.asarray(u, dtype=float).T).T
    u_t = np.atleast_2d(np.asarray(u_t, dtype=float).T).T
    uf, utf = dofmap.extend(u), dofmap.extend(u_t)
    q, sigma, to_t, from_t = _union_setup(mesh, phi, phi_t, depth)
    lam = mesh.barycentric(q.element, q.points)
    tri = mesh.triangles[q.element]
    u_here = np.einsum("nk,nkc->nc", lam, uf[tri])
    ut_here = np.einsum("nk,nkc->nc", lam, utf[tri])

    y = to_t(q.points)
    inside = sigma(y) <= 1e-12
    ut_there, _ = mesh.interpolate(utf, y)
    ut_there[~inside] = 0.0
    g = np.abs(phi.det(q.points))
    part1 = np.sum(q.weights[:, None] * g[:, None] * (u_here - ut_there) ** 2, 0)

    outside = sigma(from_t(q.points)) > 1e-12
    g_t = np.abs(phi_t.det(q.points))
    part2 = np.sum((q.weights * g_t * outside)[:, None] * ut_here**2, 0)
    if return_parts:
        return part1, part2
    return np.sqrt(part1 + part2)
