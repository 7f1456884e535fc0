"""Triangular P1 meshes of reference domains with Dirichlet/Neumann edge tags."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay, cKDTree

from domperturb.geometry import BoundaryGraph, ReferenceDomain, radial_boundary_graph

MIN_ANGLE_DEG = 20.0
DIRICHLET, NEUMANN = "D", "N"


class MeshError(ValueError):
    """Degenerate elements or unresolvable boundary descriptions."""


def _gradients(tri_xy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Signed areas and constant gradients of the three barycentric functions."""
    x, y = tri_xy[..., 0], tri_xy[..., 1]
    det = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    gx = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], 1) / det[:, None]
    gy = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], 1) / det[:, None]
    return 0.5 * det, np.stack([gx, gy], -1)


def _angles(tri_xy: np.ndarray) -> np.ndarray:
    out = []
    for k in range(3):
        p = tri_xy[:, k]
        u = tri_xy[:, (k + 1) % 3] - p
        v = tri_xy[:, (k + 2) % 3] - p
        cos = np.sum(u * v, 1) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
        out.append(np.degrees(np.arccos(np.clip(cos, -1, 1))))
    return np.stack(out, 1)


@dataclass
class Mesh:
    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    edge_tags: np.ndarray
    domain: ReferenceDomain | None = None
    areas: np.ndarray = field(init=False)
    grads: np.ndarray = field(init=False)
    centroids: np.ndarray = field(init=False)

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float)
        self.triangles = np.asarray(self.triangles, dtype=np.int64)
        signed, grads = _gradients(self.nodes[self.triangles])
        flip = signed < 0
        if flip.any():
            self.triangles[flip] = self.triangles[flip][:, [0, 2, 1]]
            signed, grads = _gradients(self.nodes[self.triangles])
        if np.any(signed <= 1e-14):
            raise MeshError(f"degenerate element {int(np.argmin(signed))}")
        self.areas = signed
        self.grads = grads
        self.centroids = self.nodes[self.triangles].mean(1)
        self._tree = None

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.triangles)

    def min_angle(self) -> float:
        return float(_angles(self.nodes[self.triangles]).min())

    def dirichlet_nodes(self) -> np.ndarray:
        edges = self.boundary_edges[self.edge_tags == DIRICHLET]
        return np.unique(edges.ravel())

    def dofmap(self) -> "DofMap":
        return DofMap.from_mesh(self)

    def area(self) -> float:
        return float(self.areas.sum())

    def radial_boundary_graph(self) -> BoundaryGraph:
        """Polygonal boundary of a disk mesh as an offset from the circle."""
        if self.domain is None or self.domain.kind != "disk":
            raise MeshError("radial boundary graphs exist for disk meshes only")
        pts = self.nodes[np.unique(self.boundary_edges.ravel())]
        return radial_boundary_graph(self.domain.center, pts, self.domain.radius)

    # -- point location -------------------------------------------------

    def barycentric(self, elements: np.ndarray, points: np.ndarray) -> np.ndarray:
        tri = self.nodes[self.triangles[elements]]
        g = self.grads[elements]
        lam = np.einsum("nkd,nd->nk", g, points - tri[:, 0])
        lam[:, 0] = 1 - lam[:, 1] - lam[:, 2]
        return lam

    def locate(self, points: np.ndarray, tol: float = 1e-10):
        """Containing element, barycentric coordinates and inside flag per point.

        Candidates are the elements with the nearest centroids. Points not
        inside any candidate get the candidate with the largest smallest
        barycentric coordinate (extrapolation) and ``inside`` false.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if self._tree is None:
            self._tree = cKDTree(self.centroids)
        elem = np.zeros(len(points), dtype=np.int64)
        found = np.zeros(len(points), dtype=bool)
        pending = np.arange(len(points))
        for k in (8, 48):
            k = min(k, self.n_elements)
            if pending.size == 0:
                break
            _, cand = self._tree.query(points[pending], k=k)
            cand = cand.reshape(len(pending), k)
            tri = self.nodes[self.triangles[cand]]  # (n, k, 3, 2)
            lam = np.einsum("nkad,nkd->nka", self.grads[cand], points[pending, None, :] - tri[:, :, 0])
            lam[..., 0] = 1 - lam[..., 1] - lam[..., 2]
            worst = lam.min(2)
            best = np.argmax(worst, 1)
            elem[pending] = cand[np.arange(len(pending)), best]
            ok = worst[np.arange(len(pending)), best] >= -tol
            found[pending[ok]] = True
            pending = pending[~ok]
        return elem, self.barycentric(elem, points), found

    def interpolate(self, values: np.ndarray, points: np.ndarray):
        """P1 interpolant at ``points``; returns (values, inside)."""
        elem, lam, inside = self.locate(points)
        vals = np.einsum("nk,nk...->n...", lam, values[self.triangles[elem]])
        return vals, inside

    # -- text export ------------------------------------------------------

    def to_text(self) -> str:
        buf = io.StringIO()
        buf.write(f"{self.n_nodes} {self.n_elements} {len(self.boundary_edges)}\n")
        for x, y in self.nodes:
            buf.write(f"{x:.17g} {y:.17g}\n")
        for i, j, k in self.triangles:
            buf.write(f"{i} {j} {k}\n")
        for (i, j), tag in zip(self.boundary_edges, self.edge_tags):
            buf.write(f"{i} {j} {tag}\n")
        return buf.getvalue()

    def write(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def from_text(cls, text: str) -> "Mesh":
        lines = text.strip().splitlines()
        nn, nt, nb = (int(v) for v in lines[0].split())
        nodes = np.array([[float(v) for v in ln.split()] for ln in lines[1 : 1 + nn]])
        tris = np.array([[int(v) for v in ln.split()] for ln in lines[1 + nn : 1 + nn + nt]])
        rest = [ln.split() for ln in lines[1 + nn + nt : 1 + nn + nt + nb]]
        edges = np.array([[int(r[0]), int(r[1])] for r in rest], dtype=np.int64).reshape(-1, 2)
        tags = np.array([r[2] for r in rest], dtype="<U1")
        return cls(nodes, tris, edges, tags)

    @classmethod
    def read(cls, path) -> "Mesh":
        return cls.from_text(Path(path).read_text())


@dataclass(frozen=True)
class DofMap:
    """Free (unconstrained) nodes and the maps between full and free vectors."""

    n_nodes: int
    free: np.ndarray
    constrained: np.ndarray

    @classmethod
    def from_mesh(cls, mesh: Mesh) -> "DofMap":
        con = mesh.dirichlet_nodes()
        free = np.setdiff1d(np.arange(mesh.n_nodes), con)
        return cls(mesh.n_nodes, free, con)

    @property
    def n_free(self) -> int:
        return len(self.free)

    def restrict(self, u: np.ndarray) -> np.ndarray:
        return u[self.free]

    def extend(self, v: np.ndarray) -> np.ndarray:
        out = np.zeros((self.n_nodes,) + v.shape[1:], dtype=v.dtype)
        out[self.free] = v
        return out


# ---------------------------------------------------------------------------
# generation


def _boundary_edges(triangles: np.ndarray) -> np.ndarray:
    e = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    key = np.sort(e, 1)
    uniq, inv, cnt = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    once = cnt[inv.ravel()] == 1
    return e[once]


def _edge_side_param(domain: ReferenceDomain, mid: np.ndarray, tol: float):
    """Side name and boundary parameter of each boundary-edge midpoint."""
    if domain.kind == "disk":
        d = mid - np.asarray(domain.center)
        th = np.mod(np.arctan2(d[:, 1], d[:, 0]), 2 * math.pi)
        return np.full(len(mid), "circle", dtype="<U6"), th
    w0, w1 = domain.w
    side = np.full(len(mid), "top", dtype="<U6")
    param = mid[:, 0].copy()
    side[np.abs(mid[:, 1] - domain.a) < tol] = "bottom"
    left = np.abs(mid[:, 0] - w0) < tol
    right = np.abs(mid[:, 0] - w1) < tol
    side[left], side[right] = "left", "right"
    param[left | right] = mid[left | right, 1]
    return side, param


def tag_boundary(domain: ReferenceDomain, nodes: np.ndarray, edges: np.ndarray, h: float):
    mid = nodes[edges].mean(1)
    side, param = _edge_side_param(domain, mid, 1e-9 * max(1.0, h))
    tags = np.full(len(edges), NEUMANN, dtype="<U1")
    for piece in domain.dirichlet:
        hit = (side == piece.side) & piece.contains(param)
        if hit.sum() < 2:
            raise MeshError(f"Dirichlet piece {piece} covers fewer than two boundary edges")
        tags[hit] = DIRICHLET
    return tags


def _cylinder(domain: ReferenceDomain, h: float):
    w0, w1 = domain.w
    nx = max(1, math.ceil((w1 - w0) / h - 1e-9))
    ymax = domain.graph.bounds()[1]
    ny = max(1, math.ceil((ymax - domain.a) / h - 1e-9))
    xs = np.linspace(w0, w1, nx + 1)
    tops = domain.graph(xs)
    frac = np.linspace(0, 1, ny + 1)
    X = np.repeat(xs[:, None], ny + 1, 1)
    Y = domain.a + (tops - domain.a)[:, None] * frac[None, :]
    nodes = np.stack([X.ravel(), Y.ravel()], 1)
    idx = np.arange((nx + 1) * (ny + 1)).reshape(nx + 1, ny + 1)
    p00, p10 = idx[:-1, :-1].ravel(), idx[1:, :-1].ravel()
    p01, p11 = idx[:-1, 1:].ravel(), idx[1:, 1:].ravel()
    # split each (sheared) cell along the diagonal that gives the better minimum angle
    split_a = (np.stack([p00, p10, p11], 1), np.stack([p00, p11, p01], 1))
    split_b = (np.stack([p00, p10, p01], 1), np.stack([p10, p11, p01], 1))
    worst_a = np.minimum(*(_angles(nodes[t]).min(1) for t in split_a))
    worst_b = np.minimum(*(_angles(nodes[t]).min(1) for t in split_b))
    use_b = worst_b > worst_a + 1e-9
    first = np.where(use_b[:, None], split_b[0], split_a[0])
    second = np.where(use_b[:, None], split_b[1], split_a[1])
    tris = np.concatenate([first, second])
    return nodes, tris


def _disk(domain: ReferenceDomain, h: float):
    nr = max(1, math.ceil(domain.radius / h - 1e-9))
    pts = [np.zeros((1, 2))]
    for k in range(1, nr + 1):
        n = 6 * k
        th = 2 * math.pi * (np.arange(n) + 0.5 * (k % 2)) / n
        r = domain.radius * k / nr
        pts.append(np.stack([r * np.cos(th), r * np.sin(th)], 1))
    nodes = np.concatenate(pts) + np.asarray(domain.center)
    tris = Delaunay(nodes).simplices
    return nodes, tris.astype(np.int64)


def generate_mesh(domain: ReferenceDomain, h: float) -> Mesh:
    """Structured mapped grid for graph cylinders, concentric rings for disks."""
    if h <= 0:
        raise MeshError("mesh size must be positive")
    if domain.kind == "graph_cylinder":
        nodes, tris = _cylinder(domain, h)
    else:
        nodes, tris = _disk(domain, h)
    edges = _boundary_edges(tris)
    tags = tag_boundary(domain, nodes, edges, h)
    mesh = Mesh(nodes, tris, edges, tags, domain)
    if mesh.min_angle() < MIN_ANGLE_DEG:
        raise MeshError(f"minimum angle {mesh.min_angle():.2f} deg below {MIN_ANGLE_DEG}")
    return mesh
