"""Reference domains, bi-Lipschitz deformation maps and vicinity measures.

Two reference geometries are supported, both two-dimensional:

* a *graph cylinder* ``{(x, y) : w0 < x < w1, a < y < g(x)}`` whose upper
  boundary is a Lipschitz graph, perturbed by moving that graph;
* a *disk* perturbed along its normals, ``r < r0 + g(theta)``.

The deformation maps fix everything below a lowered copy of the graph,
``g3 = min(g1, g2) - delta * |g1 - g2|`` with ``delta = rho / (2 (b - a))``,
and stretch the thin strip above it affinely in the normal coordinate so
that the old graph lands on the new one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, optimize

from domperturb.quadrature import QuadratureRule, cut_quadrature

SEAM_TOL = 1e-12
GRAPH_SAMPLES = 2**12


class GeometryError(ValueError):
    """Invalid domain or map parameters."""


# ---------------------------------------------------------------------------
# boundary graphs


@dataclass(frozen=True)
class BoundaryGraph:
    """A Lipschitz function on an interval with its derivative.

    ``interval`` is the parameter range used for certification sampling:
    the base interval ``W`` for cylinders, ``[0, 2 pi]`` for circles.
    """

    f: Callable[[np.ndarray], np.ndarray]
    df: Callable[[np.ndarray], np.ndarray]
    interval: tuple[float, float]
    name: str = "custom"
    params: dict = field(default_factory=dict, compare=False)

    def __call__(self, x):
        return self.f(np.asarray(x, dtype=float))

    def derivative(self, x):
        return self.df(np.asarray(x, dtype=float))

    @property
    def samples(self) -> tuple[np.ndarray, np.ndarray]:
        x = np.linspace(*self.interval, GRAPH_SAMPLES)
        return x, np.broadcast_to(self(x), x.shape)

    def lipschitz(self) -> float:
        """Largest difference quotient over the dense sample (an estimate)."""
        x, y = self.samples
        return float(np.max(np.abs(np.diff(y) / np.diff(x))))

    def bounds(self) -> tuple[float, float]:
        _, y = self.samples
        return float(y.min()), float(y.max())

    def check_band(self, lo: float, hi: float) -> None:
        ymin, ymax = self.bounds()
        if not (lo < ymin and ymax < hi):
            raise GeometryError(
                f"graph {self.name} takes values in [{ymin:.6g}, {ymax:.6g}], "
                f"outside the open band ({lo:.6g}, {hi:.6g})"
            )

    def same_as(self, other: "BoundaryGraph") -> bool:
        x = np.linspace(*self.interval, 257)
        return bool(np.allclose(self(x), other(x), rtol=0, atol=1e-14))


def constant_graph(value: float, interval=(0.0, 1.0)) -> BoundaryGraph:
    value = float(value)
    return BoundaryGraph(
        lambda x: np.full(np.shape(x), value),
        lambda x: np.zeros(np.shape(x)),
        tuple(interval),
        "constant",
        {"value": value},
    )


def sine_bump(base: float, eps: float, interval=(0.0, 1.0), k: int = 1) -> BoundaryGraph:
    """``base + eps * sin(k pi (x - w0) / (w1 - w0))``; vanishes at both ends."""
    w0, w1 = interval
    om = k * math.pi / (w1 - w0)
    return BoundaryGraph(
        lambda x: base + eps * np.sin(om * (x - w0)),
        lambda x: eps * om * np.cos(om * (x - w0)),
        (w0, w1),
        "sine_bump",
        {"base": base, "eps": eps, "k": k},
    )


def cosine_mode(base: float, eps: float, mode: int, interval=(0.0, 2 * math.pi)) -> BoundaryGraph:
    """``base + eps * cos(mode * x)``; with the default interval, a circle graph."""
    return BoundaryGraph(
        lambda x: base + eps * np.cos(mode * x),
        lambda x: -eps * mode * np.sin(mode * x),
        tuple(interval),
        "cosine_mode",
        {"base": base, "eps": eps, "mode": mode},
    )


def compact_bump(
    base: float, eps: float, center: float, width: float, interval=(0.0, 1.0)
) -> BoundaryGraph:
    """Smooth bump ``base + eps * exp(1 - 1 / (1 - s^2))`` supported on ``|s| < 1``."""

    def f(x):
        s = (x - center) / width
        out = np.zeros(np.shape(s))
        inside = np.abs(s) < 1
        out[inside] = np.exp(1 - 1 / (1 - s[inside] ** 2))
        return base + eps * out

    def df(x):
        s = np.asarray((x - center) / width, dtype=float)
        out = np.zeros(np.shape(s))
        inside = np.abs(s) < 1
        si = s[inside]
        out[inside] = np.exp(1 - 1 / (1 - si**2)) * (-2 * si / (1 - si**2) ** 2) / width
        return eps * out

    return BoundaryGraph(
        f, df, tuple(interval), "compact_bump",
        {"base": base, "eps": eps, "center": center, "width": width},
    )


GRAPH_FAMILIES = {
    "constant": constant_graph,
    "sine_bump": sine_bump,
    "cosine_mode": cosine_mode,
    "compact_bump": compact_bump,
}


# ---------------------------------------------------------------------------
# reference domains


@dataclass(frozen=True)
class DirichletPiece:
    """An open boundary piece where ``u = 0``.

    ``side`` is one of ``bottom, top, left, right`` (cylinders) or ``circle``
    (disks); ``lo``/``hi`` restrict the boundary parameter (x for bottom/top,
    y for left/right, angle in ``[0, 2 pi)`` for the circle).
    """

    side: str
    lo: float | None = None
    hi: float | None = None

    def contains(self, param: np.ndarray) -> np.ndarray:
        lo = -np.inf if self.lo is None else self.lo
        hi = np.inf if self.hi is None else self.hi
        return (param > lo) & (param < hi)


@dataclass(frozen=True)
class ReferenceDomain:
    kind: str  # "graph_cylinder" | "disk"
    dirichlet: tuple[DirichletPiece, ...] = ()
    graph: BoundaryGraph | None = None
    w: tuple[float, float] = (0.0, 1.0)
    a: float = 0.0
    b: float = 1.5
    rho: float = 0.5
    center: tuple[float, float] = (0.0, 0.0)
    radius: float = 1.0
    t: float = 0.5

    def __post_init__(self):
        if self.kind == "graph_cylinder":
            if self.graph is None:
                raise GeometryError("graph cylinder needs a boundary graph")
            if not 0 < self.rho < self.b - self.a:
                raise GeometryError("need 0 < rho < b - a")
            self.graph.check_band(self.a + self.rho, self.b)
        elif self.kind == "disk":
            if not 0 < self.t <= self.radius:
                raise GeometryError("tubular width must satisfy 0 < t <= radius")
        else:
            raise GeometryError(f"unknown domain kind {self.kind!r}")
        sides = {"graph_cylinder": {"bottom", "top", "left", "right"}, "disk": {"circle"}}
        for piece in self.dirichlet:
            if piece.side not in sides[self.kind]:
                raise GeometryError(f"side {piece.side!r} invalid for {self.kind}")

    def level_set(self, y: np.ndarray) -> np.ndarray:
        """Negative inside the domain; the graph part is exact, walls are ignored."""
        y = np.asarray(y, dtype=float)
        if self.kind == "graph_cylinder":
            return y[..., 1] - self.graph(y[..., 0])
        return np.hypot(y[..., 0] - self.center[0], y[..., 1] - self.center[1]) - self.radius

    def area(self) -> float:
        if self.kind == "disk":
            return math.pi * self.radius**2
        val, _ = integrate.quad(lambda x: self.graph(x) - self.a, *self.w, limit=200)
        return val

    @property
    def reference_graph(self) -> BoundaryGraph:
        """The graph a map on this domain starts from (``g == 0`` for a disk)."""
        if self.kind == "graph_cylinder":
            return self.graph
        return constant_graph(0.0, (0.0, 2 * math.pi))


def graph_cylinder(graph, w=(0.0, 1.0), a=0.0, b=1.5, rho=0.5, dirichlet=()) -> ReferenceDomain:
    return ReferenceDomain(
        "graph_cylinder", tuple(dirichlet), graph, tuple(w), float(a), float(b), float(rho)
    )


def unit_square(dirichlet=(), b=1.5, rho=0.5) -> ReferenceDomain:
    return graph_cylinder(constant_graph(1.0), (0.0, 1.0), 0.0, b, rho, dirichlet)


def disk(radius=1.0, t=0.5, center=(0.0, 0.0), dirichlet=()) -> ReferenceDomain:
    return ReferenceDomain(
        "disk", tuple(dirichlet), center=tuple(center), radius=float(radius), t=float(t)
    )


# ---------------------------------------------------------------------------
# deformation maps


class DeformationMap:
    """A bi-Lipschitz map of the plane restricted to a reference domain.

    Subclasses provide ``__call__``, ``jacobian`` and ``inverse`` on arrays of
    points with trailing axis 2, and ``seam`` (a level set whose zero curve
    carries the Jacobian jump) when the map is only piecewise smooth.
    """

    kind = "abstract"
    tau: float = 1.0
    seam: Callable[[np.ndarray], np.ndarray] | None = None

    def __call__(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def inverse(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def det(self, x: np.ndarray) -> np.ndarray:
        return np.linalg.det(self.jacobian(x))

    def certificate(self, x: np.ndarray) -> float:
        """Smallest ``tau >= 1`` with ``|J| <= tau`` and ``|det J| >= 1/tau`` on ``x``."""
        jac = self.jacobian(x)
        nrm = np.linalg.norm(jac, ord=2, axis=(-2, -1)).max()
        dmin = np.abs(np.linalg.det(jac)).min()
        if dmin <= 0:
            raise GeometryError("map has a singular Jacobian on the sample")
        return float(max(1.0, nrm, 1.0 / dmin))


class IdentityMap(DeformationMap):
    kind = "identity"

    def __call__(self, x):
        return np.array(x, dtype=float)

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.eye(2), x.shape[:-1] + (2, 2)).copy()

    def inverse(self, y):
        return np.array(y, dtype=float)


class AffineMap(DeformationMap):
    kind = "affine"

    def __init__(self, matrix, shift=(0.0, 0.0)):
        self.matrix = np.asarray(matrix, dtype=float)
        self.shift = np.asarray(shift, dtype=float)
        det = np.linalg.det(self.matrix)
        if abs(det) < 1e-12:
            raise GeometryError("affine map is singular")
        self._inv = np.linalg.inv(self.matrix)
        self.tau = float(max(1.0, np.linalg.norm(self.matrix, 2), 1 / abs(det)))

    def __call__(self, x):
        return np.asarray(x, dtype=float) @ self.matrix.T + self.shift

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.matrix, x.shape[:-1] + (2, 2)).copy()

    def inverse(self, y):
        return (np.asarray(y, dtype=float) - self.shift) @ self._inv.T


def _strip_parameters(g1: BoundaryGraph, g2: BoundaryGraph, a: float, b: float, rho: float):
    if not 0 < rho < b - a:
        raise GeometryError(f"need 0 < rho < b - a, got rho={rho}, b-a={b - a}")
    g1.check_band(a + rho, b)
    g2.check_band(a + rho, b)
    return rho / (2 * (b - a))


class _StripMap(DeformationMap):
    """Shared strip logic in coordinates (u, v): u tangential, v normal."""

    def _setup(self, g1: BoundaryGraph, g2: BoundaryGraph, a: float, b: float, rho: float):
        self.g1, self.g2 = g1, g2
        self.a, self.b, self.rho = a, b, rho
        self.delta = _strip_parameters(g1, g2, a, b, rho)

    def g3(self, u):
        v1, v2 = self.g1(u), self.g2(u)
        return np.minimum(v1, v2) - self.delta * np.abs(v1 - v2)

    def _slope(self, u):
        """Strip stretch factor: delta/(delta+1) where g2 <= g1, else its inverse."""
        d = self.delta
        return np.where(self.g2(u) <= self.g1(u), d / (d + 1), (d + 1) / d)

    def _forward_v(self, u, v):
        g3 = self.g3(u)
        strip = v > g3 + SEAM_TOL
        vn = np.where(strip, self.g2(u) + self._slope(u) * (v - self.g1(u)), v)
        return vn, strip

    def _inverse_v(self, u, vn):
        g3 = self.g3(u)
        strip = vn > g3 + SEAM_TOL
        v = np.where(strip, self.g1(u) + (vn - self.g2(u)) / self._slope(u), vn)
        return v


class GraphMap(_StripMap):
    """Map of the subgraph of ``g1`` onto the subgraph of ``g2`` fixing the subgraph of ``g3``."""

    kind = "graph"

    def __init__(self, g1: BoundaryGraph, g2: BoundaryGraph, a: float, b: float, rho: float):
        self._setup(g1, g2, float(a), float(b), float(rho))
        self.seam = lambda x: np.asarray(x)[..., 1] - self.g3(np.asarray(x)[..., 0])
        u = g1.samples[0]
        c = self._slope(u)
        shear = self.g2.derivative(u) - c * self.g1.derivative(u)
        jac = np.zeros(u.shape + (2, 2))
        jac[:, 0, 0] = 1.0
        jac[:, 1, 0] = shear
        jac[:, 1, 1] = c
        jac = np.concatenate([jac, np.eye(2)[None]])
        self.tau = _tau_from(jac)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        vn, _ = self._forward_v(x[..., 0], x[..., 1])
        return np.stack([x[..., 0], vn], -1)

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        u, v = x[..., 0], x[..., 1]
        _, strip = self._forward_v(u, v)
        c = self._slope(u)
        jac = np.zeros(x.shape[:-1] + (2, 2))
        jac[..., 0, 0] = 1.0
        jac[..., 1, 1] = np.where(strip, c, 1.0)
        jac[..., 1, 0] = np.where(strip, self.g2.derivative(u) - c * self.g1.derivative(u), 0.0)
        return jac

    def inverse(self, y):
        y = np.asarray(y, dtype=float)
        return np.stack([y[..., 0], self._inverse_v(y[..., 0], y[..., 1])], -1)


class NormalMap(_StripMap):
    """Graph map in the curvilinear coordinates ``(theta, s)``, ``x = c + (r0 + s) e_r``."""

    kind = "normal"

    def __init__(
        self,
        center,
        r0: float,
        t: float,
        g: BoundaryGraph,
        rho: float,
        reference: BoundaryGraph | None = None,
    ):
        self.center = np.asarray(center, dtype=float)
        self.r0 = float(r0)
        self.t = float(t)
        self.perturbation = g
        g1 = constant_graph(0.0, g.interval) if reference is None else reference
        self._setup(g1, _sum_graph(g1, g), -self.t, self.t, float(rho))
        self.seam = lambda x: self._polar(x)[1] - self.g3(self._polar(x)[0])
        th = g.samples[0]
        radii = []
        top = np.maximum(self.g1(th), self.g2(th))
        for frac in np.linspace(0, 1, 9):
            radii.append(self.r0 + self.g3(th) * (1 - frac) + top * frac)
        pts = np.concatenate(
            [self.center + np.stack([r * np.cos(th), r * np.sin(th)], -1) for r in radii]
        )
        jac = self.jacobian(pts)
        self.tau = _tau_from(np.concatenate([jac, np.eye(2)[None]]))

    def _polar(self, x):
        x = np.asarray(x, dtype=float)
        d = x - self.center
        r = np.hypot(d[..., 0], d[..., 1])
        th = np.mod(np.arctan2(d[..., 1], d[..., 0]), 2 * math.pi)
        return th, r - self.r0, r

    def __call__(self, x):
        th, s, _ = self._polar(x)
        sn, _ = self._forward_v(th, s)
        rn = self.r0 + sn
        return self.center + np.stack([rn * np.cos(th), rn * np.sin(th)], -1)

    def jacobian(self, x):
        th, s, r = self._polar(x)
        sn, strip = self._forward_v(th, s)
        c = np.where(strip, self._slope(th), 1.0)
        ds_dth = np.where(strip, self.g2.derivative(th) - c * self.g1.derivative(th), 0.0)
        rn = self.r0 + sn
        local = np.zeros(np.shape(th) + (2, 2))
        local[..., 0, 0] = c
        local[..., 0, 1] = ds_dth / r
        local[..., 1, 1] = rn / r
        cos, sin = np.cos(th), np.sin(th)
        rot = np.zeros_like(local)
        rot[..., 0, 0], rot[..., 0, 1] = cos, -sin
        rot[..., 1, 0], rot[..., 1, 1] = sin, cos
        return rot @ local @ np.swapaxes(rot, -1, -2)

    def inverse(self, y):
        th, sn, _ = self._polar(y)
        s = self._inverse_v(th, sn)
        r = self.r0 + s
        return self.center + np.stack([r * np.cos(th), r * np.sin(th)], -1)


def _tau_from(jac: np.ndarray) -> float:
    nrm = np.linalg.norm(jac, ord=2, axis=(-2, -1)).max()
    dmin = np.abs(np.linalg.det(jac)).min()
    return float(max(1.0, nrm, 1.0 / dmin))


def build_graph_map(g1: BoundaryGraph, g2: BoundaryGraph, a: float, b: float, rho: float) -> DeformationMap:
    """Map the subgraph of ``g1`` onto that of ``g2``; identity when the graphs agree."""
    _strip_parameters(g1, g2, a, b, rho)
    if g1.same_as(g2):
        return IdentityMap()
    return GraphMap(g1, g2, a, b, rho)


def build_normal_map(
    domain: ReferenceDomain,
    g: BoundaryGraph,
    rho: float,
    reference: BoundaryGraph | None = None,
) -> DeformationMap:
    """Normal perturbation ``r < r0 + g(theta)`` of a disk; identity when ``g == 0``.

    ``reference`` optionally describes the discrete reference boundary as a
    radial offset ``r = r0 + reference(theta)`` (for a polygonal mesh, see
    :func:`radial_boundary_graph`); the map then takes that boundary to
    ``r0 + reference + g``, so the perturbation acts on the domain the mesh
    actually covers.
    """
    if domain.kind != "disk":
        raise GeometryError("normal maps need a disk reference domain")
    if not 0 < rho < 2 * domain.t:
        raise GeometryError("need 0 < rho < 2 t")
    g.check_band(-domain.t + rho, domain.t)
    if g.same_as(constant_graph(0.0, g.interval)):
        return IdentityMap()
    return NormalMap(domain.center, domain.radius, domain.t, g, rho, reference)


def _sum_graph(g1: BoundaryGraph, g2: BoundaryGraph) -> BoundaryGraph:
    return BoundaryGraph(
        lambda x: g1(x) + g2(x),
        lambda x: g1.derivative(x) + g2.derivative(x),
        g1.interval,
        f"{g1.name}+{g2.name}",
    )


def radial_boundary_graph(center, boundary_points: np.ndarray, r0: float) -> BoundaryGraph:
    """Offset ``R(theta) - r0`` of the star-shaped polygon through ``boundary_points``.

    ``R(theta)`` is where the ray from ``center`` at angle ``theta`` meets the
    polygon obtained by joining the points in angular order.
    """
    c = np.asarray(center, dtype=float)
    rel = np.asarray(boundary_points, dtype=float) - c
    th = np.mod(np.arctan2(rel[:, 1], rel[:, 0]), 2 * math.pi)
    order = np.argsort(th)
    th, P = th[order], rel[order]
    th_ext = np.concatenate([th, [th[0] + 2 * math.pi]])
    P_ext = np.concatenate([P, P[:1]])

    def segment(x):
        x = np.asarray(x, dtype=float)
        ang = np.mod(x, 2 * math.pi)
        ang = np.where(ang < th_ext[0], ang + 2 * math.pi, ang)
        i = np.clip(np.searchsorted(th_ext, ang, side="right") - 1, 0, len(th) - 1)
        a, e = P_ext[i], P_ext[i + 1] - P_ext[i]
        cae = a[..., 0] * e[..., 1] - a[..., 1] * e[..., 0]
        return ang, e, cae

    def f(x):
        ang, e, cae = segment(x)
        cue = np.cos(ang) * e[..., 1] - np.sin(ang) * e[..., 0]
        return cae / cue - r0

    def df(x):
        ang, e, cae = segment(x)
        cue = np.cos(ang) * e[..., 1] - np.sin(ang) * e[..., 0]
        dcue = -np.sin(ang) * e[..., 1] - np.cos(ang) * e[..., 0]
        return -cae * dcue / cue**2

    return BoundaryGraph(f, df, (0.0, 2 * math.pi), "polygon", {"vertices": len(th), "angles": th})


# ---------------------------------------------------------------------------
# vicinity measures


def _target_graph(domain: ReferenceDomain, phi: DeformationMap) -> BoundaryGraph:
    if isinstance(phi, IdentityMap):
        return domain.reference_graph
    if domain.kind == "graph_cylinder" and isinstance(phi, GraphMap):
        if not phi.g1.same_as(domain.graph):
            raise GeometryError("graph map does not start from the domain's graph")
        return phi.g2
    if domain.kind == "disk" and isinstance(phi, NormalMap):
        return phi.perturbation
    raise GeometryError(f"map kind {phi.kind!r} incompatible with domain kind {domain.kind!r}")


def _quad(fun, lo, hi, breaks=()) -> float:
    """Adaptive quadrature, split at the given kinks of the integrand."""
    pts = np.unique(np.concatenate([[lo, hi], np.asarray(breaks, dtype=float)]))
    pts = pts[(pts >= lo) & (pts <= hi)]
    total = 0.0
    for x0, x1 in zip(pts[:-1], pts[1:]):
        if x1 - x0 > 1e-15:
            val, _ = integrate.quad(fun, x0, x1, limit=200, epsabs=1e-15, epsrel=1e-12)
            total += val
    return float(total)


def _sign_changes(fun, lo, hi, n: int = GRAPH_SAMPLES) -> np.ndarray:
    """Roots of ``fun`` located from sign changes on a uniform sample."""
    x = np.linspace(lo, hi, n)
    y = np.asarray(fun(x), dtype=float)
    idx = np.flatnonzero(np.sign(y[:-1]) * np.sign(y[1:]) < 0)
    return np.array([optimize.brentq(fun, x[i], x[i + 1], xtol=1e-15) for i in idx])


def _kinks(domain: ReferenceDomain, g: BoundaryGraph, gt: BoundaryGraph, *maps) -> np.ndarray:
    """Parameters where ``|g - gt|`` or a polygonal reference graph has a kink."""
    lo, hi = domain.w if domain.kind == "graph_cylinder" else (0.0, 2 * math.pi)
    out = [_sign_changes(lambda u: g(u) - gt(u), lo, hi)]
    for m in maps:
        if isinstance(m, _StripMap) and "angles" in m.g1.params:
            out.append(np.asarray(m.g1.params["angles"]))
    return np.concatenate(out)


def symmetric_difference(domain: ReferenceDomain, phi: DeformationMap, phi_t: DeformationMap) -> float:
    """Area of ``phi(Omega) △ phi_t(Omega)`` by 1-D quadrature over the graph parameter."""
    g, gt = _target_graph(domain, phi), _target_graph(domain, phi_t)
    breaks = _kinks(domain, g, gt)
    if domain.kind == "graph_cylinder":
        return _quad(lambda x: abs(g(x) - gt(x)), *domain.w, breaks)
    r0 = domain.radius
    # area element (r0 + s) ds dtheta between the two normal graphs
    return _quad(
        lambda th: abs((g(th) - gt(th)) * (r0 + 0.5 * (g(th) + gt(th)))), 0.0, 2 * math.pi, breaks
    )


def displaced_measure(domain: ReferenceDomain, phi: DeformationMap, phi_t: DeformationMap) -> float:
    """Area of ``{x : phi(x) != phi_t(x)}`` for maps built on the same reference graph.

    Where the target graphs differ the two maps disagree everywhere above the
    lower of their fixed levels ``g3`` (up to the reference graph).
    """
    g, gt = _target_graph(domain, phi), _target_graph(domain, phi_t)
    strips = [m for m in (phi, phi_t) if isinstance(m, _StripMap)]
    g0 = strips[0].g1 if strips else domain.reference_graph

    def level(m, u):
        return float(m.g3(u)) if isinstance(m, _StripMap) else float(g0(u))

    def span(u):
        if abs(g(u) - gt(u)) <= 1e-15:
            return None
        return min(level(phi, u), level(phi_t, u)), float(g0(u))

    breaks = _kinks(domain, g, gt, phi, phi_t)
    if domain.kind == "graph_cylinder":
        return _quad(lambda u: 0.0 if (s := span(u)) is None else s[1] - s[0], *domain.w, breaks)
    r0 = domain.radius

    def ring(th):
        s = span(th)
        if s is None:
            return 0.0
        lo, hi = s
        return (hi - lo) * (r0 + 0.5 * (hi + lo))

    return _quad(ring, 0.0, 2 * math.pi, breaks)


def _seams(*maps: DeformationMap):
    return [m.seam for m in maps if m.seam is not None]


def delta_p(
    phi: DeformationMap,
    phi_t: DeformationMap,
    A,
    p: float,
    mesh,
    quadrature: QuadratureRule | None = None,
) -> float:
    """``||grad phi_t - grad phi||_p + ||A o phi_t - A o phi||_p`` over the mesh.

    Pointwise matrix sizes are spectral norms. ``p`` may be ``inf``.
    """
    if p < 2:
        raise ValueError("delta_p is defined for p >= 2")
    q = quadrature or cut_quadrature(mesh.nodes, mesh.triangles, _seams(phi, phi_t))
    dj = np.linalg.norm(phi_t.jacobian(q.points) - phi.jacobian(q.points), 2, axis=(-2, -1))
    da = np.linalg.norm(A(phi_t(q.points)) - A(phi(q.points)), 2, axis=(-2, -1))
    if math.isinf(p):
        return float(dj.max() + da.max())
    return float(q.integral(dj**p) ** (1 / p) + q.integral(da**p) ** (1 / p))


@dataclass(frozen=True)
class VicinityReport:
    sym_diff: float
    delta_p: dict
    displaced_measure: float


def vicinity_report(
    domain: ReferenceDomain,
    phi: DeformationMap,
    phi_t: DeformationMap,
    A,
    mesh,
    ps: Sequence[float] = (2, 3, math.inf),
) -> VicinityReport:
    q = cut_quadrature(mesh.nodes, mesh.triangles, _seams(phi, phi_t))
    return VicinityReport(
        symmetric_difference(domain, phi, phi_t),
        {p: delta_p(phi, phi_t, A, p, mesh, q) for p in ps},
        displaced_measure(domain, phi, phi_t),
    )
