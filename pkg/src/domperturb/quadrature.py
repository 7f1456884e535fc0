"""Triangle quadrature that respects discontinuity curves given as level sets.

Deformation maps built from boundary graphs are only piecewise smooth: their
Jacobian jumps across a seam curve. Elements crossed by such a curve are
subdivided and clipped along the (linearised) curve so that each quadrature
piece lies on one side of it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

LevelSet = Callable[[np.ndarray], np.ndarray]

# Barycentric points and weights (weights sum to one) on the reference triangle.
_A4, _B4 = 0.445948490915965, 0.091576213509771
_WA4, _WB4 = 0.223381589678011, 0.109951743655322
_RULES = {
    1: (np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([1.0])),
    2: (
        np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]]),
        np.full(3, 1 / 3),
    ),
    4: (
        np.array(
            [
                [1 - 2 * _A4, _A4, _A4],
                [_A4, 1 - 2 * _A4, _A4],
                [_A4, _A4, 1 - 2 * _A4],
                [1 - 2 * _B4, _B4, _B4],
                [_B4, 1 - 2 * _B4, _B4],
                [_B4, _B4, 1 - 2 * _B4],
            ]
        ),
        np.array([_WA4] * 3 + [_WB4] * 3),
    ),
}


@dataclass(frozen=True)
class QuadratureRule:
    """Points, weights (physical area units) and owning element of each point."""

    points: np.ndarray
    weights: np.ndarray
    element: np.ndarray

    def element_integral(self, values: np.ndarray, n_elements: int) -> np.ndarray:
        """Sum ``values * weights`` per element; ``values`` may carry trailing axes."""
        weighted = values * self.weights.reshape((-1,) + (1,) * (values.ndim - 1))
        out = np.zeros((n_elements,) + values.shape[1:])
        np.add.at(out, self.element, weighted)
        return out

    def integral(self, values: np.ndarray) -> float:
        return float(np.sum(values * self.weights))


def triangle_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    return _RULES[order]


def _signed_area(tri: np.ndarray) -> np.ndarray:
    d1 = tri[..., 1, :] - tri[..., 0, :]
    d2 = tri[..., 2, :] - tri[..., 0, :]
    return 0.5 * (d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0])


def _apply_rule(tris: np.ndarray, order: int) -> tuple[np.ndarray, np.ndarray]:
    bary, w = _RULES[order]
    pts = np.einsum("qk,nkd->nqd", bary, tris)
    wts = np.abs(_signed_area(tris))[:, None] * w[None, :]
    return pts, wts


def _subdivide(tris: np.ndarray, depth: int) -> np.ndarray:
    """Split a batch of triangles into ``4**depth`` children each (grouped by child)."""
    for _ in range(depth):
        a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
        ab, bc, ca = (a + b) / 2, (b + c) / 2, (c + a) / 2
        tris = np.concatenate(
            [
                np.stack([a, ab, ca], 1),
                np.stack([ab, b, bc], 1),
                np.stack([ca, bc, c], 1),
                np.stack([ab, bc, ca], 1),
            ]
        )
    return tris


def _split_triangles(tris: np.ndarray, owner: np.ndarray, vals: np.ndarray):
    """Cut each triangle along the zero line of its linearly interpolated ``vals``.

    Uncut triangles pass through; a cut triangle becomes the corner triangle
    on the lone vertex's side plus two triangles filling the opposite quad.
    """
    pos = vals > 0
    npos = pos.sum(1)
    cut = (npos == 1) | (npos == 2)
    if not cut.any():
        return tris, owner
    t, f, p = tris[cut], vals[cut], pos[cut]
    # the lone vertex is the one whose side differs from the other two
    lone_is_pos = p.sum(1) == 1
    lone = np.where(lone_is_pos, np.argmax(p, 1), np.argmin(p, 1))
    order = (lone[:, None] + np.arange(3)[None, :]) % 3
    rows = np.arange(len(t))[:, None]
    t, f = t[rows, order], f[rows, order]
    v0, v1, v2 = t[:, 0], t[:, 1], t[:, 2]
    s01 = (f[:, 0] / (f[:, 0] - f[:, 1]))[:, None]
    s02 = (f[:, 0] / (f[:, 0] - f[:, 2]))[:, None]
    p01 = v0 + s01 * (v1 - v0)
    p02 = v0 + s02 * (v2 - v0)
    pieces = np.concatenate(
        [np.stack([v0, p01, p02], 1), np.stack([p01, v1, v2], 1), np.stack([p01, v2, p02], 1)]
    )
    return np.concatenate([tris[~cut], pieces]), np.concatenate([owner[~cut], np.tile(owner[cut], 3)])


def _probe_points(tris: np.ndarray) -> np.ndarray:
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    probes = [a, b, c, (a + b) / 2, (b + c) / 2, (c + a) / 2, (a + b + c) / 3]
    return np.stack(probes, 1)


def cut_quadrature(
    nodes: np.ndarray,
    triangles: np.ndarray,
    level_sets: Sequence[LevelSet] = (),
    depth: int = 2,
    order: int = 4,
) -> QuadratureRule:
    """Composite rule over a triangulation, clipped along each level-set zero curve.

    Elements where any level set changes sign at a probe point (vertices, edge
    midpoints, centroid) are refined ``depth`` times; the sub-triangles are then
    cut along the linear interpolant of each level set in turn and every piece
    is integrated separately.
    """
    tris = nodes[triangles]
    n_el = len(tris)
    cut = np.zeros(n_el, dtype=bool)
    if level_sets:
        probes = _probe_points(tris).reshape(-1, 2)
        for ls in level_sets:
            s = np.asarray(ls(probes)).reshape(n_el, -1) > 0
            cut |= s.any(1) & ~s.all(1)

    pts, wts = _apply_rule(tris[~cut], order)
    el = np.repeat(np.flatnonzero(~cut), pts.shape[1])
    all_pts, all_w, all_el = [pts.reshape(-1, 2)], [wts.ravel()], [el]

    cut_ids = np.flatnonzero(cut)
    if cut_ids.size:
        sub = _subdivide(tris[cut_ids], depth)
        owner = np.tile(cut_ids, 4**depth)
        for ls in level_sets:
            vals = np.asarray(ls(sub.reshape(-1, 2)), dtype=float).reshape(-1, 3)
            sub, owner = _split_triangles(sub, owner, vals)
        p, w = _apply_rule(sub, order)
        all_pts.append(p.reshape(-1, 2))
        all_w.append(w.ravel())
        all_el.append(np.repeat(owner, p.shape[1]))

    return QuadratureRule(
        np.concatenate(all_pts), np.concatenate(all_w), np.concatenate(all_el)
    )
