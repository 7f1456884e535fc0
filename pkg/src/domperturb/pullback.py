"""Coefficient fields and their transport to the reference domain.

For a map ``phi`` with Jacobian ``J`` the pulled-back coefficient is
``a = J^{-1} A(phi) J^{-T}`` with weight ``g = |det J|``. Given a second map
``phi_t`` with ``(a_t, g_t)``, the comparison data are the weight ratio
``w = (g / g_t)^{1/2}`` and ``S = w^{-2} a^{-1/2} a_t a^{-1/2}``.

All per-element quantities are piecewise constant on the mesh, so the
discrete operators built from them satisfy the factorisations exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from domperturb.geometry import DeformationMap
from domperturb.quadrature import cut_quadrature

Evaluator = Callable[[np.ndarray], np.ndarray]


class CoefficientError(ValueError):
    """Singular Jacobians, non-SPD matrices or failed ellipticity."""


@dataclass(frozen=True)
class CoefficientField:
    """A symmetric matrix field ``x -> A(x)`` on the plane.

    ``evaluator`` maps points of shape ``(..., 2)`` to matrices ``(..., 2, 2)``.
    """

    evaluator: Evaluator
    theta: float
    lipschitz: bool = True
    name: str = "custom"

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.evaluator(x)

    @property
    def is_constant(self) -> bool:
        return self.name in ("identity", "constant_anisotropic")


def identity_field() -> CoefficientField:
    return CoefficientField(
        lambda x: np.broadcast_to(np.eye(2), x.shape[:-1] + (2, 2)).copy(), 1.0, True, "identity"
    )


def constant_anisotropic(l1: float, l2: float, angle: float = 0.0) -> CoefficientField:
    """``R(angle) diag(l1, l2) R(angle)^T``."""
    if min(l1, l2) <= 0:
        raise CoefficientError("eigenvalues must be positive")
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s], [s, c]])
    mat = rot @ np.diag([l1, l2]) @ rot.T
    mat = 0.5 * (mat + mat.T)
    theta = max(l1, l2, 1 / l1, 1 / l2)
    return CoefficientField(
        lambda x: np.broadcast_to(mat, x.shape[:-1] + (2, 2)).copy(),
        theta,
        True,
        "constant_anisotropic",
    )


def smooth_varying(amplitude: float) -> CoefficientField:
    """``I + amplitude * sin(x1) * [[0, 1], [1, 0]]``; eigenvalues ``1 +- amplitude |sin x1|``."""
    if not 0 <= amplitude < 1:
        raise CoefficientError("amplitude must lie in [0, 1)")

    def ev(x):
        out = np.zeros(x.shape[:-1] + (2, 2))
        off = amplitude * np.sin(x[..., 0])
        out[..., 0, 0] = out[..., 1, 1] = 1.0
        out[..., 0, 1] = out[..., 1, 0] = off
        return out

    theta = max(1 + amplitude, 1 / (1 - amplitude)) if amplitude else 1.0
    return CoefficientField(ev, theta, True, "smooth_varying")


def lipschitz_checkerboard(
    contrast: float = 0.5, period: float = 0.5, smoothing: float = 0.2
) -> CoefficientField:
    """Scalar field ``1 + contrast * tanh(sin(kx) sin(ky) / smoothing)`` times the identity.

    A checkerboard of two conductivities with the interfaces smeared to a
    Lipschitz transition.
    """
    if not 0 <= contrast < 1:
        raise CoefficientError("contrast must lie in [0, 1)")
    k = 2 * math.pi / period

    def ev(x):
        s = 1 + contrast * np.tanh(np.sin(k * x[..., 0]) * np.sin(k * x[..., 1]) / smoothing)
        return s[..., None, None] * np.eye(2)

    theta = max(1 + contrast, 1 / (1 - contrast)) if contrast else 1.0
    return CoefficientField(ev, theta, True, "lipschitz_checkerboard")


FIELD_FAMILIES = {
    "identity": identity_field,
    "constant_anisotropic": constant_anisotropic,
    "smooth_varying": smooth_varying,
    "lipschitz_checkerboard": lipschitz_checkerboard,
}


@dataclass(frozen=True)
class EllipticityCertificate:
    passed: bool
    theta: float
    theta_estimate: float
    worst_x: np.ndarray
    worst_xi: np.ndarray
    worst_quotient: float


def ellipticity_check(
    A: CoefficientField,
    samples: int = 2000,
    theta: float | None = None,
    box=((-1.0, 2.0), (-1.0, 2.0)),
    seed: int = 0,
) -> EllipticityCertificate:
    """Sample Rayleigh quotients of ``A`` and compare them with ``[1/theta, theta]``.

    Test vectors are random unit vectors plus the eigenvectors of each sampled
    matrix, so extreme quotients are always probed. ``theta_estimate`` is the
    smallest constant consistent with the sample.
    """
    theta = A.theta if theta is None else float(theta)
    rng = np.random.default_rng(seed)
    lo = np.array([box[0][0], box[1][0]])
    hi = np.array([box[0][1], box[1][1]])
    x = lo + (hi - lo) * rng.random((samples, 2))
    mats = A(x)
    if not np.allclose(mats, np.swapaxes(mats, -1, -2), atol=1e-14):
        raise CoefficientError("coefficient field is not symmetric")
    angles = rng.uniform(0, math.pi, samples)
    rand_xi = np.stack([np.cos(angles), np.sin(angles)], -1)
    _, vecs = np.linalg.eigh(mats)
    xis = np.concatenate([rand_xi[:, None, :], np.swapaxes(vecs, -1, -2)], axis=1)
    quot = np.einsum("nqi,nij,nqj->nq", xis, mats, xis)
    qmin, qmax = quot.min(), quot.max()
    estimate = float(max(qmax, 1 / qmin)) if qmin > 0 else math.inf
    # worst: the quotient farthest outside (or closest to leaving) [1/theta, theta]
    excess = np.maximum(quot / theta, 1 / (quot * theta)) if qmin > 0 else -quot
    n, q = np.unravel_index(np.argmax(excess), excess.shape)
    passed = bool(qmin >= 1 / theta * (1 - 1e-14) and qmax <= theta * (1 + 1e-14))
    return EllipticityCertificate(passed, theta, estimate, x[n], xis[n, q], float(quot[n, q]))


# ---------------------------------------------------------------------------
# 2x2 symmetric matrix helpers


def sym(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def spd_sqrt(m: np.ndarray) -> np.ndarray:
    """Closed-form square root of SPD 2x2 matrices: ``(M + sqrt(det) I) / sqrt(tr + 2 sqrt(det))``."""
    det = m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    tr = m[..., 0, 0] + m[..., 1, 1]
    if np.any(det <= 0) or np.any(tr <= 0):
        raise CoefficientError("matrix is not symmetric positive definite")
    s = np.sqrt(det)
    t = np.sqrt(tr + 2 * s)
    root = (m + s[..., None, None] * np.eye(2)) / t[..., None, None]
    return sym(root)


def inv2(m: np.ndarray) -> np.ndarray:
    det = m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    out = np.empty_like(m)
    out[..., 0, 0] = m[..., 1, 1]
    out[..., 1, 1] = m[..., 0, 0]
    out[..., 0, 1] = -m[..., 0, 1]
    out[..., 1, 0] = -m[..., 1, 0]
    return out / det[..., None, None]


def spd_invsqrt(m: np.ndarray) -> np.ndarray:
    return sym(inv2(spd_sqrt(m)))


def check_spd(m: np.ndarray, what: str) -> None:
    lam = np.linalg.eigvalsh(sym(m))
    bad = np.flatnonzero(lam[:, 0] <= 0)
    if bad.size:
        raise CoefficientError(f"{what} is not positive definite on element {bad[0]}")


# ---------------------------------------------------------------------------
# transport


def pullback_coefficients(
    A: CoefficientField,
    phi: DeformationMap,
    mesh,
    quadrature: str = "laminate",
    depth: int = 2,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-element ``(a_e, g_e)`` for the map ``phi``.

    ``quadrature="centroid"`` evaluates at element centroids.

    ``quadrature="average"`` uses element means over a rule that is cut along
    the map's seam, ``g_e = mean(g)`` and ``a_e = mean(a g) / g_e``. This keeps
    the strip where the map acts visible even when it is thinner than the
    mesh.

    ``quadrature="laminate"`` (default) keeps ``g_e = mean(g)`` but
    homogenises ``a g`` as a layered medium with layers parallel to the seam:
    harmonic mean across the layers, arithmetic along them. For a strip much
    thinner than the element this is the correct effective tensor when the
    flux crosses the strip, which plain averaging overestimates.
    """
    if quadrature == "centroid":
        x = mesh.centroids
        jac = phi.jacobian(x)
        det = np.linalg.det(jac)
        _check_det(det)
        jinv = inv2(jac)
        a = sym(jinv @ A(phi(x)) @ np.swapaxes(jinv, -1, -2))
        return a, np.abs(det)
    if quadrature not in ("average", "laminate"):
        raise ValueError(f"unknown quadrature {quadrature!r}")
    seams = [phi.seam] if phi.seam is not None else []
    rule = cut_quadrature(mesh.nodes, mesh.triangles, seams, depth=depth)
    jac = phi.jacobian(rule.points)
    det = np.linalg.det(jac)
    bad = np.abs(det) < 1e-12
    if bad.any():
        raise CoefficientError(
            f"singular Jacobian in element {int(rule.element[np.argmax(bad)])}"
        )
    g = np.abs(det)
    jinv = inv2(jac)
    a = jinv @ A(phi(rule.points)) @ np.swapaxes(jinv, -1, -2)
    n = len(mesh.triangles)
    area = rule.element_integral(np.ones(len(g)), n)
    g_e = rule.element_integral(g, n) / area
    C = a * g[:, None, None]
    if quadrature == "laminate" and phi.seam is not None:
        normal = _seam_normals(phi.seam, mesh.centroids)[rule.element]
        ag_e = _laminate_average(rule, C, normal, n) / area[:, None, None]
    else:
        ag_e = rule.element_integral(C, n) / area[:, None, None]
    return sym(ag_e / g_e[:, None, None]), g_e


def _seam_normals(seam, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Unit gradient of the seam level set by central differences."""
    grad = np.stack(
        [(seam(x + step * e) - seam(x - step * e)) / (2 * step) for e in np.eye(2)], -1
    )
    nrm = np.linalg.norm(grad, axis=-1, keepdims=True)
    return grad / np.where(nrm > 0, nrm, 1.0)


def _laminate_average(rule, C: np.ndarray, normal: np.ndarray, n: int) -> np.ndarray:
    """Element integrals of the layered-medium effective tensor of ``C``.

    Treating the variation inside an element as layers orthogonal to
    ``normal``, the effective tensor is
    ``<C - (Cn)(Cn)^T / c_nn> + <Cn / c_nn><Cn / c_nn>^T / <1 / c_nn>``
    with ``c_nn = n^T C n``: harmonic across the layers, arithmetic along them.
    """
    Cn = np.einsum("qij,qj->qi", C, normal)
    cnn = np.einsum("qi,qi->q", normal, Cn)
    area = rule.element_integral(np.ones(len(cnn)), n)
    tang = rule.element_integral(C - Cn[:, :, None] * Cn[:, None, :] / cnn[:, None, None], n)
    v = rule.element_integral(Cn / cnn[:, None], n) / area[:, None]
    harm = rule.element_integral(1 / cnn, n) / area
    return tang + area[:, None, None] * v[:, :, None] * v[:, None, :] / harm[:, None, None]


def _check_det(det):
    bad = np.flatnonzero(np.abs(det) < 1e-12)
    if bad.size:
        raise CoefficientError(f"singular Jacobian in element {bad[0]}")


def s_matrix(a: np.ndarray, a_t: np.ndarray, w_e: np.ndarray) -> np.ndarray:
    """``S_e = w_e^{-2} a_e^{-1/2} at_e a_e^{-1/2}`` (symmetrised)."""
    check_spd(a, "a")
    check_spd(a_t, "a_tilde")
    ais = spd_invsqrt(a)
    return sym(ais @ a_t @ ais / (w_e**2)[:, None, None])


def nodal_lumped(mesh, g_e: np.ndarray) -> np.ndarray:
    """Lumped mass ``sum_{e ni i} area_e g_e / 3`` on all nodes."""
    out = np.zeros(len(mesh.nodes))
    np.add.at(out, mesh.triangles.ravel(), np.repeat(mesh.areas * g_e / 3, 3))
    return out


@dataclass(frozen=True)
class CoefficientBundle:
    """Per-element transported data for a pair of maps on one mesh."""

    a: np.ndarray
    g: np.ndarray
    a_t: np.ndarray
    g_t: np.ndarray
    w_e: np.ndarray
    S: np.ndarray
    S_half: np.ndarray
    w_nodes: np.ndarray
    theta: float
    tau: float
    tau_t: float

    @property
    def n_elements(self) -> int:
        return len(self.g)

    def check_invariants(self) -> dict:
        """Numerical certificates; raises on violation."""
        weight = np.max(np.abs(self.w_e**2 * self.g_t - self.g) / self.g)
        lam = np.linalg.eigvalsh(self.a)
        cond = lam[:, 1] / lam[:, 0]
        cond_bound = self.theta**2 * self.tau**6
        lam_t_min = np.linalg.eigvalsh(self.a_t)[:, 0].min()
        check_spd(self.S, "S")
        if np.any(self.w_e <= 0) or np.any(self.w_nodes <= 0):
            raise CoefficientError("non-positive weight ratio")
        if weight > 1e-14:
            raise CoefficientError(f"weight identity violated by {weight:.3g}")
        if cond.max() > cond_bound * (1 + 1e-12):
            raise CoefficientError("condition number of a exceeds theta^2 tau^6")
        if lam_t_min < 1 / (self.theta * self.tau_t**2) * (1 - 1e-12):
            raise CoefficientError("smallest eigenvalue of a_tilde below 1/(theta tau^2)")
        return {
            "weight_identity": float(weight),
            "max_condition": float(cond.max()),
            "condition_bound": float(cond_bound),
            "min_eig_a_tilde": float(lam_t_min),
        }


def build_coefficient_bundle(
    A: CoefficientField,
    phi: DeformationMap,
    phi_t: DeformationMap,
    mesh,
    quadrature: str = "laminate",
    check: bool = True,
) -> CoefficientBundle:
    a, g = pullback_coefficients(A, phi, mesh, quadrature)
    a_t, g_t = pullback_coefficients(A, phi_t, mesh, quadrature)
    w_e = np.sqrt(g / g_t)
    S = s_matrix(a, a_t, w_e)
    w_nodes = np.sqrt(nodal_lumped(mesh, g) / nodal_lumped(mesh, g_t))
    bundle = CoefficientBundle(
        a, g, a_t, g_t, w_e, S, spd_sqrt(S), w_nodes, A.theta, phi.tau, phi_t.tau
    )
    if check:
        bundle.check_invariants()
    return bundle
