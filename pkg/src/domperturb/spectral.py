"""Eigensolves, Schatten norms and resolvent identities for discrete operators.

Operators act on free nodal vectors with the weighted inner product
``<u, v>_M = u^T M v`` (``M`` the lumped ``g``-mass). Operator norms and
singular values are taken in that weighted space, which amounts to
conjugating by ``M^{1/2}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh, splu

from domperturb.assembly import OperatorBundle
from domperturb.fitting import fit_loglog_slope

DENSE_LIMIT = 2000
CLUSTER_RTOL = 1e-6
SHIFT_MARGIN = 1e-6


class SpectralError(RuntimeError):
    """Shifts too close to the spectrum, failed solves, bad inputs."""


# ---------------------------------------------------------------------------
# eigensystems


@dataclass(frozen=True)
class EigenSystem:
    """Lowest eigenpairs of ``K v = lambda M v`` with ``M``-orthonormal columns."""

    values: np.ndarray
    vectors: np.ndarray
    M: np.ndarray
    residuals: np.ndarray

    @property
    def k(self) -> int:
        return len(self.values)

    def orthonormality_error(self) -> float:
        V = self.vectors
        return float(np.abs(V.T @ (self.M[:, None] * V) - np.eye(self.k)).max())

    def clusters(self, rtol: float = CLUSTER_RTOL) -> list[list[int]]:
        """Groups of indices whose consecutive eigenvalues differ by less than ``rtol``."""
        out = [[0]]
        scale = max(1.0, float(np.abs(self.values).max()))
        for i in range(1, self.k):
            prev = self.values[i - 1]
            gap = abs(self.values[i] - prev) / max(abs(prev), 1e-12 * scale)
            if gap < rtol:
                out[-1].append(i)
            else:
                out.append([i])
        return out

    def cluster_of(self, index: int, rtol: float = CLUSTER_RTOL) -> list[int]:
        for c in self.clusters(rtol):
            if index in c:
                return c
        raise IndexError(index)


def _fix_signs(V: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(V), axis=0)
    s = np.sign(V[idx, np.arange(V.shape[1])])
    s[s == 0] = 1
    return V * s


def solve_eigs(bundle: OperatorBundle, k: int, seed: int = 0, dense_limit: int = DENSE_LIMIT) -> EigenSystem:
    """Lowest ``k`` eigenpairs; dense below ``dense_limit`` DOFs, shift-invert Lanczos above."""
    n = bundle.n
    if not 1 <= k <= n:
        raise SpectralError(f"k={k} must lie in [1, {n}]")
    K, M = bundle.K, bundle.M
    mh = 1 / np.sqrt(M)
    if n <= dense_limit:
        Hs = K.toarray() * mh[:, None] * mh[None, :]
        lam, U = sla.eigh(0.5 * (Hs + Hs.T), subset_by_index=[0, k - 1])
        V = U * mh[:, None]
    else:
        rng = np.random.default_rng(seed)
        try:
            lam, V = eigsh(
                K, k=k, M=sp.diags(M), sigma=-1.0, which="LM", v0=rng.standard_normal(n), tol=1e-13
            )
        except Exception as exc:  # scipy raises several types here
            raise SpectralError(f"shift-invert eigensolve failed: {exc}") from exc
        order = np.argsort(lam)
        lam, V = lam[order], V[:, order]
        G = V.T @ (M[:, None] * V)
        V = V @ np.linalg.inv(np.linalg.cholesky(G)).T
    V = _fix_signs(V)
    MV = M[:, None] * V
    res = np.linalg.norm(K @ V - MV * lam, axis=0)
    scale = np.maximum(np.abs(lam), 1.0) * np.linalg.norm(MV, axis=0)
    return EigenSystem(lam, V, M, res / scale)


# ---------------------------------------------------------------------------
# Schatten norms of resolvent differences


def schatten(sv: np.ndarray, r: float) -> float:
    sv = np.abs(np.asarray(sv, dtype=float))
    top = float(sv.max(initial=0.0))
    if math.isinf(r) or top == 0.0:
        return top
    # scale by the largest value so tiny entries do not underflow in sv**r
    return top * float(np.sum((sv / top) ** r) ** (1 / r))


@dataclass(frozen=True)
class SchattenReport:
    r: float
    xi: complex
    value: float
    singular_values: np.ndarray = field(repr=False)

    def at(self, r: float) -> "SchattenReport":
        return SchattenReport(r, self.xi, schatten(self.singular_values, r), self.singular_values)


def _symmetric_forms(base: OperatorBundle, tilde: OperatorBundle, w: np.ndarray):
    """``M^{1/2} H M^{-1/2}`` and ``M^{1/2} (w^{-1} Ht w) M^{-1/2}`` as dense arrays."""
    M = base.M
    sm = np.sqrt(M)
    Hs = base.K.toarray() / sm[:, None] / sm[None, :]
    left = sm / (w * tilde.M)
    right = w / sm
    Es = tilde.K.toarray() * left[:, None] * right[None, :]
    return 0.5 * (Hs + Hs.T), 0.5 * (Es + Es.T)


def _check_shift(xi: complex, *spectra: np.ndarray):
    for lam in spectra:
        dist = np.min(np.abs(lam - xi))
        if dist < SHIFT_MARGIN * max(1.0, abs(xi)):
            raise SpectralError(f"shift {xi} within {dist:.3g} of the spectrum")


def resolvent_singular_values(
    base: OperatorBundle, tilde: OperatorBundle, w: np.ndarray, xi: complex = -1.0
) -> np.ndarray:
    """Singular values of ``(w^{-1} Ht w - xi)^{-1} - (H - xi)^{-1}`` in the ``M_g`` space."""
    Hs, Es = _symmetric_forms(base, tilde, w)
    lh, Vh = np.linalg.eigh(Hs)
    le, Ve = np.linalg.eigh(Es)
    _check_shift(xi, lh, le)
    D = (Ve / (le - xi)) @ Ve.T - (Vh / (lh - xi)) @ Vh.T
    if np.isreal(xi):
        D = np.real(D)
        return np.sort(np.abs(np.linalg.eigvalsh(0.5 * (D + D.T))))[::-1]
    return np.linalg.svd(D, compute_uv=False)


def resolvent_difference_norm(
    base: OperatorBundle, tilde: OperatorBundle, w: np.ndarray, xi: complex = -1.0, r: float = 2.0
) -> SchattenReport:
    """Schatten ``r``-norm of the weighted resolvent difference (``r`` may be ``inf``)."""
    sv = resolvent_singular_values(base, tilde, w, xi)
    return SchattenReport(r, xi, schatten(sv, r), sv)


# ---------------------------------------------------------------------------
# resolvent identity and commutation formula


@dataclass(frozen=True)
class Decomposition:
    A1: np.ndarray
    A2: np.ndarray
    A3: np.ndarray
    B: np.ndarray
    lhs: np.ndarray
    residual: float


def _inv(A: np.ndarray) -> np.ndarray:
    return sla.solve(A, np.eye(len(A), dtype=A.dtype))


def _shifted_solve(F: np.ndarray, weight: np.ndarray, xi: complex, rhs: np.ndarray) -> np.ndarray:
    """Solve ``(F - xi) X = rhs`` for ``F`` self-adjoint and non-negative in the ``weight`` inner product.

    For real ``xi < 0`` the weighted system is symmetric positive definite and
    a Cholesky solve is used; other shifts fall back to a general solve.
    """
    if np.isrealobj(F) and np.imag(xi) == 0 and np.real(xi) < 0:
        A = weight[:, None] * F
        A = 0.5 * (A + A.T)
        A[np.diag_indices_from(A)] -= float(np.real(xi)) * weight
        return sla.solve(A, weight[:, None] * rhs, assume_a="pos")
    return sla.solve(F - xi * np.eye(len(F)), rhs)


def identity_decomposition(
    base: OperatorBundle,
    tilde: OperatorBundle,
    cross: OperatorBundle,
    w: np.ndarray | None = None,
    xi: complex = -1.0,
) -> Decomposition:
    """Split ``(w^{-1} Ht w - xi)^{-1} - (H - xi)^{-1}`` into ``A1 + A2 + A3 + B``.

    ``H`` comes from ``base``, ``Ht`` from ``tilde``, ``T*ST`` from ``cross`` and
    the factors ``T``, ``T*``, ``S`` from the stored gradient factorisation.
    The residual is relative in the Frobenius norm (absolute when the left
    side vanishes).
    """
    w = base.w if w is None else np.asarray(w)
    n = base.n
    I = np.eye(n)
    H = base.H()
    Ht = tilde.K.toarray() / tilde.M[:, None]
    X = cross.K.toarray() / cross.M[:, None]  # T* S T
    W, Winv = np.diag(w), np.diag(1 / w)
    lhs = _inv(Winv @ Ht @ W - xi * I) - _inv(H - xi * I)
    Rw = _inv(W @ X @ W - xi * I)
    A1 = (I - W) @ Rw
    A2 = W @ Rw @ (I - W)
    A3 = -xi * _inv(X - xi * I) @ (W - Winv) @ Rw @ W
    T_sp, Tadj_sp = base.T.tocsr(), base.T_adj().tocsr()
    T, Tadj = T_sp.toarray(), Tadj_sp.toarray()
    S = cross.S.tocsc()
    Sh = cross.S_half.tocsr()
    F = (T_sp @ Tadj_sp).toarray()
    WT = np.asarray(base.WT, dtype=float)
    # applied right to left as solves rather than explicit element-space inverses;
    # S and S^{1/2} are block diagonal, commute with W_T and stay sparse
    Y = _shifted_solve(F, WT, xi, T)
    Y = splu(S).solve(Y) - Y
    ShFSh = np.asarray((Sh @ (Sh @ F).T).T)
    Y = Sh @ _shifted_solve(ShFSh, WT, xi, Sh @ Y)
    B = Tadj @ Y
    diff = lhs - (A1 + A2 + A3 + B)
    scale = np.linalg.norm(lhs)
    res = np.linalg.norm(diff) / scale if scale > 0 else np.linalg.norm(diff)
    return Decomposition(A1, A2, A3, B, lhs, float(res))


def deift_residual(T, WT: np.ndarray, M: np.ndarray, xi: complex = -1.0) -> float:
    """Operator norm of ``-xi (E*E - xi)^{-1} + E* (E E* - xi)^{-1} E - I``.

    ``E = T`` maps nodal vectors (inner product ``M``) to element vectors
    (inner product ``WT``); ``E* = M^{-1} T^T W_T``.
    """
    if xi == 0:
        raise SpectralError("shift must be nonzero")
    E_sp = sp.csr_matrix(T, dtype=float)
    Eadj_sp = (sp.diags(1 / np.asarray(M)) @ E_sp.T @ sp.diags(np.asarray(WT))).tocsr()
    E, Eadj = E_sp.toarray(), Eadj_sp.toarray()
    EE = (Eadj_sp @ E_sp).toarray()
    sm = np.sqrt(M)
    # E*E is self-adjoint in the M inner product, so its spectrum is that of a symmetric matrix
    _check_shift(xi, np.linalg.eigvalsh(EE * sm[:, None] / sm[None, :]))
    n, m = EE.shape[0], E.shape[0]
    EEadj = (E_sp @ Eadj_sp).toarray()
    lhs = -xi * _inv(EE - xi * np.eye(n)) + Eadj @ _shifted_solve(EEadj, np.asarray(WT, dtype=float), xi, E)
    dev = (lhs - np.eye(n)) * sm[:, None] / sm[None, :]
    return float(np.linalg.norm(dev, 2))


# ---------------------------------------------------------------------------
# projectors


@dataclass(frozen=True)
class Projector:
    """``M``-orthogonal projector onto the span of ``basis`` (``M``-orthonormal columns)."""

    indices: tuple
    basis: np.ndarray
    M: np.ndarray

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    def matrix(self) -> np.ndarray:
        return self.basis @ (self.basis.T * self.M[None, :])

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.basis @ (self.basis.T @ (self.M[:, None] * x if x.ndim == 2 else self.M * x))


def m_orthonormalize(Y: np.ndarray, M: np.ndarray, rank: int | None = None) -> np.ndarray:
    """``M``-orthonormal basis of the dominant ``rank``-dimensional range of ``Y``."""
    sm = np.sqrt(M)
    U, s, _ = np.linalg.svd(sm[:, None] * Y, full_matrices=False)
    if rank is None:
        rank = int(np.sum(s > s[0] * 1e-10)) if s.size else 0
    return U[:, :rank] / sm[:, None]


def spectral_projector(system: EigenSystem, indices) -> Projector:
    idx = tuple(int(i) for i in indices)
    return Projector(idx, system.vectors[:, list(idx)], system.M)


def riesz_apply(
    bundle: OperatorBundle, Y: np.ndarray, center: float, radius: float, m: int = 64
) -> np.ndarray:
    """Trapezoidal contour value of ``-(2 pi i)^{-1} \\oint (H - z)^{-1} Y dz`` on a circle.

    Each resolvent application solves ``(K - z M) x = M y`` by sparse LU.
    """
    K = bundle.K.tocsc().astype(complex)
    Md = sp.diags(bundle.M).tocsc()
    MY = bundle.M[:, None] * Y
    out = np.zeros(Y.shape, dtype=complex)
    for j in range(m):
        e = np.exp(2j * math.pi * (j + 0.5) / m)
        z = center + radius * e
        lu = splu((K - z * Md).tocsc())
        out -= (radius * e / m) * lu.solve(MY.astype(complex))
    return out.real


def riesz_projector(
    bundle: OperatorBundle,
    cluster,
    center: float,
    radius: float,
    m: int = 64,
    spectrum: np.ndarray | None = None,
    seed: int = 0,
    oversample: int = 8,
) -> Projector:
    """Riesz projector for the eigenvalues inside the circle ``|z - center| = radius``.

    The projector is applied to a random block and its range extracted; when
    ``spectrum`` is given the contour is checked to keep a margin of
    ``radius/4`` from every eigenvalue.
    """
    cluster = tuple(int(i) for i in cluster)
    if spectrum is not None:
        dist = np.abs(np.abs(np.asarray(spectrum) - center) - radius)
        if dist.min() < radius / 4:
            raise SpectralError("contour passes within radius/4 of an eigenvalue")
        inside = np.flatnonzero(np.abs(np.asarray(spectrum) - center) < radius)
        if set(inside.tolist()) != set(cluster):
            raise SpectralError(f"contour encloses {inside.tolist()}, expected {list(cluster)}")
    rng = np.random.default_rng(seed)
    Y = rng.standard_normal((bundle.n, len(cluster) + oversample))
    Z = riesz_apply(bundle, Y, center, radius, m)
    return Projector(cluster, m_orthonormalize(Z, bundle.M, len(cluster)), bundle.M)


def subspace_distance(U: np.ndarray, V: np.ndarray, M: np.ndarray) -> float:
    """``||P_U - P_V||`` in the ``M``-weighted operator norm for ``M``-orthonormal blocks.

    The difference vanishes off ``span[U, V]``, so it is compressed onto an
    orthonormal basis of that span.
    """
    sm = np.sqrt(M)[:, None]
    Ue, Ve = sm * U, sm * V
    Z, _ = np.linalg.qr(np.concatenate([Ue, Ve], 1))
    a, b = Z.T @ Ue, Z.T @ Ve
    C = a @ a.T - b @ b.T
    return float(np.abs(np.linalg.eigvalsh(0.5 * (C + C.T))).max(initial=0.0))


def projector_distance(P: Projector, Pt: Projector) -> float:
    if P.M.shape != Pt.M.shape or not np.allclose(P.M, Pt.M, rtol=1e-13, atol=0):
        raise SpectralError("projectors use different weights")
    return subspace_distance(P.basis, Pt.basis, P.M)


# ---------------------------------------------------------------------------
# series diagnostics


def _weyl_constant(lam: np.ndarray) -> float:
    """Least-squares ``c`` in ``lambda_n ~ c n`` over the upper half of the list."""
    n = np.arange(1, len(lam) + 1, dtype=float)
    sel = slice(len(lam) // 2, None)
    return float(np.dot(n[sel], lam[sel]) / np.dot(n[sel], n[sel]))


def deviation_series(lam, lam_t, r: float = 2.0, with_tail: bool = False):
    """``(sum_n |1/(lt_n + 1) - 1/(l_n + 1)|^r)^{1/r}`` over the common truncation.

    With ``with_tail`` also returns a Weyl-law estimate of the omitted tail,
    assuming the relative deviation of the last quarter persists and
    ``lambda_n ~ c n``. The estimate is indicative only.
    """
    lam = np.asarray(lam, dtype=float)
    lam_t = np.asarray(lam_t, dtype=float)
    if lam.shape != lam_t.shape:
        raise ValueError("eigenvalue lists must have equal length")
    terms = np.abs(1 / (lam_t + 1) - 1 / (lam + 1))
    value = schatten(terms, r)
    if not with_tail:
        return value
    k = len(lam)
    q = max(1, k // 4)
    rel = float(np.max(np.abs(lam_t[-q:] - lam[-q:]) / np.maximum(np.abs(lam[-q:]), 1e-300)))
    c = _weyl_constant(lam)
    if math.isinf(r):
        tail = rel / (c * (k + 1))
    elif r > 1:
        tail = (rel / c) ** r * k ** (1 - r) / (r - 1)
    else:
        tail = math.inf
    return value, tail


@dataclass(frozen=True)
class CStarPartial:
    partial: float
    increments: np.ndarray
    tail_estimate: float
    summable: bool
    weyl_constant: float


def cstar_partial(lam, alpha: float) -> CStarPartial:
    """Partial sum of ``lambda_n^{-alpha}`` over nonzero eigenvalues.

    The tail uses ``lambda_n ~ c n``; for ``alpha <= 1`` the series diverges and
    the result is flagged as not summable.
    """
    lam = np.asarray(lam, dtype=float)
    nz = lam[np.abs(lam) > 1e-10 * max(1.0, np.abs(lam).max())]
    inc = nz ** (-alpha)
    k = len(nz)
    c = _weyl_constant(nz) if k >= 2 else float(nz[0]) if k else math.nan
    summable = alpha > 1
    tail = c ** (-alpha) * k ** (1 - alpha) / (alpha - 1) if summable and k else math.inf
    return CStarPartial(float(inc.sum()), inc, float(tail), summable, c)


@dataclass(frozen=True)
class PropertyPFit:
    gamma1: float
    gamma2: float
    indices: np.ndarray
    sup_norms: np.ndarray
    grad_sup_norms: np.ndarray


def property_p_fit(system: EigenSystem, mesh, dofmap, n_range=(5, 50)) -> PropertyPFit:
    """Slopes of ``log max|psi_n|`` and ``log max|grad psi_n|`` against ``log lambda_n``.

    ``n_range`` is 1-based and inclusive; zero eigenvalues are skipped.
    """
    lo, hi = n_range
    if system.k < hi or hi - lo + 1 < 3:
        raise SpectralError("not enough eigenpairs for the fit")
    idx = np.arange(lo - 1, hi)
    idx = idx[np.abs(system.values[idx]) > 1e-10]
    full = dofmap.extend(system.vectors[:, idx])
    sup = np.abs(full).max(0)
    grads = np.einsum("ekd,ekn->end", mesh.grads, full[mesh.triangles])
    gsup = np.linalg.norm(grads, axis=2).max(0)
    lam = system.values[idx]
    return PropertyPFit(
        fit_loglog_slope(lam, sup).slope, fit_loglog_slope(lam, gsup).slope, idx + 1, sup, gsup
    )
