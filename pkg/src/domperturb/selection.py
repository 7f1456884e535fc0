"""Selecting an orthonormal basis of one subspace close to a given basis of another.

Given ``M``-orthonormal ``u_1..u_m`` spanning ``U`` and a subspace ``V`` of the
same dimension with ``d = ||P_U - P_V|| < 1``, the construction projects,
``z_k = P_V u_k / ||P_V u_k||``, and then applies Gram-Schmidt to the ``z_k``.
The resulting ``v_k`` satisfy ``||u_k - v_k|| <= 5^k d``; for ``m = 1`` the
sharper ``sqrt(2) d`` holds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from domperturb.spectral import EigenSystem, subspace_distance

ORTHO_TOL = 1e-10
BOUND_SLACK = 1e-12


class SelectionError(RuntimeError):
    """Inputs inconsistent with the construction or a violated bound."""


def _mdot(x, y, M):
    """``x^T M y`` for vectors or column blocks."""
    My = M[:, None] * y if y.ndim == 2 else M * y
    return x.T @ My


def _mnorm(x, M):
    return math.sqrt(max(float(x @ (M * x)), 0.0))


@dataclass(frozen=True)
class SubspacePair:
    """Two ``M``-orthonormal blocks of equal width; ``U`` is the given basis."""

    M: np.ndarray
    U: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        if self.U.shape != self.V.shape or self.U.ndim != 2:
            raise SelectionError("U and V must be blocks of equal shape")
        if self.U.shape[1] < 1:
            raise SelectionError("need m >= 1")
        for name, X in (("U", self.U), ("V", self.V)):
            err = np.abs(_mdot(X, X, self.M) - np.eye(X.shape[1])).max()
            if err > ORTHO_TOL:
                raise SelectionError(f"{name} is not M-orthonormal (error {err:.2e})")

    @property
    def ambient(self) -> int:
        return self.U.shape[0]

    @property
    def m(self) -> int:
        return self.U.shape[1]

    @property
    def distance(self) -> float:
        return subspace_distance(self.U, self.V, self.M)


@dataclass(frozen=True)
class Selection:
    v: np.ndarray
    distances: np.ndarray
    projector_distance: float
    gram_max: float
    branch: str  # "constructive" or "vacuous"


def lowdin(X: np.ndarray, M: np.ndarray) -> np.ndarray:
    """Symmetric orthonormalisation ``X (X^T M X)^{-1/2}``; the nearest ``M``-orthonormal block."""
    lam, Q = np.linalg.eigh(_mdot(X, X, M))
    return X @ (Q / np.sqrt(lam)) @ Q.T


def gram_schmidt(Z: np.ndarray, M: np.ndarray, passes: int = 2) -> np.ndarray:
    """Classical Gram-Schmidt in the ``M`` inner product with reorthogonalisation."""
    out = np.zeros_like(Z)
    for k in range(Z.shape[1]):
        v = Z[:, k].copy()
        for _ in range(passes):
            if k:
                v -= out[:, :k] @ _mdot(out[:, :k], v, M)
        nrm = _mnorm(v, M)
        if nrm == 0:
            raise SelectionError("linearly dependent vectors in Gram-Schmidt")
        out[:, k] = v / nrm
    return out


def select_basis(pair: SubspacePair) -> Selection:
    """Run the construction and certify ``||u_k - v_k|| <= 5^k ||P_U - P_V||``.

    When the projector distance is at least one any basis of ``V`` is
    admissible and ``V`` is returned unchanged.
    """
    M, U, V = pair.M, pair.U, pair.V
    d = pair.distance
    m = pair.m
    if d >= 1:
        v = V.copy()
        branch, gram_max = "vacuous", math.nan
    else:
        Z = V @ _mdot(V, U, M)  # P_V u_k
        norms = np.sqrt(np.maximum(np.einsum("ik,i,ik->k", Z, M, Z), 0))
        if np.any(norms == 0):
            raise SelectionError("P_V u_k vanished although ||P_U - P_V|| < 1")
        Z = Z / norms
        G = _mdot(Z, Z, M)
        off = np.abs(G - np.diag(np.diag(G)))
        gram_max = float(off.max()) if m > 1 else 0.0
        if d <= 1 / 6 and gram_max > 3 * d + BOUND_SLACK:
            raise SelectionError(f"cross Gram {gram_max:.3g} exceeds 3 d = {3 * d:.3g}")
        v = gram_schmidt(Z, M)
        branch = "constructive"
    diff = U - v
    dist = np.sqrt(np.maximum(np.einsum("ik,i,ik->k", diff, M, diff), 0))
    bound = 5.0 ** np.arange(1, m + 1) * d
    if np.any(dist > bound + BOUND_SLACK):
        k = int(np.argmax(dist - bound))
        raise SelectionError(f"||u_{k + 1} - v_{k + 1}|| = {dist[k]:.3g} > 5^{k + 1} d = {bound[k]:.3g}")
    if m == 1 and branch == "constructive" and dist[0] > math.sqrt(2) * d + BOUND_SLACK:
        raise SelectionError("single-vector bound sqrt(2) d violated")
    return Selection(v, dist, d, gram_max, branch)


@dataclass(frozen=True)
class Pairing:
    indices: tuple
    given: np.ndarray  # w^{-1} psi_k[Ht], M_g-orthonormal
    selected: np.ndarray  # v_k in the H-eigenspace
    tilde_vectors: np.ndarray  # psi_k[Ht]
    weighted_distances: np.ndarray
    l2_distances: np.ndarray
    projector_distance: float
    pushforward_distances: np.ndarray | None = None


def _isolated(values: np.ndarray, G: list, rtol: float) -> bool:
    lo, hi = min(G), max(G)
    inside = values[lo : hi + 1]
    ok = True
    if lo > 0:
        ok &= (inside.min() - values[lo - 1]) >= rtol * max(abs(inside.min()), 1.0)
    if hi + 1 < len(values):
        ok &= (values[hi + 1] - inside.max()) >= rtol * max(abs(inside.max()), 1.0)
    return bool(ok)


def pair_eigenfunctions(
    base: EigenSystem,
    tilde: EigenSystem,
    w: np.ndarray,
    cluster,
    l2_mass: np.ndarray | None = None,
    transport=None,
    rtol: float = 1e-4,
) -> Pairing:
    """Select ``H``-eigenfunctions close to the transported ``Ht``-eigenfunctions.

    The given basis is ``w^{-1} psi_k[Ht]`` (orthonormal in ``M_g``); the
    selected functions ``v_k`` come from the ``H``-eigenspace of ``cluster``.
    ``l2_mass`` is the unweighted lumped mass for reporting plain ``L^2``
    distances; ``transport(v, psi_t)`` (optional) returns the push-forward
    distances over the union of both domains.
    """
    G = sorted(int(i) for i in cluster)
    if len(G) != len(set(G)):
        raise SelectionError("repeated cluster index")
    for sysname, sys_ in (("base", base), ("tilde", tilde)):
        if max(G) >= sys_.k:
            raise SelectionError(f"cluster index beyond the {sysname} eigensystem")
        if not _isolated(sys_.values, G, rtol):
            raise SelectionError(f"cluster {G} is not isolated in the {sysname} spectrum")
    M = base.M
    psi_t = tilde.vectors[:, G]
    given = lowdin(psi_t / w[:, None], M)
    V = base.vectors[:, G]
    sel = select_basis(SubspacePair(M, given, V))
    l2 = sel.distances
    if l2_mass is not None:
        diff = given - sel.v
        l2 = np.sqrt(np.einsum("ik,i,ik->k", diff, l2_mass, diff))
    push = None if transport is None else np.asarray(transport(sel.v, psi_t))
    return Pairing(tuple(G), given, sel.v, psi_t, sel.distances, l2, sel.projector_distance, push)
