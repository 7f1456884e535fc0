"""P1 assembly with lumped masses and the exact gradient factorisation.

With ``B_e`` the constant gradient matrix of element ``e`` the stiffness
matrix is ``K = sum_e area_e g_e B_e^T a_e B_e`` and it factors as
``K = T^T W_T T`` where ``T u = (a_e^{1/2} B_e u)_e`` and
``W_T = diag(area_e g_e)``. The adjoint of ``T`` from ``L^2(g)`` nodal space
into the element space is ``T* = M^{-1} T^T W_T``, so ``H = M^{-1} K = T* T``
holds to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import norm as spnorm

from domperturb.mesh import DofMap, Mesh
from domperturb.pullback import CoefficientBundle, nodal_lumped, spd_sqrt

SIDES = ("base", "tilde", "cross")


def gradient_matrix(mesh: Mesh) -> sp.csr_matrix:
    """Sparse ``(2 n_el, n_nodes)`` map from nodal values to element gradients."""
    n = mesh.n_elements
    rows = (2 * np.arange(n)[:, None, None] + np.arange(2)[None, None, :]).repeat(3, 1)
    cols = np.broadcast_to(mesh.triangles[:, :, None], (n, 3, 2))
    return sp.csr_matrix(
        (mesh.grads.ravel(), (rows.ravel(), cols.ravel())), shape=(2 * n, mesh.n_nodes)
    )


def block_diag_2x2(blocks: np.ndarray) -> sp.csr_matrix:
    n = len(blocks)
    r = 2 * np.arange(n)[:, None, None] + np.arange(2)[None, :, None]
    c = 2 * np.arange(n)[:, None, None] + np.arange(2)[None, None, :]
    r, c = np.broadcast_arrays(r, c)
    return sp.csr_matrix((blocks.ravel(), (r.ravel(), c.ravel())), shape=(2 * n, 2 * n))


def stiffness(mesh: Mesh, a: np.ndarray, g: np.ndarray) -> sp.csr_matrix:
    """Element-by-element stiffness ``area g B^T a B`` on all nodes."""
    B = mesh.grads  # (n, 3, 2)
    ke = np.einsum("nid,nde,nje->nij", B, a, B) * (mesh.areas * g)[:, None, None]
    rows = np.repeat(mesh.triangles[:, :, None], 3, 2)
    cols = np.repeat(mesh.triangles[:, None, :], 3, 1)
    K = sp.csr_matrix((ke.ravel(), (rows.ravel(), cols.ravel())), shape=(mesh.n_nodes,) * 2)
    K.sum_duplicates()
    return K


@dataclass(frozen=True)
class OperatorBundle:
    """Discrete operators on the free DOFs for one side of a comparison.

    ``K`` stiffness, ``M`` lumped mass (diagonal, stored as a vector), ``T``
    the base gradient factor, ``WT`` the element weights repeated per
    gradient component, ``S``/``S_half`` block-diagonal element matrices and
    ``w`` the nodal weight ratio on free nodes.
    """

    side: str
    K: sp.csr_matrix
    M: np.ndarray
    T: sp.csr_matrix
    WT: np.ndarray
    S: sp.csr_matrix
    S_half: sp.csr_matrix
    w: np.ndarray
    mesh: Mesh
    dofmap: DofMap

    @property
    def n(self) -> int:
        return len(self.M)

    def H(self) -> np.ndarray:
        """Dense ``M^{-1} K``."""
        return self.K.toarray() / self.M[:, None]

    def T_adj(self) -> sp.csr_matrix:
        """``T* = M^{-1} T^T W_T``."""
        return sp.diags(1 / self.M) @ self.T.T @ sp.diags(self.WT)

    def factorization_residual(self) -> float:
        """``||K - T^T W_T S T|| / ||K||`` in the Frobenius norm."""
        KT = self.T.T @ sp.diags(self.WT) @ self.S @ self.T
        return float(spnorm(self.K - KT) / spnorm(self.K))

    def self_adjointness_residual(self) -> float:
        H = self.H()
        MH = self.M[:, None] * H
        return float(np.linalg.norm(MH - MH.T) / spnorm(self.K))


def assemble_bundle(
    mesh: Mesh, dofmap: DofMap, coeffs: CoefficientBundle, side: str = "base"
) -> OperatorBundle:
    """Assemble ``(K, M)`` for ``side``.

    ``base``: ``(K_{a,g}, M_g)``; ``tilde``: ``(K_{at,gt}, M_gt)``;
    ``cross``: ``(K_{at,gt}, M_g)``, the realisation of ``T* S T``.
    """
    if side not in SIDES:
        raise ValueError(f"side must be one of {SIDES}")
    if coeffs.n_elements != mesh.n_elements:
        raise ValueError("coefficient bundle does not match the mesh")
    free = dofmap.free
    if side == "base":
        K = stiffness(mesh, coeffs.a, coeffs.g)
        S = np.broadcast_to(np.eye(2), coeffs.S.shape)
        S_half = S
    else:
        K = stiffness(mesh, coeffs.a_t, coeffs.g_t)
        S, S_half = coeffs.S, coeffs.S_half
    mass_weight = coeffs.g_t if side == "tilde" else coeffs.g
    M = nodal_lumped(mesh, mass_weight)[free]
    G = gradient_matrix(mesh)[:, free]
    T = (block_diag_2x2(spd_sqrt(coeffs.a)) @ G).tocsr()
    WT = np.repeat(mesh.areas * coeffs.g, 2)
    return OperatorBundle(
        side,
        K[free][:, free].tocsr(),
        M,
        T,
        WT,
        block_diag_2x2(np.ascontiguousarray(S)),
        block_diag_2x2(np.ascontiguousarray(S_half)),
        coeffs.w_nodes[free],
        mesh,
        dofmap,
    )


def assemble_all(mesh: Mesh, dofmap: DofMap, coeffs: CoefficientBundle) -> dict:
    return {s: assemble_bundle(mesh, dofmap, coeffs, s) for s in SIDES}


def tilde_operator_identity_check(
    bundle_tilde: OperatorBundle, bundle_cross: OperatorBundle, w: np.ndarray
) -> float:
    """``||Ht - w^2 (T*ST)|| / ||Ht||`` with ``Ht = M_gt^{-1} K`` and ``T*ST = M_g^{-1} K``."""
    if np.ndim(bundle_tilde.M) != 1 or np.ndim(bundle_cross.M) != 1:
        raise ValueError("masses must be diagonal")
    Ht = sp.diags(1 / bundle_tilde.M) @ bundle_tilde.K
    TST = sp.diags(1 / bundle_cross.M) @ bundle_cross.K
    diff = Ht - sp.diags(np.asarray(w) ** 2) @ TST
    return float(spnorm(diff) / spnorm(Ht))
