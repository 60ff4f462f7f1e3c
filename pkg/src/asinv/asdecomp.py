"""Adaptive spectral decomposition of a medium.

The basis consists of the first eigenfunctions of ``-div(mu_eps[u] grad .)``
with homogeneous Dirichlet data, where ``mu_eps[u] = 1 / sqrt(|grad u|^2 + eps^2)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .linalg import EigPairs, smallest_eigpairs
from .mesh import Mesh, assemble_mass, assemble_weighted_stiffness

DEFAULT_EPS = 1e-8


@lru_cache(maxsize=16)
def mass_matrix(mesh: Mesh, lumped: bool = False):
    return assemble_mass(mesh, lumped=lumped)


@lru_cache(maxsize=16)
def interior_mass(mesh: Mesh):
    idx = mesh.interior
    return mass_matrix(mesh)[idx][:, idx].tocsc()


@dataclass
class Basis:
    """M-orthonormal functions stored as columns of nodal values (zero on the boundary)."""

    mesh: Mesh
    functions: np.ndarray
    eigenvalues: np.ndarray | None = None

    def __len__(self):
        return self.functions.shape[1]

    @property
    def K(self) -> int:
        return self.functions.shape[1]

    def gram(self) -> np.ndarray:
        F = self.functions
        return F.T @ (mass_matrix(self.mesh) @ F)

    def combine(self, coeffs) -> np.ndarray:
        return self.functions @ np.asarray(coeffs, dtype=float)


def mu_eps(mesh: Mesh, u, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Per-element weights ``1/sqrt(|grad u|^2 + eps^2)``; exact since grad u is constant on T."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    g = mesh.element_gradient(np.asarray(u, dtype=float))
    return 1.0 / np.sqrt(np.einsum("ek,ek->e", g, g) + eps * eps)


def dirichlet_eigenbasis(mesh: Mesh, weights, K: int, tol: float = 1e-8) -> Basis:
    """First ``K`` Dirichlet eigenpairs of the weighted stiffness / mass pencil."""
    idx = mesh.interior
    A = assemble_weighted_stiffness(mesh, weights)[idx][:, idx]
    pairs: EigPairs = smallest_eigpairs(A, interior_mass(mesh), K, tol=tol)
    F = np.zeros((mesh.num_nodes, K))
    F[idx] = pairs.eigenvectors
    return Basis(mesh, F, pairs.eigenvalues)


def as_basis(mesh: Mesh, u, K: int, eps: float = DEFAULT_EPS, tol: float = 1e-8) -> Basis:
    if K < 1:
        raise ValueError("K must be at least 1")
    return dirichlet_eigenbasis(mesh, mu_eps(mesh, u, eps), K, tol=tol)


def laplace_basis(mesh: Mesh, K: int, tol: float = 1e-8) -> Basis:
    return dirichlet_eigenbasis(mesh, np.ones(mesh.num_elements), K, tol=tol)


def l2_project(v, basis: Basis):
    """Coefficients ``beta_k = (v, phi_k)`` and the projection ``sum beta_k phi_k``."""
    v = np.asarray(v, dtype=float)
    if v.shape[0] != basis.mesh.num_nodes:
        raise ValueError("function and basis live on different meshes")
    beta = basis.functions.T @ (mass_matrix(basis.mesh) @ v)
    return beta, basis.functions @ beta


def tv_energy(mesh: Mesh, weights, v) -> float:
    """Linearized TV energy ``int mu |grad v|^2`` (the quadratic form of the weighted stiffness)."""
    v = np.asarray(v, dtype=float)
    g = mesh.element_gradient(v)
    w = np.broadcast_to(np.asarray(weights, dtype=float), (mesh.num_elements,))
    return float(np.sum(w * mesh.areas * np.einsum("ek,ek->e", g, g)))


def projection_error(mesh: Mesh, func, basis: Basis, refine: int = 4) -> float:
    """``||f - Pi f||_{L2}`` for a pointwise-defined (possibly discontinuous) ``func``.

    Integrals use the centroid rule on ``refine**2`` congruent sub-triangles per element,
    so ``func`` is sampled well inside each element rather than only at nodes.
    """
    pts, wts, nodes, bary = _subtriangle_quadrature(mesh, refine)
    fvals = func(pts)
    F = basis.functions
    # phi_k at quadrature points via barycentric weights
    phi_q = np.einsum("qi,qik->qk", bary, F[nodes])
    beta = phi_q.T @ (wts * fvals)
    err = fvals - phi_q @ beta
    return float(np.sqrt(np.sum(wts * err * err)))


def _subtriangle_quadrature(mesh: Mesh, refine: int):
    # barycentric centroids of the refine^2 sub-triangles of the reference triangle
    s = refine
    cents = []
    for i in range(s):
        for j in range(s - i):
            cents.append(((i + 1 / 3) / s, (j + 1 / 3) / s))
            if i + j < s - 1:
                cents.append(((i + 2 / 3) / s, (j + 2 / 3) / s))
    lam = np.array(cents)
    bary_ref = np.column_stack([1 - lam.sum(axis=1), lam[:, 0], lam[:, 1]])
    p = mesh.node_coords[mesh.elements]  # (E,3,2)
    pts = np.einsum("qi,eik->eqk", bary_ref, p).reshape(-1, 2)
    nq = bary_ref.shape[0]
    wts = np.repeat(mesh.areas / nq, nq)
    nodes = np.repeat(mesh.elements, nq, axis=0)
    bary = np.tile(bary_ref, (mesh.num_elements, 1))
    return pts, wts, nodes, bary
