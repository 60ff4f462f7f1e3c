"""Structured P1 finite elements on the unit square.

Every grid cell is split along its lower-left to upper-right diagonal, so the
element geometry repeats and all assembly is vectorized over elements.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True, eq=False)
class Mesh:
    """Triangulation of (0,1)^2 with ``n`` intervals per side."""

    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise ValueError(f"mesh needs n >= 2 intervals per side, got {self.n}")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def num_nodes(self) -> int:
        return (self.n + 1) ** 2

    @property
    def num_elements(self) -> int:
        return 2 * self.n * self.n

    @cached_property
    def node_coords(self) -> np.ndarray:
        t = np.linspace(0.0, 1.0, self.n + 1)
        x, y = np.meshgrid(t, t, indexing="xy")
        return np.column_stack([x.ravel(), y.ravel()])

    @cached_property
    def elements(self) -> np.ndarray:
        n = self.n
        i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
        a = (j * (n + 1) + i).ravel()
        b = a + 1
        c = a + n + 2
        d = a + n + 1
        lower = np.column_stack([a, b, c])
        upper = np.column_stack([a, c, d])
        return np.vstack([lower, upper])

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        xy = self.node_coords
        tol = 0.25 * self.h
        return (
            (xy[:, 0] < tol) | (xy[:, 0] > 1 - tol) | (xy[:, 1] < tol) | (xy[:, 1] > 1 - tol)
        )

    @cached_property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_mask)

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.boundary_mask)

    @cached_property
    def areas(self) -> np.ndarray:
        return np.full(self.num_elements, 0.5 * self.h * self.h)

    @cached_property
    def shape_gradients(self) -> np.ndarray:
        """Gradients of the three barycentric functions, shape (E, 3, 2)."""
        p = self.node_coords[self.elements]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        g1 = np.column_stack([e2[:, 1], -e2[:, 0]]) / det[:, None]
        g2 = np.column_stack([-e1[:, 1], e1[:, 0]]) / det[:, None]
        g0 = -g1 - g2
        return np.stack([g0, g1, g2], axis=1)

    @cached_property
    def gradient_operators(self) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        """Sparse maps from nodal values to the x and y gradient per element, each (E, N)."""
        g = self.shape_gradients
        rows = np.repeat(np.arange(self.num_elements), 3)
        cols = self.elements.ravel()
        shape = (self.num_elements, self.num_nodes)
        return tuple(sp.csr_matrix((g[:, :, k].ravel(), (rows, cols)), shape=shape) for k in range(2))

    @cached_property
    def local_stiffness(self) -> np.ndarray:
        """Unweighted element stiffness matrices, shape (E, 3, 3)."""
        g = self.shape_gradients
        return self.areas[:, None, None] * np.einsum("eik,ejk->eij", g, g)

    @cached_property
    def _pattern(self) -> tuple[sp.csr_matrix, np.ndarray]:
        # CSR pattern plus a map from every local (e, i, j) entry to its slot in .data
        el = self.elements
        rows = np.repeat(el, 3, axis=1).ravel()
        cols = np.tile(el, (1, 3)).ravel()
        slot = np.arange(rows.size, dtype=np.float64)
        pat = sp.coo_matrix((slot + 1, (rows, cols)), shape=(self.num_nodes,) * 2)
        csr = pat.tocsr()
        csr.sum_duplicates()
        csr.sort_indices()
        key = rows.astype(np.int64) * self.num_nodes + cols
        csr_rows = np.repeat(np.arange(self.num_nodes), np.diff(csr.indptr))
        csr_key = csr_rows.astype(np.int64) * self.num_nodes + csr.indices
        where = np.searchsorted(csr_key, key)
        return csr, where

    def assemble(self, local: np.ndarray) -> sp.csr_matrix:
        """Scatter element matrices of shape (E, 3, 3) into a global CSR matrix."""
        csr, where = self._pattern
        data = np.bincount(where, weights=local.ravel(), minlength=csr.nnz)
        return sp.csr_matrix((data, csr.indices.copy(), csr.indptr.copy()), shape=csr.shape)

    def element_gradient(self, values: np.ndarray) -> np.ndarray:
        """Constant gradient of a P1 field on each element, shape (E, 2)."""
        return np.einsum("eik,ei->ek", self.shape_gradients, values[self.elements])

    def element_mean(self, values: np.ndarray) -> np.ndarray:
        return values[self.elements].mean(axis=1)

    def scatter_elements(self, per_element: np.ndarray) -> np.ndarray:
        """Distribute one third of each element quantity to each of its vertices."""
        return np.bincount(
            self.elements.ravel(), weights=np.repeat(per_element / 3.0, 3), minlength=self.num_nodes
        )

    def locate(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Element-local P1 interpolation weights for arbitrary points in [0,1]^2.

        Returns node indices and weights, both of shape (P, 3).
        """
        n = self.n
        pts = np.clip(np.asarray(points, dtype=float), 0.0, 1.0)
        s = pts * n
        i = np.minimum(np.floor(s[:, 0]).astype(int), n - 1)
        j = np.minimum(np.floor(s[:, 1]).astype(int), n - 1)
        xi = s[:, 0] - i
        eta = s[:, 1] - j
        a = j * (n + 1) + i
        b, c, d = a + 1, a + n + 2, a + n + 1
        lower = xi >= eta
        nodes = np.where(lower[:, None], np.column_stack([a, b, c]), np.column_stack([a, c, d]))
        w_lower = np.column_stack([1 - xi, xi - eta, eta])
        w_upper = np.column_stack([1 - eta, xi, eta - xi])
        weights = np.where(lower[:, None], w_lower, w_upper)
        return nodes, weights


@dataclass(eq=False)
class FeFunction:
    """Nodal values of a piecewise-linear field on ``mesh``."""

    mesh: Mesh
    values: np.ndarray
    name: str = field(default="field")

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.num_nodes,):
            raise ValueError(
                f"expected {self.mesh.num_nodes} nodal values, got shape {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("FeFunction values must be finite")


def build_unit_square_mesh(n: int) -> Mesh:
    return Mesh(n)


def assemble_mass(mesh: Mesh, lumped: bool = False) -> sp.csr_matrix:
    """Consistent P1 mass matrix, or its row-sum diagonal when ``lumped``."""
    if lumped:
        return sp.diags(_lumped_diagonal(mesh)).tocsr()
    ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
    return mesh.assemble(mesh.areas[:, None, None] * ref[None])


def _lumped_diagonal(mesh: Mesh) -> np.ndarray:
    return np.bincount(
        mesh.elements.ravel(), weights=np.repeat(mesh.areas / 3.0, 3), minlength=mesh.num_nodes
    )


def assemble_weighted_stiffness(mesh: Mesh, weight) -> sp.csr_matrix:
    """Stiffness matrix ``sum_T w_T int_T grad(phi_i).grad(phi_j)``."""
    w = np.broadcast_to(np.asarray(weight, dtype=float), (mesh.num_elements,))
    if np.any(~(w > 0)):
        raise ValueError("stiffness weights must be strictly positive")
    return mesh.assemble(w[:, None, None] * mesh.local_stiffness)


def boundary_mass(mesh: Mesh) -> np.ndarray:
    """Lumped boundary mass: each boundary node carries half of each adjacent edge."""
    m = np.zeros(mesh.num_nodes)
    m[mesh.boundary_mask] = mesh.h
    return m


def apply_dirichlet(matrix, rhs, boundary_mask, values=None):
    """Eliminate boundary unknowns symmetrically.

    Returns the interior block and the correspondingly lifted right-hand side.
    With ``values`` omitted the boundary data is homogeneous.
    """
    interior = np.flatnonzero(~np.asarray(boundary_mask))
    A = sp.csr_matrix(matrix)
    A_ii = A[interior][:, interior]
    b = np.asarray(rhs, dtype=float)[interior]
    if values is not None:
        bnd = np.flatnonzero(boundary_mask)
        g = np.asarray(values, dtype=float)
        g = g[bnd] if g.shape[0] == A.shape[0] else g
        b = b - A[interior][:, bnd] @ g
    return A_ii.tocsr(), b


def extend_interior(mesh: Mesh, interior_values: np.ndarray, boundary_values=None) -> np.ndarray:
    out = np.zeros(mesh.num_nodes) if boundary_values is None else np.array(boundary_values, float)
    out[mesh.interior] = interior_values
    return out


def interpolation_matrix(source: Mesh, target: Mesh) -> sp.csr_matrix:
    """Sparse operator evaluating P1 fields on ``source`` at the nodes of ``target``."""
    nodes, weights = source.locate(target.node_coords)
    rows = np.repeat(np.arange(target.num_nodes), 3)
    P = sp.coo_matrix(
        (weights.ravel(), (rows, nodes.ravel())), shape=(target.num_nodes, source.num_nodes)
    ).tocsr()
    P.eliminate_zeros()
    return P


def interpolate_between_meshes(f: FeFunction, target: Mesh) -> FeFunction:
    if target is f.mesh or target.n == f.mesh.n:
        return FeFunction(target, f.values.copy(), f.name)
    return FeFunction(target, interpolation_matrix(f.mesh, target) @ f.values, f.name)


def l2_inner(M, f, g) -> float:
    return float(np.dot(f, M @ g))


def l2_norm(M, f) -> float:
    return float(np.sqrt(max(l2_inner(M, f, f), 0.0)))


def write_grid(path, f: FeFunction) -> None:
    """Plain-text grid file: two header lines, then one nodal value per line."""
    path = Path(path)
    with path.open("w") as fh:
        fh.write(f"n = {f.mesh.n}\n")
        fh.write(f"field = {f.name}\n")
        np.savetxt(fh, f.values, fmt="%.17g")


def read_grid(path) -> FeFunction:
    path = Path(path)
    with path.open() as fh:
        header = {}
        for _ in range(2):
            key, _, val = fh.readline().partition("=")
            header[key.strip()] = val.strip()
        values = np.loadtxt(fh, ndmin=1)
    return FeFunction(Mesh(int(header["n"])), values, header.get("field", "field"))
