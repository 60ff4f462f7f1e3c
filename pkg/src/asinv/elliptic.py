"""Elliptic forward problem ``-div(u grad y) = f`` on the unit square, ``y = 0`` on the boundary.

Observations are the full nodal field; the misfit uses the consistent mass matrix.
The gradient is the exact adjoint of the discrete forward map.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse.linalg as spla

from .asdecomp import interior_mass, mass_matrix
from .linalg import cg_solve
from .mesh import Mesh, assemble_weighted_stiffness

U_MIN = 1e-3


class InvalidMediumError(ValueError):
    """The medium violates the positivity floor."""


def check_medium(u, u_min=U_MIN):
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise InvalidMediumError("medium has non-finite values")
    low = float(u.min())
    if low < u_min:
        raise InvalidMediumError(f"medium minimum {low:.3e} below floor {u_min:.1e}")
    return u


@lru_cache(maxsize=16)
def _mass_solver(mesh: Mesh):
    return spla.splu(interior_mass(mesh), permc_spec="MMD_AT_PLUS_A")


def riesz(mesh: Mesh, euclidean_grad: np.ndarray) -> np.ndarray:
    """L2 Riesz representative (zero on the boundary) of the functional ``v -> g . v``."""
    out = np.zeros(mesh.num_nodes)
    out[mesh.interior] = _mass_solver(mesh).solve(euclidean_grad[mesh.interior])
    return out


@dataclass
class EllipticProblem:
    mesh: Mesh
    observation: np.ndarray | None = None
    f: np.ndarray | float = 100.0
    solver: str = "direct"
    tol: float = 1e-12
    u_min: float = U_MIN
    _load: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        f = np.broadcast_to(np.asarray(self.f, dtype=float), (self.mesh.num_nodes,))
        if not np.all(np.isfinite(f)):
            raise ValueError("source must be finite")
        self._load = mass_matrix(self.mesh) @ f

    def stiffness(self, u):
        mesh = self.mesh
        A = assemble_weighted_stiffness(mesh, mesh.element_mean(u))
        idx = mesh.interior
        return A[idx][:, idx].tocsc()

    def _solver(self, A):
        if self.solver == "direct":
            return spla.splu(A, permc_spec="MMD_AT_PLUS_A").solve
        return lambda b: cg_solve(A, b, tol=self.tol, preconditioner="jacobi")


def solve_forward(u, problem: EllipticProblem) -> np.ndarray:
    u = check_medium(u, problem.u_min)
    mesh = problem.mesh
    solve = problem._solver(problem.stiffness(u))
    y = np.zeros(mesh.num_nodes)
    y[mesh.interior] = solve(problem._load[mesh.interior])
    return y


def _residual_misfit(problem, y):
    r = y - problem.observation
    Mr = mass_matrix(problem.mesh) @ r
    return r, Mr, 0.5 * float(r @ Mr)


def misfit(u, problem: EllipticProblem) -> float:
    return _residual_misfit(problem, solve_forward(u, problem))[2]


def misfit_and_gradient(u, problem: EllipticProblem):
    """Return ``(J, g_nodal, y)`` where ``g_nodal`` is the Euclidean nodal gradient.

    ``g_nodal[i] = dJ/du_i`` for every node; entries on boundary nodes are kept
    for completeness but lie outside the test space.
    """
    u = check_medium(u, problem.u_min)
    mesh = problem.mesh
    idx = mesh.interior
    solve = problem._solver(problem.stiffness(u))
    y = np.zeros(mesh.num_nodes)
    y[idx] = solve(problem._load[idx])
    _, Mr, J = _residual_misfit(problem, y)
    p = np.zeros(mesh.num_nodes)
    p[idx] = solve(-Mr[idx])
    # dJ/dw_T = int_T grad y . grad p, and w_T is the mean of the three nodal values
    gy = mesh.element_gradient(y)
    gp = mesh.element_gradient(p)
    per_el = mesh.areas * np.einsum("ek,ek->e", gy, gp)
    return J, mesh.scatter_elements(per_el), y


def gradient(u, problem: EllipticProblem) -> np.ndarray:
    """L2 Riesz representative of the misfit derivative; vanishes on the boundary."""
    _, g, _ = misfit_and_gradient(u, problem)
    return riesz(problem.mesh, g)
