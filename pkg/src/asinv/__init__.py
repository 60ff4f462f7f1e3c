"""Adaptive spectral inversion for inverse medium problems on the unit square."""

__version__ = "0.1.0"

from .asdecomp import Basis, as_basis, l2_project, laplace_basis, mu_eps, tv_energy
from .core import AsiConfig, AsiResult, IterationRecord, SearchSpace, asi_run, laplace_initial_space
from .elliptic import EllipticProblem, solve_forward
from .mesh import FeFunction, Mesh, build_unit_square_mesh
from .wave import BoundaryTraces, WaveConfig, WaveProblem, solve_wave

__all__ = [
    "AsiConfig",
    "AsiResult",
    "Basis",
    "BoundaryTraces",
    "EllipticProblem",
    "FeFunction",
    "IterationRecord",
    "Mesh",
    "SearchSpace",
    "WaveConfig",
    "WaveProblem",
    "as_basis",
    "asi_run",
    "build_unit_square_mesh",
    "l2_project",
    "laplace_basis",
    "laplace_initial_space",
    "mu_eps",
    "solve_forward",
    "solve_wave",
    "tv_energy",
]
