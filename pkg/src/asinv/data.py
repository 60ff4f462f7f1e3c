"""Synthetic noisy observations computed on a finer mesh than the inversion mesh."""

from __future__ import annotations

import numpy as np

from .asdecomp import mass_matrix
from .elliptic import EllipticProblem, solve_forward
from .mesh import FeFunction, Mesh, build_unit_square_mesh, interpolation_matrix
from .phantoms import Phantom
from . import wave


def fine_mesh(mesh: Mesh, fine_factor: float) -> Mesh:
    return build_unit_square_mesh(int(round(fine_factor * mesh.n)))


def gen_noisy_elliptic(truth: Phantom, delta_hat: float, mesh: Mesh, fine_factor: float = 1.2,
                       seed: int = 0, f: float = 100.0):
    """Return ``(y_delta, delta_abs, y_clean)`` on ``mesh``.

    The noise is Gaussian, rescaled so that ``||y_delta - y_clean||_L2 = delta_hat ||y_clean||_L2``.
    """
    if delta_hat < 0:
        raise ValueError("noise level must be nonnegative")
    fine = fine_mesh(mesh, fine_factor)
    if fine_factor != 1:
        assert fine.n != mesh.n, "data mesh must differ from the inversion mesh"
    y_fine = solve_forward(truth.on_mesh(fine).values, EllipticProblem(fine, f=f))
    y = interpolation_matrix(fine, mesh) @ y_fine
    M = mass_matrix(mesh)
    norm_y = np.sqrt(y @ (M @ y))
    delta_abs = delta_hat * norm_y
    if delta_hat == 0:
        return FeFunction(mesh, y.copy(), "y_delta"), 0.0, y
    eta = np.random.default_rng(seed).standard_normal(mesh.num_nodes)
    eta *= delta_abs / np.sqrt(eta @ (M @ eta))
    return FeFunction(mesh, y + eta, "y_delta"), float(delta_abs), y


def transfer_traces(traces: wave.BoundaryTraces, source: Mesh, target: Mesh) -> wave.BoundaryTraces:
    """Boundary values on ``target`` by linear interpolation along the ``source`` boundary."""
    P = interpolation_matrix(source, target)
    rows = P[target.boundary_nodes][:, source.boundary_nodes]
    data = np.einsum("jk,snk->snj", rows.toarray(), traces.data)
    return wave.BoundaryTraces(data, target.boundary_nodes, traces.dt)


def gen_noisy_wave(truth: Phantom, delta_hat: float, problem: wave.WaveProblem,
                   fine_factor: float = 1.2, seed: int = 0):
    """Traces for every source of ``problem`` with multiplicative Gaussian noise.

    Returns ``(observed, delta_abs, relative_delta)`` where ``delta_abs`` is the realized
    L2(boundary x time) perturbation summed over sources.
    """
    if delta_hat < 0:
        raise ValueError("noise level must be nonnegative")
    mesh = problem.mesh
    fine = fine_mesh(mesh, fine_factor)
    cfg = problem.config
    # same time grid on both meshes; dt is fixed by the inversion mesh and checked against the fine CFL
    fine_cfg = type(cfg)(**{**cfg.__dict__, "dt": problem.dt})
    pos = wave.source_positions(cfg.n_sources, cfg.inset)
    fine_sources = np.column_stack([wave.gaussian_source(p, cfg.kappa, cfg.s, fine) for p in pos])
    fine_problem = wave.WaveProblem(fine, fine_cfg, fine_sources)
    clean_fine = wave.solve_wave(truth.on_mesh(fine).values, fine_problem)
    clean = transfer_traces(clean_fine, fine, mesh)
    rng = np.random.default_rng(seed)
    eta = rng.standard_normal(clean.data.shape)
    noisy = clean.data * (1 + delta_hat * eta)
    observed = wave.BoundaryTraces(noisy, clean.nodes, clean.dt)
    zero = wave.BoundaryTraces(np.zeros_like(noisy), clean.nodes, clean.dt)
    delta_abs = np.sqrt(2 * wave.trace_misfit(problem, noisy, clean.data))
    data_norm = np.sqrt(2 * wave.trace_misfit(problem, clean.data, zero.data))
    rel = delta_abs / data_norm if data_norm > 0 else 0.0
    return observed, float(delta_abs), float(rel)
