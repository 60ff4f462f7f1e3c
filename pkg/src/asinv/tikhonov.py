"""Grid-based L2-Tikhonov baseline for the elliptic problem.

Unknowns are the interior nodal values of the deviation ``u0 = u - 1``, scaled
by ``h`` so that the Euclidean norm of the coordinates approximates the L2
norm of ``u0``. The regularization weight follows ``alpha_n = 2**-n`` in the
optimizer iteration ``n``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .asdecomp import mass_matrix
from .elliptic import EllipticProblem, InvalidMediumError, riesz
from .elliptic import misfit_and_gradient as elliptic_misfit_and_gradient
from .optimize import ObjectiveHandle, lbfgs_minimize


def halving_schedule(n: int) -> float:
    return 2.0**-n


@dataclass
class TikhonovConfig:
    alpha_schedule: Callable[[int], float] = field(default=halving_schedule)
    grad_tol: float = 1e-6
    max_iter: int = 200
    memory: int = 10
    tau0: float = 1.0
    background: float = 1.0

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass
class TikhonovRecord:
    m: int
    alpha: float
    misfit: float
    tau_m: float
    grad_norm: float
    rel_error: float
    wall_time: float


@dataclass
class TikhonovResult:
    u: np.ndarray
    history: list[TikhonovRecord]
    m_star: int
    stop_reason: str


def penalized_objective(problem: EllipticProblem, alpha_ref: list, background=1.0) -> tuple[ObjectiveHandle, dict]:
    """Objective ``J(1 + u0) + alpha/2 ||u0||^2`` in scaled interior coordinates.

    ``alpha_ref[0]`` is read at every call so a hook may change it. The returned
    cache holds the misfit part and gradient of the last evaluation.
    """
    mesh = problem.mesh
    idx = mesh.interior
    h = mesh.h
    M = mass_matrix(mesh)
    cache = {}

    def medium(x):
        u0 = np.zeros(mesh.num_nodes)
        u0[idx] = x / h
        return u0, background + u0

    def evaluate(x):
        u0, u = medium(x)
        try:
            J, g, _ = elliptic_misfit_and_gradient(u, problem)
        except InvalidMediumError:
            return math.inf, np.zeros_like(x)
        Mu0 = M @ u0
        alpha = alpha_ref[0]
        cache.update(x=x.copy(), misfit=J, g=g)
        f = J + 0.5 * alpha * float(u0 @ Mu0)
        return f, (g[idx] + alpha * Mu0[idx]) / h

    def value(x):
        return evaluate(x)[0]

    return ObjectiveHandle(idx.size, evaluate, value, "Tikhonov-penalized misfit"), cache


def tikhonov_invert(problem: EllipticProblem, delta: float, config: TikhonovConfig | None = None,
                    u0=None, ground_truth=None) -> TikhonovResult:
    config = config or TikhonovConfig()
    mesh = problem.mesh
    idx = mesh.interior
    bg = config.background
    alpha = [config.alpha_schedule(0)]
    obj, cache = penalized_objective(problem, alpha, bg)
    x0 = np.zeros(idx.size) if u0 is None else mesh.h * (np.asarray(u0, float)[idx] - bg)
    M = mass_matrix(mesh)
    truth_norm = math.sqrt(ground_truth @ (M @ ground_truth)) if ground_truth is not None else None
    history: list[TikhonovRecord] = []
    iterates = []
    t0 = time.perf_counter()

    def medium(x):
        u = np.full(mesh.num_nodes, bg)
        u[idx] += x / mesh.h
        return u

    def record(n, x):
        if cache.get("x") is None or not np.array_equal(cache["x"], x):
            obj.evaluate(x)
        J = cache["misfit"]
        u = medium(x)
        G = riesz(mesh, cache["g"])
        err = math.sqrt((u - ground_truth) @ (M @ (u - ground_truth))) / truth_norm if truth_norm else math.nan
        tau = math.sqrt(2 * J) / delta if delta > 0 else math.inf
        history.append(TikhonovRecord(n, alpha[0], J, tau, math.sqrt(G @ (M @ G)), err, time.perf_counter() - t0))
        iterates.append(u)
        return tau

    record(0, x0)

    def hook(n):
        alpha[0] = config.alpha_schedule(n)

    def callback(it, x, f, g):
        tau = record(it, x)
        if delta > 0 and tau <= config.tau0:
            return "discrepancy"
        return None

    res = lbfgs_minimize(obj, x0, memory=config.memory, grad_tol=config.grad_tol, max_iter=config.max_iter,
                         per_iteration_hook=hook, callback=callback)
    if res.termination_reason == "discrepancy":
        m_star = len(history) - 2
    else:
        m_star = len(history) - 1
    return TikhonovResult(iterates[m_star], history, m_star, res.termination_reason)
