"""Adaptive spectral inversion: the outer loop and its building blocks.

Search spaces hold the deviation ``u - background``; every space is an
L2-orthonormal set of nodal functions vanishing on the boundary, so subspace
coordinates and L2 coefficients coincide.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.optimize import brentq

from .asdecomp import Basis, as_basis, laplace_basis, mass_matrix, mu_eps
from .elliptic import EllipticProblem, InvalidMediumError, riesz
from .elliptic import misfit as elliptic_misfit
from .elliptic import misfit_and_gradient as elliptic_misfit_and_gradient
from .linalg import mgs_orthonormalize
from .mesh import Mesh, assemble_weighted_stiffness
from .optimize import ObjectiveHandle, bfgs_minimize
from . import wave

log = logging.getLogger(__name__)


@dataclass
class SearchSpace:
    mesh: Mesh
    functions: np.ndarray  # (N, K)

    @property
    def K(self) -> int:
        return self.functions.shape[1]

    def __len__(self):
        return self.K

    def gram(self) -> np.ndarray:
        F = self.functions
        return F.T @ (mass_matrix(self.mesh) @ F)

    def coefficients(self, v) -> np.ndarray:
        return self.functions.T @ (mass_matrix(self.mesh) @ np.asarray(v, dtype=float))

    def combine(self, c) -> np.ndarray:
        return self.functions @ np.asarray(c, dtype=float)

    def project(self, v) -> np.ndarray:
        return self.combine(self.coefficients(v))

    @classmethod
    def from_basis(cls, basis: Basis) -> "SearchSpace":
        return cls(basis.mesh, basis.functions.copy())


@dataclass
class AsiConfig:
    eps_theta: float = 1e-4
    eps_psi0: float = 0.05
    rho0: float = 0.8
    rho1: float = 1.2
    tau0: float = 1.0
    K1: int = 50
    m_max: int = 50
    eps: float = 1e-8
    seed: int = 0
    inner_grad_tol: float = 1e-6
    inner_max_iter: int = 200
    drop_tol: float = 1e-8
    as_basis_size_factor: float = 1.0
    add_sensitivities: bool = True  # False gives the ASI0 variant
    eig_tol: float = 1e-8
    zero_noise_gtol: float = 1e-10

    def __post_init__(self):
        if not 0 < self.eps_theta < 1:
            raise ValueError("eps_theta must lie in (0, 1)")
        if not 0 < self.rho0 <= 1 <= self.rho1:
            raise ValueError("need 0 < rho0 <= 1 <= rho1")
        if self.tau0 < 1:
            raise ValueError("tau0 must be at least 1")
        if self.K1 < 1 or self.m_max < 1:
            raise ValueError("K1 and m_max must be positive")


@dataclass
class IterationRecord:
    m: int
    K_m: int
    misfit: float
    tau_m: float
    grad_norm: float
    rel_error: float
    eps_psi_current: float
    N_inf: int
    N_2: int
    N_theta: int
    cos_theta: float
    inner_iterations: int
    inner_reason: str
    wall_time: float


HISTORY_FIELDS = [f.name for f in fields(IterationRecord)]
TIMING_FIELDS = ("wall_time",)


def write_history(path, history) -> None:
    """One CSV row per record; columns follow the record's field order."""
    history = list(history)
    names = [f.name for f in fields(history[0])] if history else HISTORY_FIELDS
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for rec in history:
            row = asdict(rec)
            w.writerow([_fmt(row[k]) for k in names])


def read_history(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _fmt(v):
    return repr(float(v)) if isinstance(v, float) else v


# ----------------------------------------------------------------------------
# forward problem adapters


class EllipticForward:
    """Full-field elliptic misfit; the inner and outer objectives coincide."""

    def __init__(self, problem: EllipticProblem):
        self.problem = problem
        self.mesh = problem.mesh

    def misfit(self, u) -> float:
        return elliptic_misfit(u, self.problem)

    def misfit_and_gradient(self, u):
        J, g, _ = elliptic_misfit_and_gradient(u, self.problem)
        return J, g

    def inner(self, m: int) -> "EllipticForward":
        return self

    def outer(self, m: int) -> "EllipticForward":
        return self


class WaveForward:
    """Multi-source wave misfit; inner solves use a Rademacher super-shot per outer iteration."""

    def __init__(self, problem: wave.WaveProblem, seed: int = 0, use_supershot: bool = True,
                 full_misfit_tau: bool = True):
        self.problem = problem
        self.mesh = problem.medium_mesh or problem.mesh
        self.seed = seed
        self.use_supershot = use_supershot
        self.full_misfit_tau = full_misfit_tau

    def misfit(self, u) -> float:
        return wave.wave_misfit(u, self.problem)

    def misfit_and_gradient(self, u):
        return wave.misfit_and_gradient(u, self.problem)

    def inner(self, m: int) -> "WaveForward":
        if not self.use_supershot or self.problem.n_sources == 1:
            return self
        f, traces, _ = wave.supershot(self.problem.sources, self.problem.observed, self.seed, m)
        return WaveForward(self.problem.with_sources(f, traces), self.seed, False)

    def outer(self, m: int) -> "WaveForward":
        # discrepancy and sensitivities on all sources (N_s solves) unless disabled
        return self if self.full_misfit_tau else self.inner(m)


_INFEASIBLE = (InvalidMediumError, wave.CFLError, wave.WaveDivergenceError)


def reduced_objective(space: SearchSpace, forward, background=1.0) -> ObjectiveHandle:
    """Misfit of ``u = background + sum c_k psi_k`` with coordinate gradient ``(g, psi_k)``."""
    if space.K == 0:
        raise ValueError("search space is empty")
    Psi = space.functions
    bg = np.broadcast_to(np.asarray(background, dtype=float), (Psi.shape[0],))

    def medium(c):
        return bg + Psi @ c

    def evaluate(c):
        try:
            J, g = forward.misfit_and_gradient(medium(c))
        except _INFEASIBLE:
            return math.inf, np.zeros(space.K)
        # psi_k vanishes on the boundary, so (Riesz g, psi_k)_L2 = psi_k . g_euclid
        return J, Psi.T @ g

    def value(c):
        try:
            return forward.misfit(medium(c))
        except _INFEASIBLE:
            return math.inf

    return ObjectiveHandle(space.K, evaluate, value, f"reduced misfit, K={space.K}")


# ----------------------------------------------------------------------------
# angle condition and sensitivities


def sensitivities(grad, candidates: Basis):
    """``(order, sigma)`` with ``sigma[k] = (grad, phi_k)`` and ``order`` sorting ``|sigma|`` descending.

    The sort is stable, so ties keep the eigenvalue order.
    """
    sigma = candidates.functions.T @ (mass_matrix(candidates.mesh) @ np.asarray(grad, dtype=float))
    order = np.argsort(-np.abs(sigma), kind="stable")
    return order, sigma


def n_theta(sigma_sorted, grad_norm: float, eps_theta: float) -> tuple[int, int, int]:
    s = np.abs(np.asarray(sigma_sorted, dtype=float))
    if grad_norm <= 0 or s.size == 0:
        return 0, 0, 0
    thr = eps_theta * grad_norm
    below = np.flatnonzero(s < thr)
    n_inf = int(below[0]) if below.size else s.size
    reach = np.flatnonzero(np.sqrt(np.cumsum(s * s)) >= thr)
    n_2 = int(reach[0]) + 1 if reach.size else 0
    return n_inf, n_2, max(n_inf, n_2)


def check_angle_condition(grad, d, eps_theta: float, M=None) -> tuple[bool, float]:
    grad = np.asarray(grad, dtype=float)
    d = np.asarray(d, dtype=float)
    if M is None:
        gd, gg, dd = grad @ d, grad @ grad, d @ d
    else:
        Md = M @ d
        gd, gg, dd = grad @ Md, grad @ (M @ grad), d @ Md
    if dd <= 0 or gg <= 0:
        return False, 0.0
    cos = abs(gd) / math.sqrt(gg * dd)
    return bool(cos >= eps_theta), float(cos)


# ----------------------------------------------------------------------------
# merge, indicator, truncation


def merge_spaces(current: SearchSpace, as_functions: Basis, drop_tol: float = 1e-8) -> SearchSpace:
    """Orthonormalize [current, AS functions]; the current span is kept exactly."""
    M = mass_matrix(current.mesh)
    stacked = np.hstack([current.functions, as_functions.functions])
    Q, _ = mgs_orthonormalize(stacked, M, drop_tol=drop_tol)
    return SearchSpace(current.mesh, Q)


def _secular(s, cu_hat, r):
    # distance ||c(lam) - c_u|| - r in eigen-coordinates of S; decreasing in lam
    def dist(lam):
        return math.sqrt(float(np.sum((s / (s + lam)) ** 2 * cu_hat**2))) - r

    return dist


def indicator_coefficients(S, c_u, r) -> np.ndarray:
    """Minimize ``c'Sc`` subject to ``||c - c_u|| <= r`` for symmetric positive semidefinite ``S``."""
    c_u = np.asarray(c_u, dtype=float)
    if np.linalg.norm(c_u) <= r:
        return np.zeros_like(c_u)
    if r <= 0:
        return c_u.copy()
    s, Q = np.linalg.eigh(0.5 * (S + S.T))
    s = np.maximum(s, 0.0)
    cu_hat = Q.T @ c_u
    dist = _secular(s, cu_hat, r)
    null = s <= 1e-14 * max(s.max(), 1.0)
    if dist(0.0 if not null.any() else 1e-300) <= 0:
        # the zero-energy nullspace part of c_u is already within reach
        c_hat = np.where(null, cu_hat, 0.0)
        return Q @ c_hat
    # bracket in log(lam): dist(lam) -> ||c_u|| - r > 0 as lam -> 0, -> -r as lam -> inf
    lo, hi = math.log(max(s.max(), 1.0)) - 40, math.log(max(s.max(), 1.0)) + 40
    while dist(math.exp(lo)) < 0:
        lo -= 20
    while dist(math.exp(hi)) > 0:
        hi += 20
    t = brentq(lambda t: dist(math.exp(t)), lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)
    lam = math.exp(t)
    return Q @ (lam / (s + lam) * cu_hat)


def compute_indicator(merged: SearchSpace, u_m, weights, eps_psi: float, tol: float = 1e-8):
    """Minimal linearized-TV element of ``merged`` within ``eps_psi ||u_m||`` of ``u_m``.

    Returns ``(v, c)`` with ``v = sum c_k psi_k``.
    """
    c_u = merged.coefficients(u_m)
    M = mass_matrix(merged.mesh)
    nu = math.sqrt(float(u_m @ (M @ u_m)))
    resid = u_m - merged.combine(c_u)
    if math.sqrt(max(float(resid @ (M @ resid)), 0.0)) > tol * max(nu, 1e-300) and nu > 0:
        raise ValueError("u_m is not representable in the merged space")
    Aw = assemble_weighted_stiffness(merged.mesh, weights)
    Psi = merged.functions
    S = Psi.T @ (Aw @ Psi)
    c = indicator_coefficients(S, c_u, eps_psi * nu)
    return merged.combine(c), c


def truncation_index(gamma_sorted, eps_psi: float) -> int:
    """Smallest ``K >= 1`` whose tail energy is at most ``eps_psi^2 ||gamma||^2`` (0 for gamma = 0)."""
    g2 = np.asarray(gamma_sorted, dtype=float) ** 2
    total = g2.sum()
    if total == 0:
        return 0
    # tail[K] = sum_{k > K} g2, for K = 0..len
    tail = np.concatenate([total - np.cumsum(np.concatenate([[0.0], g2]))[:-1], [0.0]])
    tail = np.maximum(tail, 0.0)
    ok = np.flatnonzero(tail[1:] <= eps_psi**2 * total)
    return int(ok[0]) + 1


def _ceil(x: float) -> int:
    return math.ceil(round(x, 9))


def growth_control(N0: int, K_m: int, eps_psi: float, rho0: float, rho1: float):
    """Dimension of the truncated space and the next tolerance."""
    rho = N0 / K_m
    if rho < rho0:
        return _ceil(rho0 * K_m), eps_psi / 2
    if rho > rho1:
        return _ceil(rho1 * K_m), eps_psi * 2
    return N0, eps_psi


def truncate_space(merged: SearchSpace, gamma, eps_psi: float, K_m: int, rho0: float, rho1: float):
    """Reorder by ``|gamma|`` and keep the leading functions; returns ``(space, eps_psi_next, N0)``."""
    gamma = np.asarray(gamma, dtype=float)
    order = np.argsort(-np.abs(gamma), kind="stable")
    N0 = truncation_index(gamma[order], eps_psi)
    K_t, eps_next = growth_control(N0, K_m, eps_psi, rho0, rho1)
    K_t = min(max(K_t, 1), merged.K)
    return SearchSpace(merged.mesh, merged.functions[:, order[:K_t]]), eps_next, N0


def enrich(space: SearchSpace, candidates: Basis, order, n_take: int, drop_tol: float = 1e-8):
    """Append the ``n_take`` leading candidates (in ``order``) not already in the span."""
    if n_take <= 0:
        return space, []
    M = mass_matrix(space.mesh)
    order = np.asarray(order)
    Q, kept = mgs_orthonormalize(candidates.functions[:, order], M, drop_tol=drop_tol, basis=space.functions)
    Q, kept = Q[:, :n_take], kept[:n_take]
    basis = np.hstack([space.functions, Q])
    taken = [int(order[j]) for j in kept]
    return SearchSpace(space.mesh, basis), taken


# ----------------------------------------------------------------------------
# outer loop


@dataclass
class AsiResult:
    u: np.ndarray
    history: list[IterationRecord]
    m_star: int
    stop_reason: str
    space: SearchSpace | None = None
    iterates: list[np.ndarray] = field(default_factory=list, repr=False)


def laplace_initial_space(mesh: Mesh, K1: int, tol: float = 1e-8) -> SearchSpace:
    return SearchSpace.from_basis(laplace_basis(mesh, K1, tol=tol))


def _l2(mesh, v) -> float:
    return math.sqrt(max(float(v @ (mass_matrix(mesh) @ v)), 0.0))


def asi_run(
    config: AsiConfig,
    forward,
    delta: float,
    u0=None,
    ground_truth=None,
    initial_space: SearchSpace | None = None,
    background=1.0,
    on_iteration=None,
) -> AsiResult:
    """Run the adaptive spectral inversion.

    ``forward`` provides ``misfit``, ``misfit_and_gradient`` and ``inner(m)``.
    ``on_iteration(record, u)`` is called after every appended record.
    """
    mesh = forward.mesh
    M = mass_matrix(mesh)
    N = mesh.num_nodes
    bg = np.broadcast_to(np.asarray(background, dtype=float), (N,)).copy()
    u_prev = bg.copy() if u0 is None else np.asarray(u0, dtype=float).copy()
    space = initial_space or laplace_initial_space(mesh, config.K1, tol=config.eig_tol)
    eps_psi = config.eps_psi0
    truth_norm = _l2(mesh, ground_truth) if ground_truth is not None else None
    history: list[IterationRecord] = []
    iterates = [u_prev.copy()]
    t0 = time.perf_counter()

    def rel_error(u):
        if ground_truth is None:
            return math.nan
        return _l2(mesh, u - ground_truth) / truth_norm

    def tau(J):
        return math.sqrt(2 * J) / delta if delta > 0 else math.inf

    def record(rec):
        history.append(rec)
        if on_iteration is not None:
            on_iteration(rec, iterates[-1])

    J0, g0 = forward.misfit_and_gradient(u_prev)
    G0 = riesz(mesh, g0)
    gnorm0 = _l2(mesh, G0)
    record(IterationRecord(0, space.K, J0, tau(J0), gnorm0, rel_error(u_prev), eps_psi,
                           0, 0, 0, math.nan, 0, "initial", time.perf_counter() - t0))
    misfits = [J0]
    stop = "m-max"
    m_star = None

    for m in range(1, config.m_max + 1):
        # Step 2: minimize in the current space, warm start at the projection of u^(m-1)
        obj = reduced_objective(space, forward.inner(m), bg)
        c0 = space.coefficients(u_prev - bg)
        try:
            res = bfgs_minimize(obj, c0, grad_tol=config.inner_grad_tol, max_iter=config.inner_max_iter)
        except ValueError as exc:
            raise RuntimeError(f"inner minimization failed at outer iteration {m}: {exc}") from exc
        u_m = bg + space.combine(res.coords)
        iterates.append(u_m.copy())

        # Step 3: discrepancy on the full misfit, with the full gradient for diagnostics
        J, g = forward.outer(m).misfit_and_gradient(u_m)
        G = riesz(mesh, g)
        gnorm = _l2(mesh, G)
        tau_m = tau(J)
        misfits.append(J)
        K_m = space.K
        rec = IterationRecord(m, K_m, J, tau_m, gnorm, rel_error(u_m), eps_psi, 0, 0, 0, math.nan,
                              res.iterations, res.termination_reason, time.perf_counter() - t0)

        if delta > 0 and tau_m <= config.tau0:
            record(rec)
            stop = "discrepancy"
            m_star = m - 1
            break
        if delta == 0 and gnorm <= config.zero_noise_gtol * gnorm0:
            record(rec)
            stop = "gradient-zero"
            m_star = m
            break
        if m == config.m_max:
            record(rec)
            break

        # Steps 7-9: AS basis at u^(m), merge, indicator, truncation
        dev = u_m - bg
        n_as = max(1, min(int(round(config.as_basis_size_factor * K_m)), mesh.interior.size - 1))
        phi = as_basis(mesh, u_m, n_as, eps=config.eps, tol=config.eig_tol)
        merged = merge_spaces(space, phi, config.drop_tol)
        weights = mu_eps(mesh, u_m, config.eps)
        _, gamma = compute_indicator(merged, dev, weights, eps_psi)
        truncated, eps_next, _ = truncate_space(merged, gamma, eps_psi, K_m, config.rho0, config.rho1)

        # Step 10: add the most sensitive AS functions
        if config.add_sensitivities and gnorm > 0:
            order, sigma = sensitivities(G, phi)
            n_inf, n_2, n_th = n_theta(sigma[order], gnorm, config.eps_theta)
            if n_2 == 0:
                # enlarge the candidate set once
                n_big = min(2 * n_as, mesh.interior.size - 1)
                if n_big > n_as:
                    phi = as_basis(mesh, u_m, n_big, eps=config.eps, tol=config.eig_tol)
                    order, sigma = sensitivities(G, phi)
                    n_inf, n_2, n_th = n_theta(sigma[order], gnorm, config.eps_theta)
            new_space, _ = enrich(truncated, phi, order, n_th, config.drop_tol)
            if n_th >= 1:
                lead = order[:n_th]
                d = phi.functions[:, lead] @ sigma[lead]
                _, cos = check_angle_condition(G, d, config.eps_theta, M)
            else:
                cos = math.nan
            rec.N_inf, rec.N_2, rec.N_theta, rec.cos_theta = n_inf, n_2, n_th, cos
        else:
            new_space = truncated
        rec.wall_time = time.perf_counter() - t0
        record(rec)
        log.info("m=%d K=%d J=%.4e tau=%.4f |g|=%.3e K_next=%d", m, K_m, J, tau_m, gnorm, new_space.K)

        space = new_space
        eps_psi = eps_next
        u_prev = u_m

    if stop == "discrepancy":
        u_final = iterates[m_star]
    elif stop == "gradient-zero":
        u_final = iterates[-1]
    else:
        best = int(np.argmin(misfits))
        u_final = iterates[best]
        m_star = best
    return AsiResult(u_final, history, m_star, stop, space, iterates)
