"""Time-domain scalar wave equation with first-order absorbing boundary.

Semi-discretization with lumped P1 elements,

    M_L y'' + B(u) y' + A(u) y = M g r(t),

where ``A(u)`` is the u-weighted stiffness, ``B(u) = diag(sqrt(u) b)`` the lumped
boundary mass times sqrt(u), and the explicit central-difference (leapfrog)
scheme is used in time. Boundary traces are recorded at every step. The
gradient is the exact adjoint of this fully discrete map.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .asdecomp import mass_matrix
from .elliptic import U_MIN, InvalidMediumError, check_medium, riesz
from .mesh import Mesh, assemble_weighted_stiffness, boundary_mass, interpolation_matrix


class CFLError(ValueError):
    def __init__(self, message, dt_max):
        super().__init__(message)
        self.dt_max = dt_max


class WaveDivergenceError(RuntimeError):
    pass


@dataclass
class WaveConfig:
    T: float = 2.0
    nu: float = 10.0
    kappa: float = 200.0
    s: float = 1e-2
    n_sources: int = 32
    inset: float = 0.05
    dt: float | None = None
    cfl_umax: float = 4.0  # medium bound used to pick dt when dt is None
    cfl_safety: float = 0.9
    snapshot_stride: int | None = None
    checkpoint_stride: int | None = None
    memory_budget: float = 2e9  # bytes of stored forward states

    def __post_init__(self):
        if self.dt is not None and abs(self.T / self.dt - round(self.T / self.dt)) > 1e-9 * self.T / self.dt:
            raise ValueError("T/dt must be an integer")


def ricker(t, nu):
    a = (np.pi * (nu * np.asarray(t, dtype=float) - 1.0)) ** 2
    return (1.0 - 2.0 * a) * np.exp(-a)


def gaussian_source(center, kappa, s, mesh: Mesh) -> np.ndarray:
    d2 = np.sum((mesh.node_coords - np.asarray(center, float)) ** 2, axis=1)
    return kappa * np.exp(-d2 / s)


def source_positions(n_sources: int, inset: float = 0.05) -> np.ndarray:
    """Points equispaced along the square ``inset`` inside the boundary, starting at a corner."""
    side = 1.0 - 2 * inset
    arc = np.arange(n_sources) * 4 * side / n_sources
    pts = []
    for a in arc:
        k, r = divmod(a, side)
        k = int(k) % 4
        if k == 0:
            pts.append((inset + r, inset))
        elif k == 1:
            pts.append((1 - inset, inset + r))
        elif k == 2:
            pts.append((1 - inset - r, 1 - inset))
        else:
            pts.append((inset, 1 - inset - r))
    return np.array(pts)


def cfl_dt(mesh: Mesh, umax: float, safety: float = 0.9) -> float:
    return safety * mesh.h / (np.sqrt(2.0) * np.sqrt(umax))


@dataclass
class BoundaryTraces:
    """Boundary values per source: ``data[l, n, j]`` at time ``n*dt`` and node ``nodes[j]``."""

    data: np.ndarray
    nodes: np.ndarray
    dt: float

    @property
    def n_steps(self) -> int:
        return self.data.shape[1] - 1

    def save(self, path):
        np.savez(Path(path), data=self.data, nodes=self.nodes, dt=self.dt)

    @classmethod
    def load(cls, path):
        z = np.load(Path(path))
        return cls(z["data"], z["nodes"], float(z["dt"]))


@dataclass(eq=False)
class WaveProblem:
    """Sources, time grid and observed traces on a state mesh.

    ``medium_mesh`` (optional) carries the medium; it is interpolated to the
    state mesh and gradients are mapped back with the transpose.
    """

    mesh: Mesh
    config: WaveConfig = field(default_factory=WaveConfig)
    sources: np.ndarray | None = None  # (N, S) spatial source fields
    observed: BoundaryTraces | None = None
    medium_mesh: Mesh | None = None
    u_min: float = U_MIN

    def __post_init__(self):
        cfg = self.config
        if self.sources is None:
            pos = source_positions(cfg.n_sources, cfg.inset)
            self.sources = np.column_stack(
                [gaussian_source(p, cfg.kappa, cfg.s, self.mesh) for p in pos]
            )
        self.sources = np.asarray(self.sources, dtype=float)
        if self.sources.ndim == 1:
            self.sources = self.sources[:, None]
        dt = cfg.dt if cfg.dt is not None else cfl_dt(self.mesh, cfg.cfl_umax, cfg.cfl_safety)
        self.n_steps = int(np.ceil(cfg.T / dt - 1e-9))
        self.dt = cfg.T / self.n_steps
        self.times = self.dt * np.arange(self.n_steps + 1)
        self.signal = ricker(self.times, cfg.nu)

    @cached_property
    def lumped(self) -> np.ndarray:
        return np.asarray(mass_matrix(self.mesh, True).diagonal())

    @cached_property
    def bmass(self) -> np.ndarray:
        return boundary_mass(self.mesh)

    @cached_property
    def bnodes(self) -> np.ndarray:
        return self.mesh.boundary_nodes

    @cached_property
    def loads(self) -> np.ndarray:
        return mass_matrix(self.mesh) @ self.sources

    @cached_property
    def quad_weights(self) -> np.ndarray:
        w = np.full(self.n_steps + 1, self.dt)
        w[0] = w[-1] = 0.5 * self.dt
        return w

    @cached_property
    def prolong(self):
        if self.medium_mesh is None or self.medium_mesh.n == self.mesh.n:
            return None
        return interpolation_matrix(self.medium_mesh, self.mesh)

    @property
    def n_sources(self) -> int:
        return self.sources.shape[1]

    def state_medium(self, u):
        return u if self.prolong is None else self.prolong @ u

    def with_sources(self, sources, observed=None) -> "WaveProblem":
        return WaveProblem(self.mesh, self.config, sources, observed, self.medium_mesh, self.u_min)


class _Operators:
    def __init__(self, problem: WaveProblem, u_state):
        cfg = problem.config
        dt = problem.dt
        umax = float(u_state.max())
        dt_max = cfl_dt(problem.mesh, umax, cfg.cfl_safety)
        if dt > dt_max * (1 + 1e-12):
            raise CFLError(
                f"time step {dt:.4e} violates the CFL bound {dt_max:.4e} for max(u) = {umax:.4g}",
                dt_max,
            )
        self.u = u_state
        self.A = assemble_weighted_stiffness(problem.mesh, problem.mesh.element_mean(u_state))
        self.D = problem.lumped / dt**2
        self.Bd = np.sqrt(u_state) * problem.bmass
        self.Cp = self.D + self.Bd / (2 * dt)
        self.Cm = self.D - self.Bd / (2 * dt)


def _prepare(u, problem: WaveProblem):
    u = check_medium(u, problem.u_min)
    us = problem.state_medium(u)
    check_medium(us, problem.u_min)
    return u, us, _Operators(problem, us)


def _step(ops: _Operators, y, y_prev, load):
    rhs = load - ops.A @ y + (2 * ops.D)[:, None] * y - ops.Cm[:, None] * y_prev
    return rhs / ops.Cp[:, None]


def _forward(problem: WaveProblem, ops, loads, store="none", stride=None, snapshot_stride=None):
    """March in time; returns traces (S, N_T+1, nb) and the requested state storage."""
    N = problem.mesh.num_nodes
    S = loads.shape[1]
    nt = problem.n_steps
    sig = problem.signal
    bn = problem.bnodes
    traces = np.zeros((S, nt + 1, bn.size))
    y_prev = np.zeros((N, S))
    y = np.zeros((N, S))
    states = np.zeros((nt + 1, N, S)) if store == "all" else None
    checkpoints = {}
    snapshots = {}
    if store == "checkpoint":
        checkpoints[0] = (y_prev.copy(), y.copy())
    for n in range(nt):
        y_next = _step(ops, y, y_prev, loads * sig[n])
        y_prev, y = y, y_next
        if not np.all(np.isfinite(y)):
            raise WaveDivergenceError(f"non-finite wave state at step {n + 1}")
        traces[:, n + 1, :] = y[bn].T
        if states is not None:
            states[n + 1] = y
        if store == "checkpoint" and (n + 1) % stride == 0:
            checkpoints[n + 1] = (y_prev.copy(), y.copy())
        if snapshot_stride and (n + 1) % snapshot_stride == 0:
            snapshots[n + 1] = y.copy()
    return traces, states, checkpoints, snapshots


def solve_wave(u, problem: WaveProblem, sources=None, snapshots=False):
    """Boundary traces for every source column; optionally snapshots every ``snapshot_stride`` steps."""
    _, _, ops = _prepare(u, problem)
    loads = problem.loads if sources is None else mass_matrix(problem.mesh) @ np.atleast_2d(sources.T).T
    stride = problem.config.snapshot_stride if snapshots else None
    traces, _, _, snaps = _forward(problem, ops, loads, snapshot_stride=stride)
    out = BoundaryTraces(traces, problem.bnodes, problem.dt)
    return (out, snaps) if snapshots else out


def trace_misfit(problem: WaveProblem, traces: np.ndarray, observed: np.ndarray) -> float:
    """Half the squared L2(boundary x time) norm: trapezoid in time, lumped boundary mass in space."""
    r = traces - observed
    b = problem.bmass[problem.bnodes]
    return 0.5 * float(np.einsum("n,snj,j->", problem.quad_weights, r * r, b))


def wave_misfit(u, problem: WaveProblem, observed: BoundaryTraces | None = None) -> float:
    observed = observed or problem.observed
    traces = solve_wave(u, problem).data
    return trace_misfit(problem, traces, observed.data)


def misfit_and_gradient(u, problem: WaveProblem, observed: BoundaryTraces | None = None):
    """Return ``(J, g_nodal)`` with ``g_nodal[i] = dJ/du_i`` on the medium mesh (all nodes)."""
    observed = observed or problem.observed
    u, us, ops = _prepare(u, problem)
    cfg = problem.config
    nt = problem.n_steps
    S = problem.n_sources
    N = problem.mesh.num_nodes
    stride = cfg.checkpoint_stride
    need = (nt + 1) * N * S * 8
    if stride is None and need > cfg.memory_budget:
        suggestion = int(np.ceil(np.sqrt(nt)))
        raise MemoryError(
            f"storing the forward history needs {need / 1e9:.2f} GB; "
            f"set checkpoint_stride (e.g. {suggestion})"
        )
    store = "all" if stride is None else "checkpoint"
    traces, states, ckpts, _ = _forward(problem, ops, problem.loads, store=store, stride=stride)
    J = trace_misfit(problem, traces, observed.data)
    resid = traces - observed.data  # (S, nt+1, nb)

    mesh = problem.mesh
    bn = problem.bnodes
    bw = problem.bmass[bn]
    w = problem.quad_weights
    Dx, Dy = mesh.gradient_operators
    A = ops.A
    AmD = lambda x: A @ x - (2 * ops.D)[:, None] * x  # noqa: E731
    per_el = np.zeros(mesh.num_elements)
    bterm = np.zeros(N)
    dBdu = problem.bmass / (2 * np.sqrt(us)) / (2 * problem.dt)

    if states is not None:
        get_state = states.__getitem__
    else:
        cache = {}

        def get_state(k):
            if k < 0:
                return np.zeros((N, S))
            if k not in cache:
                cache.clear()
                c0 = (k // stride) * stride
                yp, yc = ckpts[c0]
                cache[c0 - 1], cache[c0] = yp, yc
                for j in range(c0, min(c0 + stride, nt)):
                    yn = _step(ops, yc, yp, problem.loads * problem.signal[j])
                    cache[j + 1] = yn
                    yp, yc = yc, yn
            return cache[k]

    lam_next = np.zeros((N, S))  # lambda^{k+1}
    lam = np.zeros((N, S))  # lambda^{k}
    for k in range(nt, 0, -1):
        dJdy = np.zeros((N, S))
        dJdy[bn] = (w[k] * bw[:, None]) * resid[:, k, :].T
        lam_prev = -(dJdy + AmD(lam) + ops.Cm[:, None] * lam_next) / ops.Cp[:, None]
        # lam_prev multiplies residual R^{k-1}, which involves y^k, y^{k-1}, y^{k-2}
        n = k - 1
        y_n = get_state(n)
        per_el += np.einsum("es,es->e", Dx @ y_n, Dx @ lam_prev)
        per_el += np.einsum("es,es->e", Dy @ y_n, Dy @ lam_prev)
        y_np1 = get_state(n + 1)
        y_nm1 = get_state(n - 1) if n >= 1 else np.zeros((N, S))
        bterm += dBdu * np.sum(lam_prev * (y_np1 - y_nm1), axis=1)
        lam_next, lam = lam, lam_prev
    g_state = mesh.scatter_elements(mesh.areas * per_el) + bterm
    g = g_state if problem.prolong is None else problem.prolong.T @ g_state
    return J, g


def wave_gradient(u, problem: WaveProblem, observed: BoundaryTraces | None = None) -> np.ndarray:
    """L2 Riesz representative on the medium mesh (zero on the boundary)."""
    _, g = misfit_and_gradient(u, problem, observed)
    mesh = problem.medium_mesh or problem.mesh
    return riesz(mesh, g)


def rademacher_weights(n_sources: int, seed: int, iteration: int) -> np.ndarray:
    rng = np.random.default_rng([int(seed), int(iteration)])
    return 2.0 * rng.integers(0, 2, size=n_sources) - 1.0


def supershot(sources: np.ndarray, traces: BoundaryTraces, seed: int, iteration: int = 0):
    """Rademacher-weighted combination of all sources and their traces."""
    xi = rademacher_weights(sources.shape[1], seed, iteration)
    f = sources @ xi
    y = np.einsum("l,lnj->nj", xi, traces.data)[None]
    return f, BoundaryTraces(y, traces.nodes, traces.dt), xi


def discrete_energy(problem: WaveProblem, u, states: np.ndarray) -> np.ndarray:
    """Leapfrog energy ``E^{n+1/2} = 1/2 v'M_L v + 1/2 y^{n+1}' A y^n`` for a stored history (nt+1, N)."""
    us = problem.state_medium(np.asarray(u, float))
    A = assemble_weighted_stiffness(problem.mesh, problem.mesh.element_mean(us))
    v = np.diff(states, axis=0) / problem.dt
    kin = 0.5 * np.einsum("nj,j,nj->n", v, problem.lumped, v)
    pot = 0.5 * np.einsum("nj,nj->n", states[1:], (A @ states[:-1].T).T)
    return kin + pot


def full_history(u, problem: WaveProblem, source_index: int = 0) -> np.ndarray:
    """All states (nt+1, N) for one source; meant for audits on small meshes."""
    _, _, ops = _prepare(u, problem)
    _, states, _, _ = _forward(problem, ops, problem.loads[:, [source_index]], store="all")
    return states[:, :, 0]


__all__ = [
    "BoundaryTraces",
    "CFLError",
    "InvalidMediumError",
    "WaveConfig",
    "WaveDivergenceError",
    "WaveProblem",
    "cfl_dt",
    "discrete_energy",
    "gaussian_source",
    "misfit_and_gradient",
    "rademacher_weights",
    "ricker",
    "solve_wave",
    "source_positions",
    "supershot",
    "trace_misfit",
    "wave_gradient",
    "wave_misfit",
]
