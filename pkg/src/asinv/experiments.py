"""Data generation, inversion runs and their on-disk outputs."""

from __future__ import annotations

import dataclasses
import json
import logging
import platform
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .asdecomp import as_basis
from .config import RunConfig, config_to_text
from .core import AsiResult, EllipticForward, WaveForward, asi_run, write_history
from .data import gen_noisy_elliptic, gen_noisy_wave
from .elliptic import EllipticProblem
from .mesh import FeFunction, Mesh, build_unit_square_mesh, read_grid, write_grid
from .phantoms import phantom
from .tikhonov import TikhonovConfig, TikhonovResult, tikhonov_invert
from .wave import BoundaryTraces, WaveProblem

log = logging.getLogger(__name__)


@dataclass
class Dataset:
    mesh: Mesh
    truth: np.ndarray
    delta_abs: float
    relative_delta: float
    elliptic: np.ndarray | None = None
    traces: BoundaryTraces | None = None


def generate(cfg: RunConfig) -> Dataset:
    mesh = build_unit_square_mesh(cfg.n)
    ph = phantom(cfg.phantom)
    truth = ph.on_mesh(mesh).values
    if cfg.problem == "elliptic":
        y, delta, _ = gen_noisy_elliptic(ph, cfg.delta_hat, mesh, cfg.fine_factor, cfg.seed)
        return Dataset(mesh, truth, delta, cfg.delta_hat, elliptic=y.values)
    problem = WaveProblem(mesh, cfg.wave)
    traces, delta, rel = gen_noisy_wave(ph, cfg.delta_hat, problem, cfg.fine_factor, cfg.seed)
    return Dataset(mesh, truth, delta, rel, traces=traces)


def _metadata(cfg: RunConfig, **extra) -> str:
    info = {
        "package_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "seed": cfg.seed,
        **extra,
    }
    return json.dumps(info, indent=2, sort_keys=True) + "\n"


def save_dataset(ds: Dataset, cfg: RunConfig, out) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_grid(out / "truth.grid", FeFunction(ds.mesh, ds.truth, "u_true"))
    if ds.elliptic is not None:
        write_grid(out / "y_delta.grid", FeFunction(ds.mesh, ds.elliptic, "y_delta"))
    if ds.traces is not None:
        ds.traces.save(out / "traces.npz")
    (out / "config.ini").write_text(config_to_text(cfg))
    (out / "metadata.json").write_text(
        _metadata(cfg, delta_abs=ds.delta_abs, relative_delta=ds.relative_delta, n=ds.mesh.n)
    )
    return out


def load_dataset(path) -> Dataset:
    path = Path(path)
    meta = json.loads((path / "metadata.json").read_text())
    truth = read_grid(path / "truth.grid")
    mesh = truth.mesh
    y = read_grid(path / "y_delta.grid").values if (path / "y_delta.grid").exists() else None
    traces = BoundaryTraces.load(path / "traces.npz") if (path / "traces.npz").exists() else None
    return Dataset(mesh, truth.values, float(meta["delta_abs"]), float(meta["relative_delta"]), y, traces)


def forward_for(ds: Dataset, cfg: RunConfig):
    if ds.elliptic is not None:
        return EllipticForward(EllipticProblem(ds.mesh, ds.elliptic))
    problem = WaveProblem(ds.mesh, cfg.wave, observed=ds.traces)
    return WaveForward(problem, seed=cfg.seed, full_misfit_tau=cfg.full_misfit_tau)


def run_asi(ds: Dataset, cfg: RunConfig, variant: str = "asi", out=None) -> AsiResult:
    asi_cfg = dataclasses.replace(cfg.asi, add_sensitivities=(variant == "asi"), seed=cfg.seed)
    fwd = forward_for(ds, cfg)
    seen = []

    def on_iteration(rec, u):
        seen.append(rec)
        if out is not None:
            write_grid(snaps / f"u_{rec.m:03d}.grid", FeFunction(ds.mesh, u, f"u_{rec.m}"))
            write_history(out / "history.csv", seen)

    if out is not None:
        out = Path(out)
        snaps = out / "snapshots"
        snaps.mkdir(parents=True, exist_ok=True)
    res = asi_run(asi_cfg, fwd, ds.delta_abs, ground_truth=ds.truth, on_iteration=on_iteration)
    if out is not None:
        write_history(out / "history.csv", res.history)
        write_grid(out / "u_final.grid", FeFunction(ds.mesh, res.u, "u_final"))
        (out / "config.ini").write_text(config_to_text(cfg))
        (out / "metadata.json").write_text(
            _metadata(cfg, method=variant, delta_abs=ds.delta_abs, m_star=res.m_star, stop_reason=res.stop_reason)
        )
    return res


def run_tikhonov(ds: Dataset, cfg: RunConfig, out=None) -> TikhonovResult:
    if ds.elliptic is None:
        raise ValueError("the Tikhonov baseline is implemented for the elliptic problem only")
    t = cfg.tikhonov
    tcfg = TikhonovConfig(grad_tol=t.grad_tol, max_iter=t.max_iter, memory=t.memory, tau0=cfg.asi.tau0)
    res = tikhonov_invert(EllipticProblem(ds.mesh, ds.elliptic), ds.delta_abs, tcfg, ground_truth=ds.truth)
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        write_history(out / "history.csv", res.history)
        write_grid(out / "u_final.grid", FeFunction(ds.mesh, res.u, "u_final"))
        (out / "config.ini").write_text(config_to_text(cfg))
        (out / "metadata.json").write_text(
            _metadata(cfg, method="tikhonov", delta_abs=ds.delta_abs, m_star=res.m_star, stop_reason=res.stop_reason)
        )
    return res


def asdecomp_to_dir(medium: FeFunction, K: int, eps: float, out) -> np.ndarray:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    basis = as_basis(medium.mesh, medium.values, K, eps=eps)
    with open(out / "eigenvalues.csv", "w") as fh:
        fh.write("k,eigenvalue\n")
        for k, lam in enumerate(basis.eigenvalues, 1):
            fh.write(f"{k},{lam!r}\n")
    for k in range(K):
        write_grid(out / f"phi_{k + 1:03d}.grid", FeFunction(medium.mesh, basis.functions[:, k], f"phi_{k + 1}"))
    return basis.eigenvalues
