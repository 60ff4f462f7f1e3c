"""Command line entry point: ``asinv <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import subprocess
import sys
from pathlib import Path

from .config import RunConfig, config_to_text, load_config


def _config(path) -> RunConfig:
    return load_config(path) if path else RunConfig()


def cmd_gen_data(args) -> int:
    from .experiments import generate, save_dataset

    cfg = _config(args.config)
    ds = generate(cfg)
    out = save_dataset(ds, cfg, args.out)
    print(f"data written to {out} (delta_abs = {ds.delta_abs:.6g})")
    return 0


def cmd_invert(args) -> int:
    from .experiments import load_dataset, run_asi, run_tikhonov

    cfg = _config(args.config)
    ds = load_dataset(args.data)
    if args.method == "tikhonov":
        res = run_tikhonov(ds, cfg, args.out)
        rec = res.history[res.m_star]
    else:
        res = run_asi(ds, cfg, args.method, args.out)
        rec = res.history[res.m_star]
    print(f"{args.method}: stop = {res.stop_reason}, m* = {res.m_star}, "
          f"relative error = {rec.rel_error:.4f}, tau = {rec.tau_m:.4f}")
    return 0


def cmd_asdecomp(args) -> int:
    from .experiments import asdecomp_to_dir
    from .mesh import read_grid

    lam = asdecomp_to_dir(read_grid(args.medium), args.k, args.eps, args.out)
    for k, value in enumerate(lam, 1):
        print(f"lambda_{k} = {value:.6g}")
    return 0


def cmd_verify(args) -> int:
    tests = Path(__file__).resolve().parents[2] / "tests"
    if not tests.is_dir():
        print(f"test directory not found at {tests}", file=sys.stderr)
        return 2
    cmd = [sys.executable, "-m", "pytest", str(tests), "-q"]
    if args.suite == "fast":
        cmd += ["-m", "not slow"]
    return subprocess.call(cmd)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="asinv", description="Adaptive spectral inversion for inverse medium problems.")
    p.add_argument("--print-config", action="store_true", help="print the default configuration and exit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command")

    g = sub.add_parser("gen-data", help="generate synthetic noisy data")
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    i = sub.add_parser("invert", help="run an inversion on generated data")
    i.add_argument("--method", choices=("asi", "asi0", "tikhonov"), default="asi")
    i.add_argument("--config")
    i.add_argument("--data", required=True)
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_invert)

    a = sub.add_parser("asdecomp", help="eigenvalues and eigenfunctions of the AS operator")
    a.add_argument("--medium", required=True, help="grid file of the medium")
    a.add_argument("--k", type=int, default=6)
    a.add_argument("--eps", type=float, default=1e-8)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_asdecomp)

    v = sub.add_parser("verify", help="run the property and acceptance suites")
    v.add_argument("--suite", choices=("all", "fast"), default="fast")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.print_config:
        sys.stdout.write(config_to_text(RunConfig()))
        return 0
    if args.command is None:
        parser.print_help()
        return 1
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
