"""Command line entry point.

Exit codes: 0 success, 1 failed self-check, 2 invalid input, 3 solver divergence.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .artifacts import BundleError, basis_from_bundle, save_offline, write_run
from .config import ConfigError, default_config, load_config
from .solver import NewtonDivergenceError

__all__ = ["main"]

log = logging.getLogger("msdeim")

COMMANDS = {"approx": "fn_approx", "steady": "steady", "parabolic": "parabolic", "sweep": "param_sweep"}


def _parser():
    p = argparse.ArgumentParser(prog="msdeim", description="Multiscale DEIM reduced-order solvers.")
    p.add_argument("command", choices=["offline", *COMMANDS, "verify"])
    p.add_argument("--config", metavar="PATH", help="INI run configuration")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--mode", choices=["full", "msdeim"])
    p.add_argument("--m", type=int, metavar="INT", help="DEIM points per region (single run)")
    p.add_argument("--eta", type=float, help="channel conductivity exponent (contrast 10**eta)")
    p.add_argument("--preset", choices=["case1", "case2"])
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _config(args, experiment):
    cfg = load_config(args.config) if args.config else default_config(experiment or "steady")
    if experiment is not None and cfg.experiment != experiment:
        # same grid, field and offline space; experiment defaults for the rest
        keep = {k: getattr(cfg, k) for k in cfg.offline_key()}
        cfg = default_config(experiment, out=cfg.out, **keep)
    return cfg.with_overrides(mode=args.mode, eta=args.eta, preset=args.preset,
                              m_values=(args.m,) if args.m is not None else None)


def _setup(cfg, out):
    from .experiments import build_setup
    from .grid import build_grids, build_neighborhoods, build_partition_of_unity

    bundle = out / "offline"
    if (bundle / "manifest.txt").exists():
        mesh, coarse = build_grids(cfg.n_coarse, cfg.n_sub)
        nbs = build_neighborhoods(coarse, mesh)
        pu = build_partition_of_unity(coarse, mesh, nbs)
        basis = basis_from_bundle(bundle, cfg, mesh, nbs, pu)
        log.info("reusing offline bundle %s", bundle)
        return build_setup(cfg, basis=basis)
    return build_setup(cfg)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "verify":
        from .verify import run_checks

        results = run_checks()
        for name, ok, detail in results:
            print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        return 0 if all(ok for _, ok, _ in results) else 1
    try:
        experiment = COMMANDS.get(args.command)
        cfg = _config(args, experiment)
        out = Path(args.out or cfg.out or f"runs/{cfg.experiment}")
        if args.command == "offline":
            from .experiments import build_setup

            path = save_offline(out / "offline", build_setup(cfg))
            print(f"offline bundle written to {path}")
            return 0

        from .experiments import run_experiment

        setup = _setup(cfg, out)
        tables = run_experiment(cfg, setup)
        write_run(out, cfg, tables, setup)
        for t in tables:
            for m, l2, en in t.rows:
                print(f"{t.label:12s} m={m:<4d} rel_l2={l2:.3e} rel_energy={en:.3e}")
        diverged = [d for t in tables for d in t.diverged]
        if diverged:
            print(f"diverged: {', '.join(diverged)}", file=sys.stderr)
            return 3
        return 0
    except (ConfigError, BundleError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NewtonDivergenceError as exc:
        print(f"solver diverged: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
