"""Command line driver for the experiment studies."""
from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, load_config
from .correctors import PatchSolveError, RankDeficiencyError
from .experiments import run, write_csv
from .solve import SolverError
from .sparse import EigenConvergenceError, FactorizationError

COMMANDS = {
    "poisson": "poisson",
    "bvp": "bvp",
    "evp": "evp",
    "kronig": "kronig_penney",
    "gpe": "gpe",
}

SOLVER_ERRORS = (
    SolverError, FactorizationError, EigenConvergenceError, RankDeficiencyError, PatchSolveError,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lodfem", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", help="output CSV path (stdout if omitted)")
        p.add_argument("--threads", type=int)
        p.add_argument("--rhs", choices=("plain", "corrected"))
        p.add_argument("--full-patches", dest="full_patches", action="store_true", default=None)
        p.add_argument("--H", type=float, nargs="+")
        p.add_argument("--h", type=float)
        p.add_argument("--k", type=int, nargs="+")
        p.add_argument("--m", type=float)
        p.add_argument("--n-ev", dest="n_ev", type=int)
        p.add_argument("--beta", type=float)
        p.add_argument("--delta-tol", dest="delta_tol", type=float)
        p.add_argument("--fs-mode", dest="fs_mode", choices=("boundary", "total", "none"))
        p.add_argument("--eig-method", dest="eig_method", choices=("auto", "dense", "subspace", "arpack"))
        p.add_argument("--cache-dir", dest="cache_dir")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


OVERRIDES = ("out", "threads", "rhs", "full_patches", "H", "h", "k", "m", "n_ev", "beta",
             "delta_tol", "fs_mode", "eig_method", "cache_dir")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(COMMANDS[args.command], args.config,
                          {name: getattr(args, name) for name in OVERRIDES})
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        rows = run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SOLVER_ERRORS as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 1
    write_csv(cfg.out or "/dev/stdout", rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
