"""Poisson convergence sweep over H for several layer counts; prints a table and optionally writes CSV."""
import argparse
import logging

from lodfem.config import load_config
from lodfem.experiments import run, write_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--H", type=float, nargs="+", default=[2.0**-2, 2.0**-3, 2.0**-4, 2.0**-5])
    ap.add_argument("--h", type=float, default=2.0**-6)
    ap.add_argument("--k", type=int, nargs="+", default=[1, 2, 3])
    ap.add_argument("--contrast", type=float, default=100.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--full-patches", action="store_true")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = load_config("poisson", overrides=dict(
        H=args.H, h=args.h, k=args.k, full_patches=args.full_patches, threads=args.threads,
        coefficient={"type": "checkerboard", "seed": args.seed, "contrast": args.contrast},
    ))
    rows = run(cfg)
    print(f"{'H':>10} {'k':>3} {'err_L2':>11} {'eoc':>6} {'err_H1':>11} {'eoc':>6}")
    for r in sorted(rows, key=lambda r: (r.k, -r.H)):
        v = r.values
        print(f"{r.H:10.5f} {r.k:3d} {v['err_L2']:11.3e} {v['eoc_L2']:6.2f} {v['err_H1']:11.3e} {v['eoc_H1']:6.2f}")
    if args.out:
        write_csv(args.out, rows)


if __name__ == "__main__":
    main()
