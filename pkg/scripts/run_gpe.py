"""Gross-Pitaevskii ground states in a harmonic trap: LOD, post-processed and fine eigenvalues."""
import argparse
import logging

from lodfem.config import load_config
from lodfem.experiments import run, write_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--H", type=float, nargs="+", default=[2.0**-2, 2.0**-3])
    ap.add_argument("--h", type=float, default=2.0**-5)
    ap.add_argument("--beta", type=float, default=1.0)
    ap.add_argument("--trap", type=float, default=50.0, help="V = trap * |x - (0.5, 0.5)|^2")
    ap.add_argument("--tol", type=float, default=1e-9)
    ap.add_argument("--out")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = load_config("gpe", overrides=dict(
        H=args.H, h=args.h, beta=args.beta, delta_tol=args.tol,
        potential={"type": "expr", "expr": f"{args.trap}*((x-0.5)**2 + (y-0.5)**2)"},
    ))
    rows = run(cfg)
    for r in rows:
        v = r.values
        print(f"H={r.H:g}: lambda_LOD={v['lambda_LOD']:.10f} lambda_post={v['lambda_post']:.10f} "
              f"lambda_h={v['lambda_h']:.10f} iterations={v['iterations']} err_H1={v['err_H1']:.3e}")
    if args.out:
        write_csv(args.out, rows)


if __name__ == "__main__":
    main()
