"""Kronig-Penney eigenvalue study on [0,2]x[0,3]: coarse FEM, LOD and fine errors with timings."""
import argparse
import logging

from lodfem.config import load_config
from lodfem.experiments import run, write_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--H", type=float, nargs="+", default=[2.0**-3])
    ap.add_argument("--h", type=float, default=2.0**-6)
    ap.add_argument("--k", type=int, nargs="+", default=[1])
    ap.add_argument("--gamma", type=float, default=2e4)
    ap.add_argument("--wave-k", type=float, default=8)
    ap.add_argument("--n-ev", type=int, default=20)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--cache-dir")
    ap.add_argument("--out")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = load_config("kronig_penney", overrides=dict(
        H=args.H, h=args.h, k=args.k, n_ev=args.n_ev, threads=args.threads, cache_dir=args.cache_dir,
        potential={"type": "kronig_penney", "gamma": args.gamma, "wave_k": args.wave_k},
    ))
    rows = run(cfg)
    for r in rows:
        v = r.values
        print(f"H={r.H:g} k={r.k}: err_coarse={v['err_coarse']:.3e} err_LOD={v['err_LOD']:.3e} "
              f"t_full={v['t_full']:.2f}s t_corr={v['t_corr']:.2f}s t_LOD={v['t_LOD']:.3f}s")
    if args.out:
        write_csv(args.out, rows)


if __name__ == "__main__":
    main()
