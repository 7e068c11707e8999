"""ISNR and gradient-norm curves for the symmetric two-regime model.

    python3 scripts/isnr_curves.py --out isnr.csv [--samples 20000]

Two sweeps: the coefficient scale mu at d=3, and the dimension at mu=1.
"""

import argparse
import csv

import numpy as np

from msvar.diagnostics import gradient_norm_probe, isnr_probe, probe_beta


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--out", default="isnr.csv")
    p.add_argument("--samples", type=int, default=20_000)
    p.add_argument("--burn-in", type=int, default=5_000)
    p.add_argument("--dims", default="3,6,9,12,15,18")
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    rows = []
    for mu in np.round(np.arange(0.3, 1.5001, 0.1), 10):
        beta = probe_beta(mu, 3)
        rows.append(("mu", 3, mu, isnr_probe(beta, 0.5, args.samples, args.burn_in, args.seed),
                     gradient_norm_probe(beta, 0.5, args.samples, args.seed, args.burn_in)))
    for d in (int(v) for v in args.dims.split(",")):
        beta = probe_beta(1.0, d)
        rows.append(("dim", d, 1.0, isnr_probe(beta, 0.5, args.samples, args.burn_in, args.seed),
                     gradient_norm_probe(beta, 0.5, args.samples, args.seed, args.burn_in)))
    with open(args.out, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["sweep", "d", "mu", "isnr", "grad_norm"])
        wr.writerows(rows)
    for r in rows:
        print(f"{r[0]:>4} d={r[1]:<3} mu={r[2]:.1f} isnr={r[3]:.4f} grad={r[4]:.4g}")


if __name__ == "__main__":
    main()
