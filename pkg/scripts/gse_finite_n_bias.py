"""Finite-N bias of the scaled GSE counts against the limit kernel.

Runs the edge study at several matrix sizes and prints mean - target per
region together with N^(1/3) (mean - target).  A bias decaying like N^(-1/3)
keeps the second column roughly constant.
"""
import argparse

from hsairy import verify


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--N", default="50,100,200,400")
    ap.add_argument("--samples", type=int, default=20_000)
    ap.add_argument("--seed", type=int, default=3)
    ap.add_argument("--threads", type=int, default=4)
    args = ap.parse_args()
    for n in (int(v) for v in args.N.split(",")):
        rep = verify.study_gse_edge(n, args.samples, seed=args.seed, threads=args.threads)
        for e in rep.sweep:
            bias = e["value"] - e["target"]
            lo, hi = e["param"]["region"]
            print(f"N={n:4d} [{lo:g},{hi:g})  bias {bias:+.4f} +- {e['stderr']:.4f}   scaled {bias * n ** (1 / 3):+.4f}")


if __name__ == "__main__":
    main()
