"""Empirical convergence rates of the two kernel limits.

Prints err(varpi) * varpi for the scaled boundary-parameter kernels and
err(T) * T for the large-time K12 deviation from the extended Airy kernel.
Roughly constant products mean first-order convergence, which fixes how large
varpi or T must be before a given absolute threshold is reachable.
"""
import argparse

from hsairy import verify


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--varpi", default="2,4,8,16,32")
    ap.add_argument("--T", default="5,10,20,40,80")
    ap.add_argument("--threads", type=int, default=4)
    args = ap.parse_args()
    varpis = [float(v) for v in args.varpi.split(",")]
    Ts = [float(v) for v in args.T.split(",")]

    rep = verify.study_varpi_limit(varpis, threads=args.threads)
    print("point                      " + "".join(f"{'w=' + format(w, 'g'):>12s}" for w in varpis))
    for p in verify.DEFAULT_LIMIT_POINTS:
        rows = [e for e in rep.sweep if e["param"]["point"] == list(p)]
        print(f"{str(p):26s} " + "".join(f"{e['error'] * e['param']['varpi']:12.4e}" for e in rows))

    rep = verify.study_T_limit(Ts, threads=args.threads)
    print("\npoint                      " + "".join(f"{'T=' + format(T, 'g'):>12s}" for T in Ts))
    for p in verify.DEFAULT_T_POINTS:
        rows = [e for e in rep.sweep if e["param"]["point"] == list(p)]
        print(f"{str(p):26s} " + "".join(f"{e['error'] * e['param']['T']:12.4e}" for e in rows))


if __name__ == "__main__":
    main()
