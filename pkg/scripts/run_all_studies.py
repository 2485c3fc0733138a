"""Run every study with its default configuration and write JSON/CSV reports.

    python3 scripts/run_all_studies.py --out reports --threads 4 --seed 1
"""
import argparse
import json
from pathlib import Path

from hsairy import verify


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="reports")
    ap.add_argument("--threads", type=int, default=4)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--samples", type=int, default=10_000)
    args = ap.parse_args()

    runs = {
        "kernel_match": lambda: verify.study_kernel_match([2.0, 5.0], verify.DEFAULT_MATCH_POINTS, threads=args.threads),
        "varpi_limit": lambda: verify.study_varpi_limit([2.0, 4.0, 8.0, 16.0], threads=args.threads),
        "T_limit": lambda: verify.study_T_limit([5.0, 10.0, 20.0, 40.0], threshold=1e-3, threads=args.threads),
        "pinning_convergence": lambda: verify.study_pinning_convergence(
            [2.0, 4.0, 8.0], n_samples=args.samples, seed=args.seed, threads=args.threads),
        "gse_edge": lambda: verify.study_gse_edge(100, args.samples, seed=args.seed, threads=args.threads),
        "origin_moments_n1": lambda: verify.study_origin_moments([0.2, 0.1, 0.05], order=1, threads=args.threads),
        "origin_moments_n2": lambda: verify.study_origin_moments([0.2, 0.1, 0.05], order=2, threads=args.threads),
    }
    out = Path(args.out)
    summary = {}
    for stem, run in runs.items():
        report = run()
        report.write(out, stem)
        summary[stem] = {"verdict": "pass" if report.verdict else "fail", "runtime_ms": round(report.runtime_ms)}
        print(f"{stem:22s} {summary[stem]['verdict']:4s} {report.runtime_ms / 1e3:7.1f} s")
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")


if __name__ == "__main__":
    main()
