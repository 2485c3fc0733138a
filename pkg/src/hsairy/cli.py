"""Command-line front end.

Grammar::

    hsairy kernel  eval|match|limit-varpi|limit-T  [flags]
    hsairy sample  bm|bessel|pinned|avoiding|gse    [flags]
    hsairy moments gse|origin                       [flags]
    hsairy study   kernel-match|varpi-limit|T-limit|pinning|gse-edge|origin-moments [flags]

Numeric lists are comma separated.  ``--config FILE`` reads ``key=value``
lines (keys spelled like the long flags); flags on the command line win.
Exit codes: 0 success or passing study, 1 failing study, 2 usage error,
3 numeric or budget error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import ensembles as ens
from . import verify
from .errors import HsAiryError, NumericError, RejectionBudgetExceeded, UsageError
from .kernels import k_airy, make_family
from .pfaffian import IntervalSpec, MomentRequest, gse_factorial_moment, origin_factorial_moment
from .quad import DEFAULT_QUAD, QuadConfig

__all__ = ["RunConfig", "build_parser", "dispatch", "main"]

OUT_ENV = "HSAIRY_OUT"

SAMPLE_CSV_HELP = """\
CSV output: a first line '# config: {...}' echoing the effective configuration.
Path samplers then write columns sample,curve,<one column per grid time>;
the gse sampler writes sample,index,raw,scaled with atoms in descending order.
Study CSV files hold param,metric,value,target,error rows."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n\n{self.format_usage()}")


@dataclass
class RunConfig:
    command: str
    params: dict = field(default_factory=dict)
    seed: int | None = None
    out_dir: str = "."
    quad_tol: float = DEFAULT_QUAD.tol
    grid: int | None = None

    def as_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# parsing helpers


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}") from exc


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {text!r}") from exc


def _intervals(text: str) -> list[tuple[float, float]]:
    """'a:b,c:d' with 'inf' allowed as an upper end."""
    out = []
    for part in text.split(","):
        lo, sep, hi = part.partition(":")
        if not sep:
            raise argparse.ArgumentTypeError(f"intervals look like lo:hi, got {part!r}")
        out.append((float(lo), float(hi)))
    return out


def _points(text: str):
    """'default' or 's,x,t,y;s,x,t,y;...'."""
    if text == "default":
        return "default"
    pts = []
    for part in text.split(";"):
        vals = _floats(part)
        if len(vals) != 4:
            raise argparse.ArgumentTypeError(f"points need four coordinates s,x,t,y, got {part!r}")
        pts.append(tuple(vals))
    return pts


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _common(p: argparse.ArgumentParser, seeded: bool = False):
    p.add_argument("--config", help="key=value file; command-line flags take precedence")
    p.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or .)")
    p.add_argument("--threads", type=int, default=1, help="worker cap; results do not depend on it")
    p.add_argument("--tol", type=float, default=DEFAULT_QUAD.tol, help="contour truncation tolerance")
    p.add_argument("--nodes-per-ray", type=int, default=DEFAULT_QUAD.nodes_per_ray)
    if seeded:
        p.add_argument("--seed", type=_seed, default=None, help="64-bit seed; generated and recorded if absent")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="hsairy",
        description="Kernels, Pfaffian moments, samplers and convergence studies for half-space Airy line ensembles.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=SAMPLE_CSV_HELP,
    )
    groups = parser.add_subparsers(dest="group", required=True, parser_class=_Parser)

    kernel = groups.add_parser("kernel", help="kernel evaluation and kernel-level limit checks")
    kcmd = kernel.add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = kcmd.add_parser("eval", help="one 2x2 block of a matrix kernel (families: gse, airy, hs_inf, varpi, "
                                     "hs_varpi, origin)")
    p.add_argument("--family", required=True, choices=["gse", "airy", "hs_inf", "varpi", "hs_varpi", "origin"])
    for name in ("s", "t"):
        p.add_argument(f"--{name}", type=float, default=0.0)
    for name in ("x", "y"):
        p.add_argument(f"--{name}", type=float, required=True)
    p.add_argument("--varpi", type=float, default=None)
    p.add_argument("--tn", type=float, default=None)
    _common(p)
    p = kcmd.add_parser("match", help="boundary-parameter kernel against its alternative contour form")
    p.add_argument("--varpi", type=_floats, default=[2.0, 5.0])
    p.add_argument("--points", type=_points, default="default")
    p.add_argument("--match-tol", type=float, default=1e-6)
    _common(p)
    p = kcmd.add_parser("limit-varpi", help="scaled boundary-parameter kernels approaching the pinned kernel")
    p.add_argument("--varpi", type=_floats, default=[2.0, 4.0, 8.0, 16.0])
    p.add_argument("--points", type=_points, default="default")
    p.add_argument("--threshold", type=float, default=1e-3)
    _common(p)
    p = kcmd.add_parser("limit-T", help="pinned kernel far from the origin approaching the extended Airy kernel")
    p.add_argument("--T", type=_floats, default=[5.0, 10.0, 20.0, 40.0])
    p.add_argument("--points", type=_points, default="default")
    p.add_argument("--threshold", type=float, default=None)
    _common(p)

    sample = groups.add_parser("sample", help="exact Monte Carlo samplers (CSV output)")
    scmd = sample.add_subparsers(dest="action", required=True, parser_class=_Parser)
    for name, helptext in [
        ("bm", "reverse Brownian motion with drift"),
        ("bessel", "3D Bessel bridge from 0 to z"),
        ("pinned", "pairwise pinned ensemble"),
        ("avoiding", "non-intersecting reverse Brownian motions with drifts"),
    ]:
        p = scmd.add_parser(name, help=helptext)
        p.add_argument("--b", type=float, default=1.0)
        p.add_argument("--grid", type=int, default=256, help="number of time steps")
        p.add_argument("--n", type=int, default=1, help="number of samples")
        p.add_argument("--output", default=None, help="CSV path (default stdout)")
        if name == "bessel":
            p.add_argument("--z", type=float, required=True)
        else:
            p.add_argument("--y", type=_floats, required=True)
        if name in ("bm", "avoiding"):
            p.add_argument("--mu", type=_floats, default=None)
        if name in ("pinned", "avoiding"):
            p.add_argument("--floor", type=float, default=-math.inf, help="constant floor level")
            p.add_argument("--max-rejects", type=int, default=None)
        _common(p, seeded=True)
    p = scmd.add_parser("gse", help="GSE spectra with edge rescaling")
    p.add_argument("--N", type=int, required=True, help="matrix size")
    p.add_argument("--n", type=int, default=1, help="number of spectra")
    p.add_argument("--output", default=None)
    _common(p, seeded=True)

    moments = groups.add_parser("moments", help="factorial moments by Pfaffian quadrature")
    mcmd = moments.add_subparsers(dest="action", required=True, parser_class=_Parser)
    for name, helptext in [("gse", "doubled-count factorial moments of the GSE edge process"),
                           ("origin", "factorial moments of the pinned kernel near the origin")]:
        p = mcmd.add_parser(name, help=helptext)
        p.add_argument("--intervals", type=_intervals, required=True, help="lo:hi,lo:hi")
        p.add_argument("--orders", type=_ints, required=True)
        p.add_argument("--nodes", type=int, default=24)
        if name == "origin":
            p.add_argument("--tn", type=float, required=True)
        _common(p)

    study = groups.add_parser("study", help="convergence studies with verdicts (JSON and CSV reports)")
    stcmd = study.add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = stcmd.add_parser("kernel-match", help="contour-deformation identity between the two boundary kernels")
    p.add_argument("--varpi", type=_floats, default=[2.0, 5.0])
    p.add_argument("--points", type=_points, default="default")
    p.add_argument("--match-tol", type=float, default=1e-6)
    _common(p)
    p = stcmd.add_parser("varpi-limit", help="boundary parameter to infinity")
    p.add_argument("--varpi", type=_floats, default=[2.0, 4.0, 8.0, 16.0])
    p.add_argument("--points", type=_points, default="default")
    p.add_argument("--threshold", type=float, default=1e-3)
    _common(p)
    p = stcmd.add_parser("T-limit", help="large-time Airy limit")
    p.add_argument("--T", type=_floats, default=[5.0, 10.0, 20.0, 40.0])
    p.add_argument("--points", type=_points, default="default")
    p.add_argument("--threshold", type=float, default=None)
    _common(p)
    p = stcmd.add_parser("pinning", help="avoiding pairs with opposing drifts approaching the pinned pair")
    p.add_argument("--varpi", type=_floats, default=[2.0, 4.0, 8.0])
    p.add_argument("--b", type=float, default=1.0)
    p.add_argument("--y", type=_floats, default=[1.0, 0.0])
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--grid", type=int, default=256)
    p.add_argument("--gap-threshold", type=float, default=0.5)
    _common(p, seeded=True)
    p = stcmd.add_parser("gse-edge", help="Monte Carlo GSE edge counts against the limit kernel")
    p.add_argument("--N", type=int, default=100)
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--regions", type=_intervals, default=list(verify.DEFAULT_GSE_REGIONS))
    _common(p, seeded=True)
    p = stcmd.add_parser("origin-moments", help="factorial moments near the origin against doubled GSE moments")
    p.add_argument("--tn", type=_floats, default=[0.2, 0.1, 0.05])
    p.add_argument("--interval", type=_intervals, default=[(-1.0, 1.0)])
    p.add_argument("--order", type=int, default=1)
    p.add_argument("--nodes", type=int, default=24)
    p.add_argument("--relative", type=float, default=0.05)
    _common(p)
    return parser


def _config_flags(path: str) -> list[str]:
    flags = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        flags += [f"--{key.strip().replace('_', '-')}", value.strip()]
    return flags


def parse(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        # file values go first so that explicit flags override them
        argv = argv[:2] + _config_flags(known.config) + argv[2:]
    return parser.parse_args(argv)


# ---------------------------------------------------------------------------
# command bodies


def _quad(ns) -> QuadConfig:
    return QuadConfig(tol=ns.tol, nodes_per_ray=ns.nodes_per_ray, max_nodes=max(DEFAULT_QUAD.max_nodes, 2 * ns.nodes_per_ray))


def _out_dir(ns) -> Path:
    return Path(ns.out or os.environ.get(OUT_ENV) or ".")


def _params(ns) -> dict:
    # threads is left out: outputs do not depend on it
    skip = {"group", "action", "config", "out", "seed", "tol", "output", "threads"}
    out = {}
    for k, v in vars(ns).items():
        if k in skip:
            continue
        if isinstance(v, float) and not math.isfinite(v):
            v = repr(v)
        out[k] = v
    return out


def _run_config(ns, seed=None) -> RunConfig:
    return RunConfig(f"{ns.group} {ns.action}", _params(ns), seed, str(_out_dir(ns)), ns.tol, getattr(ns, "grid", None))


def _emit(text: str, path: str | None):
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _kernel_eval(ns) -> int:
    quad = _quad(ns)
    if ns.family == "airy":
        block = {"k12": k_airy(ns.s, ns.x, ns.t, ns.y, quad)}
    else:
        block = make_family(ns.family, ns.varpi, ns.tn, quad)(ns.s, ns.x, ns.t, ns.y).as_dict()
    print(json.dumps({"config": _run_config(ns).as_dict(), "block": block}, indent=2))
    return 0


def _points_or(points, default):
    return default if points == "default" else points


def _report(ns, report: verify.StudyReport) -> int:
    report.config["run"] = _run_config(ns, report.seed).as_dict()
    jpath, cpath = report.write(_out_dir(ns), report.study)
    summary = {"study": report.study, "verdict": "pass" if report.verdict else "fail",
               "runtime_ms": round(report.runtime_ms, 1), "json": str(jpath), "csv": str(cpath)}
    print(json.dumps(summary))
    return 0 if report.verdict else 1


def _fresh_seed() -> int:
    return int(np.random.SeedSequence().entropy) % 2**64


def _study(ns) -> int:
    quad = _quad(ns)
    name = ns.action
    if (ns.group, name) in (("kernel", "match"), ("study", "kernel-match")):
        r = verify.study_kernel_match(ns.varpi, _points_or(ns.points, verify.DEFAULT_MATCH_POINTS), ns.match_tol,
                                      quad, ns.threads)
    elif (ns.group, name) in (("kernel", "limit-varpi"), ("study", "varpi-limit")):
        r = verify.study_varpi_limit(ns.varpi, _points_or(ns.points, verify.DEFAULT_LIMIT_POINTS), ns.threshold,
                                     quad, ns.threads)
    elif (ns.group, name) in (("kernel", "limit-T"), ("study", "T-limit")):
        r = verify.study_T_limit(ns.T, _points_or(ns.points, verify.DEFAULT_T_POINTS), ns.threshold,
                                 quad=quad, threads=ns.threads)
    elif name == "pinning":
        seed = _fresh_seed() if ns.seed is None else ns.seed
        r = verify.study_pinning_convergence(ns.varpi, ns.b, ns.y, ns.n, seed, ns.grid, ns.gap_threshold, ns.threads)
    elif name == "gse-edge":
        seed = _fresh_seed() if ns.seed is None else ns.seed
        r = verify.study_gse_edge(ns.N, ns.n, ns.regions, seed, ns.threads, quad)
    elif name == "origin-moments":
        if len(ns.interval) != 1:
            raise UsageError("origin-moments takes exactly one interval")
        r = verify.study_origin_moments(ns.tn, ns.interval[0], ns.order, None, ns.nodes, ns.relative, quad, ns.threads)
    else:
        raise UsageError(f"unknown study {name!r}")
    return _report(ns, r)


def _paths_csv(header: dict, sample: ens.EnsembleSample) -> str:
    buf = io.StringIO()
    buf.write("# config: " + json.dumps(header, sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sample", "curve"] + [repr(float(t)) for t in sample.grid.times])
    for i, curves in enumerate(sample.paths):
        for j, row in enumerate(curves):
            w.writerow([i, j] + [repr(float(v)) for v in row])
    return buf.getvalue()


def _sample(ns) -> int:
    seed = _fresh_seed() if ns.seed is None else ns.seed
    header = _run_config(ns, seed).as_dict()
    if ns.action == "gse":
        spec = ens.run_chunked(ens.sample_gse_spectrum, ns.n, seed, ns.threads, n=ns.N)
        buf = io.StringIO()
        buf.write("# config: " + json.dumps(header, sort_keys=True) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sample", "index", "raw", "scaled"])
        for i in range(spec.n_samples):
            for j in range(spec.n):
                w.writerow([i, j, repr(float(spec.raw[i, j])), repr(float(spec.scaled[i, j]))])
        _emit(buf.getvalue(), ns.output)
        return 0
    grid = ens.TimeGrid.uniform(ns.b, ns.grid)
    if ns.action == "bm":
        if len(ns.y) != 1:
            raise UsageError("bm takes a single terminal value")
        mu = ns.mu or [0.0]

        def bm(rng, n, seed=None):
            p = ens.sample_reverse_bm(ns.b, ns.y[0], mu[0], grid, rng, size=n)
            return ens.EnsembleSample(p[:, None, :], grid, np.array(ns.y), np.array(mu), seed, 0, n)

        sample = ens.run_chunked(bm, ns.n, seed, ns.threads)
    elif ns.action == "bessel":
        def bessel(rng, n, seed=None):
            p = ens.sample_bessel_bridge(ns.b, ns.z, grid, rng, size=n)
            return ens.EnsembleSample(p[:, None, :], grid, np.array([ns.z]), np.zeros(1), seed, 0, n)

        sample = ens.run_chunked(bessel, ns.n, seed, ns.threads)
    elif ns.action == "pinned":
        sample = ens.run_chunked(ens.sample_pinned_ensemble, ns.n, seed, ns.threads, b=ns.b, y_vec=ns.y, grid=grid,
                                 floor=ns.floor, max_rejects=ns.max_rejects)
    else:
        mu = ns.mu or [0.0] * len(ns.y)
        sample = ens.run_chunked(ens.sample_avoiding_ensemble, ns.n, seed, ns.threads, b=ns.b, y_vec=ns.y,
                                 mu_vec=mu, grid=grid, floor=ns.floor, max_rejects=ns.max_rejects)
    header["rejections"] = sample.rejections
    header["acceptance"] = sample.acceptance
    _emit(_paths_csv(header, sample), ns.output)
    return 0


def _moments(ns) -> int:
    quad = _quad(ns)
    req = MomentRequest(tuple(IntervalSpec(lo, hi) for lo, hi in ns.intervals), tuple(ns.orders), ns.nodes, ns.threads)
    if ns.action == "gse":
        value = gse_factorial_moment(req, quad)
    else:
        value = origin_factorial_moment(ns.tn, req, quad)
    print(json.dumps({"config": _run_config(ns).as_dict(), "moment": value}, indent=2))
    return 0


def dispatch(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        ns = parse(argv)
        if ns.group == "kernel" and ns.action == "eval":
            return _kernel_eval(ns)
        if ns.group in ("kernel", "study"):
            return _study(ns)
        if ns.group == "sample":
            return _sample(ns)
        return _moments(ns)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        if "usage:" not in str(exc):
            print(build_parser().format_usage(), file=sys.stderr)
        return exc.exit_code
    except RejectionBudgetExceeded as exc:
        print(f"numeric error in {' '.join(argv[:2])}: {exc} (acceptance estimate {exc.acceptance_estimate})",
              file=sys.stderr)
        return exc.exit_code
    except (NumericError, HsAiryError) as exc:
        print(f"numeric error in {' '.join(argv[:2])} with {argv[2:]}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch())
