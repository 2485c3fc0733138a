"""Quantitative studies of the kernel limits, sampler convergence and moment
convergence, each ending in a pass/fail verdict.

Every study returns a :class:`StudyReport` whose ``config`` is JSON-safe and
reproduces the report when passed back through :func:`run_study`.  Verdicts
are recomputed from the recorded sweep by the functions in ``VERDICTS``.
"""
from __future__ import annotations

import csv
import io
import json
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.stats import ks_2samp

from .ensembles import TimeGrid, count_in, run_chunked, sample_avoiding_ensemble, sample_gse_spectrum, sample_pinned_ensemble
from .errors import DegenerateBranch, DimensionCap, InvalidBoundaryParam, InvalidTime, UsageError
from .kernels import GSEFamily, k22_vertical, k_airy, k_hs_inf, k_hs_varpi, k_varpi
from .pfaffian import IntervalSpec, MomentRequest, _check_disjoint, expected_count, gse_factorial_moment, origin_factorial_moment
from .quad import DEFAULT_QUAD, QuadConfig

__all__ = [
    "MCEstimate",
    "StudyReport",
    "DEFAULT_LIMIT_POINTS",
    "DEFAULT_MATCH_POINTS",
    "DEFAULT_T_POINTS",
    "DEFAULT_GSE_REGIONS",
    "ks_critical",
    "study_kernel_match",
    "study_varpi_limit",
    "study_T_limit",
    "study_pinning_convergence",
    "study_gse_edge",
    "study_origin_moments",
    "STUDIES",
    "VERDICTS",
    "run_study",
]

Point = tuple[float, float, float, float]  # (s, x, t, y)

DEFAULT_MATCH_POINTS: list[Point] = [
    (0.5, 0.3, 1.0, -0.2),
    (1.0, 0.0, 1.5, 1.0),
    (0.3, -1.0, 0.8, 0.5),
    (1.2, 1.0, 0.4, -0.5),
    (2.0, 0.5, 1.0, 0.0),
    (0.7, -0.5, 0.7, 0.6),
    (1.5, -1.0, 2.0, -2.0),
    (0.4, 1.5, 1.1, 0.2),
    (1.0, -0.3, 0.2, 0.9),
    (0.6, 2.0, 1.8, -1.0),
]
DEFAULT_LIMIT_POINTS: list[Point] = [
    (0.5, -1.0, 1.0, 0.0),
    (1.0, 0.0, 1.0, 0.0),
    (2.0, 1.0, 0.5, -1.0),
    (1.0, 1.0, 2.0, 0.0),
    (0.5, 0.0, 0.5, 1.0),
    (2.0, -1.0, 1.0, 1.0),
]
DEFAULT_T_POINTS: list[Point] = [
    (0.0, 0.0, 1.0, 0.5),
    (0.0, -1.0, 0.5, 0.0),
    (1.0, 0.5, 0.0, -0.5),
    (0.5, 1.0, 1.5, 1.0),
]
DEFAULT_GSE_REGIONS: list[tuple[float, float]] = [(0.0, math.inf), (-2.0, 0.0), (-4.0, -2.0)]

KS_SIGMA3 = 1.82  # asymptotic two-sample KS coefficient at the 3 sigma level


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    stderr: float
    n_samples: int

    @classmethod
    def from_samples(cls, values) -> "MCEstimate":
        v = np.asarray(values, dtype=float).ravel()
        if v.size < 2:
            raise UsageError("a Monte Carlo estimate needs at least two samples")
        return cls(float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size)), int(v.size))


@dataclass
class StudyReport:
    study: str
    config: dict
    sweep: list[dict]
    tolerances: dict
    verdict: bool
    runtime_ms: float
    seed: int | None = None
    warnings: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, default=_json_default, allow_nan=True)

    def metrics(self) -> list[dict]:
        """The sweep without timing, for reproducibility comparisons."""
        return json.loads(json.dumps(self.sweep, default=_json_default))

    def csv_rows(self) -> list[tuple]:
        """Flat (param, metric, value, target, error) rows."""
        rows = []
        for entry in self.sweep:
            param = _param_label(entry["param"])
            target = entry.get("target")
            for key, value in entry.items():
                if key in ("param", "target") or not isinstance(value, (int, float, bool)):
                    continue
                err = entry.get("error") if key == "value" else None
                rows.append((param, key, value, target, err))
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["param", "metric", "value", "target", "error"])
        for row in self.csv_rows():
            w.writerow(["" if v is None else (repr(float(v)) if isinstance(v, float) else v) for v in row])
        return buf.getvalue()

    def write(self, out_dir: str | Path, stem: str | None = None) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = stem or self.study
        jpath, cpath = out / f"{stem}.json", out / f"{stem}.csv"
        jpath.write_text(self.to_json() + "\n")
        cpath.write_text(self.to_csv())
        return jpath, cpath

    def recompute_verdict(self) -> bool:
        return VERDICTS[self.study](self.sweep, self.tolerances)


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _param_label(param) -> str:
    if isinstance(param, dict):
        return ";".join(f"{k}={_param_label(v)}" for k, v in param.items())
    if isinstance(param, (list, tuple)):
        return "(" + ",".join(_param_label(v) for v in param) + ")"
    return repr(param) if isinstance(param, float) else str(param)


def _quad_echo(quad: QuadConfig) -> dict:
    return asdict(quad)


def _parallel_map(fn: Callable, items: Sequence, threads: int) -> list:
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _strictly_ascending(values, what: str):
    if any(b <= a for a, b in zip(values, values[1:])):
        raise UsageError(f"{what} must be strictly ascending, got {list(values)}")


def _strictly_decreasing(values) -> bool:
    return all(b < a for a, b in zip(values, values[1:]))


def ks_critical(n: int, m: int) -> float:
    """Two-sample KS distance that noise exceeds with probability about 0.3%."""
    return KS_SIGMA3 * math.sqrt((n + m) / (n * m))


def _finish(name, config, sweep, tolerances, started, seed=None, notes=()) -> StudyReport:
    verdict = VERDICTS[name](sweep, tolerances)
    return StudyReport(name, config, sweep, tolerances, verdict, (time.perf_counter() - started) * 1e3, seed, list(notes))


# ---------------------------------------------------------------------------
# kernel studies


def _relative_gap(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b))))


def _check_match_point(varpi: float, p: Point):
    s, x, t, y = p
    if not varpi > 1:
        raise InvalidBoundaryParam(f"kernel match needs varpi > 1, got {varpi}")
    if not (s > 0 and t > 0):
        raise InvalidTime(f"kernel match needs s, t > 0, got {p}")
    # coincident points are fine: both kernels have K22 = 0 there by antisymmetry
    if x - s * s == y - t * t and (s, x) != (t, y):
        raise DegenerateBranch(f"point {p} lies on the branch line x - s^2 = y - t^2")


def _verdict_kernel_match(sweep, tol) -> bool:
    return all(e["error"] < tol["tol"] for e in sweep) and all(
        e.get("refinement_shift", 0.0) < tol["tol"] for e in sweep
    )


def study_kernel_match(varpi_list: Sequence[float], point_list: Sequence[Point], tol: float = 1e-6,
                       quad: QuadConfig = DEFAULT_QUAD, threads: int = 1) -> StudyReport:
    """Entrywise gap between the boundary-parameter kernel and its alternative form.

    The gap is |a - b| / max(1, |b|) per entry.  The worst pair is re-evaluated
    at doubled resolution and the shift is part of the verdict.
    """
    started = time.perf_counter()
    config = {"varpi_list": list(map(float, varpi_list)), "point_list": [list(map(float, p)) for p in point_list],
              "tol": tol, "quad": _quad_echo(quad), "threads": threads}
    jobs = [(float(w), tuple(map(float, p))) for w in varpi_list for p in point_list]
    for w, p in jobs:
        _check_match_point(w, p)
    notes = []
    if not jobs:
        notes.append("empty point list: vacuous pass")
        warnings.warn(notes[-1])

    def one(job, q=quad):
        w, p = job
        a = k_hs_varpi(w, *p, quad=q).as_matrix()
        b = k_varpi(w, *p, quad=q).as_matrix()
        return a, b

    results = _parallel_map(one, jobs, threads)
    sweep = []
    for (w, p), (a, b) in zip(jobs, results):
        sweep.append({"param": {"varpi": w, "point": list(p)}, "error": _relative_gap(a, b),
                      "hs_varpi": a.ravel().tolist(), "varpi": b.ravel().tolist()})
    if sweep:
        worst = max(range(len(sweep)), key=lambda i: sweep[i]["error"])
        a2, b2 = one(jobs[worst], quad.refined())
        a, b = results[worst]
        sweep[worst]["refinement_shift"] = max(_relative_gap(a2, a), _relative_gap(b2, b))
    return _finish("kernel_match", config, sweep, {"tol": tol}, started, notes=notes)


def _limit_errors(varpi: float, p: Point, ref, quad: QuadConfig) -> dict:
    k = k_varpi(varpi, *p, quad=quad)
    scale = 4.0 * varpi * varpi
    return {
        "k11": abs(k.k11 / scale - ref.k11),
        "k12": abs(k.k12 - ref.k12),
        "k21": abs(k.k21 - ref.k21),
        "k22": abs(scale * k.k22 - ref.k22),
    }


def _verdict_varpi_limit(sweep, tol) -> bool:
    by_point: dict[str, list] = {}
    for e in sweep:
        by_point.setdefault(_param_label(e["param"]["point"]), []).append(e)
    for rows in by_point.values():
        rows.sort(key=lambda e: e["param"]["varpi"])
        errs = [e["error"] for e in rows]
        if not _strictly_decreasing(errs) or not errs[-1] < tol["threshold"]:
            return False
        if rows[-1].get("refinement_shift", 0.0) >= tol["threshold"] / 10:
            return False
    return True


def study_varpi_limit(varpi_list: Sequence[float], point_list: Sequence[Point] = DEFAULT_LIMIT_POINTS,
                      threshold: float = 1e-3, quad: QuadConfig = DEFAULT_QUAD, threads: int = 1) -> StudyReport:
    """Scaled deviations (K11/4w^2, K12, K21, 4w^2 K22) of K^varpi from K^{hs;inf}."""
    started = time.perf_counter()
    varpis = [float(w) for w in varpi_list]
    if len(varpis) < 3:
        raise UsageError("the varpi sweep needs at least three values to judge monotonicity")
    _strictly_ascending(varpis, "varpi list")
    points = [tuple(map(float, p)) for p in point_list]
    for p in points:
        if not (p[0] > 0 and p[2] > 0):
            raise InvalidTime(f"K^varpi needs s, t > 0, got point {p}")
    for w in varpis:
        if not w > 1:
            raise InvalidBoundaryParam(f"K^varpi needs varpi > 1, got {w}")
    config = {"varpi_list": varpis, "point_list": [list(p) for p in points], "threshold": threshold,
              "quad": _quad_echo(quad), "threads": threads}

    def one(p):
        ref = k_hs_inf(*p, quad=quad)
        rows = []
        for w in varpis:
            errs = _limit_errors(w, p, ref, quad)
            rows.append({"param": {"varpi": w, "point": list(p)}, "error": max(errs.values()), **errs})
        fine = _limit_errors(varpis[-1], p, k_hs_inf(*p, quad=quad.refined()), quad.refined())
        rows[-1]["refinement_shift"] = abs(max(fine.values()) - rows[-1]["error"])
        return rows

    sweep = [row for rows in _parallel_map(one, points, threads) for row in rows]
    return _finish("varpi_limit", config, sweep, {"threshold": threshold}, started)


def _loglog_slope(ts, vals) -> float:
    return float(np.polyfit(np.log(ts), np.log(np.abs(vals)), 1)[0])


def _verdict_T_limit(sweep, tol) -> bool:
    by_point: dict[str, list] = {}
    for e in sweep:
        by_point.setdefault(_param_label(e["param"]["point"]), []).append(e)
    lo, hi = tol["slope_range"]
    for rows in by_point.values():
        rows.sort(key=lambda e: e["param"]["T"])
        if not _strictly_decreasing([e["error"] for e in rows]):
            return False
        if not _strictly_decreasing([abs(e["k22"]) for e in rows]):
            return False
        if len(rows) >= 2:
            slope = _loglog_slope([e["param"]["T"] for e in rows], [e["k11"] for e in rows])
            if not lo <= slope <= hi:
                return False
        if tol.get("threshold") is not None and not rows[-1]["error"] < tol["threshold"]:
            return False
    return True


def study_T_limit(T_list: Sequence[float], point_list: Sequence[Point] = DEFAULT_T_POINTS,
                  threshold: float | None = None, slope_range: tuple[float, float] = (-3.5, -2.5),
                  quad: QuadConfig = DEFAULT_QUAD, threads: int = 1) -> StudyReport:
    """K^{hs;inf}(T + s, x; T + t, y) against the extended Airy kernel as T grows.

    Records |K12 - K^Airy|, K11 (whose log-log slope is judged) and K22 from
    its vertical-contour form.  ``threshold`` optionally bounds the final K12
    error.
    """
    started = time.perf_counter()
    Ts = [float(T) for T in T_list]
    _strictly_ascending(Ts, "T list")
    points = [tuple(map(float, p)) for p in point_list]
    config = {"T_list": Ts, "point_list": [list(p) for p in points], "threshold": threshold,
              "slope_range": list(slope_range), "quad": _quad_echo(quad), "threads": threads}

    def one(p):
        s, x, t, y = p
        airy = k_airy(s, x, t, y, quad)
        rows = []
        for T in Ts:
            k = k_hs_inf(T + s, x, T + t, y, quad)
            rows.append({"param": {"T": T, "point": list(p)}, "error": abs(k.k12 - airy), "k12": k.k12,
                         "airy": airy, "k11": k.k11, "k22": k22_vertical(T, s, x, t, y, quad)})
        fine = k_hs_inf(Ts[-1] + s, x, Ts[-1] + t, y, quad.refined())
        rows[-1]["refinement_shift"] = abs(fine.k12 - rows[-1]["k12"])
        return rows

    sweep = [row for rows in _parallel_map(one, points, threads) for row in rows]
    tolerances = {"threshold": threshold, "slope_range": list(slope_range)}
    return _finish("T_limit", config, sweep, tolerances, started)


# ---------------------------------------------------------------------------
# Monte Carlo studies


def _verdict_pinning(sweep, tol) -> bool:
    rows = sorted(sweep, key=lambda e: e["param"]["varpi"])
    medians = [e["median_gap"] for e in rows]
    if not _strictly_decreasing(medians) or not medians[-1] < tol["gap_threshold"]:
        return False
    if any(e["ks_sum"] > e["ks_critical"] for e in rows):
        return False
    return all(b["ks_gap"] <= a["ks_gap"] + b["ks_critical"] for a, b in zip(rows, rows[1:]))


def study_pinning_convergence(varpi_list: Sequence[float], b: float = 1.0, y_pair: Sequence[float] = (1.0, 0.0),
                              n_samples: int = 10_000, seed: int = 0, grid_steps: int = 256,
                              gap_threshold: float = 0.5, threads: int = 1) -> StudyReport:
    """Avoiding pairs with drifts (-w, w) against the pinned pair.

    Per w: the median time-0 gap, and two-sample KS distances at t = b/2 of the
    half-sum (B1 + B2)/sqrt 2 and of the gap B1 - B2 against the pinned pair.
    """
    started = time.perf_counter()
    if n_samples < 2:
        raise UsageError("n_samples must be at least 2")
    varpis = [float(w) for w in varpi_list]
    _strictly_ascending(varpis, "varpi list")
    y = [float(v) for v in y_pair]
    if len(y) != 2 or not y[0] > y[1]:
        raise InvalidBoundaryParam(f"y_pair must be two strictly descending values, got {y}")
    config = {"varpi_list": varpis, "b": b, "y_pair": y, "n_samples": n_samples, "seed": seed,
              "grid_steps": grid_steps, "gap_threshold": gap_threshold, "threads": threads}
    grid = TimeGrid.uniform(b, grid_steps)
    mid = grid.index_of(b / 2)
    pinned = run_chunked(sample_pinned_ensemble, n_samples, seed, threads, stream=0, b=b, y_vec=y, grid=grid)
    p_sum = (pinned.paths[:, 0, mid] + pinned.paths[:, 1, mid]) / math.sqrt(2)
    p_gap = pinned.paths[:, 0, mid] - pinned.paths[:, 1, mid]
    crit = ks_critical(n_samples, n_samples)
    sweep = []
    for i, w in enumerate(varpis):
        s = run_chunked(sample_avoiding_ensemble, n_samples, seed, threads, stream=i + 1, b=b, y_vec=y,
                        mu_vec=[-w, w], grid=grid)
        gap0 = s.paths[:, 0, 0] - s.paths[:, 1, 0]
        a_sum = (s.paths[:, 0, mid] + s.paths[:, 1, mid]) / math.sqrt(2)
        a_gap = s.paths[:, 0, mid] - s.paths[:, 1, mid]
        est = MCEstimate.from_samples(gap0)
        sweep.append({
            "param": {"varpi": w},
            "median_gap": float(np.median(gap0)),
            "mean_gap": est.mean,
            "mean_gap_stderr": est.stderr,
            "ks_sum": float(ks_2samp(a_sum, p_sum).statistic),
            "ks_gap": float(ks_2samp(a_gap, p_gap).statistic),
            "ks_critical": crit,
            "acceptance": s.acceptance,
            "n_samples": n_samples,
        })
    return _finish("pinning_convergence", config, sweep, {"gap_threshold": gap_threshold}, started, seed)


def _verdict_gse_edge(sweep, tol) -> bool:
    return all(abs(e["value"] - e["target"]) < 3.0 * e["stderr"] + e["allowance"] for e in sweep)


def study_gse_edge(n_matrix: int = 100, n_samples: int = 10_000,
                   regions: Sequence[tuple[float, float]] = DEFAULT_GSE_REGIONS, seed: int = 0,
                   threads: int = 1, quad: QuadConfig = DEFAULT_QUAD) -> StudyReport:
    """Mean number of rescaled GSE atoms per region against the integral of K^GSE_12.

    The finite-N allowance is N^(-1/3) times the target: centering at
    sqrt(2N) leaves an O(N^(-1/3)) shift of the rescaled atoms.  A region that sees
    no atoms at all has zero sample spread; its standard error is floored at
    1/n_samples, the resolution of the empirical mean.
    """
    started = time.perf_counter()
    if n_samples < 2:
        raise UsageError("n_samples must be at least 2")
    specs = [IntervalSpec(float(lo), float(hi)) for lo, hi in regions]
    _check_disjoint(specs)
    config = {"n_matrix": n_matrix, "n_samples": n_samples, "regions": [[iv.lo, iv.hi] for iv in specs],
              "seed": seed, "threads": threads, "quad": _quad_echo(quad)}
    spectra = run_chunked(sample_gse_spectrum, n_samples, seed, threads, n=n_matrix)
    family = GSEFamily(quad)
    sweep = []
    for iv in specs:
        est = MCEstimate.from_samples(count_in(spectra.scaled, (iv.lo, iv.hi)))
        target = expected_count(family, iv)
        sweep.append({
            "param": {"region": [iv.lo, iv.hi]},
            "value": est.mean,
            "target": target,
            "error": abs(est.mean - target),
            "stderr": max(est.stderr, 1.0 / n_samples),
            "allowance": n_matrix ** (-1.0 / 3.0) * abs(target),
            "n_samples": est.n_samples,
        })
    return _finish("gse_edge", config, sweep, {"sigmas": 3.0}, started, seed)


# ---------------------------------------------------------------------------
# moment study


def _verdict_origin(sweep, tol) -> bool:
    rows = sorted(sweep, key=lambda e: -e["param"]["t_n"])
    if not _strictly_decreasing([e["error"] for e in rows]):
        return False
    last = rows[-1]
    return last["relative_error"] < tol["relative"] and last.get("refinement_shift", 0.0) < tol["relative"] * abs(last["target"]) / 10


def study_origin_moments(tn_list: Sequence[float], interval: tuple[float, float] = (-1.0, 1.0), order: int = 1,
                         seed: int | None = None, nodes_per_axis: int = 24, relative: float = 0.05,
                         quad: QuadConfig = DEFAULT_QUAD, threads: int = 1) -> StudyReport:
    """Factorial moments of the slice at t_n against the doubled GSE moment as t_n shrinks.

    The final t_n is recomputed with half the nodes per axis; the shift enters
    the verdict.  ``seed`` is echoed only, the study being deterministic.
    """
    started = time.perf_counter()
    tns = [float(t) for t in tn_list]
    for t in tns:
        if not 0 < t <= 0.5:
            raise InvalidTime(f"t_n must lie in (0, 1/2], got {t}")
    if any(b >= a for a, b in zip(tns, tns[1:])):
        raise UsageError(f"t_n list must be strictly descending, got {tns}")
    if order < 1:
        raise UsageError(f"order must be positive, got {order}")
    if order > 2:
        raise DimensionCap(f"origin moment study supports orders up to 2, got {order}")
    iv = IntervalSpec(float(interval[0]), float(interval[1]))
    config = {"tn_list": tns, "interval": [iv.lo, iv.hi], "order": order, "seed": seed,
              "nodes_per_axis": nodes_per_axis, "relative": relative, "quad": _quad_echo(quad), "threads": threads}
    req = MomentRequest((iv,), (order,), nodes_per_axis, threads)
    target = gse_factorial_moment(req, quad)
    sweep = []
    for t in tns:
        value = origin_factorial_moment(t, req, quad)
        err = abs(value - target)
        sweep.append({"param": {"t_n": t}, "value": value, "target": target, "error": err,
                      "relative_error": err / abs(target) if target else math.inf})
    if sweep:
        coarse = MomentRequest((iv,), (order,), max(1, nodes_per_axis // 2), threads)
        sweep[-1]["refinement_shift"] = abs(origin_factorial_moment(tns[-1], coarse, quad) - sweep[-1]["value"])
    return _finish("origin_moments", config, sweep, {"relative": relative}, started, seed)


STUDIES: dict[str, Callable[..., StudyReport]] = {
    "kernel_match": study_kernel_match,
    "varpi_limit": study_varpi_limit,
    "T_limit": study_T_limit,
    "pinning_convergence": study_pinning_convergence,
    "gse_edge": study_gse_edge,
    "origin_moments": study_origin_moments,
}

VERDICTS: dict[str, Callable[[list, dict], bool]] = {
    "kernel_match": _verdict_kernel_match,
    "varpi_limit": _verdict_varpi_limit,
    "T_limit": _verdict_T_limit,
    "pinning_convergence": _verdict_pinning,
    "gse_edge": _verdict_gse_edge,
    "origin_moments": _verdict_origin,
}


def run_study(name: str, **config) -> StudyReport:
    """Run a study from a JSON-style config, as echoed in ``StudyReport.config``."""
    if name not in STUDIES:
        raise UsageError(f"unknown study {name!r}; choose from {sorted(STUDIES)}")
    config = dict(config)
    if isinstance(config.get("quad"), dict):
        config["quad"] = QuadConfig(**config["quad"])
    for key in ("point_list", "regions"):
        if key in config:
            config[key] = [tuple(p) for p in config[key]]
    if "slope_range" in config:
        config["slope_range"] = tuple(config["slope_range"])
    return STUDIES[name](**config)
