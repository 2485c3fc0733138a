"""Acceptance criteria 1-13, one pass/fail line each in the terminal summary.

Runtime limits are part of each criterion.  Randomized runs are cached so
criterion 13 can repeat them under a different thread cap.
"""
import math
import time

import numpy as np
import pytest
from scipy import integrate, stats

from hsairy.ensembles import EnsembleSample, TimeGrid, bessel_density, run_chunked, sample_bessel_bridge
from hsairy.kernels import VarpiFamily, gse_grid, k_gse, s4_airy_form
from hsairy.pfaffian import (
    IntervalSpec,
    expected_count,
    falling_factorial_doubling,
    pfaffian,
    pfaffian_sum,
    tail_count_closed_form,
)
from hsairy.verify import (
    DEFAULT_GSE_REGIONS,
    DEFAULT_LIMIT_POINTS,
    DEFAULT_MATCH_POINTS,
    DEFAULT_T_POINTS,
    study_gse_edge,
    study_kernel_match,
    study_origin_moments,
    study_pinning_convergence,
    study_T_limit,
    study_varpi_limit,
)

pytestmark = pytest.mark.slow

THREADS = 4
RERUN_THREADS = 2
RANDOMIZED: dict[str, tuple] = {}


def timed(fn, *args, **kwargs):
    start = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - start


def random_skew(rng, dim):
    a = rng.standard_normal((dim, dim))
    return a - a.T


def test_criterion_01_pfaffian(record_criterion):
    def run():
        rng = np.random.default_rng(101)
        worst = 0.0
        for dim in (4, 6, 8, 10):
            for _ in range(100):
                a = random_skew(rng, dim)
                exact = pfaffian(a, "exact")
                worst = max(worst, abs(pfaffian(a) - exact) / abs(exact))
        return worst

    worst, secs = timed(run)
    ok = record_criterion(1, worst < 1e-10 and secs < 5, f"max rel gap {worst:.2e}, {secs:.1f} s")
    assert ok


def test_criterion_02_pfaffian_sum(record_criterion):
    def run():
        rng = np.random.default_rng(102)
        return max(abs(pfaffian_sum(a, b) - pfaffian(a + b))
                   for a, b in ((random_skew(rng, 6), random_skew(rng, 6)) for _ in range(100)))

    worst, secs = timed(run)
    ok = record_criterion(2, worst < 1e-10 and secs < 5, f"max gap {worst:.2e}, {secs:.1f} s")
    assert ok


def test_criterion_03_gse_identities(record_criterion):
    def run():
        pts = [-2.0, -1.0, 0.0, 1.0, 2.0]
        g = gse_grid(pts, pts)
        s4 = max(abs(s4_airy_form(x, y) - g.k12[i, j]) for i, x in enumerate(pts) for j, y in enumerate(pts))
        h = 1e-4
        deriv = integ = 0.0
        nodes, weights = np.polynomial.legendre.leggauss(40)
        for x in pts:
            for y in pts:
                if x == y:
                    continue
                d = (k_gse(x + h, y).k12 - k_gse(x - h, y).k12) / (2 * h)
                deriv = max(deriv, abs(d + k_gse(x, y).k22))
                us = (y - x) / 2 * nodes + (x + y) / 2
                val = ((y - x) / 2 * weights) @ gse_grid([x], us).k12[0]
                integ = max(integ, abs(val + k_gse(x, y).k11))
        return s4, deriv, integ

    (s4, deriv, integ), secs = timed(run)
    ok = s4 < 1e-8 and deriv < 1e-5 and integ < 1e-6 and secs < 60
    record_criterion(3, ok, f"S4 {s4:.1e}, d/dx {deriv:.1e}, integral {integ:.1e}, {secs:.1f} s")
    assert ok


def test_criterion_04_contour_deformation(record_criterion):
    rep, secs = timed(study_kernel_match, [2.0, 5.0], DEFAULT_MATCH_POINTS, 1e-6, threads=THREADS)
    worst = max(e["error"] for e in rep.sweep)
    ok = rep.verdict and len(DEFAULT_MATCH_POINTS) == 10 and secs < 120
    record_criterion(4, ok, f"max entry gap {worst:.1e} over 10 points x 2 varpi, {secs:.1f} s")
    assert ok


def test_criterion_05_varpi_limit(record_criterion):
    rep, secs = timed(study_varpi_limit, [2.0, 4.0, 8.0, 16.0], DEFAULT_LIMIT_POINTS, 1e-3, threads=THREADS)
    final = [e["error"] for e in rep.sweep if e["param"]["varpi"] == 16.0]
    ok = rep.verdict and secs < 120
    record_criterion(5, ok, f"errors at varpi=16 in [{min(final):.1e}, {max(final):.1e}] vs 1e-3, {secs:.1f} s")
    assert ok


def test_criterion_06_T_limit(record_criterion):
    rep, secs = timed(study_T_limit, [5.0, 10.0, 20.0, 40.0], DEFAULT_T_POINTS, threads=THREADS)
    at20 = [e["error"] for e in rep.sweep if e["param"]["T"] == 20.0]
    slopes = []
    for p in DEFAULT_T_POINTS:
        rows = [e for e in rep.sweep if e["param"]["point"] == list(p)]
        slopes.append(np.polyfit(np.log([e["param"]["T"] for e in rows]), np.log([abs(e["k11"]) for e in rows]), 1)[0])
    ok = rep.verdict and max(at20) < 1e-3 and secs < 120
    shown = ", ".join(f"{s:.2f}" for s in slopes)
    record_criterion(6, ok, f"K12 error at T=20 up to {max(at20):.1e} vs 1e-3; K11 slopes {shown}, {secs:.1f} s")
    assert ok


def test_criterion_07_expected_count(record_criterion):
    def run():
        gaps = []
        for varpi, t, a in [(2.0, 1.0, 0.0), (5.0, 0.5, 1.0)]:
            direct = expected_count(VarpiFamily(varpi=varpi), IntervalSpec(a, math.inf), t=t)
            gaps.append(abs(tail_count_closed_form(varpi, t, a) - direct))
        return max(gaps), tail_count_closed_form(2.0, 1.0, 8.0)

    (gap, far), secs = timed(run)
    ok = gap < 1e-6 and far < 1e-4 and secs < 30
    record_criterion(7, ok, f"closed form vs quadrature {gap:.1e}, value at a=8 {far:.1e}, {secs:.1f} s")
    assert ok


def bessel_run(threads):
    def sampler(rng, n, seed=None, frac=0.5):
        grid = TimeGrid(1.0, [0.0, frac, 1.0])
        p = sample_bessel_bridge(1.0, 1.0, grid, rng, size=n)
        return EnsembleSample(p[:, None, :], grid, np.ones(1), np.zeros(1), seed, 0, n)

    edges = np.concatenate([np.linspace(0.0, 2.5, 26), [np.inf]])
    pvalues = []
    for stream, frac in enumerate((0.25, 0.5, 0.75)):
        vals = run_chunked(sampler, 100_000, seed=808, threads=threads, stream=stream, frac=frac).paths[:, 0, 1]
        probs = np.array([integrate.quad(lambda y: bessel_density(1.0, 1.0, frac, y), lo, hi)[0]
                          for lo, hi in zip(edges[:-1], edges[1:])])
        observed = np.histogram(vals, edges)[0]
        pvalues.append(float(stats.chisquare(observed, probs / probs.sum() * vals.size).pvalue))
    return pvalues


def test_criterion_08_bessel(record_criterion):
    pvalues, secs = timed(bessel_run, THREADS)
    RANDOMIZED["bessel"] = (pvalues, bessel_run)
    ok = min(pvalues) > 0.01 and secs < 60
    shown = ", ".join(f"{p:.3f}" for p in pvalues)
    record_criterion(8, ok, f"chi-square p-values {shown}, {secs:.1f} s")
    assert ok


def pinning_run(threads):
    return study_pinning_convergence([2.0, 4.0, 8.0], n_samples=10_000, seed=909, threads=threads)


def test_criterion_09_pinning(record_criterion):
    rep, secs = timed(pinning_run, THREADS)
    RANDOMIZED["pinning"] = (rep.metrics(), lambda th: pinning_run(th).metrics())
    medians = [e["median_gap"] for e in rep.sweep]
    ks_ok = all(e["ks_sum"] <= e["ks_critical"] for e in rep.sweep)
    ok = medians[0] > medians[1] > medians[2] and ks_ok and secs < 600
    gaps = ", ".join(f"{m:.3f}" for m in medians)
    ks = ", ".join(f"{e['ks_sum']:.4f}" for e in rep.sweep)
    crit = rep.sweep[0]["ks_critical"]
    record_criterion(9, ok, f"median gaps {gaps}; sum KS {ks} vs {crit:.4f}, {secs:.1f} s")
    assert ok


def gse_run(threads):
    return study_gse_edge(100, 10_000, DEFAULT_GSE_REGIONS, seed=1010, threads=threads)


def test_criterion_10_gse_edge(record_criterion):
    rep, secs = timed(gse_run, THREADS)
    RANDOMIZED["gse_edge"] = (rep.metrics(), lambda th: gse_run(th).metrics())
    parts = [f"[{e['param']['region'][0]:g},{e['param']['region'][1]:g}) {e['value']:.4f} vs {e['target']:.4f}"
             for e in rep.sweep]
    ok = rep.verdict and secs < 600
    record_criterion(10, ok, "; ".join(parts) + f", {secs:.1f} s")
    assert ok


def test_criterion_11_origin_doubling(record_criterion):
    def run():
        return [study_origin_moments([0.2, 0.1, 0.05], (-1.0, 1.0), order, threads=THREADS) for order in (1, 2)]

    reps, secs = timed(run)
    parts = [f"n={r.config['order']} rel errors " + ", ".join(f"{e['relative_error']:.3f}" for e in r.sweep)
             for r in reps]
    ok = all(r.verdict for r in reps) and secs < 600
    record_criterion(11, ok, "; ".join(parts) + f" vs 0.05, {secs:.1f} s")
    assert ok


def test_criterion_12_integer_identity(record_criterion):
    def run():
        return all(lhs == rhs for n in range(1, 9) for x in range(21) for lhs, rhs in [falling_factorial_doubling(n, x)])

    ok_vals, secs = timed(run)
    ok = ok_vals and secs < 1
    record_criterion(12, ok, f"168 exact equalities, {secs:.3f} s")
    assert ok


def test_criterion_13_determinism(record_criterion):
    if "bessel" not in RANDOMIZED:
        RANDOMIZED["bessel"] = (bessel_run(THREADS), bessel_run)
    if "pinning" not in RANDOMIZED:
        RANDOMIZED["pinning"] = (pinning_run(THREADS).metrics(), lambda th: pinning_run(th).metrics())
    if "gse_edge" not in RANDOMIZED:
        RANDOMIZED["gse_edge"] = (gse_run(THREADS).metrics(), lambda th: gse_run(th).metrics())
    same = {name: rerun(RERUN_THREADS) == first for name, (first, rerun) in RANDOMIZED.items()}
    ok = all(same.values())
    record_criterion(13, ok, f"threads {THREADS} vs {RERUN_THREADS}: "
                             + ", ".join(f"{k} {'identical' if v else 'DIFFERENT'}" for k, v in same.items()))
    assert ok
