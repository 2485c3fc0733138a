"""Exact Monte Carlo samplers for reverse Brownian motions, Bessel bridges,
pinned and avoiding ensembles, and GSE spectra.

Randomness comes from Philox substreams keyed by ``(seed, chunk index)``.
Samples are produced in fixed chunks of ``CHUNK`` so results do not depend on
how many worker threads process the chunks.

Path arrays have shape ``(n_samples, n_curves, n_times)``; the curve axis is
ordered top-down.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import eigvalsh_tridiagonal
from scipy.stats import truncnorm

from .errors import InvalidBoundaryParam, NonPositiveTime, RejectionBudgetExceeded, UsageError

__all__ = [
    "CHUNK",
    "TimeGrid",
    "EnsembleSample",
    "SpectrumSample",
    "substream",
    "sample_reverse_bm",
    "sample_bessel_bridge",
    "bessel_density",
    "sample_pinned_ensemble",
    "sample_avoiding_ensemble",
    "sample_gse_spectrum",
    "gse_scale",
    "count_in",
    "run_chunked",
]

CHUNK = 256
SQRT2 = math.sqrt(2.0)
MAX_BATCH = 4096

Floor = Callable[[np.ndarray], np.ndarray] | float | None


@dataclass(frozen=True)
class TimeGrid:
    b: float
    times: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if not self.b > 0:
            raise NonPositiveTime(f"grid endpoint must be positive, got {self.b}")
        if times.ndim != 1 or times.size < 2:
            raise UsageError("a time grid needs at least the two endpoints")
        if times[0] != 0.0 or times[-1] != self.b:
            raise UsageError("time grid must start at 0 and end at b")
        if np.any(np.diff(times) <= 0):
            raise UsageError("time grid must be strictly increasing")
        times.setflags(write=False)
        object.__setattr__(self, "times", times)

    @classmethod
    def uniform(cls, b: float, steps: int) -> "TimeGrid":
        if steps < 1:
            raise UsageError("a grid needs at least one step")
        times = np.linspace(0.0, b, steps + 1)
        times[-1] = b
        return cls(float(b), times)

    @property
    def size(self) -> int:
        return self.times.size

    def index_of(self, t: float) -> int:
        """Index of the grid time closest to ``t``."""
        return int(np.abs(self.times - t).argmin())


@dataclass(frozen=True)
class EnsembleSample:
    paths: np.ndarray
    grid: TimeGrid
    y: np.ndarray
    mu: np.ndarray
    seed: int | None = None
    rejections: int = 0
    attempts: int = 0

    @property
    def n_samples(self) -> int:
        return self.paths.shape[0]

    @property
    def acceptance(self) -> float:
        return self.n_samples / self.attempts if self.attempts else 1.0

    @classmethod
    def concat(cls, parts: list["EnsembleSample"], seed: int | None) -> "EnsembleSample":
        first = parts[0]
        return cls(
            np.concatenate([p.paths for p in parts]),
            first.grid,
            first.y,
            first.mu,
            seed,
            sum(p.rejections for p in parts),
            sum(p.attempts for p in parts),
        )


@dataclass(frozen=True)
class SpectrumSample:
    n: int
    raw: np.ndarray
    scaled: np.ndarray
    seed: int | None = None

    @property
    def n_samples(self) -> int:
        return self.raw.shape[0]

    @classmethod
    def concat(cls, parts: list["SpectrumSample"], seed: int | None) -> "SpectrumSample":
        return cls(parts[0].n, np.concatenate([p.raw for p in parts]), np.concatenate([p.scaled for p in parts]), seed)


def substream(seed: int, index: int, stream: int = 0) -> np.random.Generator:
    """Independent generator for chunk ``index`` of stream ``stream`` of a run seeded by ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(stream, index))))


def _check_grid(b: float, grid: TimeGrid):
    if not math.isclose(grid.b, b, rel_tol=0, abs_tol=1e-14):
        raise UsageError(f"grid endpoint {grid.b} does not match b = {b}")


def _brownian_from_zero(steps: np.ndarray, rng: np.random.Generator, size: int) -> np.ndarray:
    """Standard Brownian motion at cumulative times ``cumsum(steps)`` with W(0) = 0."""
    incr = rng.standard_normal((size, steps.size)) * np.sqrt(steps)
    out = np.zeros((size, steps.size + 1))
    np.cumsum(incr, axis=1, out=out[:, 1:])
    return out


def _reverse_bm(b, y, mu, grid: TimeGrid, rng, size):
    # B(t) = y + W(b - t) + mu (b - t), simulated on the reversed grid
    back = (b - grid.times)[::-1]
    w = _brownian_from_zero(np.diff(back), rng, size)[:, ::-1]
    return y + w + mu * (b - grid.times)


def sample_reverse_bm(b: float, y: float, mu: float, grid: TimeGrid, rng: np.random.Generator,
                      size: int | None = None) -> np.ndarray:
    """Reverse Brownian motion with drift ending at ``y`` at time ``b``.

    Returns shape ``(len(times),)`` or ``(size, len(times))``.
    """
    _check_grid(b, grid)
    out = _reverse_bm(b, float(y), float(mu), grid, rng, 1 if size is None else size)
    out[:, -1] = y
    return out[0] if size is None else out


def _bessel_bridge(b, z, grid: TimeGrid, rng, size):
    t = grid.times
    w = np.stack([_brownian_from_zero(np.diff(t), rng, size) for _ in range(3)], axis=-1)
    frac = (t / b)[None, :, None]
    target = np.array([z, 0.0, 0.0])
    bridge = w - frac * w[:, -1:, :] + frac * target
    out = np.sqrt((bridge**2).sum(axis=-1))
    out[:, 0] = 0.0
    out[:, -1] = z
    return out


def sample_bessel_bridge(b: float, z: float, grid: TimeGrid, rng: np.random.Generator,
                         size: int | None = None) -> np.ndarray:
    """3D Bessel bridge from 0 at time 0 to ``z`` at time ``b``.

    Realized as the norm of a three-dimensional Brownian bridge from the
    origin to ``(z, 0, 0)``; rotational invariance makes the endpoint choice
    immaterial.
    """
    _check_grid(b, grid)
    if not z > 0:
        raise InvalidBoundaryParam(f"Bessel bridge endpoint must be positive, got {z}")
    out = _bessel_bridge(b, float(z), grid, rng, 1 if size is None else size)
    return out[0] if size is None else out


def _gauss(t, d):
    return np.exp(-d * d / (2.0 * t)) / np.sqrt(2.0 * math.pi * t)


def bessel_density(b: float, z: float, t: float, y):
    """One-point density at time ``t`` of the 3D Bessel bridge from 0 to ``z``."""
    y = np.asarray(y, dtype=float)
    dens = (b / t) * (y / z) * _gauss(t, y) / _gauss(b, z) * (_gauss(b - t, y - z) - _gauss(b - t, y + z))
    return np.where(y > 0, dens, 0.0)


def _floor_values(g: Floor, times: np.ndarray) -> np.ndarray | None:
    if g is None:
        return None
    if callable(g):
        return np.broadcast_to(np.asarray(g(times), dtype=float), times.shape)
    if g == -math.inf:
        return None
    return np.full(times.shape, float(g))


def _default_budget(k: int) -> int:
    return 10**6 if k <= 2 else 10**7


def _check_descending(y: np.ndarray, what: str):
    if y.ndim != 1 or y.size == 0:
        raise UsageError(f"{what} must be a non-empty vector")
    if np.any(np.diff(y) >= 0):
        raise InvalidBoundaryParam(f"{what} must be strictly descending, got {y.tolist()}")


def _rejection(propose, accept, need: int, rng, max_rejects: int, what: str):
    """Draw ``need`` accepted proposals; returns (paths, rejections, attempts)."""
    kept, n_kept, attempts = [], 0, 0
    rate = 0.5
    while n_kept < need:
        m = int(min(MAX_BATCH, max(64, 1.2 * (need - n_kept) / max(rate, 1e-3))))
        cand = propose(rng, m)
        ok = accept(cand)
        attempts += m
        kept.append(cand[ok])
        n_kept += int(ok.sum())
        rate = max(n_kept, 1) / attempts
        if attempts - n_kept > max_rejects * (n_kept + 1):
            raise RejectionBudgetExceeded(
                f"{what}: acceptance below 1/{max_rejects} after {attempts} proposals",
                acceptance_estimate=n_kept / attempts,
            )
    paths = np.concatenate(kept)
    # the proposals beyond the quota were accepted too but are discarded
    return paths[:need], attempts - n_kept, attempts


def sample_pinned_ensemble(b: float, y_vec, grid: TimeGrid, rng: np.random.Generator, floor: Floor = None,
                           n: int = 1, max_rejects: int | None = None, seed: int | None = None) -> EnsembleSample:
    """Pairwise pinned ensemble: pair i is ``((U_i + V_i), (U_i - V_i)) / sqrt 2``.

    ``U_i`` is a driftless reverse Brownian motion ending at
    ``(y_{2i-1} + y_{2i}) / sqrt 2`` and ``V_i`` a 3D Bessel bridge from 0 to
    ``(y_{2i-1} - y_{2i}) / sqrt 2``.  Pairs are conditioned by rejection to
    stay ordered, and the bottom curve to stay above ``floor``, at grid times
    in (0, b].
    """
    _check_grid(b, grid)
    y = np.asarray(y_vec, dtype=float)
    _check_descending(y, "pinned terminal vector")
    if y.size % 2:
        raise InvalidBoundaryParam("pinned ensembles need an even number of curves")
    g = _floor_values(floor, grid.times)
    if g is not None and not g[-1] < y[-1]:
        raise InvalidBoundaryParam("floor must lie below the bottom terminal value at time b")
    pairs = y.size // 2
    budget = max_rejects or _default_budget(pairs)

    def propose(r, m):
        out = np.empty((m, y.size, grid.size))
        for i in range(pairs):
            hi, lo = y[2 * i], y[2 * i + 1]
            u = _reverse_bm(b, (hi + lo) / SQRT2, 0.0, grid, r, m)
            v = _bessel_bridge(b, (hi - lo) / SQRT2, grid, r, m)
            out[:, 2 * i] = (u + v) / SQRT2
            out[:, 2 * i + 1] = (u - v) / SQRT2
        out[:, :, -1] = y
        return out

    def accept(p):
        ok = np.ones(p.shape[0], dtype=bool)
        for i in range(1, pairs):
            ok &= np.all(p[:, 2 * i - 1, 1:] > p[:, 2 * i, 1:], axis=1)
        if g is not None:
            ok &= np.all(p[:, -1, 1:] > g[1:], axis=1)
        return ok

    if pairs == 1 and g is None:
        paths, rej, att = propose(rng, n), 0, n
    else:
        paths, rej, att = _rejection(propose, accept, n, rng, budget, "pinned ensemble")
    return EnsembleSample(paths, grid, y, np.zeros_like(y), seed, rej, att)


def _positive_start(z, drift, b, rng, m, budget):
    """V(0) for a reverse BM with drift from z at b conditioned to stay positive."""
    loc = z + drift * b
    scale = math.sqrt(b)
    out = np.empty(m)
    filled, tries = 0, 0
    while filled < m:
        need = m - filled
        v = truncnorm.rvs(-loc / scale, np.inf, loc=loc, scale=scale, size=max(2 * need, 16), random_state=rng)
        ok = rng.random(v.size) < -np.expm1(-2.0 * z * v / b)
        got = v[ok][:need]
        out[filled:filled + got.size] = got
        filled += got.size
        tries += v.size
        if tries - filled > budget * (filled + 1):
            raise RejectionBudgetExceeded("avoiding pair start", acceptance_estimate=filled / tries)
    return out, tries - m


def _positive_bridge(v0, z, grid: TimeGrid, rng, budget):
    """Brownian bridges from v0 to z conditioned positive, filled forward on the grid."""
    t = grid.times
    b = grid.b
    m = v0.size
    out = np.empty((m, t.size))
    out[:, 0] = v0
    out[:, -1] = z
    rejects = 0
    for j in range(t.size - 2):
        a = out[:, j]
        dt = t[j + 1] - t[j]
        rest = b - t[j + 1]
        mean = a + (z - a) * dt / (dt + rest)
        sd = math.sqrt(dt * rest / (dt + rest))
        todo = np.arange(m)
        tries = 0
        while todo.size:
            prop = mean[todo] + sd * rng.standard_normal(todo.size)
            with np.errstate(over="ignore", invalid="ignore"):
                w = -np.expm1(-2.0 * a[todo] * prop / dt) * -np.expm1(-2.0 * prop * z / rest)
            ok = (prop > 0) & (rng.random(todo.size) < w)
            out[todo[ok], j + 1] = prop[ok]
            tries += todo.size
            todo = todo[~ok]
            if tries - m > budget * m:
                raise RejectionBudgetExceeded("avoiding pair bridge", acceptance_estimate=m / tries)
        rejects += tries - m
    return out, rejects


def _avoiding_pair(b, y, mu, grid, rng, n, budget):
    # U = (B1 + B2)/sqrt2 is free; V = (B1 - B2)/sqrt2 is conditioned to stay positive
    z = (y[0] - y[1]) / SQRT2
    u = _reverse_bm(b, (y[0] + y[1]) / SQRT2, (mu[0] + mu[1]) / SQRT2, grid, rng, n)
    v0, rej0 = _positive_start(z, (mu[0] - mu[1]) / SQRT2, b, rng, n, budget)
    v, rej1 = _positive_bridge(v0, z, grid, rng, budget)
    paths = np.stack([(u + v) / SQRT2, (u - v) / SQRT2], axis=1)
    paths[:, :, -1] = y
    return paths, rej0 + rej1


def sample_avoiding_ensemble(b: float, y_vec, mu_vec, grid: TimeGrid, rng: np.random.Generator, floor: Floor = None,
                             n: int = 1, max_rejects: int | None = None, seed: int | None = None,
                             method: str = "auto") -> EnsembleSample:
    """Reverse Brownian motions with drifts conditioned to stay ordered above ``floor``.

    ``method="rejection"`` draws from the free law and keeps samples that are
    strictly ordered at every grid time.  For two curves without a floor,
    ``method="auto"`` uses an exact sampler instead: the half-sum is free and
    the half-difference is a Brownian motion conditioned to stay positive,
    which stays usable when opposing drifts make rejection hopeless.
    """
    _check_grid(b, grid)
    y = np.asarray(y_vec, dtype=float)
    mu = np.asarray(mu_vec, dtype=float)
    _check_descending(y, "avoiding terminal vector")
    if mu.shape != y.shape:
        raise UsageError("drift vector must match the terminal vector")
    if method not in ("auto", "rejection"):
        raise UsageError(f"unknown sampling method {method!r}")
    g = _floor_values(floor, grid.times)
    if g is not None and not g[-1] < y[-1]:
        raise InvalidBoundaryParam("floor must lie below the bottom terminal value at time b")
    k = y.size
    budget = max_rejects or _default_budget(k)

    if method == "auto" and k == 2 and g is None:
        paths, rej = _avoiding_pair(b, y, mu, grid, rng, n, budget)
        return EnsembleSample(paths, grid, y, mu, seed, rej, n + rej)

    def propose(r, m):
        out = np.stack([_reverse_bm(b, y[i], mu[i], grid, r, m) for i in range(k)], axis=1)
        out[:, :, -1] = y
        return out

    def accept(p):
        ok = np.all(p[:, :-1, :] > p[:, 1:, :], axis=(1, 2))
        if g is not None:
            ok &= np.all(p[:, -1, :] > g, axis=1)
        return ok

    if k == 1 and g is None:
        paths, rej, att = propose(rng, n), 0, n
    else:
        paths, rej, att = _rejection(propose, accept, n, rng, budget, "avoiding ensemble")
    return EnsembleSample(paths, grid, y, mu, seed, rej, att)


def gse_scale(raw, n: int):
    """Edge rescaling 2^{7/6} N^{1/6} (x - sqrt(2N))."""
    return 2.0 ** (7.0 / 6.0) * n ** (1.0 / 6.0) * (np.asarray(raw) - math.sqrt(2.0 * n))


def sample_gse_spectrum(n: int, rng: np.random.Generator, size: int = 1, seed: int | None = None) -> SpectrumSample:
    """GSE eigenvalues with weight prod |x_i - x_j|^4 prod exp(-2 x_i^2).

    The beta = 4 Hermite tridiagonal model has weight exp(-lambda^2 / 2);
    halving its eigenvalues gives the exp(-2 x^2) normalization, whose
    spectral edge sits at sqrt(2N).
    """
    if not 2 <= n <= 1000:
        raise UsageError(f"matrix size must lie in [2, 1000], got {n}")
    dof = 4.0 * np.arange(n - 1, 0, -1)
    raw = np.empty((size, n))
    for i in range(size):
        diag = rng.standard_normal(n)
        off = np.sqrt(rng.chisquare(dof)) / SQRT2
        raw[i] = eigvalsh_tridiagonal(diag, off)[::-1] / 2.0
    return SpectrumSample(n, raw, gse_scale(raw, n), seed)


def count_in(atoms, region: tuple[float, float]) -> int | np.ndarray:
    """Number of atoms in ``[lo, hi)``; ``atoms`` sorted descending along the last axis.

    A 2-D array of atom rows gives one count per row.
    """
    lo, hi = region
    a = np.asarray(atoms, dtype=float)
    if hi <= lo:
        return 0 if a.ndim <= 1 else np.zeros(a.shape[0], dtype=int)
    counts = np.sum((a >= lo) & (a < hi), axis=-1)
    return int(counts) if a.ndim <= 1 else counts


def run_chunked(sampler, n_samples: int, seed: int, threads: int = 1, stream: int = 0, **params):
    """Run ``sampler(rng=..., n=..., **params)`` over fixed chunks of CHUNK samples.

    Chunk ``i`` always draws from ``substream(seed, i, stream)``, so the concatenated
    result is identical for every thread count.  ``sampler`` must return an
    object with a ``concat`` classmethod; GSE samplers take ``size`` instead
    of ``n``.
    """
    if n_samples < 1:
        raise UsageError("need at least one sample")
    sizes = [min(CHUNK, n_samples - start) for start in range(0, n_samples, CHUNK)]
    size_key = "size" if sampler is sample_gse_spectrum else "n"

    def work(i):
        return sampler(rng=substream(seed, i, stream), **{size_key: sizes[i]}, seed=seed, **params)

    if threads <= 1:
        parts = [work(i) for i in range(len(sizes))]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, range(len(sizes))))
    return type(parts[0]).concat(parts, seed)
