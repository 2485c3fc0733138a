"""Pfaffians, kernel block matrices, expected counts and factorial moments.

Three Pfaffian routes are provided and kept independent of each other:

* ``exact``: the sum over perfect matchings written as words
  (i1, j1, ..., in, jn) with i1 < ... < in and ik < jk, signed by the parity of
  the word as a permutation;
* ``householder``: skew Householder tridiagonalization, tracking the
  determinant of each reflection;
* ``parlett-reid``: skew Gaussian elimination with partial pivoting.

Moment integrals use tensor-product Gauss-Legendre rules on the interval
boxes and evaluate Pfaffians in batches.
"""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from .errors import (
    DimensionCap,
    DimensionMismatch,
    ExpansionTooLarge,
    OddDimension,
    OverlappingIntervals,
    SkewnessError,
    TruncationFailure,
    UsageError,
)
from .kernels import (
    PI3,
    BlockGrid,
    KernelFamily,
    SpaceTimePoint,
    _check_tn,
    _check_varpi,
    double_contour,
    gse_grid,
    origin_delta,
    origin_regular_grid,
)
from .quad import DEFAULT_QUAD, QuadConfig, rule_for

__all__ = [
    "SkewMatrix",
    "IntervalSpec",
    "MomentRequest",
    "pfaffian",
    "pfaffian_batch",
    "pfaffian_sum",
    "matching_words",
    "kernel_block_matrix",
    "expected_count",
    "tail_count_closed_form",
    "falling_factorial_doubling",
    "gse_factorial_moment",
    "origin_factorial_moment",
]

EXACT_MAX_DIM = 10
SKEW_REPAIR_LIMIT = 1e-6
MAX_AXIS_NODES = 24
GSE_ORDER_CAP = 6
ORIGIN_ORDER_CAP = 4


@dataclass(frozen=True)
class SkewMatrix:
    """Even-dimensional real skew-symmetric matrix.

    Built from the strict upper triangle of ``entries`` so skewness is exact;
    ``repair`` records how far the raw input was from skew-symmetric.
    """

    entries: np.ndarray
    repair: float = 0.0

    def __post_init__(self):
        a = np.asarray(self.entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DimensionMismatch(f"expected a square matrix, got shape {a.shape}")
        if a.shape[0] % 2:
            raise OddDimension(f"Pfaffians need even dimension, got {a.shape[0]}")
        upper = np.triu(a, 1)
        skew = upper - upper.T
        skew.setflags(write=False)
        object.__setattr__(self, "entries", skew)

    @classmethod
    def from_raw(cls, a, limit: float = SKEW_REPAIR_LIMIT) -> "SkewMatrix":
        """Symmetrize (A - A^T)/2, failing if the asymmetry exceeds ``limit``."""
        a = np.asarray(a, dtype=float)
        repair = float(np.abs(a + a.T).max() / 2.0) if a.size else 0.0
        if repair > limit:
            raise SkewnessError(f"skewness repair {repair:.2e} exceeds {limit:.1e}")
        return cls((a - a.T) / 2.0, repair)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]


def _as_skew(a) -> np.ndarray:
    if isinstance(a, SkewMatrix):
        return a.entries
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {a.shape}")
    if a.shape[0] % 2:
        raise OddDimension(f"Pfaffians need even dimension, got {a.shape[0]}")
    return a


# ---------------------------------------------------------------------------
# word expansion


def _word_sign(word: Sequence[int]) -> int:
    inversions = sum(1 for i in range(len(word)) for j in range(i + 1, len(word)) if word[i] > word[j])
    return -1 if inversions % 2 else 1


def _matchings(items: tuple[int, ...]):
    if not items:
        yield ()
        return
    first, rest = items[0], items[1:]
    for k, partner in enumerate(rest):
        for tail in _matchings(rest[:k] + rest[k + 1:]):
            yield (first, partner) + tail


@lru_cache(maxsize=None)
def matching_words(dim: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """All words of a dim x dim Pfaffian: (row indices, column indices, signs).

    Row k of the index arrays lists the pairs (i_1, j_1), ..., (i_n, j_n) of one
    word, zero-based.
    """
    if dim % 2:
        raise OddDimension(f"Pfaffians need even dimension, got {dim}")
    words = list(_matchings(tuple(range(dim))))
    if not words or dim == 0:
        return np.zeros((1, 0), int), np.zeros((1, 0), int), np.ones(1)
    w = np.array(words, dtype=int)
    signs = np.array([_word_sign(word) for word in words], dtype=float)
    return w[:, 0::2], w[:, 1::2], signs


def _pfaffian_exact_batch(stack: np.ndarray) -> np.ndarray:
    dim = stack.shape[-1]
    rows, cols, signs = matching_words(dim)
    if dim == 0:
        return np.ones(stack.shape[0])
    # (batch, words, pairs) -> products over pairs
    prods = stack[:, rows, cols].prod(axis=-1)
    return prods @ signs


# ---------------------------------------------------------------------------
# tridiagonalization


def _pfaffian_householder_batch(stack: np.ndarray) -> np.ndarray:
    a = np.array(stack, dtype=float, copy=True)
    batch, n = a.shape[0], a.shape[-1]
    pf = np.ones(batch)
    for i in range(n - 2):
        x = a[:, i + 1:, i]
        sigma = np.einsum("bj,bj->b", x[:, 1:], x[:, 1:])
        norm = np.sqrt(x[:, 0] ** 2 + sigma)
        reflect = sigma > 0
        alpha = np.where(reflect, np.where(x[:, 0] > 0, -norm, norm), x[:, 0])
        v = x.copy()
        v[:, 0] -= alpha
        vnorm = np.linalg.norm(v, axis=1)
        v = np.where(reflect[:, None], v / np.where(vnorm > 0, vnorm, 1.0)[:, None], 0.0)
        tau = np.where(reflect, 2.0, 0.0)
        a[:, i + 1, i] = alpha
        a[:, i, i + 1] = -alpha
        a[:, i + 2:, i] = 0.0
        a[:, i, i + 2:] = 0.0
        sub = a[:, i + 1:, i + 1:]
        w = tau[:, None] * np.einsum("bjk,bk->bj", sub, v)
        sub += v[:, :, None] * w[:, None, :] - w[:, :, None] * v[:, None, :]
        # each reflection has determinant -1
        pf *= np.where(reflect, -1.0, 1.0)
        if i % 2 == 0:
            pf *= -alpha
    return pf * a[:, n - 2, n - 1]


def _pfaffian_parlett_reid(a: np.ndarray) -> float:
    a = np.array(a, dtype=float, copy=True)
    n = a.shape[0]
    pf = 1.0
    for k in range(0, n - 1, 2):
        p = k + 1 + int(np.abs(a[k + 1:, k]).argmax())
        if p != k + 1:
            a[[k + 1, p], :] = a[[p, k + 1], :]
            a[:, [k + 1, p]] = a[:, [p, k + 1]]
            pf = -pf
        if a[k + 1, k] == 0.0:
            return 0.0
        pf *= a[k, k + 1]
        if k + 2 < n:
            tau = a[k, k + 2:] / a[k, k + 1]
            col = a[k + 2:, k + 1].copy()
            a[k + 2:, k + 2:] += np.outer(tau, col) - np.outer(col, tau)
    return pf


def pfaffian(a, mode: str = "householder") -> float:
    """Pfaffian of an even-dimensional skew-symmetric matrix.

    ``mode`` is "exact" (word expansion, dim <= 10), "householder" (default;
    "tridiagonalization" is accepted as an alias) or "parlett-reid".
    """
    m = _as_skew(a)
    n = m.shape[0]
    if n == 0:
        return 1.0
    if mode == "exact":
        if n > EXACT_MAX_DIM:
            raise ExpansionTooLarge(f"word expansion is limited to dim <= {EXACT_MAX_DIM}, got {n}")
        return float(_pfaffian_exact_batch(m[None])[0])
    if mode in ("householder", "tridiagonalization"):
        if n == 2:
            return float(m[0, 1])
        return float(_pfaffian_householder_batch(m[None])[0])
    if mode == "parlett-reid":
        return _pfaffian_parlett_reid(m)
    raise UsageError(f"unknown Pfaffian mode {mode!r}")


def pfaffian_batch(stack: np.ndarray) -> np.ndarray:
    """Pfaffians of a stack of skew matrices with shape (batch, d, d)."""
    stack = np.asarray(stack, dtype=float)
    d = stack.shape[-1]
    if d % 2:
        raise OddDimension(f"Pfaffians need even dimension, got {d}")
    if d == 0:
        return np.ones(stack.shape[0])
    if d <= 8:
        return _pfaffian_exact_batch(stack)
    return _pfaffian_householder_batch(stack)


def pfaffian_sum(a, b, mode: str = "householder") -> float:
    """Pf(A + B) through the signed expansion over even subsets I of {1..2n}."""
    ma, mb = _as_skew(a), _as_skew(b)
    if ma.shape != mb.shape:
        raise DimensionMismatch(f"shapes differ: {ma.shape} vs {mb.shape}")
    n = ma.shape[0]
    idx = tuple(range(n))
    total = 0.0
    for size in range(0, n + 1, 2):
        for subset in itertools.combinations(idx, size):
            comp = [i for i in idx if i not in subset]
            # one-based index sum, as in the usual statement of the formula
            sign = -1.0 if (sum(subset) + size - size // 2) % 2 else 1.0
            pa = pfaffian(ma[np.ix_(subset, subset)], mode) if size else 1.0
            pb = pfaffian(mb[np.ix_(comp, comp)], mode) if comp else 1.0
            total += sign * pa * pb
    return total


# ---------------------------------------------------------------------------
# kernel block matrices


def _assemble(blocks: dict[tuple[int, int], tuple[np.ndarray, ...]], n: int) -> np.ndarray:
    out = np.zeros((2 * n, 2 * n))
    for (i, j), (k11, k12, k21, k22) in blocks.items():
        out[2 * i, 2 * j] = k11
        out[2 * i, 2 * j + 1] = k12
        out[2 * i + 1, 2 * j] = k21
        out[2 * i + 1, 2 * j + 1] = k22
    return out


def kernel_block_matrix(family: KernelFamily, points: Sequence[SpaceTimePoint]) -> SkewMatrix:
    """The 2n x 2n matrix of 2x2 kernel blocks family(p_i; p_j), repaired to exact skewness."""
    points = list(points)
    n = len(points)
    times = sorted({p.t for p in points})
    by_time = {t: [i for i, p in enumerate(points) if p.t == t] for t in times}
    blocks = {}
    for s in times:
        for t in times:
            ii, jj = by_time[s], by_time[t]
            g = family.grid(s, [points[i].x for i in ii], t, [points[j].x for j in jj])
            for a, i in enumerate(ii):
                for b, j in enumerate(jj):
                    blocks[i, j] = (g.k11[a, b], g.k12[a, b], g.k21[a, b], g.k22[a, b])
    return SkewMatrix.from_raw(_assemble(blocks, n))


# ---------------------------------------------------------------------------
# intervals and requests


@dataclass(frozen=True)
class IntervalSpec:
    lo: float
    hi: float

    def __post_init__(self):
        if math.isnan(self.lo) or math.isnan(self.hi) or self.lo > self.hi:
            raise UsageError(f"interval needs lo <= hi, got [{self.lo}, {self.hi}]")
        if self.lo == -math.inf:
            raise UsageError("intervals must be bounded below")

    @property
    def length(self) -> float:
        return self.hi - self.lo

    @property
    def half_line(self) -> bool:
        return self.hi == math.inf


def _check_disjoint(intervals: Sequence[IntervalSpec]):
    for a, b in itertools.combinations(intervals, 2):
        if a.lo < b.hi and b.lo < a.hi and a.length > 0 and b.length > 0:
            raise OverlappingIntervals(f"[{a.lo}, {a.hi}] and [{b.lo}, {b.hi}] overlap")


@dataclass(frozen=True)
class MomentRequest:
    intervals: tuple[IntervalSpec, ...]
    orders: tuple[int, ...]
    nodes_per_axis: int = MAX_AXIS_NODES
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "intervals", tuple(self.intervals))
        object.__setattr__(self, "orders", tuple(int(n) for n in self.orders))
        if len(self.intervals) != len(self.orders) or not self.orders:
            raise UsageError("intervals and orders must be non-empty and of equal length")
        if any(n < 1 for n in self.orders):
            raise UsageError(f"orders must be positive, got {self.orders}")
        if sum(self.orders) > GSE_ORDER_CAP:
            raise DimensionCap(f"total order {sum(self.orders)} exceeds the cap {GSE_ORDER_CAP}")
        if not 1 <= self.nodes_per_axis <= MAX_AXIS_NODES:
            raise DimensionCap(f"nodes_per_axis must lie in [1, {MAX_AXIS_NODES}], got {self.nodes_per_axis}")
        if any(iv.half_line for iv in self.intervals):
            raise UsageError("moment intervals must be bounded")
        _check_disjoint(self.intervals)

    @property
    def total_order(self) -> int:
        return sum(self.orders)


# ---------------------------------------------------------------------------
# expected counts


def _gauss_panels(lo: float, hi: float, n_nodes: int, panel: float = 1.0):
    panels = max(1, math.ceil((hi - lo) / panel))
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    edges = np.linspace(lo, hi, panels + 1)
    half = np.diff(edges) / 2.0
    mid = (edges[:-1] + edges[1:]) / 2.0
    return (mid[:, None] + half[:, None] * x).ravel(), (half[:, None] * w).ravel()


def _diagonal_k12(family: KernelFamily, t: float, xs: np.ndarray) -> np.ndarray:
    return np.diag(family.k12_grid(t, xs, t, xs))


def expected_count(family: KernelFamily, interval: IntervalSpec, n_nodes: int = 24, t: float = 0.0,
                   cutoff: float = 1e-12, max_level: float = 60.0) -> float:
    """Integral of K12(t, x; t, x) over the interval.

    A half-line [a, inf) is truncated at the first integer offset b* where
    |K12(b*, b*)| < cutoff and keeps decreasing over the next unit step.
    """
    if interval.length == 0:
        return 0.0
    hi = interval.hi
    if interval.half_line:
        b = interval.lo + 1.0
        while True:
            if b > max_level:
                raise TruncationFailure(f"K12 did not fall below {cutoff:g} before level {max_level}")
            v = np.abs(_diagonal_k12(family, t, np.array([b, b + 1.0])))
            if v[0] < cutoff and v[1] < v[0]:
                break
            b += 1.0
        hi = b
    x, w = _gauss_panels(interval.lo, hi, n_nodes)
    return float(w @ _diagonal_k12(family, t, x))


def tail_count_closed_form(varpi: float, t: float, a: float, quad: QuadConfig = DEFAULT_QUAD) -> float:
    """E[number of atoms >= a] at time t for the K^varpi slice, as one double contour integral.

    The level integral over [a, inf) is done inside the contour integral,
    turning 1/(z + w) into exp(-(z + w) a)/(z + w)^2 on C_1 x C_1.
    """
    _check_varpi(varpi)
    if not t > 0:
        raise UsageError(f"tail_count_closed_form needs t > 0, got {t}")
    r = rule_for(1.0, PI3, quad)
    val = double_contour(
        r,
        r,
        lambda Z, W: ((Z - W + 2 * t) * (varpi + Z + t), [2.0 * (Z + t), (Z + W) ** 2, varpi - W + t]),
        [a],
        [a],
        what="tail count",
    )
    return float(val[0, 0])


# ---------------------------------------------------------------------------
# factorial moments


def falling_factorial_doubling(n: int, x: int) -> tuple[int, int]:
    """Both sides of Q_n(2x) = sum_k n! 2^(2k-n) / ((n-k)! (2k-n)!) Q_k(x), exactly."""
    lhs = math.perm(2 * x, n)
    rhs = 0
    for k in range((n + 1) // 2, n + 1):
        coeff = math.factorial(n) * 2 ** (2 * k - n) // (math.factorial(n - k) * math.factorial(2 * k - n))
        rhs += coeff * math.perm(x, k)
    return lhs, rhs


def _doubling_coefficient(n: int, k: int) -> int:
    return math.factorial(n) * 2 ** (2 * k - n) // (math.factorial(n - k) * math.factorial(2 * k - n))


@dataclass
class _NodePool:
    """Gauss-Legendre nodes of all intervals, concatenated, with per-interval index sets."""

    x: np.ndarray
    w: np.ndarray
    members: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def build(cls, intervals: Sequence[IntervalSpec], n_nodes: int) -> "_NodePool":
        gx, gw = np.polynomial.legendre.leggauss(n_nodes)
        xs, ws, members, start = [], [], [], 0
        for iv in intervals:
            half, mid = iv.length / 2.0, (iv.lo + iv.hi) / 2.0
            xs.append(mid + half * gx)
            ws.append(half * gw)
            members.append(np.arange(start, start + n_nodes))
            start += n_nodes
        return cls(np.concatenate(xs), np.concatenate(ws), members)


def _stack_blocks(grid: BlockGrid, idx: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Batched 2k x 2k kernel matrices for node tuples ``idx`` (batch, k), restricted to ``rows``."""
    k = idx.shape[1]
    a, b = idx[:, :, None], idx[:, None, :]
    out = np.empty((idx.shape[0], 2 * k, 2 * k))
    out[:, 0::2, 0::2] = grid.k11[a, b]
    out[:, 0::2, 1::2] = grid.k12[a, b]
    out[:, 1::2, 0::2] = grid.k21[a, b]
    out[:, 1::2, 1::2] = grid.k22[a, b]
    out = (out - np.swapaxes(out, 1, 2)) / 2.0
    return out[:, rows[:, None], rows[None, :]]


def _tensor_chunks(axes: Sequence[np.ndarray], inner: int = 3):
    """Node-index tuples over the product of ``axes``, chunked over the leading axes."""
    lead, tail = axes[: max(0, len(axes) - inner)], axes[max(0, len(axes) - inner):]
    tail_grid = np.stack(np.meshgrid(*tail, indexing="ij"), axis=-1).reshape(-1, len(tail)) if tail else None
    for head in itertools.product(*lead):
        if tail_grid is None:
            yield np.array([head])
        else:
            yield np.concatenate([np.broadcast_to(np.array(head, dtype=int), (tail_grid.shape[0], len(head))),
                                  tail_grid], axis=1)


def _box_integral(pool: _NodePool, grid: BlockGrid, axes: Sequence[np.ndarray], rows: np.ndarray,
                  factor=None, threads: int = 1) -> float:
    """Tensor-product quadrature of factor(x) * Pf[K(x_i, x_j)]_rows over the box spanned by ``axes``."""
    if not axes:
        return 1.0

    def chunk_value(idx: np.ndarray) -> float:
        weights = pool.w[idx].prod(axis=1)
        vals = pfaffian_batch(_stack_blocks(grid, idx, rows)) if rows.size else np.ones(idx.shape[0])
        if factor is not None:
            vals = vals * factor(pool.x[idx])
        return float(weights @ vals)

    chunks = list(_tensor_chunks(axes))
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(chunk_value, chunks))
    else:
        parts = [chunk_value(c) for c in chunks]
    # fixed-order reduction keeps the value independent of the worker count
    return math.fsum(parts)


def gse_factorial_moment(req: MomentRequest, quad: QuadConfig = DEFAULT_QUAD) -> float:
    """E[prod_i (2M[a_i,b_i])! / (2M[a_i,b_i] - n_i)!] for the GSE edge process M."""
    if any(iv.length == 0 for iv in req.intervals):
        return 0.0
    pool = _NodePool.build(req.intervals, req.nodes_per_axis)
    grid = gse_grid(pool.x, pool.x, quad)
    total = 0.0
    ranges = [range((n + 1) // 2, n + 1) for n in req.orders]
    for ks in itertools.product(*ranges):
        coeff = math.prod(_doubling_coefficient(n, k) for n, k in zip(req.orders, ks))
        axes = [pool.members[i] for i, k in enumerate(ks) for _ in range(k)]
        rows = np.arange(2 * len(axes))
        total += coeff * _box_integral(pool, grid, axes, rows, threads=req.threads)
    return total


def _origin_terms(n: int):
    """(sign, pairs, kept rows) for every term of the origin decomposition with n points.

    A term picks r disjoint pairs (u, v), u < v, of points whose second
    components carry delta_N; those rows leave the regular Pfaffian, which keeps
    the remaining rows.  The sign is (-1)^r times the parity of the word
    (u_1, v_1, ..., u_r, v_r).
    """
    points = tuple(range(n))
    for r in range(n // 2 + 1):
        for chosen in itertools.combinations(points, 2 * r):
            for word in _matchings(chosen):
                pairs = [(word[2 * i], word[2 * i + 1]) for i in range(r)]
                dropped = {2 * p + 1 for p in chosen}
                rows = np.array([i for i in range(2 * n) if i not in dropped], dtype=int)
                yield (-1) ** r * _word_sign(word), pairs, rows


def origin_factorial_moment(t_n: float, req: MomentRequest, quad: QuadConfig = DEFAULT_QUAD) -> float:
    """E[prod_i M^N[a_i,b_i]! / (M^N[a_i,b_i] - n_i)!] for the kernel K^{hs;inf}(t_n, .; t_n, .).

    The kernel is split as K^N + Delta^N with Delta^N carrying delta_N in its
    (2, 2) entry, and the Pfaffian of the sum is expanded over the delta_N
    pairings.
    """
    _check_tn(t_n)
    if req.total_order > ORIGIN_ORDER_CAP:
        raise DimensionCap(f"total order {req.total_order} exceeds the cap {ORIGIN_ORDER_CAP}")
    if any(iv.length == 0 for iv in req.intervals):
        return 0.0
    pool = _NodePool.build(req.intervals, req.nodes_per_axis)
    grid = origin_regular_grid(t_n, pool.x, pool.x, quad)
    axes = [pool.members[i] for i, n in enumerate(req.orders) for _ in range(n)]
    total = 0.0
    for sign, pairs, rows in _origin_terms(len(axes)):
        if pairs:
            def factor(x, pairs=pairs):
                return np.prod([origin_delta(t_n, x[:, u], x[:, v]) for u, v in pairs], axis=0)
        else:
            factor = None
        total += sign * _box_integral(pool, grid, axes, rows, factor, threads=req.threads)
    return total
