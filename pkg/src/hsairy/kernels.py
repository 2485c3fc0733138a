"""Correlation kernels of the half-space Airy family and their relatives.

Every double contour integral here has the separable form

    (2 pi i)^{-2} int dz int dw  g(z, w) exp(sz (z^3/3 - x z)) exp(sw (w^3/3 - y w))

with a rational function g and signs sz, sw in {+1, -1}.  On a tensor rule this
is ``Ez(x) @ G @ Ew(y).T``, so a whole grid of levels (x_i, y_j) at fixed times
costs one pair of matrix products.

Contours are wedges C_a^phi.  The apexes printed in the definitions are not
always usable in double precision (apexes near 10 put exp(a^3/3) beyond the
floating-point range), so each family places its apexes inside the same pole
homotopy class as the printed contours.  A clearance check guards against
drift: every node (and node combination appearing in a denominator) must
stay at least ``POLE_CLEARANCE`` away from its pole set.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import mpmath
import numpy as np

from .errors import (
    DegenerateBranch,
    InvalidBoundaryParam,
    InvalidShift,
    InvalidTime,
    QuadratureFailure,
    UsageError,
)
from .quad import DEFAULT_QUAD, QuadConfig, rule_for, WedgeRule, airy_suite

__all__ = [
    "KernelBlock",
    "BlockGrid",
    "OriginSplit",
    "SpaceTimePoint",
    "extended_airy_correction",
    "k_airy",
    "k_hs_varpi",
    "hs_varpi_k22",
    "hs_varpi_tail",
    "hs_varpi_k22_residue_route",
    "k_varpi",
    "k_hs_inf",
    "k_gse",
    "s4_airy_form",
    "airy_kernel",
    "k_origin_split",
    "k22_vertical",
    "r22_hs_inf",
    "r22_hs_inf_contour",
    "KernelFamily",
    "GSEFamily",
    "HalfSpaceInfFamily",
    "VarpiFamily",
    "HalfSpaceVarpiFamily",
    "OriginRegularFamily",
    "FAMILIES",
    "make_family",
]

POLE_CLEARANCE = 1e-3
IMAG_TOL = 1e-6
PI3 = math.pi / 3
TWO_PI3 = 2 * math.pi / 3
PI2 = math.pi / 2
TWO_PI_I = 2j * math.pi


@dataclass(frozen=True)
class SpaceTimePoint:
    t: float
    x: float


@dataclass(frozen=True)
class KernelBlock:
    k11: float
    k12: float
    k21: float
    k22: float

    def as_matrix(self) -> np.ndarray:
        return np.array([[self.k11, self.k12], [self.k21, self.k22]])

    def as_dict(self) -> dict:
        return {"k11": self.k11, "k12": self.k12, "k21": self.k21, "k22": self.k22}


@dataclass(frozen=True)
class BlockGrid:
    """Kernel entries on a level grid: entry[i, j] = K(s, xs[i]; t, ys[j])."""

    k11: np.ndarray
    k12: np.ndarray
    k21: np.ndarray
    k22: np.ndarray

    def block(self, i: int = 0, j: int = 0) -> KernelBlock:
        return KernelBlock(float(self.k11[i, j]), float(self.k12[i, j]), float(self.k21[i, j]), float(self.k22[i, j]))


@dataclass(frozen=True)
class OriginSplit:
    regular: KernelBlock
    singular: float
    t_n: float


# ---------------------------------------------------------------------------
# double contour machinery


def _exp_factor(rule: WedgeRule, levels: np.ndarray, sign: int) -> np.ndarray:
    z = rule.nodes[None, :]
    lv = levels[:, None]
    return rule.weights[None, :] * np.exp(sign * (z**3 / 3.0 - lv * z))


def _check_clearance(denominators: Sequence[np.ndarray], what: str):
    for d in denominators:
        m = float(np.abs(d).min())
        if m < POLE_CLEARANCE:
            raise QuadratureFailure(f"{what}: quadrature node within {m:.2e} of a pole")


def _to_real(vals: np.ndarray, what: str) -> np.ndarray:
    scale = np.maximum(1.0, np.abs(vals.real))
    if np.any(np.abs(vals.imag) > IMAG_TOL * scale):
        raise QuadratureFailure(f"{what}: imaginary residue {np.abs(vals.imag).max():.2e} too large")
    return vals.real


def double_contour(
    zrule: WedgeRule,
    wrule: WedgeRule,
    rational: Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, list[np.ndarray]]],
    xs,
    ys,
    zsign: int = 1,
    wsign: int = 1,
    what: str = "kernel",
) -> np.ndarray:
    """Evaluate (2 pi i)^{-2} int int g(z,w) e^{zsign(z^3/3-xz)} e^{wsign(w^3/3-yw)} on a grid.

    ``rational(Z, W)`` returns a numerator and the list of denominator factors
    of g, evaluated on the broadcast node grid; the denominators are checked
    for pole clearance.
    """
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    ys = np.atleast_1d(np.asarray(ys, dtype=float))
    Z = zrule.nodes[:, None]
    W = wrule.nodes[None, :]
    num, dens = rational(Z, W)
    dens = [np.broadcast_to(d, (Z.shape[0], W.shape[1])) for d in dens]
    _check_clearance(dens, what)
    G = np.broadcast_to(num, (Z.shape[0], W.shape[1])).astype(complex)
    for d in dens:
        G = G / d
    Ez = _exp_factor(zrule, xs, zsign)
    Ew = _exp_factor(wrule, ys, wsign)
    vals = (Ez @ G @ Ew.T) / TWO_PI_I**2
    if not np.all(np.isfinite(vals)):
        raise QuadratureFailure(f"{what}: non-finite quadrature value")
    return _to_real(vals, what)


def _grid_levels(xs, ys):
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    ys = np.atleast_1d(np.asarray(ys, dtype=float))
    return xs, ys, xs[:, None], ys[None, :]


# ---------------------------------------------------------------------------
# extended Airy kernel


def extended_airy_correction(s, x, t, y):
    """The Gaussian correction term of the extended Airy kernel (zero unless s < t)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if not s < t:
        return np.zeros(np.broadcast(x, y).shape) if (x.ndim or y.ndim) else 0.0
    d = s - t
    expo = (-(d**4) + 6.0 * (x + y) * d**2 + 3.0 * (x - y) ** 2) / (12.0 * d)
    out = -np.exp(expo) / np.sqrt(4.0 * math.pi * (t - s))
    return out if out.ndim else float(out)


def _symmetric_apex(gap: float) -> float:
    # equal apexes a for z and w with 2a exceeding a pole at Re(z + w) = gap
    return 1.0 + max(gap, 0.0) / 2.0


def airy_grid(s: float, xs, t: float, ys, quad: QuadConfig = DEFAULT_QUAD) -> np.ndarray:
    """Extended Airy kernel K(s, x_i; t, y_j) on a level grid."""
    xs, ys, X, Y = _grid_levels(xs, ys)
    # pole at z + w = t - s; the printed apexes (1 - s, 1 + t) have sum 2 + t - s
    a = _symmetric_apex(t - s)
    rz = rule_for(a, PI3, quad)
    rw = rule_for(a, PI3, quad)
    val = double_contour(rz, rw, lambda Z, W: (1.0, [Z + s + W - t]), xs, ys, what="k_airy")
    return val + extended_airy_correction(s, X, t, Y)


def k_airy(s: float, x: float, t: float, y: float, quad: QuadConfig = DEFAULT_QUAD) -> float:
    """Extended Airy kernel K^Airy(s, x; t, y)."""
    return float(airy_grid(s, [x], t, [y], quad)[0, 0])


def airy_kernel(x, y):
    """Airy kernel K_Ai(x, y) from Airy values; confluent form on the diagonal."""
    ax, ay = airy_suite(x), airy_suite(y)
    if x == y:
        return ax.ai_prime**2 - x * ax.ai**2
    return (ax.ai * ay.ai_prime - ax.ai_prime * ay.ai) / (x - y)


# ---------------------------------------------------------------------------
# GSE kernel and the Airy form of its (1,2) entry


def gse_grid(xs, ys, quad: QuadConfig = DEFAULT_QUAD) -> BlockGrid:
    r = rule_for(1.0, PI3, quad)
    k11 = double_contour(r, r, lambda Z, W: (Z - W, [4.0 * (Z + W), Z, W]), xs, ys, what="gse k11")
    k12 = double_contour(r, r, lambda Z, W: (Z - W, [4.0 * Z, Z + W]), xs, ys, what="gse k12")
    k21 = -double_contour(r, r, lambda Z, W: (Z - W, [4.0 * Z, Z + W]), ys, xs, what="gse k21").T
    k22 = double_contour(r, r, lambda Z, W: (Z - W, [4.0 * (Z + W)]), xs, ys, what="gse k22")
    return BlockGrid(k11, k12, k21, k22)


def k_gse(x: float, y: float, quad: QuadConfig = DEFAULT_QUAD) -> KernelBlock:
    """The GSE edge kernel at (x, y)."""
    return gse_grid([x], [y], quad).block()


def s4_airy_form(x: float, y: float) -> float:
    """(1/2) K_Ai(x, y) - (1/4) Ai(y) int_x^inf Ai, from the Airy suite."""
    return 0.5 * airy_kernel(x, y) - 0.25 * airy_suite(y).ai * airy_suite(x).tail_integral


# ---------------------------------------------------------------------------
# pinned half-space kernel K^{hs;inf}


def r22_hs_inf(s, x, t, y):
    """Closed Gaussian form of the R22 term of K^{hs;inf}."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    h = np.exp(s**3 / 3.0 + t**3 / 3.0 - x * s - y * t)
    d = y - t * t - x + s * s
    out = h * d / (2.0 * math.sqrt(math.pi) * (t + s) ** 1.5) * np.exp(-(d * d) / (4.0 * (t + s)))
    return out if out.ndim else float(out)


def r22_hs_inf_contour(s: float, x: float, t: float, y: float, quad: QuadConfig = DEFAULT_QUAD) -> float:
    """R22 of K^{hs;inf} as a vertical-contour integral (Fourier form of the Gaussian)."""
    rule = rule_for(0.0, PI2, quad, gaussian_rate=s + t)
    w = rule.nodes
    f = w * np.exp(w * w * (t + s) - w * (t * t - s * s) + (y - x) * w)
    val = (rule.weights * f).sum()
    h = math.exp(s**3 / 3.0 + t**3 / 3.0 - x * s - y * t)
    return float((-h / (math.pi * 1j) * val).real)


def _hs_inf_12(s, xs, t, ys, quad):
    a = _symmetric_apex(t - s)
    r = rule_for(a, PI3, quad)
    val = double_contour(
        r, r, lambda Z, W: (Z + s - W + t, [2.0 * (Z + s), Z + s + W - t]), xs, ys, what="hs_inf I12"
    )
    X = np.asarray(xs, dtype=float)[:, None]
    Y = np.asarray(ys, dtype=float)[None, :]
    return val + extended_airy_correction(s, X, t, Y)


def _vertical_22(s, xs, t, ys, quad):
    # valid for s > 2, t > 0: both contours on Re z = Re w = 1
    r = rule_for(1.0, PI2, quad)
    return double_contour(r, r, lambda Z, W: (Z - W - s + t, [Z + W - s - t]), xs, ys, what="K22 vertical")


def _hs_inf_22(s, xs, t, ys, quad):
    if s > 2.0:
        return _vertical_22(s, xs, t, ys, quad)
    if t > 2.0:
        return -_vertical_22(t, ys, s, xs, quad).T
    rz = rule_for(1.0 + s, PI3, quad)
    rw = rule_for(1.0 + t, PI3, quad)
    val = double_contour(rz, rw, lambda Z, W: (Z - s - W + t, [Z - s + W - t]), xs, ys, what="hs_inf I22")
    X = np.asarray(xs, dtype=float)[:, None]
    Y = np.asarray(ys, dtype=float)[None, :]
    return val + r22_hs_inf(s, X, t, Y)


def hs_inf_grid(s: float, xs, t: float, ys, quad: QuadConfig = DEFAULT_QUAD) -> BlockGrid:
    if not (s > 0 and t > 0):
        raise InvalidTime(f"K^hs;inf needs s, t > 0, got s={s}, t={t}")
    xs, ys, _, _ = _grid_levels(xs, ys)
    r = rule_for(1.0, PI3, quad)
    k11 = double_contour(
        r, r, lambda Z, W: (Z + s - W - t, [4.0 * (Z + s + W + t), Z + s, W + t]), xs, ys, what="hs_inf I11"
    )
    k12 = _hs_inf_12(s, xs, t, ys, quad)
    k21 = -_hs_inf_12(t, ys, s, xs, quad).T
    k22 = _hs_inf_22(s, xs, t, ys, quad)
    return BlockGrid(k11, k12, k21, k22)


def k_hs_inf(s: float, x: float, t: float, y: float, quad: QuadConfig = DEFAULT_QUAD) -> KernelBlock:
    """The pinned half-space Airy kernel K^{hs;inf}(s, x; t, y)."""
    return hs_inf_grid(s, [x], t, [y], quad).block()


def k22_vertical(T: float, s: float, x: float, t: float, y: float, quad: QuadConfig = DEFAULT_QUAD) -> float:
    """K^{hs;inf}_22(s+T, x; t+T, y) as one double integral on C_1^{pi/2} x C_1^{pi/2}."""
    if not (T > -s and T > -t and T > 2.0 - s and 2.0 * T > 2.0 - s - t):
        raise InvalidShift(f"shift T={T} too small for offsets s={s}, t={t}")
    r = rule_for(1.0, PI2, quad)
    val = double_contour(
        r, r, lambda Z, W: (Z - s - W + t, [Z - s + W - t - 2.0 * T]), [x], [y], what="k22_vertical"
    )
    return float(val[0, 0])


# ---------------------------------------------------------------------------
# boundary-parameter kernel K^varpi (vertical-contour R22)


def _check_varpi(varpi: float):
    if not varpi > 1.0:
        raise InvalidBoundaryParam(f"K^varpi needs varpi > 1, got {varpi}")


_RAY_R = np.linspace(0.0, 8.0, 161)
_RAY_UP = np.exp(1j * PI3)


def _ray_peak(apex, level: float):
    """Largest Re(z^3/3 - level z) on the upper pi/3 ray from each apex."""
    z = np.asarray(apex, dtype=float)[..., None] + _RAY_R * _RAY_UP
    return (z**3 / 3.0 - level * z).real.max(axis=-1)


def _level_of(levels) -> float:
    return float(np.median(np.asarray(levels, dtype=float)))


def _apex_pair(x: float, y: float, z_lo: float, z_hi: float, w_lo, w_hi: float, n: int = 41):
    """Apexes (a, b) minimizing the combined ray peak with z_lo <= a <= z_hi, w_lo(a) <= b <= w_hi."""
    a = np.linspace(z_lo, z_hi, n)
    lo = np.broadcast_to(np.asarray(w_lo(a), dtype=float), a.shape)
    frac = np.linspace(0.0, 1.0, n)
    b = lo[:, None] + (w_hi - lo)[:, None] * frac[None, :]
    cost = _ray_peak(a, x)[:, None] + _ray_peak(b, y)
    cost = np.where(lo[:, None] <= w_hi, cost, np.inf)
    i, j = np.unravel_index(np.argmin(cost), cost.shape)
    return float(a[i]), float(b[i, j])


def _best_apex(level: float, lo: float, hi: float, n: int = 41) -> float:
    a = np.linspace(lo, hi, n)
    return float(a[np.argmin(_ray_peak(a, level))])


# Apexes for K^varpi are free within the strip allowed by the poles; they are
# chosen to minimize the peak of |exp(z^3/3 - x z)| so that the double integral
# does not cancel large terms.  APEX_REACH bounds the search to the right.
APEX_REACH = 6.0


def _varpi_12(varpi, s, xs, t, ys, quad):
    # poles: Z = -s (left), W = t - s - Z (left), W = varpi + t (right)
    a, b = _apex_pair(
        _level_of(xs), _level_of(ys), 1.0 - s, max(1.0 - s, APEX_REACH),
        lambda a: t - s - a + 0.5, varpi + t - 0.5,
    )
    rz = rule_for(a, PI3, quad)
    rw = rule_for(b, PI3, quad)
    val = double_contour(
        rz,
        rw,
        lambda Z, W: (
            (Z + s - W + t) * (varpi + Z + s),
            [2.0 * (Z + s), Z + s + W - t, varpi - W + t],
        ),
        xs,
        ys,
        what="varpi I12",
    )
    X = np.asarray(xs, dtype=float)[:, None]
    Y = np.asarray(ys, dtype=float)[None, :]
    return val + extended_airy_correction(s, X, t, Y)


def _varpi_r22(varpi, s, xs, t, ys, quad):
    # Gaussian in w; the line may sit anywhere strictly between the poles -varpi and varpi
    rate = s + t
    X = np.asarray(xs, dtype=float)[:, None]
    Y = np.asarray(ys, dtype=float)[None, :]
    lin = s * s - t * t + Y - X
    c = min(max(-float(np.median(lin)) / (2.0 * rate), -varpi + 0.5), varpi - 0.5)
    rule = rule_for(c, PI2, quad, gaussian_rate=rate)
    w = rule.nodes
    d = (w - varpi) * (w + varpi)
    _check_clearance([d], "varpi R22")
    base = rule.weights * w * np.exp(rate * (w * w - c * c)) / (2.0 * d)
    integral = (np.exp(np.multiply.outer(lin, w - c)) * base).sum(axis=-1) / TWO_PI_I
    pref = np.exp(t**3 / 3.0 + s**3 / 3.0 - Y * t - X * s + rate * c * c + lin * c)
    return _to_real(pref * integral, "varpi R22")


def varpi_grid(varpi: float, s: float, xs, t: float, ys, quad: QuadConfig = DEFAULT_QUAD) -> BlockGrid:
    _check_varpi(varpi)
    if not (s > 0 and t > 0):
        raise InvalidTime(f"K^varpi needs s, t > 0, got s={s}, t={t}")
    xs, ys, _, _ = _grid_levels(xs, ys)
    x0, y0 = _level_of(xs), _level_of(ys)
    # I11 poles: Z = -s, W = -t, Z + W = -s - t, all to the left
    rz = rule_for(_best_apex(x0, 1.0 - s, max(1.0 - s, APEX_REACH)), PI3, quad)
    rw = rule_for(_best_apex(y0, 1.0 - t, max(1.0 - t, APEX_REACH)), PI3, quad)
    k11 = double_contour(
        rz,
        rw,
        lambda Z, W: (
            (Z + s - W - t) * (varpi + Z + s) * (varpi + W + t),
            [Z + s + W + t, Z + s, W + t],
        ),
        xs,
        ys,
        what="varpi I11",
    )
    k12 = _varpi_12(varpi, s, xs, t, ys, quad)
    k21 = -_varpi_12(varpi, t, ys, s, xs, quad).T
    # I22 poles: Z + W = s + t (left), Z = varpi + s, W = varpi + t (right)
    a, b = _apex_pair(
        x0, y0, s + t + 1.0 - (varpi + t - 0.5), varpi + s - 0.5,
        lambda a: s + t + 1.0 - a, varpi + t - 0.5,
    )
    rz = rule_for(a, PI3, quad)
    rw = rule_for(b, PI3, quad)
    i22 = double_contour(
        rz,
        rw,
        lambda Z, W: (Z - s - W + t, [4.0 * (Z - s + W - t), varpi - Z + s, varpi - W + t]),
        xs,
        ys,
        what="varpi I22",
    )
    k22 = i22 + _varpi_r22(varpi, s, xs, t, ys, quad)
    return BlockGrid(k11, k12, k21, k22)


def k_varpi(varpi: float, s: float, x: float, t: float, y: float, quad: QuadConfig = DEFAULT_QUAD) -> KernelBlock:
    """The alternative boundary-parameter kernel K^varpi(s, x; t, y), varpi > 1."""
    return varpi_grid(varpi, s, [x], t, [y], quad).block()


# ---------------------------------------------------------------------------
# boundary-parameter kernel K^{hs;varpi} as defined with apexes a_i = |varpi| + 3i
#
# Apex placement (shifted variables Z = z + s, W = w + t), chosen to keep each
# pole on the same side as the printed contours:
#   I11: Z on C_{3/2}^{pi/3}, W on C_{5/2}^{pi/3}   (poles Z=0, W=0, Z+W=0 to the left)
#   I12: Z on C_{5/2}^{pi/3}, W on C_{1/2}^{2pi/3}  (Z=W separated; W=-varpi enclosed by W)
#   I22: poles Z=-varpi, W=-varpi must stay right of the contours, which forces
#        integrand magnitudes ~exp((varpi+s)^3/3).  It is evaluated as the same
#        integral over Z, W on C_{-1}^{2pi/3} plus the two residue integrals
#        picked up when the contours are pushed across Z=-varpi and W=-varpi.
# The pieces of I22 + R22 carrying the large prefactors exp((varpi+s)^3/3) and
# exp((varpi+t)^3/3) cancel against each other, so they are summed in
# multiprecision arithmetic.


def _hs_varpi_11(varpi, s, xs, t, ys, quad):
    rz = rule_for(1.5 - s, PI3, quad)
    rw = rule_for(2.5 - t, PI3, quad)
    return double_contour(
        rz,
        rw,
        lambda Z, W: (
            (Z + s - W - t) * (Z + s + varpi) * (W + t + varpi),
            [Z + s + W + t, Z + s, W + t],
        ),
        xs,
        ys,
        what="hs_varpi I11",
    )


def _hs_varpi_12(varpi, s, xs, t, ys, quad):
    rz = rule_for(2.5 - s, PI3, quad)
    rw = rule_for(0.5 - t, TWO_PI3, quad)
    val = double_contour(
        rz,
        rw,
        lambda Z, W: (
            (Z + s + W + t) * (Z + varpi + s),
            [2.0 * (Z + s), Z + s - W - t, W + varpi + t],
        ),
        xs,
        ys,
        zsign=1,
        wsign=-1,
        what="hs_varpi I12",
    )
    X = np.asarray(xs, dtype=float)[:, None]
    Y = np.asarray(ys, dtype=float)[None, :]
    return val + extended_airy_correction(s, X, t, Y)


def _hs_varpi_i22_grid(varpi, s, xs, t, ys, quad):
    # Z, W on C_{-1}^{2pi/3}: the poles Z = -varpi, W = -varpi lie on the wrong side
    rz = rule_for(-1.0 - s, TWO_PI3, quad)
    rw = rule_for(-1.0 - t, TWO_PI3, quad)
    return double_contour(
        rz,
        rw,
        lambda Z, W: (Z + s - W - t, [4.0 * (Z + s + W + t), Z + s + varpi, W + t + varpi]),
        xs,
        ys,
        zsign=-1,
        wsign=-1,
        what="hs_varpi I22",
    )


def hs_varpi_i22_shifted(varpi, s, x, t, y, quad: QuadConfig = DEFAULT_QUAD) -> float:
    """The I22 integrand of K^{hs;varpi} over Z, W on C_{-1}^{2pi/3} (no residues)."""
    return float(_hs_varpi_i22_grid(varpi, s, [x], t, [y], quad)[0, 0])


def hs_varpi_i22_direct(varpi, s, x, t, y, quad: QuadConfig = DEFAULT_QUAD, margin: float = 0.5) -> float:
    """I22 of K^{hs;varpi} on contours left of the poles, in double precision.

    Only accurate while exp((varpi + s + margin)^3 / 3) stays moderate; used to
    cross-check the residue split at small varpi.
    """
    rz = rule_for(-varpi - margin - s, TWO_PI3, quad)
    rw = rule_for(-varpi - margin - t, TWO_PI3, quad)
    val = double_contour(
        rz,
        rw,
        lambda Z, W: (Z + s - W - t, [4.0 * (Z + s + W + t), Z + s + varpi, W + t + varpi]),
        [x],
        [y],
        zsign=-1,
        wsign=-1,
        what="hs_varpi I22 direct",
    )
    return float(val[0, 0])


def hs_varpi_k22(varpi: float, s: float, x: float, t: float, y: float, quad: QuadConfig = DEFAULT_QUAD,
                 degenerate: str = "zero") -> float:
    """K^{hs;varpi}_22(s, x; t, y) = I22 + R22 with the three-term R22.

    On the branch line x - s^2 = y - t^2 the behaviour follows ``degenerate``:
    "zero" sets R22 to 0 there, "raise" raises DegenerateBranch, and "limit"
    returns the continuous extension from either side.  R22 itself does not
    vanish on the line, so "zero" and "limit" agree only at coincident points.
    """
    if degenerate not in ("zero", "raise", "limit"):
        raise ValueError(f"unknown degenerate mode {degenerate!r}")
    bx, by = x - s * s, y - t * t
    if bx == by:
        if degenerate == "raise":
            raise DegenerateBranch("x - s^2 = y - t^2: the R22 branch is undefined")
        if s == t and x == y:
            return 0.0
        if degenerate == "zero" or s + t == 0:
            return hs_varpi_i22_shifted(varpi, s, x, t, y, quad) + _mp_sum_lines(
                _hs_varpi_residue_lines, (varpi, s, x, t, y)
            )
    elif bx < by:
        return -hs_varpi_k22(varpi, t, y, s, x, quad)
    return hs_varpi_i22_shifted(varpi, s, x, t, y, quad) + hs_varpi_tail(varpi, s, x, t, y, quad)


def hs_varpi_tail(varpi: float, s: float, x: float, t: float, y: float, quad: QuadConfig = DEFAULT_QUAD) -> float:
    """Residue terms of the shifted I22 plus R22, on the x - s^2 > y - t^2 branch.

    Substituting u = s - z and u = t - w shows that the first residue term and
    the first R22 line share an integrand and differ by the residue at
    u = s - varpi, while the second residue term cancels the second R22 line.
    In the third line the cubic terms cancel, leaving a Gaussian integrand;
    moving it onto a vertical line between -varpi and varpi absorbs that
    residue.  What remains is one well-conditioned double-precision integral.
    """
    if s + t == 0:
        return 0.25 * math.exp(varpi * (x - y))
    rate = s + t
    lin = s * s - t * t + y - x
    const = (s**3 + t**3) / 3.0 - y * t - x * s
    c = min(max(-lin / (2.0 * rate), -varpi + 0.5), varpi - 0.5)
    rule = rule_for(c, math.pi / 2, quad, gaussian_rate=rate)
    w = rule.nodes
    shift = rate * c * c + lin * c
    den = 2.0 * (w - varpi) * (w + varpi)
    _check_clearance([den], "hs_varpi R22")
    val = np.sum(rule.weights * w * np.exp(rate * w * w + lin * w - shift) / den) / TWO_PI_I
    return float(_to_real(np.array([val]), "hs_varpi R22")[0]) * math.exp(shift + const)


def hs_varpi_k22_residue_route(varpi: float, s: float, x: float, t: float, y: float,
                               quad: QuadConfig = DEFAULT_QUAD) -> float:
    """K^{hs;varpi}_22 from the residue terms and the three R22 lines as printed.

    Every piece is integrated separately in multiprecision arithmetic, which
    makes this slow but independent of the cancellations used in
    :func:`hs_varpi_tail`.  Requires x - s^2 > y - t^2.
    """
    if not x - s * s > y - t * t:
        raise DegenerateBranch("the residue route is defined on the x - s^2 > y - t^2 branch only")
    return hs_varpi_i22_shifted(varpi, s, x, t, y, quad) + _mp_sum_lines(
        _hs_varpi_k22_lines, (varpi, s, x, t, y), degree=5
    )


@dataclass(frozen=True)
class _MpLine:
    """coef * (2 pi i)^{-1} int exp(exponent(z)) factor(z) dz over C_apex^{2pi/3}.

    ``exponent`` and ``factor`` must accept both numpy arrays and mpmath numbers;
    the exponent carries any constant prefactor so magnitudes can be estimated
    in double precision before the multiprecision pass.
    """

    exponent: Callable
    factor: Callable
    apex: float
    coef: int = 1


_MP_SCAN = np.linspace(0.0, 60.0, 2401)
_MP_FLOOR = -60.0  # terms below exp(-60) relative to O(1) results are dropped
_MP_PANEL = 0.5


def _mp_half_swing(digits: float) -> float:
    # a 24-point Gauss-Legendre rule integrates exp(lam u) on [-1, 1] to about
    # 75 - 14 log2(lam) digits, oscillatory or not
    return min(16.0, max(0.05, 2.0 ** ((75.0 - digits) / 14.0)))


def _mp_scan(line: _MpLine) -> tuple[float, list[np.ndarray]]:
    """Largest log-magnitude of the integrand and panel breakpoints for both rays.

    Panels end where the integrand drops below exp(_MP_FLOOR) for good.  Each
    panel is narrowed until the exponent swing across it is small enough for
    the Gauss rule to resolve the integrand to exp(_MP_FLOOR) absolutely.
    """
    up = np.exp(1j * TWO_PI3)
    peak = -np.inf
    edges = []
    for direction in (up, np.conj(up)):
        z = line.apex + _MP_SCAN * direction
        with np.errstate(over="ignore", invalid="ignore"):
            e = np.asarray(line.exponent(z), dtype=complex)
        if not np.all(np.isfinite(e)):
            raise QuadratureFailure("multiprecision exponent is not finite along the contour")
        alive = np.nonzero(e.real >= _MP_FLOOR)[0]
        if alive.size and alive[-1] == _MP_SCAN.size - 1:
            raise QuadratureFailure("multiprecision integrand does not decay along the contour")
        radius = _MP_SCAN[alive[-1]] + 1.0 if alive.size else 1.0
        peak = max(peak, float(e.real.max()))
        slope = np.abs(np.gradient(e, _MP_SCAN))
        cuts = [0.0]
        while cuts[-1] < radius:
            r = cuts[-1]
            window = (_MP_SCAN >= r - 0.05) & (_MP_SCAN <= r + _MP_PANEL + 0.05)
            digits = (float(e.real[window].max()) - _MP_FLOOR) / math.log(10.0)
            h = 2.0 * _mp_half_swing(digits) / max(float(slope[window].max()), 1e-12)
            h = min(_MP_PANEL, h)
            cuts.append(min(r + h, radius))
        edges.append(np.array(cuts))
    return peak, edges


@lru_cache(maxsize=16)
def _mp_gauss_legendre(degree: int, dps: int):
    with mpmath.workdps(dps):
        rule = mpmath.calculus.quadrature.GaussLegendre(mpmath.mp)
        return tuple(rule.calc_nodes(degree, mpmath.mp.prec))


def _mp_ray(line: _MpLine, direction, cuts, nodes):
    total = mpmath.mpc(0)
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        lo, hi = mpmath.mpf(float(lo)), mpmath.mpf(float(hi))
        mid, half = (hi + lo) / 2, (hi - lo) / 2
        part = mpmath.mpc(0)
        for x, w in nodes:
            z = line.apex + (mid + half * x) * direction
            part += w * mpmath.exp(line.exponent(z)) * line.factor(z)
        total += half * part
    return total * direction


def _mp_line_integral(line: _MpLine, edges, degree: int, dps: int):
    nodes = _mp_gauss_legendre(degree, dps)
    up = mpmath.expjpi(mpmath.mpf(2) / 3)
    upper = _mp_ray(line, up, edges[0], nodes)
    lower = _mp_ray(line, mpmath.conj(up), edges[1], nodes)
    return line.coef * (upper - lower) / (2j * mpmath.pi)


def _mp_sum_lines(build, params, degree: int | None = None) -> float:
    """Sum of the real parts of the lines ``build(*params)``.

    ``build`` is called once with float parameters to size the precision and
    truncation, then again with mpmath parameters so that the large constant
    prefactors are formed without double-precision rounding.
    """
    scans = [_mp_scan(line) for line in build(*params)]
    if not scans:
        return 0.0
    biggest = max(max(m for m, _ in scans), 0.0)
    dps = int(25 + biggest / math.log(10.0))
    if degree is None:
        degree = 4
    with mpmath.workdps(dps):
        lines = build(*(mpmath.mpf(p) for p in params))
        total = mpmath.mpf(0)
        for line, (_, edges) in zip(lines, scans):
            total += mpmath.re(_mp_line_integral(line, edges, degree, dps))
        return float(total)


def _hs_varpi_residue_lines(varpi, s, x, t, y) -> list[_MpLine]:
    """Residues picked up moving the I22 contours from left of -varpi to C_{-1}^{2pi/3}."""
    pt = (varpi + t) ** 3 / 3 - y * (varpi + t)
    ps = (varpi + s) ** 3 / 3 - x * (varpi + s)
    return [
        _MpLine(lambda z: pt - z**3 / 3 + x * z, lambda z: 1 / (4 * (z + s - varpi)), -1.0 - s, -1),
        _MpLine(lambda w: ps - w**3 / 3 + y * w, lambda w: 1 / (4 * (w + t - varpi)), -1.0 - t, 1),
    ]


def _hs_varpi_r22_lines(varpi, s, x, t, y) -> list[_MpLine]:
    """The three-term R22 of K^{hs;varpi} on the x - s^2 > y - t^2 branch."""
    pt = (varpi + t) ** 3 / 3 - y * (varpi + t)
    ps = (varpi + s) ** 3 / 3 - x * (varpi + s)
    lines = [
        # pole z = varpi stays enclosed (apex right of varpi)
        _MpLine(lambda z: pt + (s - z) ** 3 / 3 - x * (s - z), lambda z: 1 / (4 * (z - varpi)), varpi + 1.0, 1),
        # pole w = varpi stays to the right of the contour
        _MpLine(
            lambda w: ps + (t - w) ** 3 / 3 - y * (t - w), lambda w: 1 / (4 * (w - varpi)),
            min(t - 1.0, varpi - 1.0), -1,
        ),
    ]
    if s + t > 0:
        # poles w = +-varpi stay to the right of the contour
        lines.append(
            _MpLine(
                lambda w: (t - w) ** 3 / 3 + (w + s) ** 3 / 3 - y * (t - w) - x * (w + s),
                lambda w: w / (2 * (w - varpi) * (w + varpi)),
                -abs(varpi) - 1.0,
                1,
            )
        )
    return lines


def _hs_varpi_k22_lines(varpi, s, x, t, y) -> list[_MpLine]:
    return _hs_varpi_residue_lines(varpi, s, x, t, y) + _hs_varpi_r22_lines(varpi, s, x, t, y)


def hs_varpi_grid(varpi: float, s: float, xs, t: float, ys, quad: QuadConfig = DEFAULT_QUAD) -> BlockGrid:
    if not (s >= 0 and t >= 0):
        raise InvalidTime(f"K^hs;varpi needs s, t >= 0, got s={s}, t={t}")
    xs, ys, _, _ = _grid_levels(xs, ys)
    k11 = _hs_varpi_11(varpi, s, xs, t, ys, quad)
    k12 = _hs_varpi_12(varpi, s, xs, t, ys, quad)
    k21 = -_hs_varpi_12(varpi, t, ys, s, xs, quad).T
    # the shifted I22 is antisymmetric under (s, x) <-> (t, y), so the reflected
    # branch only swaps the arguments of the tail
    k22 = _hs_varpi_i22_grid(varpi, s, xs, t, ys, quad)
    for i, xi in enumerate(xs):
        for j, yj in enumerate(ys):
            bx, by = xi - s * s, yj - t * t
            if bx > by:
                k22[i, j] += hs_varpi_tail(varpi, s, xi, t, yj, quad)
            elif bx < by:
                k22[i, j] -= hs_varpi_tail(varpi, t, yj, s, xi, quad)
            else:
                k22[i, j] = hs_varpi_k22(varpi, s, xi, t, yj, quad)
    return BlockGrid(k11, k12, k21, k22)


def k_hs_varpi(varpi: float, s: float, x: float, t: float, y: float, quad: QuadConfig = DEFAULT_QUAD) -> KernelBlock:
    """The half-space Airy kernel K^{hs;varpi}(s, x; t, y) with the three-term R22."""
    if varpi <= 1.0:
        # the residue placement above assumes -varpi < -1 < 0 < 1 < varpi
        raise InvalidBoundaryParam(f"this evaluation route needs varpi > 1, got {varpi}")
    return hs_varpi_grid(varpi, s, [x], t, [y], quad).block()


# ---------------------------------------------------------------------------
# small-time split of K^{hs;inf}(t_n, x; t_n, y)


def _check_tn(t_n):
    if not 0.0 < t_n <= 0.5:
        raise InvalidTime(f"t_n must lie in (0, 1/2], got {t_n}")


def origin_regular_grid(t_n: float, xs, ys, quad: QuadConfig = DEFAULT_QUAD) -> BlockGrid:
    """The regular part K^N of K^{hs;inf}(t_n, . ; t_n, .) with both contours on C_1^{pi/3}."""
    _check_tn(t_n)
    xs, ys, _, _ = _grid_levels(xs, ys)
    r = rule_for(1.0, PI3, quad)
    tn = t_n
    k11 = double_contour(
        r, r, lambda Z, W: (Z - W, [4.0 * (Z + W + 2 * tn), Z + tn, W + tn]), xs, ys, what="origin K11"
    )
    g12 = lambda Z, W: (Z - W + 2 * tn, [2.0 * (Z + tn), Z + W])
    k12 = double_contour(r, r, g12, xs, ys, what="origin K12")
    k21 = -double_contour(r, r, g12, ys, xs, what="origin K21").T
    k22 = double_contour(r, r, lambda Z, W: (Z - W, [Z + W - 2 * tn]), xs, ys, what="origin K22")
    return BlockGrid(k11, k12, k21, k22)


def origin_delta(t_n: float, x, y):
    """The singular Gaussian-derivative part delta_N(x, y) of the small-time split."""
    _check_tn(t_n)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = y - x
    out = (
        np.exp(2.0 * t_n**3 / 3.0 - t_n * (x + y))
        * d
        / (2.0 * math.sqrt(math.pi) * (2.0 * t_n) ** 1.5)
        * np.exp(-(d * d) / (8.0 * t_n))
    )
    return out if out.ndim else float(out)


def k_origin_split(t_n: float, x: float, y: float, quad: QuadConfig = DEFAULT_QUAD) -> OriginSplit:
    reg = origin_regular_grid(t_n, [x], [y], quad).block()
    return OriginSplit(reg, origin_delta(t_n, x, y), t_n)


# ---------------------------------------------------------------------------
# families: uniform interface used by the Pfaffian and study layers


class KernelFamily:
    """A matrix kernel K(s, x; t, y) evaluable on level grids at fixed times."""

    name = "kernel"

    def grid(self, s: float, xs, t: float, ys) -> BlockGrid:
        raise NotImplementedError

    def k12_grid(self, s: float, xs, t: float, ys) -> np.ndarray:
        return self.grid(s, xs, t, ys).k12

    def __call__(self, s: float, x: float, t: float, y: float) -> KernelBlock:
        return self.grid(s, [x], t, [y]).block()

    def block(self, p: SpaceTimePoint, q: SpaceTimePoint) -> KernelBlock:
        return self(p.t, p.x, q.t, q.x)


@dataclass
class GSEFamily(KernelFamily):
    quad: QuadConfig = DEFAULT_QUAD
    name = "gse"

    def grid(self, s, xs, t, ys):
        return gse_grid(xs, ys, self.quad)


@dataclass
class HalfSpaceInfFamily(KernelFamily):
    quad: QuadConfig = DEFAULT_QUAD
    name = "hs_inf"

    def grid(self, s, xs, t, ys):
        return hs_inf_grid(s, xs, t, ys, self.quad)


@dataclass
class VarpiFamily(KernelFamily):
    varpi: float = 2.0
    quad: QuadConfig = DEFAULT_QUAD
    name = "varpi"

    def grid(self, s, xs, t, ys):
        return varpi_grid(self.varpi, s, xs, t, ys, self.quad)


@dataclass
class HalfSpaceVarpiFamily(KernelFamily):
    varpi: float = 2.0
    quad: QuadConfig = DEFAULT_QUAD
    name = "hs_varpi"

    def grid(self, s, xs, t, ys):
        if self.varpi <= 1.0:
            raise InvalidBoundaryParam(f"this evaluation route needs varpi > 1, got {self.varpi}")
        return hs_varpi_grid(self.varpi, s, xs, t, ys, self.quad)

    def k12_grid(self, s, xs, t, ys):
        xs, ys, _, _ = _grid_levels(xs, ys)
        return _hs_varpi_12(self.varpi, s, xs, t, ys, self.quad)


@dataclass
class OriginRegularFamily(KernelFamily):
    """K^N at time t_n; the time arguments are ignored."""

    t_n: float = 0.1
    quad: QuadConfig = DEFAULT_QUAD
    name = "origin_regular"

    def grid(self, s, xs, t, ys):
        return origin_regular_grid(self.t_n, xs, ys, self.quad)


FAMILIES = {
    "gse": GSEFamily,
    "hs_inf": HalfSpaceInfFamily,
    "varpi": VarpiFamily,
    "hs_varpi": HalfSpaceVarpiFamily,
}


def make_family(name: str, varpi: float | None = None, t_n: float | None = None,
                quad: QuadConfig = DEFAULT_QUAD) -> KernelFamily:
    if name in ("varpi", "hs_varpi"):
        if varpi is None:
            raise UsageError(f"family {name} needs varpi")
        return FAMILIES[name](varpi=varpi, quad=quad)
    if name == "origin":
        if t_n is None:
            raise UsageError("family origin needs t_n")
        return OriginRegularFamily(t_n=t_n, quad=quad)
    if name not in FAMILIES:
        raise UsageError(f"unknown kernel family {name!r}")
    return FAMILIES[name](quad=quad)
