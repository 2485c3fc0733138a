"""Truncated quadrature on wedge contours and the special functions built on it.

A wedge contour with apex ``a`` and half-angle ``phi`` is the pair of rays
``a + r e^{-i phi}`` (traversed inward) and ``a + r e^{i phi}`` (traversed
outward), r in [0, R].  Angles pi/3 and 2pi/3 carry integrands dominated by
``exp(+-z^3/3)``, which decay like ``exp(-r^3/3)``; angle pi/2 (vertical lines)
carries integrands with Gaussian decay.

Each ray is split into Gauss-Legendre panels whose breakpoints are graded
geometrically toward the apex, where integrands peak and where the nearest
poles of the kernel denominators sit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq

from .errors import BudgetExceeded, InvalidAngle, NonFiniteIntegrand, NonPositiveTime, QuadratureFailure

__all__ = [
    "QuadConfig",
    "WedgeContour",
    "WedgeRule",
    "AirySuiteValue",
    "build_wedge_rule",
    "integrate_single",
    "integrate_double",
    "airy_suite",
    "heat_kernel",
    "min_distance",
]

TWO_PI_I = 2j * math.pi
PANELS_PER_RAY = 8


@dataclass(frozen=True)
class QuadConfig:
    """Accuracy knobs shared by every contour integral in the package."""

    tol: float = 1e-10
    nodes_per_ray: int = 256
    max_nodes: int = 4096

    def refined(self) -> "QuadConfig":
        return QuadConfig(self.tol, 2 * self.nodes_per_ray, max(self.max_nodes, 4 * self.nodes_per_ray))


DEFAULT_QUAD = QuadConfig()


@dataclass(frozen=True)
class WedgeContour:
    apex: float
    angle: float
    half_length: float
    nodes_per_ray: int

    def __post_init__(self):
        if not 0.0 < self.angle < math.pi:
            raise InvalidAngle(f"angle must lie in (0, pi), got {self.angle}")
        if not self.half_length > 0:
            raise ValueError("half_length must be positive")
        if self.nodes_per_ray < 2:
            raise ValueError("nodes_per_ray must be at least 2")


@dataclass(frozen=True)
class WedgeRule:
    nodes: np.ndarray
    weights: np.ndarray
    source: WedgeContour
    est_tail_bound: float

    def __len__(self):
        return self.nodes.size


def _cubic_radius(c: float, tol: float) -> float:
    # smallest R beyond the envelope maximum with -R^3/3 + c R^2 = log(tol)
    log_tol = math.log(tol)
    g = lambda r: -r**3 / 3.0 + c * r**2 - log_tol
    lo = max(2.0 * c, 1e-3)
    hi = lo + 1.0
    while g(hi) > 0:
        hi *= 2.0
    return brentq(g, lo, hi, xtol=1e-12)


def _gaussian_radius(rate: float, c: float, tol: float) -> float:
    # -rate R^2 + c R = log(tol)
    log_tol = math.log(tol)
    return (c + math.sqrt(c * c - 4.0 * rate * log_tol)) / (2.0 * rate)


def _graded_panel_nodes(radius: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes on [0, radius] in geometrically graded panels."""
    panels = min(PANELS_PER_RAY, max(1, n // 4))
    per_panel = [n // panels + (1 if k < n % panels else 0) for k in range(panels)]
    edges = np.concatenate([[0.0], radius * 2.0 ** np.arange(-(panels - 1), 1, dtype=float)])
    rs, ws = [], []
    for k in range(panels):
        x, w = np.polynomial.legendre.leggauss(per_panel[k])
        a, b = edges[k], edges[k + 1]
        rs.append(0.5 * (b - a) * x + 0.5 * (b + a))
        ws.append(0.5 * (b - a) * w)
    return np.concatenate(rs), np.concatenate(ws)


@lru_cache(maxsize=512)
def build_wedge_rule(
    apex: float,
    angle: float,
    tol: float = DEFAULT_QUAD.tol,
    max_nodes: int = DEFAULT_QUAD.max_nodes,
    nodes_per_ray: int = DEFAULT_QUAD.nodes_per_ray,
    envelope: float | None = None,
    gaussian_rate: float | None = None,
) -> WedgeRule:
    """Discretize the wedge contour with apex ``apex`` and half-angle ``angle``.

    The truncation radius is the root of ``-R^3/3 + c R^2 = log(tol)`` with
    envelope constant ``c`` (default ``2 + |apex|/2``, which dominates the
    apex cross terms and linear level terms for |x| <= 10).  Vertical contours
    (angle pi/2) need ``gaussian_rate``: the integrand is then assumed bounded
    by ``exp(-rate r^2 + c r)``; if omitted, the rate ``apex`` of
    ``exp(z^3/3)`` on the line Re z = apex is used.
    """
    if not 0.0 < angle < math.pi:
        raise InvalidAngle(f"angle must lie in (0, pi), got {angle}")
    if not tol > 0:
        raise ValueError("tol must be positive")
    if 2 * nodes_per_ray > max_nodes:
        raise BudgetExceeded(f"{2 * nodes_per_ray} nodes requested but max_nodes={max_nodes}")
    c = 2.0 + 0.5 * abs(apex) if envelope is None else float(envelope)
    vertical = abs(angle - math.pi / 2) < 1e-12
    if vertical:
        rate = apex if gaussian_rate is None else gaussian_rate
        if rate <= 0:
            raise QuadratureFailure("vertical contour needs a positive Gaussian decay rate")
        radius = _gaussian_radius(rate, c, tol)
        tail = 2.0 * math.exp(-rate * radius**2 + c * radius) / max(2 * rate * radius - c, 1e-300)
    else:
        radius = _cubic_radius(c, tol)
        tail = 2.0 * math.exp(-radius**3 / 3 + c * radius**2) / max(radius**2 - 2 * c * radius, 1e-300)
    r, w = _graded_panel_nodes(radius, nodes_per_ray)
    up = np.exp(1j * angle)
    down = np.exp(-1j * angle)
    # lower ray runs from infinity to the apex, hence the minus sign
    nodes = np.concatenate([apex + r[::-1] * down, apex + r * up])
    weights = np.concatenate([-(w[::-1]) * down, w * up])
    contour = WedgeContour(float(apex), float(angle), float(radius), int(nodes_per_ray))
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return WedgeRule(nodes, weights, contour, tail)


def rule_for(apex: float, angle: float, quad: QuadConfig = DEFAULT_QUAD, **kw) -> WedgeRule:
    return build_wedge_rule(float(apex), float(angle), quad.tol, quad.max_nodes, quad.nodes_per_ray, **kw)


def _check_tail(values: np.ndarray, rule: WedgeRule, total_scale: float, tol: float, axis: int = 0):
    ends = np.take(np.abs(values), [0, values.shape[axis] - 1], axis=axis)
    if ends.max() * rule.source.half_length > tol * max(1.0, total_scale):
        raise QuadratureFailure(
            f"integrand not negligible at truncation radius {rule.source.half_length:.3g}"
        )


def integrate_single(f, rule: WedgeRule, tol: float | None = None) -> complex:
    """Return sum(weights * f(nodes)); the 1/(2 pi i) prefactor is the caller's."""
    vals = np.asarray(f(rule.nodes), dtype=complex)
    if vals.shape != rule.nodes.shape:
        vals = np.broadcast_to(vals, rule.nodes.shape)
    if not np.all(np.isfinite(vals)):
        raise NonFiniteIntegrand("integrand is not finite at some node")
    terms = rule.weights * vals
    if tol is not None:
        _check_tail(vals, rule, float(np.abs(terms).sum()), tol)
    return complex(terms.sum())


def integrate_double(f, rule_z: WedgeRule, rule_w: WedgeRule) -> complex:
    """Tensor-product rule for f(z, w); the 1/(2 pi i)^2 prefactor is the caller's."""
    z = rule_z.nodes[:, None]
    w = rule_w.nodes[None, :]
    vals = np.asarray(f(z, w), dtype=complex)
    vals = np.broadcast_to(vals, (rule_z.nodes.size, rule_w.nodes.size))
    if not np.all(np.isfinite(vals)):
        raise NonFiniteIntegrand("integrand is not finite at some node pair")
    return complex(rule_z.weights @ vals @ rule_w.weights)


def min_distance(nodes: np.ndarray, poles) -> float:
    """Smallest distance between quadrature nodes and a finite set of poles."""
    poles = np.atleast_1d(np.asarray(poles, dtype=complex))
    if poles.size == 0:
        return math.inf
    return float(np.abs(np.asarray(nodes)[:, None] - poles[None, :]).min())


@dataclass(frozen=True)
class AirySuiteValue:
    ai: float
    ai_prime: float
    tail_integral: float


def airy_suite(x: float, quad: QuadConfig = DEFAULT_QUAD) -> AirySuiteValue:
    """Ai, Ai' and the tail integral of Ai from contour integrals on C_a^{pi/3}.

    Ai(x) = (2 pi i)^{-1} int exp(z^3/3 - x z) dz, Ai'(x) brings down -z, and
    int_x^inf Ai(v) dv brings down 1/z after integrating over v first.  The
    apex sits at the saddle point sqrt(x) for x > 1, which keeps the integrand
    free of cancellation deep in the decaying regime.
    """
    x = float(x)
    apex = math.sqrt(x) if x > 1.0 else 1.0
    rule = rule_for(apex, math.pi / 3, quad)
    z = rule.nodes
    e = np.exp(z**3 / 3 - x * z) * rule.weights
    ai = (e.sum() / TWO_PI_I).real
    aip = ((-z * e).sum() / TWO_PI_I).real
    tail = ((e / z).sum() / TWO_PI_I).real
    return AirySuiteValue(float(ai), float(aip), float(tail))


def heat_kernel(t, x, y):
    """(2 pi t)^{-1/2} exp(-(x-y)^2 / (2t)); vectorized over x and y."""
    if not np.all(np.asarray(t) > 0):
        raise NonPositiveTime(f"heat kernel needs t > 0, got {t}")
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    out = np.exp(-d * d / (2.0 * t)) / np.sqrt(2.0 * math.pi * t)
    return float(out) if out.ndim == 0 else out
