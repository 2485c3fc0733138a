import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special

from hsairy.errors import DegenerateBranch, InvalidBoundaryParam, InvalidShift, InvalidTime, UsageError
from hsairy.kernels import (
    airy_kernel,
    extended_airy_correction,
    gse_grid,
    hs_inf_grid,
    hs_varpi_k22,
    hs_varpi_k22_residue_route,
    k22_vertical,
    k_airy,
    k_gse,
    k_hs_inf,
    k_hs_varpi,
    k_origin_split,
    k_varpi,
    make_family,
    origin_delta,
    origin_regular_grid,
    r22_hs_inf,
    r22_hs_inf_contour,
    s4_airy_form,
)


def airy_product_integral(s, x, t, y):
    """Extended Airy kernel for s >= t as int_0^inf exp(-l (s - t)) Ai(x + l) Ai(y + l) dl."""
    f = lambda lam: math.exp(-lam * (s - t)) * special.airy(x + lam)[0] * special.airy(y + lam)[0]
    return integrate.quad(f, 0.0, np.inf, limit=200, epsabs=1e-14)[0]


# ---------------------------------------------------------------------------
# extended Airy kernel


def test_airy_origin_value():
    oracle = integrate.quad(lambda u: special.airy(u)[0] ** 2, 0, np.inf, epsabs=1e-14)[0]
    assert k_airy(0, 0, 0, 0) == pytest.approx(oracle, abs=1e-12)
    assert k_airy(0, 0, 0, 0) == pytest.approx(special.airy(0)[1] ** 2, abs=1e-12)


@pytest.mark.parametrize("s,x,t,y", [(1.0, 0.0, 0.0, 0.5), (0.5, -1.0, 0.2, 1.0), (0.3, 0.3, 0.3, -0.4)])
def test_airy_matches_product_integral(s, x, t, y):
    assert k_airy(s, x, t, y) == pytest.approx(airy_product_integral(s, x, t, y), abs=1e-10)


def test_airy_correction_only_for_increasing_time():
    assert extended_airy_correction(1.0, 0.3, 1.0, 0.2) == 0.0
    assert extended_airy_correction(1.0, 0.3, 0.5, 0.2) == 0.0
    assert extended_airy_correction(0.5, 0.3, 1.0, 0.2) < 0.0


def test_airy_equal_time_is_airy_kernel():
    for x, y in [(0.0, 1.0), (-1.0, 0.5), (0.7, 0.7)]:
        assert k_airy(0.2, x, 0.2, y) == pytest.approx(airy_kernel(x, y), abs=1e-11)


def test_airy_kernel_confluent_limit():
    x = 0.6
    assert airy_kernel(x, x) == pytest.approx(airy_kernel(x, x + 1e-4), abs=1e-5)


# ---------------------------------------------------------------------------
# GSE kernel


@settings(max_examples=15)
@given(st.floats(-3, 3), st.floats(-3, 3))
def test_gse_skew_structure(x, y):
    a, b = k_gse(x, y), k_gse(y, x)
    assert a.k12 == pytest.approx(-b.k21, abs=1e-10)
    assert a.k11 == pytest.approx(-b.k11, abs=1e-10)
    assert a.k22 == pytest.approx(-b.k22, abs=1e-10)


def test_gse_diagonal_vanishes():
    for x in (-1.0, 0.0, 2.0):
        k = k_gse(x, x)
        assert k.k11 == 0.0 or abs(k.k11) < 1e-14
        assert abs(k.k22) < 1e-14


def test_s4_form_on_grid():
    pts = [-2.0, -1.0, 0.0, 1.0, 2.0]
    g = gse_grid(pts, pts)
    s4 = np.array([[s4_airy_form(x, y) for y in pts] for x in pts])
    assert np.max(np.abs(s4 - g.k12)) < 1e-8


def test_s4_decays():
    assert abs(s4_airy_form(0.0, 8.0)) < 1e-6


@pytest.mark.parametrize("x,y", [(-1.0, 0.5), (0.0, 1.0), (1.0, -2.0)])
def test_gse_derivative_and_integral_identities(x, y):
    h = 1e-4
    d = (k_gse(x + h, y).k12 - k_gse(x - h, y).k12) / (2 * h)
    assert d == pytest.approx(-k_gse(x, y).k22, abs=1e-7)
    u, w = np.polynomial.legendre.leggauss(40)
    us = (y - x) / 2 * u + (x + y) / 2
    integral = ((y - x) / 2 * w) @ gse_grid([x], us).k12[0]
    assert integral == pytest.approx(-k_gse(x, y).k11, abs=1e-10)


# ---------------------------------------------------------------------------
# pinned kernel K^{hs;inf}


@settings(max_examples=10)
@given(st.floats(0.1, 2.0), st.floats(-2, 2), st.floats(0.1, 2.0), st.floats(-2, 2))
def test_hs_inf_skew_structure(s, x, t, y):
    a, b = k_hs_inf(s, x, t, y), k_hs_inf(t, y, s, x)
    assert a.k11 == pytest.approx(-b.k11, abs=1e-9)
    assert a.k12 == pytest.approx(-b.k21, abs=1e-9)
    assert a.k22 == pytest.approx(-b.k22, abs=1e-9)


def test_r22_vanishes_on_branch_line():
    assert r22_hs_inf(1.0, 1.5, 0.5, 0.75) == 0.0


def test_r22_closed_form_matches_contour_form():
    assert r22_hs_inf(1, 0, 2, 1) == pytest.approx(r22_hs_inf_contour(1, 0, 2, 1), abs=1e-8)


def test_k22_vertical_matches_direct():
    assert k22_vertical(5.0, 0.0, 0.0, 1.0, 0.0) == pytest.approx(k_hs_inf(5.0, 0.0, 6.0, 0.0).k22, abs=1e-7)


def test_k22_vertical_decays_and_validates():
    assert abs(k22_vertical(20, 0, 0, 1, 0.5)) < abs(k22_vertical(10, 0, 0, 1, 0.5))
    with pytest.raises(InvalidShift):
        k22_vertical(0.0, 0.0, 0.0, 0.0, 0.0)


def test_hs_inf_k22_routes_agree_across_switch():
    # times up to 2 use the pi/3 contours plus the Gaussian R22, later times the vertical contours
    below = k_hs_inf(2.0, 0.0, 1.0, 0.3).k22
    above = k_hs_inf(2.0 + 1e-9, 0.0, 1.0, 0.3).k22
    assert below == pytest.approx(above, abs=1e-8)
    assert k_hs_inf(3.0, 0.0, 3.0, 0.3).k22 == pytest.approx(k22_vertical(2.0, 1.0, 0.0, 1.0, 0.3), abs=1e-12)
    assert k_hs_inf(1.0, 0.0, 1.0, 0.0).k22 == pytest.approx(0.0, abs=1e-12)


# ---------------------------------------------------------------------------
# boundary-parameter kernels


def test_hs_varpi_matches_varpi_generic():
    a = k_hs_varpi(3.0, 0.5, 1.0, 2.0, -1.0).as_matrix()
    b = k_varpi(3.0, 0.5, 1.0, 2.0, -1.0).as_matrix()
    assert np.max(np.abs(a - b)) < 1e-6


def test_hs_varpi_matches_varpi_coincident():
    a = k_hs_varpi(2.0, 1.0, 0.0, 1.0, 0.0)
    b = k_varpi(2.0, 1.0, 0.0, 1.0, 0.0)
    assert np.max(np.abs(a.as_matrix() - b.as_matrix())) < 1e-6
    assert a.k22 == 0.0


def test_k22_fast_route_matches_residue_route():
    fast = hs_varpi_k22(2.0, 0.5, 1.0, 2.0, -1.0)
    slow = hs_varpi_k22_residue_route(2.0, 0.5, 1.0, 2.0, -1.0)
    assert fast == pytest.approx(slow, abs=1e-10)


def test_k22_branch_is_antisymmetric():
    a = hs_varpi_k22(2.0, 0.5, 1.0, 2.0, -1.0)
    b = hs_varpi_k22(2.0, 2.0, -1.0, 0.5, 1.0)
    assert a == pytest.approx(-b, abs=1e-12)


def test_degenerate_branch_modes():
    args = (2.0, 0.5, 0.0, 0.25, -0.1875)  # x - s^2 = y - t^2 exactly in binary
    with pytest.raises(DegenerateBranch):
        hs_varpi_k22(*args, degenerate="raise")
    limit = hs_varpi_k22(*args, degenerate="limit")
    assert limit == pytest.approx(k_varpi(*args).k22, abs=1e-8)
    # the convention R22 := 0 on the branch line gives a different value
    zero = hs_varpi_k22(*args, degenerate="zero")
    assert abs(zero - limit) > 1.0
    assert limit == pytest.approx(-0.0014194493061568, abs=1e-10)


def test_r12_is_airy_correction():
    s, x, t, y = 0.5, 0.3, 1.0, -0.2
    with_r = k_varpi(2.0, s, x, t, y).k12
    swapped = k_varpi(2.0, t, x, s, y)
    assert extended_airy_correction(s, x, t, y) != 0.0
    assert extended_airy_correction(t, x, s, y) == 0.0
    assert np.isfinite(with_r) and np.isfinite(swapped.k12)


@settings(max_examples=8)
@given(st.floats(0.2, 2.0), st.floats(-1.5, 1.5), st.floats(0.2, 2.0), st.floats(-1.5, 1.5))
def test_varpi_skew_structure(s, x, t, y):
    a, b = k_varpi(2.5, s, x, t, y), k_varpi(2.5, t, y, s, x)
    assert a.k12 == pytest.approx(-b.k21, abs=1e-10)
    assert a.k11 == pytest.approx(-b.k11, abs=1e-9)


def test_varpi_validation():
    with pytest.raises(InvalidBoundaryParam):
        k_varpi(0.5, 1.0, 0.0, 1.0, 0.0)
    with pytest.raises(InvalidTime):
        k_varpi(2.0, 0.0, 0.0, 1.0, 0.0)


def test_varpi_scaled_k22_approaches_pinned():
    ref = k_hs_inf(1.0, 0.0, 1.0, 0.3).k22
    errs = [abs(4 * w * w * k_varpi(w, 1.0, 0.0, 1.0, 0.3).k22 - ref) for w in (2, 4, 8, 16)]
    assert all(b < a for a, b in zip(errs, errs[1:]))


# ---------------------------------------------------------------------------
# origin split


@pytest.mark.parametrize("t_n", [0.2, 0.05])
def test_origin_split_reassembles_pinned_kernel(t_n):
    xs = np.array([-0.8, 0.1, 0.9])
    reg = origin_regular_grid(t_n, xs, xs)
    full = hs_inf_grid(t_n, xs, t_n, xs)
    delta = origin_delta(t_n, xs[:, None], xs[None, :])
    assert np.allclose(reg.k11, full.k11, atol=1e-9)
    assert np.allclose(reg.k12, full.k12, atol=1e-9)
    assert np.allclose(reg.k22 + delta, full.k22, atol=1e-9)


def test_origin_singular_part_is_odd():
    assert origin_delta(0.1, 0.4, 0.4) == 0.0
    assert origin_delta(0.1, 0.4, -0.3) == -origin_delta(0.1, -0.3, 0.4)


def test_origin_regular_k12_approaches_doubled_gse():
    split = k_origin_split(1e-3, 0.0, 0.0)
    assert abs(split.regular.k12 - 2 * k_gse(0.0, 0.0).k12) < 1e-3


def test_origin_rejects_large_time():
    with pytest.raises(InvalidTime):
        k_origin_split(0.6, 0.0, 0.0)


def test_make_family():
    assert make_family("gse")(0, 0.0, 0, 0.0).k12 == pytest.approx(k_gse(0.0, 0.0).k12)
    with pytest.raises(UsageError):
        make_family("varpi")
    with pytest.raises(UsageError):
        make_family("nope")
