import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hsairy.ensembles import count_in, run_chunked, sample_gse_spectrum
from hsairy.errors import (
    DimensionCap,
    DimensionMismatch,
    ExpansionTooLarge,
    InvalidTime,
    OddDimension,
    OverlappingIntervals,
    SkewnessError,
    UsageError,
)
from hsairy.kernels import GSEFamily, HalfSpaceInfFamily, SpaceTimePoint, VarpiFamily, hs_inf_grid, k_gse
from hsairy.pfaffian import (
    IntervalSpec,
    MomentRequest,
    SkewMatrix,
    _gauss_panels,
    _word_sign,
    expected_count,
    falling_factorial_doubling,
    gse_factorial_moment,
    kernel_block_matrix,
    origin_factorial_moment,
    pfaffian,
    pfaffian_batch,
    pfaffian_sum,
    tail_count_closed_form,
)

MODES = ["exact", "householder", "parlett-reid"]


def random_skew(rng, dim):
    a = rng.standard_normal((dim, dim))
    return a - a.T


def permutation_sign(perm):
    return -1 if sum(1 for i, j in itertools.combinations(range(len(perm)), 2) if perm[i] > perm[j]) % 2 else 1


# ---------------------------------------------------------------------------
# Pfaffians


@pytest.mark.parametrize("mode", MODES)
def test_two_by_two(mode):
    assert pfaffian([[0, 2.5], [-2.5, 0]], mode) == 2.5


@pytest.mark.parametrize("mode", MODES)
def test_four_by_four_word_expansion(mode):
    rng = np.random.default_rng(1)
    a = random_skew(rng, 4)
    expected = a[0, 1] * a[2, 3] - a[0, 2] * a[1, 3] + a[0, 3] * a[1, 2]
    assert pfaffian(a, mode) == pytest.approx(expected, abs=1e-13)


def test_word_sign_matches_permutation_sign():
    # every perfect matching of {0,1,2,3}, read as the word (i1, j1, i2, j2)
    for word in [(0, 1, 2, 3), (0, 2, 1, 3), (0, 3, 1, 2)]:
        assert _word_sign(word) == permutation_sign(word)
    assert [_word_sign(w) for w in [(0, 1, 2, 3), (0, 2, 1, 3), (0, 3, 1, 2)]] == [1, -1, 1]


def test_modes_agree_on_eight_by_eight():
    rng = np.random.default_rng(2)
    for _ in range(5):
        a = random_skew(rng, 8)
        exact = pfaffian(a, "exact")
        for mode in ("householder", "parlett-reid"):
            assert pfaffian(a, mode) == pytest.approx(exact, rel=1e-10)


@settings(max_examples=30)
@given(st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_square_is_determinant(half, seed):
    a = random_skew(np.random.default_rng(seed), 2 * half)
    det = np.linalg.det(a)
    for mode in MODES:
        assert pfaffian(a, mode) ** 2 == pytest.approx(det, rel=1e-8, abs=1e-12)


@settings(max_examples=20)
@given(st.integers(0, 2**32 - 1), st.integers(0, 4))
def test_transposition_flips_sign(seed, i):
    a = random_skew(np.random.default_rng(seed), 6)
    perm = list(range(6))
    perm[i], perm[i + 1] = perm[i + 1], perm[i]
    b = a[np.ix_(perm, perm)]
    assert pfaffian(b) == pytest.approx(-pfaffian(a), rel=1e-9, abs=1e-12)


def test_batch_matches_single():
    rng = np.random.default_rng(3)
    for dim in (2, 6, 10):
        stack = np.stack([random_skew(rng, dim) for _ in range(4)])
        assert np.allclose(pfaffian_batch(stack), [pfaffian(m) for m in stack], rtol=1e-10)


def test_pfaffian_errors():
    with pytest.raises(OddDimension):
        pfaffian(np.zeros((3, 3)))
    with pytest.raises(ExpansionTooLarge):
        pfaffian(np.zeros((12, 12)), "exact")
    with pytest.raises(UsageError):
        pfaffian(np.zeros((2, 2)), "nope")


def test_skew_matrix_construction():
    m = SkewMatrix(np.array([[5.0, 1.0], [7.0, 5.0]]))
    assert np.array_equal(m.entries, [[0.0, 1.0], [-1.0, 0.0]])
    with pytest.raises(SkewnessError):
        SkewMatrix.from_raw([[0.0, 1.0], [-0.9, 0.0]])
    with pytest.raises(OddDimension):
        SkewMatrix(np.zeros((3, 3)))


# ---------------------------------------------------------------------------
# sum formula


def test_sum_with_zero():
    a = random_skew(np.random.default_rng(4), 6)
    assert pfaffian_sum(a, np.zeros((6, 6))) == pytest.approx(pfaffian(a), abs=1e-13)


def test_sum_of_opposites():
    a = random_skew(np.random.default_rng(5), 6)
    assert pfaffian_sum(a, -a) == pytest.approx(0.0, abs=1e-10)


def test_sum_formula_random_pairs():
    rng = np.random.default_rng(6)
    for _ in range(100):
        a, b = random_skew(rng, 6), random_skew(rng, 6)
        assert pfaffian_sum(a, b) == pytest.approx(pfaffian(a + b), abs=1e-10)


def test_sum_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        pfaffian_sum(np.zeros((2, 2)), np.zeros((4, 4)))


# ---------------------------------------------------------------------------
# kernel block matrices


def test_single_point_block():
    m = kernel_block_matrix(GSEFamily(), [SpaceTimePoint(0.0, 0.0)])
    k = k_gse(0.0, 0.0).k12
    assert m.entries[0, 1] == pytest.approx(k)
    assert pfaffian(m) == pytest.approx(k)


def test_coincident_points_vanish():
    p = SpaceTimePoint(0.0, 0.4)
    m = kernel_block_matrix(GSEFamily(), [p, p])
    assert abs(pfaffian(m)) < 1e-8
    assert abs(np.linalg.det(m.entries)) < 1e-8


@pytest.mark.parametrize("family", [GSEFamily(), HalfSpaceInfFamily()])
def test_generic_points_square_is_determinant(family):
    pts = [SpaceTimePoint(0.5, -0.3), SpaceTimePoint(1.0, 0.8)]
    m = kernel_block_matrix(family, pts)
    assert pfaffian(m) ** 2 == pytest.approx(np.linalg.det(m.entries), rel=1e-8)
    assert m.repair < 1e-9


# ---------------------------------------------------------------------------
# expected counts


def test_expected_count_zero_length():
    assert expected_count(GSEFamily(), IntervalSpec(0.5, 0.5)) == 0.0


def test_pinned_count_is_doubled_gse_count():
    pinned = expected_count(HalfSpaceInfFamily(), IntervalSpec(-1.0, 1.0), t=0.01)
    gse = expected_count(GSEFamily(), IntervalSpec(-1.0, 1.0))
    assert abs(pinned - 2 * gse) < 2e-2


@pytest.mark.parametrize("varpi,t,a", [(2.0, 1.0, 0.0), (5.0, 0.5, 1.0)])
def test_tail_closed_form_matches_quadrature(varpi, t, a):
    direct = expected_count(VarpiFamily(varpi=varpi), IntervalSpec(a, math.inf), t=t)
    assert tail_count_closed_form(varpi, t, a) == pytest.approx(direct, abs=1e-6)


def test_tail_closed_form_monotone_and_vanishing():
    vals = [tail_count_closed_form(2.0, 1.0, a) for a in (0.0, 1.0, 2.0)]
    assert vals[0] > vals[1] > vals[2] > 0
    assert tail_count_closed_form(2.0, 1.0, 8.0) < 1e-4


def test_tail_closed_form_validation():
    with pytest.raises(UsageError):
        tail_count_closed_form(2.0, 0.0, 0.0)


@pytest.mark.slow
def test_gse_count_matches_monte_carlo():
    sample = run_chunked(sample_gse_spectrum, 10_000, seed=11, threads=4, n=100)
    counts = count_in(sample.scaled, (0.0, math.inf))
    target = expected_count(GSEFamily(), IntervalSpec(0.0, math.inf))
    stderr = max(counts.std(ddof=1), 1.0) / math.sqrt(counts.size)
    assert abs(counts.mean() - target) < 3 * stderr


# ---------------------------------------------------------------------------
# factorial moments


def test_falling_factorial_examples():
    assert falling_factorial_doubling(1, 3) == (6, 6)
    assert falling_factorial_doubling(2, 2) == (12, 12)
    assert falling_factorial_doubling(5, 0) == (0, 0)


def test_falling_factorial_exhaustive():
    for n in range(1, 9):
        for x in range(21):
            lhs, rhs = falling_factorial_doubling(n, x)
            assert lhs == rhs


def test_gse_first_moment_is_doubled_count():
    req = MomentRequest((IntervalSpec(-1.0, 1.0),), (1,))
    x, w = _gauss_panels(-1.0, 1.0, 24)
    direct = 2 * sum(wi * k_gse(xi, xi).k12 for xi, wi in zip(x, w))
    assert gse_factorial_moment(req) == pytest.approx(direct, abs=1e-12)


def test_gse_moment_degenerate_interval():
    assert gse_factorial_moment(MomentRequest((IntervalSpec(0.3, 0.3),), (2,))) == 0.0


def test_gse_moment_thread_independent():
    base = MomentRequest((IntervalSpec(-1.0, 0.0), IntervalSpec(0.0, 1.0)), (1, 1), nodes_per_axis=12)
    threaded = MomentRequest(base.intervals, base.orders, nodes_per_axis=12, threads=4)
    assert gse_factorial_moment(base) == gse_factorial_moment(threaded)


@pytest.mark.slow
def test_gse_second_moment_matches_monte_carlo():
    sample = run_chunked(sample_gse_spectrum, 10_000, seed=11, threads=4, n=100)
    doubled = 2 * count_in(sample.scaled, (-1.0, 1.0))
    values = doubled * (doubled - 1)
    target = gse_factorial_moment(MomentRequest((IntervalSpec(-1.0, 1.0),), (2,)))
    stderr = values.std(ddof=1) / math.sqrt(values.size)
    # finite-N centering bias of the edge scaling decays like N^(-1/3)
    assert abs(values.mean() - target) < 3 * stderr + 100 ** (-1 / 3) * target


def test_moment_request_validation():
    with pytest.raises(OverlappingIntervals):
        MomentRequest((IntervalSpec(0, 2), IntervalSpec(1, 3)), (1, 1))
    with pytest.raises(DimensionCap):
        MomentRequest((IntervalSpec(0, 1),), (7,))
    with pytest.raises(UsageError):
        MomentRequest((IntervalSpec(0, 1),), (1, 1))
    with pytest.raises(UsageError):
        IntervalSpec(1.0, 0.0)
    # touching intervals are disjoint
    MomentRequest((IntervalSpec(0, 1), IntervalSpec(1, 2)), (1, 1))


def direct_origin_moment(t_n, order, nodes=12):
    """Moment from the unsplit pinned kernel at equal times, without the Delta pairing expansion."""
    x, w = _gauss_panels(-1.0, 1.0, nodes, panel=0.05)
    g = hs_inf_grid(t_n, x, t_n, x)
    d = np.diag(g.k12)
    if order == 1:
        return float(w @ d)
    pf = d[:, None] * d[None, :] - g.k11 * g.k22 + g.k12 * g.k21
    return float(w @ pf @ w)


@pytest.mark.parametrize("order", [1, 2])
def test_origin_moment_matches_unsplit_pfaffian(order):
    req = MomentRequest((IntervalSpec(-1.0, 1.0),), (order,))
    assert origin_factorial_moment(0.05, req) == pytest.approx(direct_origin_moment(0.05, order), rel=1e-9)


def test_origin_first_moment_is_regular_count():
    from hsairy.kernels import origin_regular_grid

    x, w = _gauss_panels(-1.0, 1.0, 24)
    direct = float(w @ np.diag(origin_regular_grid(0.1, x, x).k12))
    req = MomentRequest((IntervalSpec(-1.0, 1.0),), (1,))
    assert origin_factorial_moment(0.1, req) == pytest.approx(direct, abs=1e-12)


def test_origin_moment_empty_interval_and_errors():
    assert origin_factorial_moment(0.1, MomentRequest((IntervalSpec(0.0, 0.0),), (2,))) == 0.0
    with pytest.raises(InvalidTime):
        origin_factorial_moment(0.7, MomentRequest((IntervalSpec(0, 1),), (1,)))
    with pytest.raises(DimensionCap):
        origin_factorial_moment(0.1, MomentRequest((IntervalSpec(0, 1),), (5,)))


@pytest.mark.parametrize("order", [1, 2])
def test_origin_moment_near_gse_moment(order):
    # invariant: within 5% at t_n = 0.05; see the acceptance suite for the convergence study
    req = MomentRequest((IntervalSpec(-1.0, 1.0),), (order,))
    target = gse_factorial_moment(req)
    assert abs(origin_factorial_moment(0.05, req) - target) < 0.05 * target
