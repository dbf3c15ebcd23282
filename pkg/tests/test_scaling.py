import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dggs_fractal.covering import CoverRecord, CoverTable
from dggs_fractal.dggs.grid import GridKind
from dggs_fractal.errors import DegenerateAbscissaError, EmptyInputError, InsufficientRangeError
from dggs_fractal.scaling import (RangePolicy, ScalingFit, aggregate, corrected_se, fit_dimension, fit_points,
                                  local_slopes, ols, select_range)


def power_table(slope=1.5, c=2.0, ks=range(0, 10), ratio=0.5, grid=GridKind.ISEA4T):
    recs = []
    for k in ks:
        d = 1.1 * 2.0 ** -k
        n = math.exp(c + slope * -math.log(d))
        recs.append(CoverRecord(grid, k, d, n, n / ratio))
    return CoverTable(recs)


def test_exact_power_law_all_rows_retained():
    tab = power_table()
    assert select_range(tab) == list(range(10))
    fit = fit_dimension(tab)
    assert fit.d_b == pytest.approx(1.5, abs=1e-12)
    assert fit.intercept == pytest.approx(2.0, abs=1e-10)
    assert fit.se_corrected == pytest.approx(0.0, abs=1e-12)
    assert fit.n_points == 10 and fit.k_used == tuple(range(10))


def test_sparse_finest_row_excluded():
    tab = power_table()
    r = tab.records[-1]
    tab.records[-1] = CoverRecord(r.grid, r.resolution, r.delta, r.n_cells, r.n_cells / 0.05)
    assert select_range(tab) == list(range(9))


def test_saturated_coarse_rows_excluded():
    tab = power_table()
    for i in (0, 1):
        r = tab.records[i]
        tab.records[i] = CoverRecord(r.grid, r.resolution, r.delta, r.n_cells, r.n_cells)
    assert select_range(tab) == list(range(2, 10))


def test_sharp_steps_excluded():
    ks = np.arange(10)
    d = 2.0 ** -ks
    logn = 1.5 * ks * math.log(2)
    logn[:3] = logn[3] - 1.99 * (3 - ks[:3]) * math.log(2)   # space-filling start
    logn[8:] = logn[7] + 0.05 * (ks[8:] - 7) * math.log(2)   # detail exhausted
    n = np.exp(logn)
    tab = CoverTable([CoverRecord(GridKind.ISEA4H, int(k), float(x), float(y), float(y) * 2)
                      for k, x, y in zip(ks, d, n)])
    assert select_range(tab) == [3, 4, 5, 6, 7]


def test_two_points_insufficient():
    tab = power_table(ks=range(2))
    with pytest.raises(InsufficientRangeError):
        fit_dimension(tab)
    sl = local_slopes(np.log([3.0, 12.0]), [0.0, math.log(2)])
    assert sl[0] == pytest.approx(2.0)


def test_corrected_se_examples():
    x = np.array([0.0, 1.0, 2.0])
    y = np.array([0.0, 1.0, 3.0])  # per-step slopes 1 and 2
    assert corrected_se(y, x) == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(DegenerateAbscissaError):
        corrected_se(y, np.array([0.0, 1.0, 1.0]))
    with pytest.raises(InsufficientRangeError):
        corrected_se(y[:2], x[:2])


def test_corrected_se_depends_on_difference_multiset_only(rng):
    # shuffling the per-step increments moves interior points: OLS SE changes, corrected SE does not
    x = np.arange(8, dtype=float)
    inc = rng.normal(1.5, 0.2, 7)
    y1 = np.concatenate([[0.0], np.cumsum(inc)])
    y2 = np.concatenate([[0.0], np.cumsum(rng.permutation(inc))])
    assert corrected_se(y1, x) == pytest.approx(corrected_se(y2, x), abs=1e-14)
    assert ols(x, y1)[2] != pytest.approx(ols(x, y2)[2], abs=1e-6)


def test_degenerate_abscissa():
    with pytest.raises(DegenerateAbscissaError):
        fit_points([0.1, 0.1, 0.1, 0.1], [1, 2, 3, 4])


def test_aggregate_examples():
    fits = [ScalingFit(None, d, 0, 0, s, 0.01, (), 5) for d, s in ((1.594, 0.0552), (1.561, 0.0297), (1.575, 0.0363))]
    agg = aggregate(fits)
    assert round(agg.d_b_mean, 3) == 1.577
    assert agg.se_mean == pytest.approx(np.mean([0.0552, 0.0297, 0.0363]))
    koch = aggregate([ScalingFit(None, d, 0, 0, 0.03, 0.01, (), 5) for d in (1.299, 1.244, 1.265)])
    assert koch.d_b_mean == pytest.approx(1.269, abs=5e-4)
    single = aggregate(fits[:1])
    assert single.d_b_mean == 1.594
    with pytest.raises(EmptyInputError):
        aggregate([])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_ols_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    x = np.sort(rng.uniform(0, 10, 6))
    y = 1.3 * x + rng.normal(0, 0.3, 6)
    slope, icpt, _ = ols(x, y)

    def sse(b):
        a = np.mean(y) - b * np.mean(x)
        return np.sum((y - a - b * x) ** 2)
    grid = slope + np.arange(-50, 51) * 1e-6
    best = grid[np.argmin([sse(b) for b in grid])]
    assert abs(best - slope) <= 1e-6


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
def test_affine_invariance(seed, c):
    rng = np.random.default_rng(seed)
    d = 2.0 ** -np.arange(8)
    n = np.exp(1.4 * -np.log(d) + rng.normal(0, 0.1, 8))
    a = fit_points(d, n)
    b = fit_points(d * c, n)
    assert a.d_b == pytest.approx(b.d_b, abs=1e-12)
    assert b.intercept == pytest.approx(a.intercept + a.d_b * math.log(c), abs=1e-9)
    assert a.se_corrected == pytest.approx(b.se_corrected, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.2, 1.9), min_size=3, max_size=10), st.booleans())
def test_corrected_se_zero_iff_constant_slopes(slopes, make_constant):
    s = np.full(len(slopes), slopes[0]) if make_constant else np.array(slopes)
    x = np.arange(len(s) + 1, dtype=float) * 0.7
    y = np.concatenate([[0.0], np.cumsum(s * 0.7)])
    se = corrected_se(y, x)
    per = local_slopes(y, x)
    assert (se <= 1e-12) == (np.ptp(per) <= 1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_select_range_idempotent(seed):
    rng = np.random.default_rng(seed)
    ks = np.arange(12)
    d = 1.1 * 2.0 ** -ks
    s = rng.choice([0.05, 1.3, 1.5, 1.98], size=11, p=[0.1, 0.4, 0.4, 0.1])
    logn = np.concatenate([[0.0], np.cumsum(s * math.log(2))])
    n = np.exp(logn)
    ratio = rng.choice([1.0, 0.5, 0.05], size=12, p=[0.1, 0.8, 0.1])
    tab = CoverTable([CoverRecord(GridKind.ISEA4T, int(k), float(a), float(b), float(b / r))
                      for k, a, b, r in zip(ks, d, n, ratio)])
    try:
        run = select_range(tab)
    except InsufficientRangeError:
        return
    sub = CoverTable([r for r in tab.records if r.resolution in run])
    assert select_range(sub) == run


def test_p_value_and_report_fields():
    rng = np.random.default_rng(4)
    d = 2.0 ** -np.arange(9)
    n = np.exp(1.5 * -np.log(d) + rng.normal(0, 0.05, 9))
    fit = fit_points(d, n, GridKind.ISEA3H, range(9))
    assert 0.0 < fit.p_value < 1e-6
    assert fit.se_ols > 0 and fit.se_corrected > 0
    out = fit.to_dict(RangePolicy())
    assert list(out) == ["grid", "d_b", "intercept", "se_ols", "se_corrected", "p_value", "resolutions_used",
                         "n_points", "policy"]
    assert out["policy"]["bbox_ratio_min"] == 0.1


def test_policy_validation():
    for kw in ({"bbox_ratio_min": 0.0}, {"bbox_ratio_min": 1.0}, {"slope_low": 2.0}, {"min_points": 2}):
        with pytest.raises(ValueError):
            RangePolicy(**kw)
