import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import ap_scan, auc_scan, ks_quadratic, ms_scan, nl_scan
from saesense.errors import InputError
from saesense.metrics import (StepDistribution, ap_step, auc_step, dist_stats, ks_statistic, ms_step,
                              nl_step)

finite = st.floats(min_value=0.0, max_value=1e3, allow_nan=False, allow_infinity=False)
curves = st.lists(finite, min_size=3, max_size=101)


def test_ms_single_jump():
    assert ms_step([0, 0, 0, 10, 10]).step == 3


def test_ms_logistic_midpoint():
    n = np.arange(101)
    f = 1 / (1 + np.exp(-(n - 50) / 5))
    assert ms_step(f).step in (50, 51)


def test_ms_linear_first_tie():
    assert ms_step(np.arange(101.0)).step == 1


def test_ms_too_short():
    with pytest.raises(InputError):
        ms_step([1.0])


def test_auc_linear_ratio_is_one():
    det = auc_step(np.arange(101.0))
    assert det.step == 1
    assert det.auxiliary == 1.0


def test_auc_shape_ordering():
    n = np.arange(101.0)
    early = auc_step(np.sqrt(n)).step
    late = auc_step(n ** 2).step
    assert early < late
    assert early == auc_scan(np.sqrt(n))
    assert late == auc_scan(n ** 2)


def test_auc_step_curve():
    c = [0.0] * 40 + [10.0] * 61
    assert auc_step(c).step == auc_scan(c) == 40


def test_auc_all_zero():
    with pytest.raises(InputError):
        auc_step(np.zeros(10))


def test_auc_full_area_mode():
    c = np.arange(11.0) ** 2
    det = auc_step(c, area="full")
    # with a fixed denominator the ratio is n*c[n], maximised at the end
    assert det.step == 10


def test_nl_linear_is_censored():
    assert nl_step(np.arange(101.0) * 0.5).censored


def test_nl_slope_change():
    c = list(np.arange(11.0)) + [10.0 + 1.2 * k for k in range(1, 20)]
    assert nl_step(c).step == 11


def test_nl_drift_matches_scan():
    slopes = [1.0 * (1.01 ** k) for k in range(100)]
    c = np.concatenate([[0.0], np.cumsum(slopes)])
    got = nl_step(c).step
    assert got == nl_scan(list(c))
    # 1.01**k first exceeds 1.1 at k=10, i.e. the difference ending at step 11
    assert got == 11


def test_nl_flat_start_censored_with_note():
    det = nl_step([0.0, 0.0, 5.0, 9.0])
    assert det.censored and "floor" in det.note


def test_nl_least_squares_initial_slope():
    c = np.concatenate([np.arange(6.0), 5 + 3 * np.arange(1, 10.0)])
    assert nl_step(c, fit_steps=3).step == 6


def test_ap_basic():
    assert ap_step([0, 5, 25, 30]).step == 2
    assert ap_step([0, 5, 19, 19, 19]).censored


def test_ap_precondition():
    with pytest.raises(InputError):
        ap_step([25, 30])


def test_ap_not_scale_invariant():
    c = np.linspace(0, 30, 31)
    assert ap_step(c).step != ap_step(0.5 * c).step


@settings(max_examples=200, deadline=None)
@given(curves)
def test_detectors_match_scan(c):
    assert ms_step(c).step == ms_scan(c)
    if any(v > 0 for v in c[1:]):
        assert auc_step(c).step == auc_scan(c)
    assert nl_step(c).step == nl_scan(c)
    c0 = [0.0] + c[1:]
    assert ap_step(c0).step == ap_scan(c0)


@settings(max_examples=200, deadline=None)
@given(curves, st.integers(min_value=-20, max_value=20))
def test_scale_invariance_powers_of_two(c, k):
    # binary scaling is exact in floating point, so detections must agree exactly
    alpha = 2.0 ** k
    sc = [alpha * v for v in c]
    assert ms_step(sc).step == ms_step(c).step
    assert nl_step(sc).step == nl_step(c).step
    if any(v > 0 for v in c[1:]):
        assert auc_step(sc).step == auc_step(c).step


def test_scale_invariance_generic_alpha():
    rng = np.random.default_rng(0)
    for _ in range(300):
        c = np.cumsum(rng.exponential(size=101))
        c[0] = 0.0
        alpha = rng.uniform(0.01, 100)
        assert ms_step(alpha * c).step == ms_step(c).step
        assert auc_step(alpha * c).step == auc_step(c).step
        assert nl_step(alpha * c).step == nl_step(c).step


def test_ks_examples():
    assert ks_statistic([1, 2, 3], [1, 2, 3]) == 0.0
    assert ks_statistic([1, 2], [3, 4]) == 1.0
    assert ks_statistic([1, 2, 3], [2, 3, 4]) == pytest.approx(1 / 3, abs=1e-15)
    assert ks_quadratic([1, 2, 3], [2, 3, 4]) == pytest.approx(1 / 3, abs=1e-15)


def test_ks_empty():
    with pytest.raises(InputError):
        ks_statistic([], [1])


ints = st.lists(st.integers(0, 100), min_size=1, max_size=40)


@settings(max_examples=200, deadline=None)
@given(ints, ints, ints)
def test_ks_properties(a, b, c):
    ab = ks_statistic(a, b)
    assert ab == ks_statistic(b, a)
    assert 0.0 <= ab <= 1.0
    assert ks_statistic(a, c) <= ab + ks_statistic(b, c) + 1e-12
    assert abs(ab - ks_quadratic(a, b)) <= 1e-12


def test_dist_stats():
    s = dist_stats(StepDistribution("x", [10, 10, 10]))
    assert (s.mean, s.std) == (10.0, 0.0)
    s = dist_stats(StepDistribution("x", [0, 10]))
    assert (s.mean, s.std) == (5.0, 5.0)


def test_dist_stats_uniform():
    rng = np.random.default_rng(0)
    s = dist_stats(StepDistribution("u", list(rng.uniform(0, 100, 1000))))
    assert abs(s.mean - 50) <= 2
    assert abs(s.std - 100 / math.sqrt(12)) <= 2


def test_dist_stats_censored_excluded():
    d = StepDistribution("x", [4, 6], censored_count=3)
    s = dist_stats(d)
    assert s.mean == 5.0 and s.censored_count == 3 and d.total == 5
    with pytest.raises(InputError):
        dist_stats(StepDistribution("y", [], 2))
