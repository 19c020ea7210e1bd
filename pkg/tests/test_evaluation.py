import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from oracles import block_means, mann_whitney_enumerated, naive_agreement
from rgbd_vitals.core import SampledSeries
from rgbd_vitals.evaluation import (
    PairedSamples,
    Threshold,
    agreement,
    align,
    bland_altman_points,
    coverage,
    mann_whitney_u,
)


def series(values, rate=1.0, start=0.0):
    v = np.asarray(values, dtype=float)
    return SampledSeries(v, rate, start, missing=np.isnan(v))


def pairs(x, y):
    x, y = np.asarray(x, float), np.asarray(y, float)
    return PairedSamples(x, y, np.arange(x.size, dtype=float))


# ---------------------------------------------------------------------------
# alignment
# ---------------------------------------------------------------------------

def test_align_identical():
    s = series(np.arange(50.0))
    p = align(s, s)
    assert len(p) == 50
    np.testing.assert_array_equal(p.candidate, p.reference)


def test_align_block_means_against_bruteforce():
    rng = np.random.default_rng(0)
    fast = rng.normal(size=240 * 20)
    fast[rng.random(fast.size) < 0.05] = np.nan
    slow = rng.normal(size=20)
    p = align(series(fast, 240.0), series(slow, 1.0))
    assert len(p) == 20
    np.testing.assert_allclose(p.candidate, block_means(list(fast), 240), atol=1e-12)
    np.testing.assert_array_equal(p.reference, slow)


def test_align_is_orientation_preserving():
    fast = series(np.repeat(np.arange(10.0), 30), 30.0)
    slow = series(np.arange(10.0) + 100)
    p = align(slow, fast)
    np.testing.assert_array_equal(p.candidate, np.arange(10.0) + 100)
    np.testing.assert_array_equal(p.reference, np.arange(10.0))


def test_align_drops_missing_pairs():
    p = align(series([1.0, np.nan, 3.0, 4.0]), series([1.0, 2.0, np.nan, 4.0]))
    np.testing.assert_array_equal(p.times, [0.0, 3.0])


def test_align_offset_start():
    p = align(series(np.arange(10.0), start=5.0), series(np.arange(20.0)))
    np.testing.assert_array_equal(p.reference, np.arange(5.0, 15.0))


def test_align_disjoint_raises():
    with pytest.raises(ValueError, match="no overlap"):
        align(series(np.ones(5)), series(np.ones(5), start=100.0))


# ---------------------------------------------------------------------------
# agreement
# ---------------------------------------------------------------------------

def test_agreement_arithmetic():
    r = agreement(pairs([1.0, 2.0], [2.0, 4.0]))
    assert r.mae == 1.5 and r.mse == 2.5 and r.n == 2


def test_agreement_identity():
    x = [3.0, 5.0, 9.0]
    r = agreement(pairs(x, x), ("5%", "1", "±10%"))
    assert r.mae == 0 and r.bias == 0
    assert set(r.cp.values()) == {1.0}


def test_agreement_needs_two():
    with pytest.raises(ValueError):
        agreement(pairs([1.0], [1.0]))


def test_threshold_parsing():
    assert Threshold.parse("10%") == Threshold(10.0, True)
    assert Threshold.parse("±5%") == Threshold(5.0, True)
    assert Threshold.parse("3") == Threshold(3.0, False)
    assert Threshold.parse("3").label == "3" and Threshold.parse("±5%").label == "5%"
    with pytest.raises(ValueError):
        Threshold.parse("-2")


@settings(max_examples=100)
@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(2, 60))
def test_agreement_matches_naive_loops(seed, n):
    rng = np.random.default_rng(seed)
    y = rng.uniform(20, 200, n)
    x = y + rng.normal(0, 10, n)
    r = agreement(pairs(x, y), ("5%", "10%", "3", "6"))
    o = naive_agreement(x.tolist(), y.tolist(),
                        [("5%", 5, True), ("10%", 10, True), ("3", 3, False), ("6", 6, False)])
    for key in ("mae", "mse", "bias", "loa_low", "loa_high"):
        assert getattr(r, key) == pytest.approx(o[key], abs=1e-12, rel=1e-12)
    assert r.sd_diff == pytest.approx(o["sd"], abs=1e-12, rel=1e-12)
    assert r.cp == o["cp"]


@settings(max_examples=100)
@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(2, 40))
def test_agreement_invariants(seed, n):
    rng = np.random.default_rng(seed)
    y = rng.uniform(20, 200, n)
    x = y + rng.standard_t(3, n) * 5
    r = agreement(pairs(x, y), ("1%", "5%", "10%", "50%"))
    assert r.mae ** 2 <= r.mse * (1 + 1e-12)
    cps = [r.cp[k] for k in ("1%", "5%", "10%", "50%")]
    assert all(0 <= c <= 1 for c in cps)
    assert cps == sorted(cps)
    assert r.loa_low == pytest.approx(r.bias - 2 * r.sd_diff)
    s = agreement(pairs(y, x))
    assert s.mse == pytest.approx(r.mse, rel=1e-12)
    assert s.bias == pytest.approx(-r.bias, abs=1e-12)


@given(w1=st.floats(0, 50), w2=st.floats(0, 50), seed=st.integers(0, 1000))
def test_coverage_monotone(w1, w2, seed):
    rng = np.random.default_rng(seed)
    y = rng.uniform(1, 10, 30)
    x = y + rng.normal(0, 2, 30)
    lo, hi = sorted((w1, w2))
    assert coverage(x, y, Threshold(lo, False)) <= coverage(x, y, Threshold(hi, False))
    assert coverage(x, y, Threshold(lo, True)) <= coverage(x, y, Threshold(hi, True))


def test_bland_altman_points():
    pts = bland_altman_points(pairs([2.0, 4.0], [1.0, 5.0]))
    np.testing.assert_array_equal(pts, [[1.5, 1.0], [4.5, -1.0]])


# ---------------------------------------------------------------------------
# Mann-Whitney U
# ---------------------------------------------------------------------------

def test_mw_single_identical():
    assert mann_whitney_u([1.0], [1.0]) == (0.5, 1.0)


def test_mw_complete_separation():
    u, p = mann_whitney_u([1, 2, 3], [4, 5, 6])
    assert u == 0.0
    assert p == pytest.approx(0.1, abs=1e-12)


def test_mw_swap_symmetry():
    a, b = [1.2, 3.4, 2.2, 5.0], [2.0, 6.1, 7.3]
    u1, p1 = mann_whitney_u(a, b)
    u2, p2 = mann_whitney_u(b, a)
    assert u1 + u2 == len(a) * len(b)
    assert p1 == pytest.approx(p2, abs=1e-12)


def test_mw_empty_group():
    with pytest.raises(ValueError):
        mann_whitney_u([], [1.0])


@settings(max_examples=100)
@given(a=st.lists(st.integers(0, 5), min_size=1, max_size=5),
       b=st.lists(st.integers(0, 5), min_size=1, max_size=5))
def test_mw_exact_matches_enumeration_with_ties(a, b):
    u, p = mann_whitney_u(a, b, method="exact")
    u_o, p_o = mann_whitney_enumerated(a, b)
    assert u == u_o
    assert p == pytest.approx(p_o, abs=1e-12)
    assert 0 < p <= 1


@settings(max_examples=100)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_mw_matches_scipy(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(0, 1, 9), rng.normal(0.5, 1, 11)
    u, p = mann_whitney_u(a, b, method="exact")
    ref = stats.mannwhitneyu(a, b, alternative="two-sided", method="exact")
    assert u == ref.statistic
    assert p == pytest.approx(ref.pvalue, abs=1e-12)
    ua, pa = mann_whitney_u(a, b, method="asymptotic")
    ref_a = stats.mannwhitneyu(a, b, alternative="two-sided", method="asymptotic", use_continuity=True)
    assert pa == pytest.approx(ref_a.pvalue, abs=1e-12)


@settings(max_examples=100)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_mw_exact_and_normal_agree_at_fifteen(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(0, 1, 15), rng.normal(rng.uniform(-1, 1), 1, 15)
    _, pe = mann_whitney_u(a, b, method="exact")
    _, pn = mann_whitney_u(a, b, method="asymptotic")
    assert abs(pe - pn) <= 0.02


def test_mw_auto_switches_on_size():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=25), rng.normal(size=20)
    assert mann_whitney_u(a, b) == mann_whitney_u(a, b, method="asymptotic")
    a, b = a[:20], b
    assert mann_whitney_u(a, b) == mann_whitney_u(a, b, method="exact")


def test_mw_one_sided():
    _, p = mann_whitney_u([4, 5, 6], [1, 2, 3], two_sided=False)
    assert p == pytest.approx(1 / 20)
    assert math.isclose(mann_whitney_u([1, 2, 3], [4, 5, 6], two_sided=False)[1], 1.0)
