import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import block_means
from rgbd_vitals.core import (
    FrameSummary,
    GaussianPrior,
    KalmanParams,
    RoiGeometry,
    SampledSeries,
    Unit,
    resample_mean,
    series_from_optional,
    validate_series,
)


def test_valid_series_has_no_violations():
    s = SampledSeries(np.sin(np.arange(100)), 30.0)
    assert validate_series(s) == []


def test_zero_rate_reported():
    assert validate_series(SampledSeries([1.0, 2.0], 0.0)) == ["rate must be > 0"]


def test_unflagged_nonfinite_reported():
    s = SampledSeries([1.0, np.nan, 3.0], 1.0)
    out = validate_series(s)
    assert len(out) == 1 and "non-finite" in out[0] and "index 1" in out[0]


def test_flagged_missing_is_valid():
    s = series_from_optional([1.0, None, 3.0], 1.0)
    assert validate_series(s) == []
    assert s.missing.tolist() == [False, True, False]


def test_series_is_immutable():
    s = SampledSeries([1.0, 2.0], 1.0)
    with pytest.raises(ValueError):
        s.values[0] = 5.0


def test_resample_direct_mean():
    out = resample_mean(SampledSeries([1, 2, 3, 4], 2.0), 1.0)
    assert out.values.tolist() == [1.5, 3.5]
    assert out.rate == 1.0


def test_resample_constant():
    out = resample_mean(SampledSeries(np.full(60, 7.25), 30.0), 1.0)
    assert np.all(out.values == 7.25)


def test_resample_rejects_upsampling():
    with pytest.raises(ValueError, match="upsampling not supported here"):
        resample_mean(SampledSeries([1.0, 2.0], 1.0), 2.0)


def test_resample_matches_block_oracle():
    rng = np.random.default_rng(7)
    x = rng.normal(size=240 * 5)
    x[rng.random(x.size) < 0.1] = np.nan
    s = SampledSeries(x, 240.0, missing=np.isnan(x))
    out = resample_mean(s, 1.0)
    assert np.allclose(out.values, block_means(list(x), 240), atol=1e-12, rtol=0)


def test_resample_keeps_unit():
    assert resample_mean(SampledSeries([1.0, 2.0], 2.0, unit=Unit.ML), 1.0).unit is Unit.ML


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=20), st.integers(1, 8))
def test_resample_preserves_global_mean(blocks, k):
    x = np.repeat(np.asarray(blocks), k) + np.tile(np.linspace(-1, 1, k), len(blocks))
    out = resample_mean(SampledSeries(x, float(k)), 1.0)
    assert abs(out.values.mean() - x.mean()) <= 1e-12 * max(1.0, np.abs(x).max())


@given(st.lists(st.floats(allow_nan=True, allow_infinity=True), max_size=30), st.floats(-10, 100))
def test_validate_is_pure(vals, rate):
    s = SampledSeries(vals, rate)
    assert validate_series(s) == validate_series(s)


def test_roi_quadrants_odd_split():
    q = RoiGeometry(0, 0, 5, 3).quadrants()
    assert [(r.width, r.height) for r in q] == [(2, 1), (3, 1), (2, 2), (3, 2)]


def test_roi_rejects_degenerate():
    with pytest.raises(ValueError):
        RoiGeometry(3, 0, 3, 5)


def test_frame_summary_invariants():
    roi = RoiGeometry(0, 0, 4, 4)
    ok = FrameSummary(0.0, roi, (400.0, None, 400.0, 400.0), (4, 0, 4, 4))
    assert ok.violations() == []
    bad = FrameSummary(0.0, roi, (400.0, None, 400.0, 400.0), (4, 3, 4, 4))
    assert any("quadrant_depth_mm[1]" in v for v in bad.violations())


def test_prior_and_kalman_validation():
    with pytest.raises(ValueError):
        GaussianPrior(50.0, 0.0)
    with pytest.raises(ValueError):
        KalmanParams(r_std=1.0, q=[[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(ValueError):
        KalmanParams(r_std=0.0)
    assert np.array_equal(KalmanParams(20.0).q, [[1e-4, 0.0], [0.0, 1e-5]])
