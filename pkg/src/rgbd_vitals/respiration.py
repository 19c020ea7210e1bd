"""Respiratory rate, tidal volume and flow-volume loops from depth streams.

Displacement and volume are signed so that motion towards the camera
(chest rise, inhalation) is positive.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .core import CameraIntrinsics, GaussianPrior, KalmanParams, RoiGeometry, SampledSeries, Unit
from .dsp import (
    BandpassSpec,
    SsaSpec,
    bandpass_zero_phase,
    default_ssa_window,
    detect_peaks,
    differentiate,
    fill_missing,
    kalman_smooth,
    present_runs,
    RateTrack,
    peak_amplitudes,
    rate_track,
    ssa_denoise,
)
from .frames import roi_world_area

RR_BAND = (15.0, 150.0)
RR_PRIOR = GaussianPrior(50.0, 15.0)
RR_KALMAN = KalmanParams(r_std=20.0)
TV_KALMAN = KalmanParams(r_std=2.0)


@dataclass(frozen=True)
class QuadrantStreams:
    """Four aligned quadrant depth series (mm); missing marks invalid points."""

    depth: tuple

    def __post_init__(self):
        depth = tuple(self.depth)
        if not 1 <= len(depth) <= 4:
            raise ValueError("expected one to four quadrant streams")
        rate, n = depth[0].rate, len(depth[0])
        if any(d.rate != rate or len(d) != n for d in depth):
            raise ValueError("quadrant streams must share rate and length")
        object.__setattr__(self, "depth", depth)

    @property
    def rate(self) -> float:
        return self.depth[0].rate

    def __len__(self) -> int:
        return len(self.depth[0])


@dataclass(frozen=True)
class RespConfig:
    band: tuple = RR_BAND
    order: int = 7
    rate_components: int = 5
    volume_components: int = 2
    ssa_window_s: float = 3.0
    validity_mm: tuple = (0.05, 25.0)
    validity_window_s: float = 8.0
    min_separation_s: float = 0.4
    depth_mean_window_s: float = 60.0


@dataclass(frozen=True)
class BreathRules:
    tv_cap_ml: float = 7.5
    tv_cap_factor: float = 1.5
    tv_min_ml: float = 2.0
    n_std: float = 2.0


@dataclass(frozen=True)
class LoopRules:
    max_drift_ml: float = 1.0
    min_tv_ml: float = 2.0
    n_std: float = 1.0
    max_shape_error: float = 0.35


@dataclass(frozen=True, eq=False)
class BreathSegment:
    start: int
    end: int
    tidal_volume: float
    loop: np.ndarray = field(repr=False)
    reason: Optional[str] = None

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError("breath must have start < end")

    @property
    def accepted(self) -> bool:
        return self.reason is None


# ---------------------------------------------------------------------------
# Quadrant processing and fusion
# ---------------------------------------------------------------------------

def artifact_gaps(d: SampledSeries, cfg: RespConfig) -> np.ndarray:
    """Missing samples plus neighbourhoods where raw depth jumps beyond the range.

    A raw peak-to-valley above ``validity_mm[1]`` within the validity window
    marks a motion step; filtering across it would ring for many seconds.
    """
    w = max(1, int(round(cfg.validity_window_s * d.rate)))
    x = fill_missing(d)
    p2v = ndimage.maximum_filter1d(x, w, mode="nearest") - ndimage.minimum_filter1d(x, w, mode="nearest")
    return d.missing | (p2v > cfg.validity_mm[1])


def _filter_run(x: np.ndarray, rate: float, cfg: RespConfig, components: int) -> Optional[np.ndarray]:
    spec = BandpassSpec.per_minute(cfg.order, cfg.band[0], cfg.band[1], rate)
    n = x.size
    window = default_ssa_window(n, rate, cfg.ssa_window_s)
    if n <= spec.settle_length or n < 2 * max(window, components) + 1:
        return None
    filtered = bandpass_zero_phase(SampledSeries(x, rate), spec)
    return ssa_denoise(filtered, SsaSpec(window, components)).values


def _process_quadrant(d: SampledSeries, cfg: RespConfig, components: int):
    """Bandpass + SSA one quadrant; returns (displacement mm, valid mask).

    Each run between gaps (missing samples or motion steps) is filtered on
    its own, so artifacts never ring into clean data.
    """
    n = len(d)
    x = np.zeros(n)
    ok = np.zeros(n, dtype=bool)
    gap = artifact_gaps(d, cfg)
    toward = -fill_missing(d)
    for a, b in present_runs(gap):
        y = _filter_run(toward[a:b], d.rate, cfg, components)
        if y is not None:
            x[a:b] = y
            ok[a:b] = True
    w = max(1, int(round(cfg.validity_window_s * d.rate)))
    p2v = ndimage.maximum_filter1d(x, w, mode="nearest") - ndimage.minimum_filter1d(x, w, mode="nearest")
    lo, hi = cfg.validity_mm
    valid = ok & (p2v >= lo) & (p2v <= hi)
    # run edges carry filter start-up error; trim half a window off each side of a gap
    near_gap = ndimage.maximum_filter1d(gap.astype(np.uint8), w, mode="nearest").astype(bool)
    return x, valid & ~near_gap


def quadrant_signals(q: QuadrantStreams, cfg: RespConfig = RespConfig(),
                     components: Optional[int] = None) -> tuple[np.ndarray, np.ndarray]:
    """Per-quadrant filtered displacement and validity, each ``(k, n)``."""
    comps = cfg.rate_components if components is None else components
    sig, valid = zip(*(_process_quadrant(d, cfg, comps) for d in q.depth))
    return np.array(sig), np.array(valid)


def _fuse(sig: np.ndarray, valid: np.ndarray):
    counts = valid.sum(axis=0)
    total = np.where(valid, sig, 0.0).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        fused = total / counts
    return fused, counts == 0


def respiratory_signal(q: QuadrantStreams, cfg: RespConfig = RespConfig()) -> SampledSeries:
    """Fused chest displacement (mm) over quadrants valid at each time point."""
    if all(d.present.sum() == 0 for d in q.depth):
        raise ValueError("all quadrants empty")
    sig, valid = quadrant_signals(q, cfg)
    fused, missing = _fuse(sig, valid)
    ref = q.depth[0]
    return SampledSeries(fused, ref.rate, ref.start_time, Unit.MM, missing)


# ---------------------------------------------------------------------------
# Breath qualification
# ---------------------------------------------------------------------------

def qualifying_breaths(amps: np.ndarray, rules: BreathRules = BreathRules(),
                       eps: float = 1e-9) -> np.ndarray:
    """Breaths within ``n_std`` standard deviations of the median amplitude.

    The median is taken over every breath. The standard deviation uses only
    breaths in ``[tv_min_ml, max(tv_cap_ml, tv_cap_factor * median)]``.
    """
    ok = np.isfinite(amps)
    if not ok.any():
        return ok
    med = float(np.median(amps[ok]))
    cap = max(rules.tv_cap_ml, rules.tv_cap_factor * med)
    core = ok & (amps >= rules.tv_min_ml) & (amps <= cap)
    if core.sum() < 2:
        return np.zeros_like(ok)
    sd = float(np.std(amps[core], ddof=1))
    return ok & (np.abs(amps - med) <= rules.n_std * sd + eps)


def _window_index(n: int, rate: float, window_s: float, stride_s: float):
    n_win = int(round(window_s * rate))
    step = max(1, int(round(stride_s * rate)))
    if n_win > n:
        raise ValueError("window exceeds series")
    starts = np.arange(0, n - n_win + 1, step)
    return starts, n_win


def rate_by_peaks(s: SampledSeries, tv_context: Optional[SampledSeries] = None,
                  window_s: float = 60.0, stride_s: float = 1.0,
                  rules: BreathRules = BreathRules(), min_separation_s: float = 0.4) -> SampledSeries:
    """Count qualifying breaths per window, scaled to breaths per minute."""
    ctx = s if tv_context is None else tv_context
    if len(ctx) != len(s):
        raise ValueError("tidal-volume context must align with signal")
    peaks, valleys = detect_peaks(s, 0.0, min_separation_s)
    amps = peak_amplitudes(fill_missing(ctx), peaks, valleys)
    good = peaks[qualifying_breaths(amps, rules)]
    starts, n_win = _window_index(len(s), s.rate, window_s, stride_s)
    counts = np.searchsorted(good, starts + n_win) - np.searchsorted(good, starts)
    rate = counts * (60.0 / window_s)
    t0 = s.start_time + n_win / (2.0 * s.rate)
    return SampledSeries(rate, s.rate / max(1, int(round(stride_s * s.rate))), t0, Unit.BREATHS_PER_MIN)


def rate_by_fourier(s: SampledSeries, prior: GaussianPrior = RR_PRIOR, window_s: float = 60.0,
                    stride_s: float = 1.0, band: Sequence[float] = RR_BAND, adaptive: bool = True,
                    kalman: Optional[KalmanParams] = RR_KALMAN, likelihood: str = "periodogram") -> RateTrack:
    """Windowed Bayesian spectral rate with adaptive prior, then Kalman."""
    return rate_track(s, prior, window_s, stride_s, band, adaptive, kalman, likelihood, Unit.BREATHS_PER_MIN)


# ---------------------------------------------------------------------------
# Volume
# ---------------------------------------------------------------------------

def _mean_depth(q: QuadrantStreams, window_s: float) -> np.ndarray:
    depth = np.array([fill_missing(d) for d in q.depth])
    present = np.array([d.present for d in q.depth])
    w = max(1, int(round(window_s * q.rate)))
    num = ndimage.uniform_filter1d(np.where(present, depth, 0.0).sum(axis=0), w, mode="nearest")
    den = ndimage.uniform_filter1d(present.sum(axis=0).astype(float), w, mode="nearest")
    with np.errstate(invalid="ignore", divide="ignore"):
        z = num / den
    if not np.isfinite(z).any():
        raise ValueError("no valid depth")
    return fill_missing(SampledSeries(z, q.rate, missing=~np.isfinite(z) | (z <= 0)))


def _volume_from_displacement(disp: np.ndarray, missing: np.ndarray, area_mm2: np.ndarray,
                              q: QuadrantStreams, cfg: RespConfig) -> SampledSeries:
    ref = q.depth[0]
    n = len(ref)
    vol = SampledSeries(np.where(missing, 0.0, disp) * area_mm2 / 1000.0, ref.rate, ref.start_time, Unit.ML)
    spec = BandpassSpec.per_minute(cfg.order, cfg.band[0], cfg.band[1], ref.rate)
    filtered = bandpass_zero_phase(vol, spec)
    window = default_ssa_window(n, ref.rate, cfg.ssa_window_s)
    out = ssa_denoise(filtered, SsaSpec(window, cfg.volume_components))
    return out.derive(out.values, missing=missing)


def volume_signal(q: QuadrantStreams, roi: RoiGeometry, k: CameraIntrinsics,
                  cfg: RespConfig = RespConfig()) -> SampledSeries:
    """Chest volume change (ml): fused displacement times projected ROI area.

    The area uses the windowed mean depth rather than the instantaneous one.
    """
    disp = respiratory_signal(q, cfg)
    area = roi_world_area(roi, _mean_depth(q, cfg.depth_mean_window_s), k)
    return _volume_from_displacement(disp.values, disp.missing, area, q, cfg)


def regional_volume_signal(q: QuadrantStreams, region: int, roi: RoiGeometry, k: CameraIntrinsics,
                           cfg: RespConfig = RespConfig()) -> SampledSeries:
    if not 0 <= region < len(q.depth):
        raise ValueError(f"invalid region {region}")
    sub = QuadrantStreams((q.depth[region],))
    sig, valid = quadrant_signals(sub, cfg)
    quad_roi = roi.quadrants()[region]
    area = roi_world_area(quad_roi, _mean_depth(sub, cfg.depth_mean_window_s) if valid.any() else 1.0, k)
    return _volume_from_displacement(sig[0], ~valid[0], np.broadcast_to(area, sig[0].shape), q, cfg)


def tidal_volume(v: SampledSeries, window_s: float = 60.0, stride_s: float = 1.0,
                 rules: BreathRules = BreathRules(), kalman: Optional[KalmanParams] = TV_KALMAN,
                 min_separation_s: float = 0.4) -> SampledSeries:
    """Mean qualifying peak-to-valley amplitude per window, then Kalman."""
    if len(v) == 0:
        raise ValueError("empty volume series")
    peaks, valleys = detect_peaks(v, 0.0, min_separation_s)
    amps = peak_amplitudes(fill_missing(v), peaks, valleys)
    good = qualifying_breaths(amps, rules)
    if valleys.size:
        pos = np.searchsorted(valleys, peaks)
        has_valley = pos > 0
        prev_valley = valleys[np.maximum(pos - 1, 0)]
        # a breath touching a missing stretch is not measurable
        touched = np.array([
            v.missing[(pv if h else p):p + 1].any() for p, pv, h in zip(peaks, prev_valley, has_valley)
        ], dtype=bool) if peaks.size else np.zeros(0, dtype=bool)
        good &= ~touched
    pk, amp = peaks[good], amps[good]
    starts, n_win = _window_index(len(v), v.rate, window_s, stride_s)
    lo = np.searchsorted(pk, starts)
    hi = np.searchsorted(pk, starts + n_win)
    csum = np.concatenate([[0.0], np.cumsum(amp)])
    count = hi - lo
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = (csum[hi] - csum[lo]) / count
    step = max(1, int(round(stride_s * v.rate)))
    out = SampledSeries(mean, v.rate / step, v.start_time + n_win / (2.0 * v.rate), Unit.ML, count == 0)
    return kalman_smooth(out, kalman) if kalman is not None else out


def regional_tidal_volume(q: QuadrantStreams, region: int, roi: RoiGeometry, k: CameraIntrinsics,
                          cfg: RespConfig = RespConfig(), **kwargs) -> SampledSeries:
    return tidal_volume(regional_volume_signal(q, region, roi, k, cfg), **kwargs)


# ---------------------------------------------------------------------------
# Flow-volume loops
# ---------------------------------------------------------------------------

def sinusoid_shape_error(flow: np.ndarray) -> float:
    """Normalised RMS residual of the best single-cycle sinusoid (plus offset)."""
    n = flow.size
    rms = np.sqrt(np.mean(flow ** 2))
    if n < 4 or rms == 0:
        return float("inf")
    phase = 2.0 * np.pi * np.arange(n) / n
    basis = np.column_stack([np.sin(phase), np.cos(phase), np.ones(n)])
    coef, *_ = np.linalg.lstsq(basis, flow, rcond=None)
    return float(np.sqrt(np.mean((flow - basis @ coef) ** 2)) / rms)


def flow_volume_loops(v: SampledSeries, rules: LoopRules = LoopRules(),
                      min_separation_s: float = 0.4, min_prominence: float = 0.0) -> list[BreathSegment]:
    """Valley-to-valley breaths with their (volume, flow) loops.

    Every segment is returned; excluded ones carry the first failing reason
    out of ``endpoint drift``, ``low tidal volume``, ``tidal volume outlier``,
    ``non-sinusoidal flow``.
    """
    x = fill_missing(v)
    flow = differentiate(v).values
    _, valleys = detect_peaks(v, min_prominence, min_separation_s)
    segs = []
    for a, b in zip(valleys[:-1], valleys[1:]):
        sl = slice(a, b + 1)
        segs.append((int(a), int(b), float(x[sl].max() - x[a]), np.column_stack([x[sl], flow[sl]])))
    if not segs:
        return []
    reasons: list[Optional[str]] = [None] * len(segs)
    for i, (a, b, tv, _) in enumerate(segs):
        if v.missing[a:b + 1].any():
            reasons[i] = "missing data"
        elif abs(x[b] - x[a]) > rules.max_drift_ml:
            reasons[i] = "endpoint drift"
        elif tv < rules.min_tv_ml:
            reasons[i] = "low tidal volume"
    pool = np.array([tv for (_, _, tv, _), r in zip(segs, reasons) if r is None])
    if pool.size >= 2:
        med, sd = float(np.median(pool)), float(np.std(pool, ddof=1))
        for i, (_, _, tv, _) in enumerate(segs):
            if reasons[i] is None and abs(tv - med) > rules.n_std * sd:
                reasons[i] = "tidal volume outlier"
    for i, (a, b, _, loop) in enumerate(segs):
        if reasons[i] is None and sinusoid_shape_error(loop[:-1, 1]) > rules.max_shape_error:
            reasons[i] = "non-sinusoidal flow"
    return [BreathSegment(a, b, tv, loop, r) for (a, b, tv, loop), r in zip(segs, reasons)]
