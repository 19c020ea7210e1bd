"""Chrominance pulse signals (CHROM, POS) and heart-rate estimation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .core import GaussianPrior, KalmanParams, SampledSeries, Unit
from .dsp import BandpassSpec, RateTrack, present_runs, rate_track, zero_phase

HR_BAND = (90.0, 270.0)
HR_PRIOR = GaussianPrior(155.0, 15.0)
HR_KALMAN = KalmanParams(r_std=20.0)

# orthogonal chrominance axes on normalised channels
CHROM_X = (3.0, -2.0, 0.0)
CHROM_Y = (1.5, 0.5, -1.0)


@dataclass(frozen=True, eq=False)
class RgbSeries:
    r: SampledSeries
    g: SampledSeries
    b: SampledSeries

    def __post_init__(self):
        n, rate = len(self.r), self.r.rate
        if any(len(c) != n or c.rate != rate for c in (self.g, self.b)):
            raise ValueError("channels must share length and rate")

    @property
    def rate(self) -> float:
        return self.r.rate

    @property
    def start_time(self) -> float:
        return self.r.start_time

    def __len__(self) -> int:
        return len(self.r)

    def stack(self) -> np.ndarray:
        return np.vstack([self.r.values, self.g.values, self.b.values])

    @property
    def missing(self) -> np.ndarray:
        return self.r.missing | self.g.missing | self.b.missing


def _split_runs(c: RgbSeries, min_len: int, fn) -> SampledSeries:
    """Apply ``fn(rgb[3, m]) -> signal or None`` to each gap-free run."""
    rgb = c.stack()
    out = np.full(len(c), np.nan)
    for a, b in present_runs(c.missing):
        if b - a <= min_len:
            continue
        res = fn(rgb[:, a:b])
        if res is not None:
            out[a:b] = res
    return SampledSeries(out, c.rate, c.start_time, Unit.DIMENSIONLESS, ~np.isfinite(out))


def _normalise(rgb: np.ndarray, rate: float, norm_window_s: Optional[float]) -> np.ndarray:
    m = rgb.shape[1]
    w = None if norm_window_s is None else int(round(norm_window_s * rate))
    if w is None or w >= m:
        mu = rgb.mean(axis=1, keepdims=True)
    else:
        mu = ndimage.uniform_filter1d(rgb, w, axis=1, mode="nearest")
    return rgb / mu


def chrom_signal(c: RgbSeries, band: Sequence[float] = HR_BAND, order: int = 7,
                 norm_window_s: Optional[float] = 120.0, eps: float = 1e-12) -> SampledSeries:
    """CHROM pulse signal.

    Channels are divided by their mean (a centred moving mean of
    ``norm_window_s`` seconds, or the whole run when ``None`` or longer than
    the run), bandpassed, and combined with ``alpha = std(X_f) / std(Y_f)``.
    Runs between missing samples are processed independently; a run where
    ``std(Y_f)`` vanishes but ``std(X_f)`` does not is left missing, and one
    where both vanish is exactly zero.
    """
    spec = BandpassSpec.per_minute(order, band[0], band[1], c.rate)
    sos = spec.sos()

    def run(rgb):
        norm = _normalise(rgb, c.rate, norm_window_s)
        filt = zero_phase(sos, norm, spec.settle_length, axis=1)
        xf = np.dot(CHROM_X, filt)
        yf = np.dot(CHROM_Y, filt)
        sx, sy = xf.std(), yf.std()
        if sy <= eps:
            # no chrominance at all is a null signal; X without Y is undefined
            return np.zeros(rgb.shape[1]) if sx <= eps else None
        alpha = sx / sy
        rf, gf, bf = filt
        return 3.0 * (1.0 - alpha / 2.0) * rf - 2.0 * (1.0 + alpha / 2.0) * gf + 1.5 * alpha * bf

    return _split_runs(c, spec.settle_length, run)


def _pos_overlap_add(rgb: np.ndarray, w: int, eps: float) -> np.ndarray:
    m = rgb.shape[1]
    win = sliding_window_view(rgb, w, axis=1)  # (3, m-w+1, w)
    norm = win / win.mean(axis=2, keepdims=True)
    r, g, b = norm
    x = g - b
    y = g + b - 2.0 * r
    sx, sy = x.std(axis=1), y.std(axis=1)
    ok = sy > eps
    alpha = np.where(ok, sx / np.where(ok, sy, 1.0), 0.0)[:, None]
    s = x + alpha * y
    s = (s - s.mean(axis=1, keepdims=True)) * ok[:, None]
    out = np.zeros(m)
    n_win = s.shape[0]
    for j in range(w):
        out[j:j + n_win] += s[:, j]
    return out


def pos_signal(c: RgbSeries, window_s: float = 1.6, band: Sequence[float] = HR_BAND,
               order: int = 7, eps: float = 1e-12) -> SampledSeries:
    """POS pulse signal: overlap-add of mean-removed window projections, bandpassed."""
    spec = BandpassSpec.per_minute(order, band[0], band[1], c.rate)
    sos = spec.sos()
    w = max(2, int(round(window_s * c.rate)))

    def run(rgb):
        if rgb.shape[1] < w:
            return None
        h = _pos_overlap_add(rgb, w, eps)
        return zero_phase(sos, h, spec.settle_length)

    return _split_runs(c, max(spec.settle_length, w - 1), run)


def heart_rate(s: SampledSeries, prior: GaussianPrior = HR_PRIOR, window_s: float = 120.0,
               stride_s: float = 1.0, band: Sequence[float] = HR_BAND,
               kalman: Optional[KalmanParams] = HR_KALMAN, likelihood: str = "periodogram") -> RateTrack:
    """Fixed-prior spectral heart rate (bpm) followed by Kalman smoothing."""
    return rate_track(s, prior, window_s, stride_s, band, False, kalman, likelihood, Unit.BPM)


def combine_hr(a: SampledSeries, b: SampledSeries) -> SampledSeries:
    """Sample-wise mean; a sample missing on one side takes the other."""
    if len(a) != len(b) or a.rate != b.rate:
        raise ValueError("series must be aligned")
    va, vb = a.values, b.values
    out = np.where(a.missing, vb, np.where(b.missing, va, 0.5 * (va + vb)))
    return a.derive(out, missing=a.missing & b.missing)
