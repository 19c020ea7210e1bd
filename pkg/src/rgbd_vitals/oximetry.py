"""AC/DC decomposition and oxygen-saturation estimators.

Four estimators share the same plumbing: a ratio of pulsatile fractions per
30 s segment, mapped to a saturation, clamped, then Kalman smoothed.

``red_ir``
    red over infrared, linear calibration.
``red_blue``
    red over blue, linear calibration.
``ycgcr``
    Cg over Cr after a linear colour transform, linear calibration.
``calfree``
    red over infrared through a two-wavelength Beer-Lambert inversion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import signal

from .cardio import RgbSeries
from .core import KalmanParams, SampledSeries, Unit
from .dsp import BandpassSpec, bandpass_zero_phase, kalman_smooth

SPO2_BAND = (60.0, 300.0)
SPO2_RANGE = (70.0, 100.0)
SEGMENT_S = 30.0
SPO2_KALMAN_R = 10.0
METHODS = ("red_ir", "red_blue", "ycgcr", "calfree")


@dataclass(frozen=True)
class AcDc:
    """Pulsatile amplitude and mean level of one segment; ``ac`` is NaN when absent."""

    ac: float
    dc: float
    window_start: float

    @property
    def fraction(self) -> float:
        return self.ac / self.dc if self.dc > 0 else float("nan")


@dataclass(frozen=True)
class OximetryCalibration:
    a: float = 110.0
    b: float = 25.0

    def __post_init__(self):
        if not self.b > 0:
            raise ValueError("calibration slope b must be > 0")

    def saturation(self, ratio):
        return self.a - self.b * np.asarray(ratio, dtype=float)

    def ratio_for(self, saturation):
        """Ratio of ratios that maps to ``saturation`` before clamping."""
        return (self.a - np.asarray(saturation, dtype=float)) / self.b


@dataclass(frozen=True)
class YCgCrTransform:
    """Offsets and rows (Y, Cg, Cr) applied to channels scaled to [0, 1].

    With ``luma_level`` set, all three channels are first multiplied by one
    common factor that brings the series' mean offset-free luma to that
    level. The offsets would otherwise make the chroma ratio depend on
    overall brightness; ``None`` applies the transform to raw channels.
    """

    offset: tuple = (16.0, 128.0, 128.0)
    matrix: tuple = (
        (65.481, 128.553, 24.966),
        (-81.085, 112.0, -30.915),
        (112.0, -93.786, -18.214),
    )
    luma_level: Optional[float] = 128.0

    def exposure_gain(self, rgb: np.ndarray) -> float:
        """Common channel factor for ``rgb`` ``(3, n)``; NaN samples are ignored."""
        if self.luma_level is None:
            return 1.0
        luma = np.asarray(self.matrix[0], dtype=float) @ (np.asarray(rgb, dtype=float) / 255.0)
        mean = float(np.nanmean(luma)) if np.isfinite(luma).any() else float("nan")
        if not mean > 0:
            raise ValueError("mean luma must be > 0 for exposure normalisation")
        return self.luma_level / mean

    def apply(self, rgb: np.ndarray) -> np.ndarray:
        """``rgb`` is ``(3, n)`` on the 0-255 scale; returns ``(3, n)`` Y, Cg, Cr."""
        m = np.asarray(self.matrix, dtype=float)
        return np.asarray(self.offset, dtype=float)[:, None] + m @ (np.asarray(rgb, dtype=float) / 255.0)


@dataclass(frozen=True)
class ExtinctionTable:
    """Molar extinction coefficients (cm^-1/M) at the red and infrared wavelengths.

    Defaults are the tabulated haemoglobin values at 660 nm and 850 nm.
    """

    hbo2_red: float = 319.6
    hb_red: float = 3226.56
    hbo2_ir: float = 1058.0
    hb_ir: float = 691.32

    def saturation(self, ratio, eps: float = 1e-9):
        """Oxygenated fraction (0-1) for a red/IR ratio; NaN where ill-posed."""
        r = np.asarray(ratio, dtype=float)
        num = self.hb_red - r * self.hb_ir
        den = self.hb_red - self.hbo2_red + r * (self.hbo2_ir - self.hb_ir)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(np.abs(den) > eps, num / np.where(np.abs(den) > eps, den, 1.0), np.nan)

    def ratio_for(self, fraction):
        """Inverse of :meth:`saturation` for an oxygenated fraction in [0, 1]."""
        s = np.asarray(fraction, dtype=float)
        return (self.hb_red - s * (self.hb_red - self.hbo2_red)) / (self.hb_ir + s * (self.hbo2_ir - self.hb_ir))


# ---------------------------------------------------------------------------
# AC / DC
# ---------------------------------------------------------------------------

def _segment_ac(x: np.ndarray, rate: float, max_rate_per_min: float, rel_prominence: float,
                dc: float) -> float:
    lo, hi = np.percentile(x, [5.0, 95.0])
    spread = hi - lo
    if not spread > 1e-9 * max(abs(dc), 1.0):
        return float("nan")
    distance = max(1, int(math.floor(rate * 60.0 / max_rate_per_min)))
    peaks, _ = signal.find_peaks(x, prominence=rel_prominence * spread, distance=distance)
    if peaks.size < 2:
        return float("nan")
    troughs = np.array([a + np.argmin(x[a:b + 1]) for a, b in zip(peaks[:-1], peaks[1:])])
    return float(np.mean((x[peaks[:-1]] - x[troughs]) / 2.0))


def ac_dc(filtered: SampledSeries, raw: SampledSeries, segment_s: float = SEGMENT_S,
          max_rate_per_min: float = SPO2_BAND[1], rel_prominence: float = 0.3) -> list[AcDc]:
    """Per-segment AC (mean half peak-to-trough of ``filtered``) and DC (mean of ``raw``).

    Segments are non-overlapping and only complete ones are reported. Peaks
    need a prominence of ``rel_prominence`` times the segment's 5-95
    percentile spread. A segment containing missing samples, or with fewer
    than two peaks, has no AC.
    """
    if len(filtered) != len(raw) or filtered.rate != raw.rate:
        raise ValueError("filtered and raw series must be aligned")
    n_seg = int(round(segment_s * raw.rate))
    out = []
    for k in range(len(raw) // n_seg):
        sl = slice(k * n_seg, (k + 1) * n_seg)
        t0 = raw.start_time + k * segment_s
        present = raw.present[sl]
        dc = float(np.mean(raw.values[sl][present])) if present.any() else float("nan")
        if not present.all() or filtered.missing[sl].any():
            out.append(AcDc(float("nan"), dc, t0))
            continue
        ac = _segment_ac(filtered.values[sl], raw.rate, max_rate_per_min, rel_prominence, dc)
        out.append(AcDc(ac, dc, t0))
    return out


def ratio_of_ratios(num: AcDc, den: AcDc) -> float:
    if not (np.isfinite(num.ac) and np.isfinite(den.ac)) or not (num.dc > 0 and den.dc > 0):
        return float("nan")
    den_frac = den.ac / den.dc
    if den_frac == 0:
        return float("nan")
    return (num.ac / num.dc) / den_frac


def _filtered(raw: SampledSeries, band: Sequence[float], order: int) -> SampledSeries:
    spec = BandpassSpec.per_minute(order, band[0], band[1], raw.rate)
    return bandpass_zero_phase(raw, spec)


def ratio_series(num: SampledSeries, den: SampledSeries, band: Sequence[float] = SPO2_BAND,
                 order: int = 7, segment_s: float = SEGMENT_S) -> SampledSeries:
    """Ratio of ratios per segment, one sample per ``segment_s``."""
    a = ac_dc(_filtered(num, band, order), num, segment_s, band[1])
    b = ac_dc(_filtered(den, band, order), den, segment_s, band[1])
    ratios = np.array([ratio_of_ratios(x, y) for x, y in zip(a, b)])
    return SampledSeries(ratios, 1.0 / segment_s, num.start_time, Unit.DIMENSIONLESS, ~np.isfinite(ratios))


def ycgcr_ratio_series(c: RgbSeries, transform: YCgCrTransform = YCgCrTransform(),
                       band: Sequence[float] = SPO2_BAND, order: int = 7,
                       segment_s: float = SEGMENT_S) -> SampledSeries:
    """Cg over Cr ratio of ratios from RGB channel means."""
    rgb = c.stack()
    missing = c.missing
    _, cg, cr = transform.apply(rgb * transform.exposure_gain(np.where(missing, np.nan, rgb)))
    cg_s = SampledSeries(cg, c.rate, c.start_time, missing=missing)
    cr_s = SampledSeries(cr, c.rate, c.start_time, missing=missing)
    return ratio_series(cg_s, cr_s, band, order, segment_s)


# ---------------------------------------------------------------------------
# Saturation
# ---------------------------------------------------------------------------

def clamp_spo2(values, bounds: Sequence[float] = SPO2_RANGE):
    return np.clip(values, bounds[0], bounds[1])


def spo2_linear(ratio, cal: OximetryCalibration = OximetryCalibration(),
                bounds: Sequence[float] = SPO2_RANGE):
    """Clamped ``a - b * ratio`` (percent); NaN ratios stay NaN."""
    return clamp_spo2(cal.saturation(ratio), bounds)


def spo2_calibration_free(ratio, table: ExtinctionTable = ExtinctionTable(),
                          bounds: Sequence[float] = SPO2_RANGE):
    """Clamped Beer-Lambert saturation (percent) from a red/IR ratio."""
    return clamp_spo2(100.0 * table.saturation(ratio), bounds)


def smooth_spo2(raw_percent: SampledSeries, r_std: float = SPO2_KALMAN_R,
                bounds: Sequence[float] = SPO2_RANGE) -> SampledSeries:
    """Kalman smoothing at the segment cadence, clipped back into ``bounds``."""
    if len(raw_percent) == 0:
        return raw_percent
    kp = KalmanParams(r_std=r_std, dt=1.0 / raw_percent.rate)
    sm = kalman_smooth(raw_percent, kp)
    return sm.derive(clamp_spo2(sm.values, bounds))


def spo2_series(ratios: SampledSeries, method: str, cal: Optional[OximetryCalibration] = None,
                table: ExtinctionTable = ExtinctionTable(), r_std: Optional[float] = SPO2_KALMAN_R,
                bounds: Sequence[float] = SPO2_RANGE) -> SampledSeries:
    """Map a ratio series to smoothed saturation (percent) for ``method``."""
    if method not in METHODS:
        raise ValueError(f"unknown SpO2 method {method!r}")
    if method == "calfree":
        pct = spo2_calibration_free(ratios.values, table, bounds)
    else:
        pct = spo2_linear(ratios.values, cal or OximetryCalibration(), bounds)
    raw = ratios.derive(pct, unit=Unit.PERCENT, missing=~np.isfinite(pct))
    return smooth_spo2(raw, r_std, bounds) if r_std is not None else raw


def spo2_ycgcr(c: RgbSeries, cal: OximetryCalibration = OximetryCalibration(),
               transform: YCgCrTransform = YCgCrTransform(), **kwargs) -> SampledSeries:
    return spo2_series(ycgcr_ratio_series(c, transform), "ycgcr", cal, **kwargs)
