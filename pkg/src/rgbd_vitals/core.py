"""Shared value types used by every processing stage.

All sampling rates are held in Hz. Per-minute quantities (breaths/min, bpm)
only appear as *values* of rate series and in :class:`GaussianPrior`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class Unit(str, enum.Enum):
    MM = "mm"
    ML = "ml"
    ML_PER_S = "ml/s"
    BPM = "bpm"
    BREATHS_PER_MIN = "breaths/min"
    PERCENT = "percent"
    DIMENSIONLESS = "dimensionless"


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True).reshape(-1)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class SampledSeries:
    """Uniformly sampled scalar series.

    ``missing`` is an explicit per-sample flag. Missing samples carry NaN in
    ``values`` but consumers must consult the flag, not the NaN.
    """

    values: np.ndarray
    rate: float
    start_time: float = 0.0
    unit: Unit = Unit.DIMENSIONLESS
    missing: Optional[np.ndarray] = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float, copy=True).reshape(-1)
        if self.missing is None:
            missing = np.zeros(values.shape, dtype=bool)
        else:
            missing = np.array(self.missing, dtype=bool, copy=True).reshape(-1)
        if missing.shape == values.shape:
            values[missing] = np.nan
        values.flags.writeable = False
        missing.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "missing", missing)
        object.__setattr__(self, "rate", float(self.rate))
        object.__setattr__(self, "start_time", float(self.start_time))
        object.__setattr__(self, "unit", Unit(self.unit))

    def __len__(self) -> int:
        return self.values.size

    @property
    def present(self) -> np.ndarray:
        return ~self.missing

    @property
    def times(self) -> np.ndarray:
        return self.start_time + np.arange(len(self)) / self.rate

    @property
    def duration(self) -> float:
        return len(self) / self.rate

    def derive(self, values, unit: Optional[Unit] = None, missing=None) -> "SampledSeries":
        """Same timing, new values. Missing flags carry over unless given."""
        return SampledSeries(
            values,
            self.rate,
            self.start_time,
            self.unit if unit is None else unit,
            self.missing if missing is None else missing,
        )

    def filled(self, fill: float = 0.0) -> np.ndarray:
        out = self.values.copy()
        out[self.missing] = fill
        return out


@dataclass(frozen=True)
class RoiGeometry:
    """Pixel rectangle; ``x2``/``y2`` are exclusive bounds."""

    x1: int
    y1: int
    x2: int
    y2: int

    def __post_init__(self):
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(f"degenerate ROI {self}")

    @property
    def width(self) -> int:
        return self.x2 - self.x1

    @property
    def height(self) -> int:
        return self.y2 - self.y1

    def fits(self, width: int, height: int) -> bool:
        return self.x1 >= 0 and self.y1 >= 0 and self.x2 <= width and self.y2 <= height

    def quadrants(self) -> list["RoiGeometry"]:
        """Top-left, top-right, bottom-left, bottom-right.

        Odd extents give the extra column/row to the right/bottom quadrants.
        """
        xm = self.x1 + self.width // 2
        ym = self.y1 + self.height // 2
        if xm == self.x1 or ym == self.y1:
            raise ValueError("ROI too small to split into quadrants")
        return [
            RoiGeometry(self.x1, self.y1, xm, ym),
            RoiGeometry(xm, self.y1, self.x2, ym),
            RoiGeometry(self.x1, ym, xm, self.y2),
            RoiGeometry(xm, ym, self.x2, self.y2),
        ]


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    px: float
    py: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")


@dataclass(frozen=True)
class FrameSummary:
    """Per-frame region measurements.

    Channel means are ``None`` when no skin pixel was found; quadrant depth
    means are ``None`` when the quadrant has no valid depth pixel.
    """

    timestamp: float
    roi: RoiGeometry
    quadrant_depth_mm: tuple
    quadrant_valid_count: tuple
    mean_r: Optional[float] = None
    mean_g: Optional[float] = None
    mean_b: Optional[float] = None
    mean_ir: Optional[float] = None
    mean_depth_mm: Optional[float] = None

    def __post_init__(self):
        if len(self.quadrant_depth_mm) != 4 or len(self.quadrant_valid_count) != 4:
            raise ValueError("expected four quadrants")
        object.__setattr__(self, "quadrant_depth_mm", tuple(self.quadrant_depth_mm))
        object.__setattr__(self, "quadrant_valid_count", tuple(int(c) for c in self.quadrant_valid_count))

    def violations(self) -> list[str]:
        out = []
        for i, (d, c) in enumerate(zip(self.quadrant_depth_mm, self.quadrant_valid_count)):
            if c < 0:
                out.append(f"quadrant_valid_count[{i}] must be >= 0")
            if c > 0 and not (d is not None and math.isfinite(d) and d > 0):
                out.append(f"quadrant_depth_mm[{i}] must be positive when count > 0")
        for name in ("mean_r", "mean_g", "mean_b", "mean_ir"):
            v = getattr(self, name)
            if v is not None and not math.isfinite(v):
                out.append(f"{name} must be finite or absent")
        return out


@dataclass(frozen=True)
class GaussianPrior:
    """Rate prior in per-minute units."""

    mean: float
    std: float

    def __post_init__(self):
        if not self.std > 0:
            raise ValueError("prior std must be > 0")

    def log_density(self, rate_per_min):
        z = (np.asarray(rate_per_min, dtype=float) - self.mean) / self.std
        return -0.5 * z * z


DEFAULT_PROCESS_NOISE = ((1e-4, 0.0), (0.0, 1e-5))


@dataclass(frozen=True, eq=False)
class KalmanParams:
    """Constant-velocity smoother parameters.

    ``r_std`` is an observation standard deviation in output units; it is
    squared to form the observation variance.
    """

    r_std: float
    q: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_PROCESS_NOISE))
    dt: float = 1.0

    def __post_init__(self):
        q = np.array(self.q, dtype=float)
        if q.shape != (2, 2):
            raise ValueError("q must be 2x2")
        if not np.allclose(q, q.T) or np.linalg.eigvalsh(q).min() < -1e-15:
            raise ValueError("q must be symmetric positive semidefinite")
        if not (self.r_std > 0 and self.dt > 0):
            raise ValueError("r_std and dt must be > 0")
        q.flags.writeable = False
        object.__setattr__(self, "q", q)


def validate_series(s: SampledSeries) -> list[str]:
    violations = []
    if not (math.isfinite(s.rate) and s.rate > 0):
        violations.append("rate must be > 0")
    if not math.isfinite(s.start_time):
        violations.append("start_time must be finite")
    if s.missing.shape != s.values.shape:
        violations.append("missing flags must match values length")
        return violations
    bad = np.flatnonzero(~np.isfinite(s.values) & ~s.missing)
    if bad.size:
        violations.append(
            f"values: {bad.size} non-finite entries not flagged missing (first at index {bad[0]})"
        )
    return violations


def resample_mean(s: SampledSeries, target_rate: float) -> SampledSeries:
    """Block-average down to ``target_rate``.

    Output sample ``k`` averages every present source sample whose index
    falls in ``[k/target, (k+1)/target)`` seconds from the start.
    """
    if target_rate > s.rate:
        raise ValueError("upsampling not supported here")
    if target_rate <= 0:
        raise ValueError("target_rate must be > 0")
    n = len(s)
    if n == 0:
        return SampledSeries([], target_rate, s.start_time, s.unit)
    bins = np.floor(np.arange(n) * (target_rate / s.rate) + 1e-9).astype(int)
    nbins = int(bins[-1]) + 1
    present = s.present
    sums = np.bincount(bins[present], weights=s.values[present], minlength=nbins)
    counts = np.bincount(bins[present], minlength=nbins)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = sums / counts
    return SampledSeries(out, target_rate, s.start_time, s.unit, counts == 0)


def series_from_optional(values: Sequence[Optional[float]], rate: float, start_time: float = 0.0,
                         unit: Unit = Unit.DIMENSIONLESS) -> SampledSeries:
    """Build a series from a list where ``None`` marks a missing sample."""
    missing = np.array([v is None for v in values], dtype=bool)
    vals = np.array([np.nan if v is None else v for v in values], dtype=float)
    return SampledSeries(vals, rate, start_time, unit, missing)
