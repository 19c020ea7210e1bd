"""Non-contact neonatal vital signs from RGB-D region measurements."""

from .core import (
    CameraIntrinsics,
    FrameSummary,
    GaussianPrior,
    KalmanParams,
    RoiGeometry,
    SampledSeries,
    Unit,
    resample_mean,
    validate_series,
)

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics",
    "FrameSummary",
    "GaussianPrior",
    "KalmanParams",
    "RoiGeometry",
    "SampledSeries",
    "Unit",
    "resample_mean",
    "validate_series",
]
