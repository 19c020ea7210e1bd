"""Per-frame stages: skin masks, mask refinement, depth inliers, averaging.

Masks are boolean ``(height, width)`` arrays. Pixels outside the frame are
treated as unset by every morphological operation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import CameraIntrinsics, FrameSummary, RoiGeometry


class EmptyRoiError(ValueError):
    """No pixel in the ROI carries a depth return."""


@dataclass(frozen=True, eq=False)
class RasterFrame:
    rgb: np.ndarray
    depth: Optional[np.ndarray] = None
    ir: Optional[np.ndarray] = None

    def __post_init__(self):
        rgb = np.asarray(self.rgb)
        if rgb.ndim != 3 or rgb.shape[2] != 3:
            raise ValueError("rgb must be (height, width, 3)")
        for name in ("depth", "ir"):
            plane = getattr(self, name)
            if plane is not None and np.asarray(plane).shape != rgb.shape[:2]:
                raise ValueError(f"{name} plane does not match rgb dimensions")

    @property
    def height(self) -> int:
        return self.rgb.shape[0]

    @property
    def width(self) -> int:
        return self.rgb.shape[1]


@dataclass(frozen=True)
class WorldPoint:
    X: float
    Y: float
    Z: float


@dataclass(frozen=True)
class SkinThresholds:
    # YCbCr, full-range BT.601
    cb: tuple = (77.0, 127.0)
    cr: tuple = (133.0, 173.0)
    y_min: float = 16.0
    # HSV: hue in degrees, saturation and value in [0, 1]
    hue: tuple = (0.0, 50.0)
    sat: tuple = (0.18, 0.68)
    val_min: float = 0.35


def rgb_to_ycbcr(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=float)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b
    cr = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b
    return np.stack([y, cb, cr], axis=-1)


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """Hue in degrees [0, 360), saturation and value in [0, 1]."""
    rgb = np.asarray(rgb, dtype=float) / 255.0
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    v = rgb.max(axis=-1)
    c = v - rgb.min(axis=-1)
    safe_c = np.where(c > 0, c, 1.0)
    h = np.where(
        v == r,
        np.mod((g - b) / safe_c, 6.0),
        np.where(v == g, (b - r) / safe_c + 2.0, (r - g) / safe_c + 4.0),
    )
    h = np.where(c > 0, 60.0 * h, 0.0)
    s = np.where(v > 0, c / np.where(v > 0, v, 1.0), 0.0)
    return np.stack([h, s, v], axis=-1)


def skin_mask_colorspace(frame: RasterFrame, space: str,
                         thresholds: SkinThresholds = SkinThresholds()) -> np.ndarray:
    space = space.lower()
    if space == "ycbcr":
        y, cb, cr = np.moveaxis(rgb_to_ycbcr(frame.rgb), -1, 0)
        return (
            (y >= thresholds.y_min)
            & (cb >= thresholds.cb[0]) & (cb <= thresholds.cb[1])
            & (cr >= thresholds.cr[0]) & (cr <= thresholds.cr[1])
        )
    if space == "hsv":
        h, s, v = np.moveaxis(rgb_to_hsv(frame.rgb), -1, 0)
        return (
            (h >= thresholds.hue[0]) & (h <= thresholds.hue[1])
            & (s >= thresholds.sat[0]) & (s <= thresholds.sat[1])
            & (v >= thresholds.val_min)
        )
    raise ValueError(f"unknown colour space {space!r}")


def _box_all(mask: np.ndarray, k: int) -> np.ndarray:
    """True at top-left anchors where a k x k box fits inside the mask."""
    h, w = mask.shape
    if h < k or w < k:
        return np.zeros((max(h - k + 1, 0), max(w - k + 1, 0)), dtype=bool)
    rows = sliding_window_view(mask, k, axis=0).all(axis=-1)
    return sliding_window_view(rows, k, axis=1).all(axis=-1)


def binary_open(mask: np.ndarray, k: int) -> np.ndarray:
    """Opening by a k x k square: union of every box that fits in ``mask``."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    fits = _box_all(mask, k)
    if fits.size == 0:
        return np.zeros_like(mask)
    padded = np.pad(fits, k - 1)
    rows = sliding_window_view(padded, k, axis=0).any(axis=-1)
    out = sliding_window_view(rows, k, axis=1).any(axis=-1)
    return out[:h, :w]


def binary_median3(mask: np.ndarray) -> np.ndarray:
    """3 x 3 median of a binary mask (majority of nine, zero padded)."""
    m = np.pad(np.asarray(mask, dtype=np.int16), 1)
    rows = sliding_window_view(m, 3, axis=0).sum(axis=-1)
    counts = sliding_window_view(rows, 3, axis=1).sum(axis=-1)
    return counts >= 5


def refine_mask(masks: Sequence[np.ndarray]) -> np.ndarray:
    if not masks:
        raise ValueError("at least one mask required")
    shape = np.shape(masks[0])
    if any(np.shape(m) != shape for m in masks):
        raise ValueError("mask dimension mismatch")
    combined = np.ones(shape, dtype=bool)
    for m in masks:
        combined &= binary_open(m, 3)
    return binary_open(binary_median3(combined), 4)


def depth_inliers(frame: RasterFrame, roi: RoiGeometry, tol_mm: float = 25.0,
                  bin_mm: float = 5.0) -> np.ndarray:
    """Pixels of the ROI within ``tol_mm`` of the modal depth-bin centre."""
    if frame.depth is None:
        raise ValueError("frame has no depth channel")
    depth = np.asarray(frame.depth, dtype=float)
    sub = depth[roi.y1:roi.y2, roi.x1:roi.x2]
    valid = sub > 0
    if not valid.any():
        raise EmptyRoiError("empty ROI: no nonzero depth pixels")
    idx = np.floor(sub[valid] / bin_mm).astype(np.int64)
    lo = idx.min()
    mode_bin = lo + int(np.argmax(np.bincount(idx - lo)))
    centre = (mode_bin + 0.5) * bin_mm
    keep = valid & (np.abs(sub - centre) <= tol_mm)
    out = np.zeros(depth.shape, dtype=bool)
    out[roi.y1:roi.y2, roi.x1:roi.x2] = keep
    return out


def _masked_mean(plane: Optional[np.ndarray], mask: np.ndarray) -> Optional[float]:
    if plane is None or not mask.any():
        return None
    return float(np.asarray(plane, dtype=float)[mask].mean())


def summarize_frame(frame: RasterFrame, roi: RoiGeometry, skin: np.ndarray,
                    depth_in: np.ndarray, timestamp: float = 0.0) -> FrameSummary:
    shape = (frame.height, frame.width)
    if np.shape(skin) != shape or np.shape(depth_in) != shape:
        raise ValueError("mask dimensions do not match frame")
    if not roi.fits(frame.width, frame.height):
        raise ValueError("ROI outside frame bounds")
    in_roi = np.zeros(shape, dtype=bool)
    in_roi[roi.y1:roi.y2, roi.x1:roi.x2] = True
    colour = in_roi & np.asarray(skin, dtype=bool)
    rgb = np.asarray(frame.rgb, dtype=float)

    depth_ok = np.asarray(depth_in, dtype=bool) & in_roi
    if frame.depth is not None:
        depth_ok &= np.asarray(frame.depth) > 0
    q_depth, q_count = [], []
    for q in roi.quadrants():
        sel = np.zeros(shape, dtype=bool)
        sel[q.y1:q.y2, q.x1:q.x2] = True
        sel &= depth_ok
        q_count.append(int(sel.sum()))
        q_depth.append(_masked_mean(frame.depth, sel))

    return FrameSummary(
        timestamp=float(timestamp),
        roi=roi,
        quadrant_depth_mm=tuple(q_depth),
        quadrant_valid_count=tuple(q_count),
        mean_r=_masked_mean(rgb[..., 0], colour),
        mean_g=_masked_mean(rgb[..., 1], colour),
        mean_b=_masked_mean(rgb[..., 2], colour),
        mean_ir=_masked_mean(frame.ir, colour),
        mean_depth_mm=_masked_mean(frame.depth, depth_ok),
    )


def extract_frame(frame: RasterFrame, roi: RoiGeometry, timestamp: float,
                  thresholds: SkinThresholds = SkinThresholds(),
                  tol_mm: float = 25.0, bin_mm: float = 5.0) -> FrameSummary:
    """Run the full per-frame chain on one raster frame."""
    skin = refine_mask([
        skin_mask_colorspace(frame, "ycbcr", thresholds),
        skin_mask_colorspace(frame, "hsv", thresholds),
    ])
    try:
        inliers = depth_inliers(frame, roi, tol_mm, bin_mm)
    except EmptyRoiError:
        inliers = np.zeros(skin.shape, dtype=bool)
    return summarize_frame(frame, roi, skin, inliers, timestamp)


def project_to_world(x, y, Z, k: CameraIntrinsics) -> WorldPoint:
    if not Z > 0:
        raise ValueError("depth must be positive")
    return WorldPoint(Z * (x - k.px) / k.fx, Z * (y - k.py) / k.fy, float(Z))


def roi_world_area(roi: RoiGeometry, Z, k: CameraIntrinsics):
    """Projected rectangle area in mm^2 at depth ``Z`` (scalar or array)."""
    Z = np.asarray(Z, dtype=float)
    if np.any(Z <= 0):
        raise ValueError("depth must be positive")
    width = Z * (roi.x2 - k.px) / k.fx - Z * (roi.x1 - k.px) / k.fx
    height = Z * (roi.y2 - k.py) / k.fy - Z * (roi.y1 - k.py) / k.fy
    return width * height
