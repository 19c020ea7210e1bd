"""Synthetic RGB-D region measurements with exact vital-sign labels.

The generator works at the level of per-frame region summaries: quadrant
depth means and skin-masked channel means. Depth is modulated so that the
fused displacement times the projected ROI area equals the programmed
tidal volume, and channel means are modulated at the pulse rate with
pulsatile fractions chosen so that the programmed saturation is exact under
the scenario's calibration.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import CameraIntrinsics, FrameSummary, RoiGeometry, SampledSeries, Unit
from .frames import RasterFrame, roi_world_area
from .oximetry import ExtinctionTable, OximetryCalibration, YCgCrTransform

ARTIFACT_KINDS = ("occlusion", "motion-step", "illumination-flicker")


def schedule_at(value, t: np.ndarray) -> np.ndarray:
    """A constant, or ``[[t0, v0], [t1, v1], ...]`` linearly interpolated."""
    if np.isscalar(value):
        return np.full(np.shape(t), float(value))
    knots = np.asarray(value, dtype=float)
    if knots.ndim != 2 or knots.shape[1] != 2:
        raise ValueError("schedule must be a number or a list of [time, value] pairs")
    return np.interp(t, knots[:, 0], knots[:, 1])


@dataclass(frozen=True)
class Artifact:
    time: float
    kind: str
    duration: float = 5.0
    magnitude: float = 0.0
    quadrant: Optional[int] = None
    frequency_hz: float = 2.0

    def __post_init__(self):
        if self.kind not in ARTIFACT_KINDS:
            raise ValueError(f"unknown artifact kind {self.kind!r}")
        if self.quadrant is not None and not 0 <= self.quadrant < 4:
            raise ValueError("artifact quadrant must be in 0..3")


@dataclass(frozen=True)
class SynthScenario:
    duration_s: float = 300.0
    frame_rate: float = 30.0
    # breathing
    rr_per_min: object = 50.0
    tv_ml: object = 4.0
    ie_ratio: float = 1.5
    breath_shape: str = "raised-cosine"
    quadrant_gain: tuple = (1.0, 1.0, 1.0, 1.0)
    # pulse
    hr_bpm: object = 150.0
    channel_dc: tuple = (200.0, 140.0, 110.0, 150.0)
    pulse_scale: float = 0.01
    pulse_shape: tuple = (0.33, 0.77, 0.53)
    spo2_percent: object = 97.0
    spo2_method: str = "red_ir"
    calibration: OximetryCalibration = OximetryCalibration()
    extinction: ExtinctionTable = ExtinctionTable()
    ycgcr: YCgCrTransform = YCgCrTransform()
    # noise
    depth_noise_mm: float = 0.0
    channel_noise: tuple = (0.0, 0.0, 0.0, 0.0)
    pulse_snr_db: Optional[float] = None
    artifacts: tuple = ()
    # geometry
    roi: tuple = (85, 60, 235, 180)
    intrinsics: tuple = (605.0, 605.0, 160.0, 120.0)
    depth_mm: float = 450.0
    pixels_per_quadrant: int = 4500

    def __post_init__(self):
        if not (self.duration_s > 0 and self.frame_rate > 0):
            raise ValueError("duration and frame rate must be > 0")
        if self.depth_noise_mm < 0 or any(s < 0 for s in self.channel_noise):
            raise ValueError("noise sigma must be >= 0")
        if self.breath_shape not in ("raised-cosine", "sine"):
            raise ValueError(f"unknown breath shape {self.breath_shape!r}")
        if self.spo2_method not in ("red_ir", "red_blue", "ycgcr", "calfree"):
            raise ValueError(f"unknown SpO2 method {self.spo2_method!r}")
        arts = tuple(a if isinstance(a, Artifact) else Artifact(**a) for a in self.artifacts)
        object.__setattr__(self, "artifacts", arts)

    @property
    def roi_geometry(self) -> RoiGeometry:
        return RoiGeometry(*self.roi)

    @property
    def camera(self) -> CameraIntrinsics:
        return CameraIntrinsics(*self.intrinsics)

    @property
    def n_frames(self) -> int:
        return int(round(self.duration_s * self.frame_rate))


@dataclass(frozen=True, eq=False)
class SynthOutput:
    frames: list
    labels: dict = field(default_factory=dict)
    ratio: float = float("nan")


# ---------------------------------------------------------------------------
# Waveforms
# ---------------------------------------------------------------------------

def _phase(rate_per_min: np.ndarray, fs: float) -> np.ndarray:
    """Cycle count (not radians) accumulated from an instantaneous rate."""
    return np.concatenate([[0.0], np.cumsum(rate_per_min[:-1])]) / (60.0 * fs)


def breath_waveform(phase: np.ndarray, ie_ratio: float = 1.5, shape: str = "raised-cosine") -> np.ndarray:
    """Lung filling in [0, 1]: 0 at end-expiration, 1 at end-inspiration."""
    frac = np.mod(phase, 1.0)
    if shape == "sine":
        return 0.5 * (1.0 - np.cos(2.0 * np.pi * frac))
    inhale = 1.0 / (1.0 + ie_ratio)
    up = 0.5 * (1.0 - np.cos(np.pi * frac / inhale))
    down = 0.5 * (1.0 + np.cos(np.pi * (frac - inhale) / (1.0 - inhale)))
    return np.where(frac < inhale, up, down)


# ---------------------------------------------------------------------------
# Pulsatile fractions
# ---------------------------------------------------------------------------

def pulse_fractions(sc: SynthScenario, spo2: np.ndarray) -> tuple[np.ndarray, float]:
    """Per-sample pulsatile fractions ``(4, n)`` for R, G, B, IR and the mean ratio.

    The ratio channel named by ``spo2_method`` is solved so that its ratio of
    ratios maps exactly to ``spo2`` through the scenario calibration.
    """
    n = spo2.size
    base = sc.pulse_scale * np.asarray(sc.pulse_shape, dtype=float)
    f = np.vstack([np.full(n, base[0]), np.full(n, base[1]), np.full(n, base[2]), np.full(n, base[0])])
    method = sc.spo2_method
    if method == "calfree":
        ratio = sc.extinction.ratio_for(spo2 / 100.0)
    else:
        ratio = sc.calibration.ratio_for(spo2)
    if method in ("red_ir", "calfree"):
        f[3] = f[0] / ratio
    elif method == "red_blue":
        f[2] = f[0] / ratio
    else:
        f[2] = _solve_blue_for_ycgcr(sc, f[0], f[1], ratio)
    return f, float(np.mean(ratio))


def _solve_blue_for_ycgcr(sc: SynthScenario, fr, fg, ratio):
    """Blue fraction giving the target Cg/Cr ratio of pulsatile fractions.

    Cg and Cr may pulse in phase or in antiphase; of the valid solutions
    the one nearest the scenario's own blue fraction is kept.
    """
    dc = np.asarray(sc.channel_dc[:3], dtype=float)
    dc = dc * sc.ycgcr.exposure_gain(dc[:, None])
    m = np.asarray(sc.ycgcr.matrix, dtype=float) / 255.0
    off = np.asarray(sc.ycgcr.offset, dtype=float)
    cg_dc = off[1] + m[1] @ dc
    cr_dc = off[2] + m[2] @ dc
    # signed AC of each chroma channel is A + B * f_blue
    a_cg = m[1, 0] * dc[0] * fr + m[1, 1] * dc[1] * fg
    b_cg = m[1, 2] * dc[2]
    a_cr = m[2, 0] * dc[0] * fr + m[2, 1] * dc[1] * fg
    b_cr = m[2, 2] * dc[2]
    k = ratio * cg_dc / cr_dc
    base = sc.pulse_scale * sc.pulse_shape[2]
    best = None
    for sign in (1.0, -1.0):
        # a_cg + b_cg f = sign * k (a_cr + b_cr f)
        with np.errstate(divide="ignore", invalid="ignore"):
            fb = (sign * k * a_cr - a_cg) / (b_cg - sign * k * b_cr)
        cg_ac = a_cg + b_cg * fb
        cr_ac = a_cr + b_cr * fb
        ok = np.all(np.isfinite(fb)) and np.all(fb > 0) and np.all(np.sign(cg_ac) == sign * np.sign(cr_ac))
        if ok and (best is None or np.max(np.abs(fb - base)) < np.max(np.abs(best - base))):
            best = fb
    if best is None:
        raise ValueError("target YCgCr ratio is unreachable with these channel levels")
    return best


# ---------------------------------------------------------------------------
# Generator
# ---------------------------------------------------------------------------

def _window_mask(t: np.ndarray, art: Artifact) -> np.ndarray:
    return (t >= art.time) & (t < art.time + art.duration)


def generate(sc: SynthScenario, seed: int = 0) -> SynthOutput:
    """Frame summaries and 1 Hz labels for ``sc``; deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    fs = sc.frame_rate
    n = sc.n_frames
    t = np.arange(n) / fs
    roi, cam = sc.roi_geometry, sc.camera

    rr = schedule_at(sc.rr_per_min, t)
    tv = schedule_at(sc.tv_ml, t)
    hr = schedule_at(sc.hr_bpm, t)
    spo2 = schedule_at(sc.spo2_percent, t)

    # depth: displacement toward the camera reduces depth
    area = float(roi_world_area(roi, sc.depth_mm, cam))
    lung = breath_waveform(_phase(rr, fs), sc.ie_ratio, sc.breath_shape)
    disp = tv * 1000.0 / area * lung
    gains = np.asarray(sc.quadrant_gain, dtype=float)
    depth = sc.depth_mm - gains[:, None] * disp[None, :]
    if sc.depth_noise_mm > 0:
        depth = depth + rng.normal(0.0, sc.depth_noise_mm, depth.shape)
    depth_valid = np.ones(depth.shape, dtype=bool)

    # channels
    fractions, ratio = pulse_fractions(sc, spo2)
    pulse = np.sin(2.0 * np.pi * _phase(hr, fs))
    dc = np.asarray(sc.channel_dc, dtype=float)[:, None]
    chans = dc * (1.0 + fractions * pulse[None, :])
    illum = np.ones(n)

    for art in sc.artifacts:
        w = _window_mask(t, art)
        quads = range(4) if art.quadrant is None else [art.quadrant]
        if art.kind == "occlusion":
            for q in quads:
                depth_valid[q, w] = False
        elif art.kind == "motion-step":
            for q in quads:
                depth[q, w] -= art.magnitude
        else:
            illum[w] *= 1.0 + art.magnitude * np.sin(2.0 * np.pi * art.frequency_hz * t[w])
    chans = chans * illum[None, :]

    if sc.pulse_snr_db is not None:
        amp = dc * fractions
        sigma = amp / np.sqrt(2.0) * 10.0 ** (-sc.pulse_snr_db / 20.0)
        chans = chans + rng.normal(0.0, 1.0, chans.shape) * sigma
    noise = np.asarray(sc.channel_noise, dtype=float)
    if np.any(noise > 0):
        chans = chans + rng.normal(0.0, 1.0, chans.shape) * noise[:, None]

    frames = []
    for i in range(n):
        q_depth, q_count = [], []
        for q in range(4):
            if depth_valid[q, i]:
                q_depth.append(float(depth[q, i]))
                q_count.append(sc.pixels_per_quadrant)
            else:
                q_depth.append(None)
                q_count.append(0)
        valid = depth_valid[:, i]
        frames.append(FrameSummary(
            timestamp=float(t[i]),
            roi=roi,
            quadrant_depth_mm=tuple(q_depth),
            quadrant_valid_count=tuple(q_count),
            mean_r=float(chans[0, i]),
            mean_g=float(chans[1, i]),
            mean_b=float(chans[2, i]),
            mean_ir=float(chans[3, i]),
            mean_depth_mm=float(depth[valid, i].mean()) if valid.any() else None,
        ))

    # labels: mean over each whole second
    n_sec = int(sc.duration_s)
    tl = np.arange(n_sec) + 0.5
    labels = {
        "rr": SampledSeries(schedule_at(sc.rr_per_min, tl), 1.0, 0.0, Unit.BREATHS_PER_MIN),
        "tv": SampledSeries(schedule_at(sc.tv_ml, tl), 1.0, 0.0, Unit.ML),
        "hr": SampledSeries(schedule_at(sc.hr_bpm, tl), 1.0, 0.0, Unit.BPM),
        "spo2": SampledSeries(schedule_at(sc.spo2_percent, tl), 1.0, 0.0, Unit.PERCENT),
    }
    return SynthOutput(frames, labels, ratio)


# ---------------------------------------------------------------------------
# Raster rendering
# ---------------------------------------------------------------------------

BACKGROUND_RGB = (40.0, 60.0, 160.0)
BACKGROUND_DEPTH_MM = 800


def render_frame(summary: FrameSummary, width: int = 320, height: int = 240,
                 margin: int = 10) -> RasterFrame:
    """Flat-shaded raster whose region statistics reproduce ``summary``.

    Skin colour fills the ROI plus ``margin`` pixels; depth is set per
    quadrant (0 where the quadrant is invalid) and to a far background
    elsewhere.
    """
    roi = summary.roi
    rgb = np.empty((height, width, 3))
    rgb[:] = BACKGROUND_RGB
    ys = slice(max(roi.y1 - margin, 0), min(roi.y2 + margin, height))
    xs = slice(max(roi.x1 - margin, 0), min(roi.x2 + margin, width))
    if summary.mean_r is not None:
        rgb[ys, xs] = (summary.mean_r, summary.mean_g, summary.mean_b)
    ir = np.zeros((height, width))
    if summary.mean_ir is not None:
        ir[ys, xs] = summary.mean_ir
    depth = np.full((height, width), float(BACKGROUND_DEPTH_MM))
    for q, d in zip(roi.quadrants(), summary.quadrant_depth_mm):
        depth[q.y1:q.y2, q.x1:q.x2] = 0.0 if d is None else d
    return RasterFrame(rgb, depth, ir)

