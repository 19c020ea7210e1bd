"""Frame summaries to vital-sign tracks."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .cardio import RgbSeries, chrom_signal, combine_hr, heart_rate, pos_signal
from .config import PipelineConfig
from .core import CameraIntrinsics, FrameSummary, GaussianPrior, KalmanParams, RoiGeometry, SampledSeries, Unit
from .dsp import RateTrack
from .io import ContractError, VitalTrack
from .oximetry import ratio_series, spo2_series, ycgcr_ratio_series
from .respiration import (
    BreathSegment,
    QuadrantStreams,
    flow_volume_loops,
    rate_by_fourier,
    rate_by_peaks,
    respiratory_signal,
    tidal_volume,
    volume_signal,
)

log = logging.getLogger(__name__)

HR_METHODS = ("chrom", "pos", "combined")
SPO2_METHODS = ("red_ir", "red_blue", "ycgcr", "calfree")


@dataclass(frozen=True, eq=False)
class Streams:
    quadrants: QuadrantStreams
    rgb: RgbSeries
    ir: SampledSeries
    roi: RoiGeometry

    @property
    def rate(self) -> float:
        return self.quadrants.rate


def streams_from_summaries(frames: Sequence[FrameSummary], rate: Optional[float] = None) -> Streams:
    """Place summaries on a uniform grid; absent frames become missing samples."""
    if not frames:
        raise ContractError("no frames")
    ts = np.array([f.timestamp for f in frames], dtype=float)
    if np.any(np.diff(ts) <= 0):
        raise ContractError("frame timestamps must be strictly increasing")
    if rate is None:
        if ts.size < 2:
            raise ContractError("need at least two frames to infer the frame rate")
        rate = 1.0 / float(np.median(np.diff(ts)))
    idx = np.rint((ts - ts[0]) * rate).astype(np.int64)
    if np.any(np.diff(idx) <= 0):
        raise ContractError("frame timestamps collide on the inferred frame grid")
    n = int(idx[-1]) + 1

    def column(get) -> SampledSeries:
        vals = np.full(n, np.nan)
        raw = np.array([np.nan if get(f) is None else get(f) for f in frames], dtype=float)
        vals[idx] = raw
        return SampledSeries(vals, rate, ts[0], Unit.DIMENSIONLESS, ~np.isfinite(vals))

    quads = []
    for q in range(4):
        s = column(lambda f, q=q: f.quadrant_depth_mm[q] if f.quadrant_valid_count[q] > 0 else None)
        quads.append(s.derive(s.values, unit=Unit.MM))
    rgb = RgbSeries(column(lambda f: f.mean_r), column(lambda f: f.mean_g), column(lambda f: f.mean_b))
    return Streams(QuadrantStreams(tuple(quads)), rgb, column(lambda f: f.mean_ir), frames[0].roi)


def _track(name: str, tr: RateTrack) -> VitalTrack:
    flags = [["low-confidence"] if lc else [] for lc in tr.low_confidence]
    return VitalTrack(name, tr.rate, tr.confidence, flags)


@dataclass(eq=False)
class VitalsResult:
    tracks: dict = field(default_factory=dict)
    skipped: dict = field(default_factory=dict)

    def add(self, track: VitalTrack) -> None:
        self.tracks[track.name] = track

    def ordered(self) -> list:
        return list(self.tracks.values())


def _camera(cfg: PipelineConfig) -> CameraIntrinsics:
    c = cfg.camera
    return CameraIntrinsics(c.fx, c.fy, c.px, c.py)


def respiration_tracks(st: Streams, cfg: PipelineConfig, out: VitalsResult) -> None:
    rc = cfg.respiration
    disp = respiratory_signal(st.quadrants, rc.signal)
    fourier = rate_by_fourier(
        disp, GaussianPrior(rc.prior_mean, rc.prior_std), rc.window_s, rc.stride_s, rc.signal.band,
        rc.adaptive, KalmanParams(r_std=rc.rr_r_std, dt=rc.stride_s), rc.likelihood,
    )
    out.add(_track("rr", fourier))
    vol = volume_signal(st.quadrants, st.roi, _camera(cfg), rc.signal)
    out.add(VitalTrack("rr_peaks", rate_by_peaks(disp, vol, rc.window_s, rc.stride_s, rc.breaths,
                                                 rc.signal.min_separation_s)))
    out.add(VitalTrack("tv", tidal_volume(vol, rc.window_s, rc.stride_s, rc.breaths,
                                          KalmanParams(r_std=rc.tv_r_std, dt=rc.stride_s),
                                          rc.signal.min_separation_s)))


def cardio_tracks(st: Streams, cfg: PipelineConfig, out: VitalsResult) -> None:
    cc = cfg.cardio
    prior = GaussianPrior(cc.prior_mean, cc.prior_std)
    kp = KalmanParams(r_std=cc.r_std, dt=cc.stride_s)
    sigs = {
        "chrom": chrom_signal(st.rgb, cc.band, cc.order, cc.chrom_norm_window_s),
        "pos": pos_signal(st.rgb, cc.pos_window_s, cc.band, cc.order),
    }
    tracks = {m: heart_rate(s, prior, cc.window_s, cc.stride_s, cc.band, kp, cc.likelihood) for m, s in sigs.items()}
    for m, tr in tracks.items():
        out.add(_track(f"hr_{m}", tr))
    both = combine_hr(tracks["chrom"].rate, tracks["pos"].rate)
    low = tracks["chrom"].low_confidence & tracks["pos"].low_confidence
    out.add(VitalTrack("hr_combined", both, None, [["low-confidence"] if x else [] for x in low]))
    chosen = out.tracks[f"hr_{cfg.hr_method}"]
    out.add(VitalTrack("hr", chosen.series, chosen.confidence, chosen.flags))


def oximetry_tracks(st: Streams, cfg: PipelineConfig, out: VitalsResult,
                    methods: Sequence[str] = SPO2_METHODS) -> None:
    oc = cfg.oximetry
    kw = dict(band=oc.band, order=oc.order, segment_s=oc.segment_s)
    r, _, b = st.rgb.r, st.rgb.g, st.rgb.b
    for m in methods:
        try:
            if m in ("red_ir", "calfree"):
                if st.ir.present.sum() == 0:
                    raise ValueError("no infrared channel")
                ratios = ratio_series(r, st.ir, **kw)
            elif m == "red_blue":
                ratios = ratio_series(r, b, **kw)
            else:
                ratios = ycgcr_ratio_series(st.rgb, oc.ycgcr, **kw)
        except ValueError as exc:
            out.skipped[f"spo2_{m}"] = str(exc)
            continue
        out.add(VitalTrack(f"ratio_{m}", ratios))
        cal = oc.calibrations.get(m)
        out.add(VitalTrack(f"spo2_{m}", spo2_series(ratios, m, cal, oc.extinction, oc.r_std, oc.bounds)))
    chosen = out.tracks.get(f"spo2_{cfg.spo2_method}")
    if chosen is not None:
        out.add(VitalTrack("spo2", chosen.series, chosen.confidence, chosen.flags))


def compute_vitals(frames: Sequence[FrameSummary], cfg: PipelineConfig = PipelineConfig()) -> VitalsResult:
    """Every vital the inputs support; stages lacking data are listed in ``skipped``."""
    if cfg.hr_method not in HR_METHODS:
        raise ContractError(f"unknown heart-rate method {cfg.hr_method!r}")
    if cfg.spo2_method not in SPO2_METHODS:
        raise ContractError(f"unknown SpO2 method {cfg.spo2_method!r}")
    st = streams_from_summaries(frames)
    out = VitalsResult()
    for name, stage in (("respiration", respiration_tracks), ("cardio", cardio_tracks),
                        ("oximetry", oximetry_tracks)):
        try:
            stage(st, cfg, out)
        except ValueError as exc:
            out.skipped[name] = str(exc)
            log.warning("%s skipped: %s", name, exc)
    if not out.tracks:
        raise ContractError("no vital could be computed: " + "; ".join(f"{k}: {v}" for k, v in out.skipped.items()))
    return out


def breath_loops(frames: Sequence[FrameSummary], cfg: PipelineConfig = PipelineConfig()) -> tuple[SampledSeries, list[BreathSegment]]:
    st = streams_from_summaries(frames)
    rc = cfg.respiration
    vol = volume_signal(st.quadrants, st.roi, _camera(cfg), rc.signal)
    return vol, flow_volume_loops(vol, rc.loops, rc.signal.min_separation_s)
