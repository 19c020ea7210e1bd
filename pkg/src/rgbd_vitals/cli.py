"""Command-line entry point.

Exit codes: 0 success, 2 contract violation (bad input or configuration),
3 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from .config import ConfigError, PipelineConfig
from .core import SampledSeries, Unit
from .evaluation import DEFAULT_THRESHOLDS, agreement, align, bland_altman_points
from .frames import extract_frame
from .io import (
    ContractError,
    VitalTrack,
    iter_frame_dir,
    read_frame_dir_header,
    read_series_csv,
    read_summaries,
    write_frame_dir,
    write_summaries,
    write_vitals,
)
from .pipeline import HR_METHODS, SPO2_METHODS, breath_loops, compute_vitals
from .synth import SynthScenario, generate, render_frame

EXIT_OK, EXIT_CONTRACT, EXIT_IO = 0, 2, 3

log = logging.getLogger("rgbd_vitals")


def _load_config(args) -> PipelineConfig:
    cfg = config_mod.load(args.config) if args.config else PipelineConfig()
    overrides = {}
    for m in args.method or []:
        if m in HR_METHODS:
            overrides["hr_method"] = m
        elif m in SPO2_METHODS:
            overrides["spo2_method"] = m
        else:
            raise ContractError(f"unknown method {m!r}; choose from {HR_METHODS + SPO2_METHODS}")
    resp = {}
    if args.band:
        resp["signal"] = dataclasses.replace(cfg.respiration.signal, band=_parse_band(args.band))
    if args.window:
        resp["window_s"] = float(args.window)
    if resp:
        overrides["respiration"] = dataclasses.replace(cfg.respiration, **resp)
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def _parse_band(text: str) -> tuple:
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError as exc:
        raise ContractError(f"--band expects LO,HI per minute, got {text!r}") from exc
    if not 0 < lo < hi:
        raise ContractError("--band needs 0 < LO < HI")
    return lo, hi


def _dump_json(path, obj) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_extract(args) -> int:
    cfg = _load_config(args)
    fc = cfg.frames
    header = read_frame_dir_header(args.input)

    def summaries():
        for ts, frame in iter_frame_dir(args.input):
            yield extract_frame(frame, header.roi, ts, fc.skin, fc.depth_tol_mm, fc.depth_bin_mm)

    n = write_summaries(args.output, summaries())
    if n == 0:
        raise ContractError("no frames")
    log.info("extracted %d frames", n)
    return EXIT_OK


def cmd_vitals(args) -> int:
    cfg = _load_config(args)
    frames = read_summaries(args.input)
    if not frames:
        raise ContractError("no frames")
    res = compute_vitals(frames, cfg)
    for name, why in res.skipped.items():
        print(f"warning: {name} skipped: {why}", file=sys.stderr)
    write_vitals(args.output, res.ordered())
    return EXIT_OK


def cmd_loops(args) -> int:
    cfg = _load_config(args)
    frames = read_summaries(args.input)
    if not frames:
        raise ContractError("no frames")
    vol, segs = breath_loops(frames, cfg)
    t = vol.times
    obj = {
        "rate": vol.rate,
        "breaths": [
            {
                "start": s.start, "end": s.end,
                "start_time": float(t[s.start]), "end_time": float(t[s.end]),
                "tidal_volume_ml": s.tidal_volume,
                "accepted": s.accepted, "reason": s.reason,
                "loop": [[float(v), float(f)] for v, f in s.loop],
            }
            for s in segs
        ],
    }
    _dump_json(args.output, obj)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    cand = read_series_csv(args.input, args.vital)
    # "hr_chrom" is compared against "hr", "spo2_red_ir" against "spo2"
    key = (args.vital or "").split("_")[0]
    ref_vital = args.reference_vital
    if ref_vital is None and _has_vital_column(args.reference):
        ref_vital = key or None
    ref = read_series_csv(args.reference, ref_vital)
    pairs = align(cand, ref)
    thresholds = args.cp or cfg.evaluation.thresholds.get(key) or DEFAULT_THRESHOLDS.get(key, ("10%", "20%"))
    report = agreement(pairs, thresholds)
    _dump_json(args.output, report.to_dict())
    if args.points:
        pts = bland_altman_points(pairs)
        with open(args.points, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("time", "candidate", "reference", "mean", "difference"))
            for ti, c, r, (m, d) in zip(pairs.times, pairs.candidate, pairs.reference, pts):
                w.writerow([repr(float(x)) for x in (ti, c, r, m, d)])
    return EXIT_OK


def _has_vital_column(path) -> bool:
    with open(path, encoding="utf-8", newline="") as fh:
        return "vital" in (next(csv.reader(fh), []) or [])


def _scenario(path) -> SynthScenario:
    return config_mod.load(path, SynthScenario()) if path else SynthScenario()


def cmd_simulate(args) -> int:
    sc = _scenario(args.input)
    out = generate(sc, args.seed)
    write_summaries(args.output, out.frames)
    if args.labels:
        write_vitals(args.labels, [VitalTrack(k, v) for k, v in out.labels.items()])
    if args.frames:
        write_frame_dir(args.frames, (render_frame(f) for f in out.frames), sc.frame_rate, sc.roi_geometry)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    ratios = read_series_csv(args.input, args.vital)
    ref = read_series_csv(args.reference, args.reference_vital)
    pairs = align(ratios, ref)
    if len(pairs) < 2:
        raise ContractError("calibration needs at least 2 paired samples")
    if np.ptp(pairs.candidate) == 0:
        raise ContractError("ratio series is constant; slope undetermined")
    slope, intercept = np.polyfit(pairs.candidate, pairs.reference, 1)
    if not -slope > 0:
        raise ContractError(f"fitted slope {-slope:g} is not positive")
    _dump_json(args.output, {"a": float(intercept), "b": float(-slope), "n": len(pairs)})
    return EXIT_OK


APOLLO_TIME = ("time", "timestamp", "t", "seconds", "time_s")
APOLLO_VITALS = {
    "hr": ("hr", "heart_rate", "heartrate", "pulse", "ecg_hr"),
    "rr": ("rr", "resp_rate", "respiratory_rate", "breathing_rate"),
    "spo2": ("spo2", "sao2", "oxygen_saturation", "sat"),
    "tv": ("tv", "tidal_volume", "vt", "tidal_volume_ml"),
}


def cmd_import_apollo(args) -> int:
    with open(args.input, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        cols = {c.strip().lower(): c for c in (reader.fieldnames or [])}
        tcol = next((cols[c] for c in APOLLO_TIME if c in cols), None)
        vcols = {v: cols[c] for v, names in APOLLO_VITALS.items() for c in names if c in cols}
        if tcol is None or not vcols:
            raise ContractError(
                f"schema not recognised: need a time column {APOLLO_TIME} and at least one vital column; "
                f"found {sorted(cols)}"
            )
        rows = list(reader)
    times = np.array([float(r[tcol]) for r in rows])
    tracks = []
    t0 = np.floor(times.min())
    bins = np.floor(times - t0).astype(np.int64)
    n = int(bins.max()) + 1
    for vital, col in vcols.items():
        vals = np.array([float(r[col]) if r[col].strip() not in ("", "nan", "NaN") else np.nan for r in rows])
        ok = np.isfinite(vals)
        sums = np.bincount(bins[ok], weights=vals[ok], minlength=n)
        counts = np.bincount(bins[ok], minlength=n)
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = sums / counts
        tracks.append(VitalTrack(vital, SampledSeries(mean, 1.0, t0, Unit.DIMENSIONLESS, counts == 0)))
    write_vitals(args.output, tracks)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rgbd-vitals", description="Vital signs from RGB-D region measurements.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, output_required=True):
        sp.add_argument("--config", help="JSON pipeline configuration")
        sp.add_argument("--input", required=True)
        sp.add_argument("--output", required=output_required, default=None)
        sp.add_argument("--method", action="append",
                        help="heart-rate {chrom,pos,combined} or SpO2 {red_ir,red_blue,ycgcr,calfree}; repeatable")
        sp.add_argument("--band", help="respiration passband LO,HI per minute")
        sp.add_argument("--window", type=float, help="respiration estimation window in seconds")
        return sp

    common(sub.add_parser("extract", help="raster frame directory to frame-summary NDJSON")).set_defaults(func=cmd_extract)
    common(sub.add_parser("vitals", help="frame summaries to vitals CSV")).set_defaults(func=cmd_vitals)
    common(sub.add_parser("loops", help="flow-volume loops as JSON"), False).set_defaults(func=cmd_loops)

    ev = common(sub.add_parser("evaluate", help="agreement report for a candidate vs reference"), False)
    ev.add_argument("--reference", required=True)
    ev.add_argument("--vital", help="vital to select from a vitals CSV (candidate)")
    ev.add_argument("--reference-vital", help="vital to select from the reference CSV (defaults to the --vital prefix)")
    ev.add_argument("--cp", action="append", help="coverage threshold, e.g. 10%% or 3; repeatable")
    ev.add_argument("--points", help="Bland-Altman point CSV output")
    ev.set_defaults(func=cmd_evaluate)

    sim = sub.add_parser("simulate", help="synthetic frame summaries with labels")
    sim.add_argument("--input", help="scenario JSON (defaults if omitted)")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--output", required=True)
    sim.add_argument("--labels", help="ground-truth vitals CSV output")
    sim.add_argument("--frames", help="also render raster frames into this directory")
    sim.set_defaults(func=cmd_simulate)

    cal = sub.add_parser("calibrate", help="least-squares SpO2 calibration from ratios and reference")
    cal.add_argument("--input", required=True, help="ratio series CSV")
    cal.add_argument("--vital", help="ratio vital to select, e.g. ratio_red_ir")
    cal.add_argument("--reference", required=True)
    cal.add_argument("--reference-vital")
    cal.add_argument("--output")
    cal.set_defaults(func=cmd_calibrate)

    ap = sub.add_parser("import-apollo", help="convert a dataset reference CSV to vitals CSV")
    ap.add_argument("--input", required=True)
    ap.add_argument("--output", required=True)
    ap.set_defaults(func=cmd_import_apollo)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ContractError, ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
