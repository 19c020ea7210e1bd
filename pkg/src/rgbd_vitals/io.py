"""File formats: frame-summary NDJSON, vitals CSV and raster frame directories.

Frame-summary NDJSON
    One JSON object per line with ``timestamp``, ``roi`` ([x1, y1, x2, y2]),
    ``q_depth`` (four numbers, ``null`` for an invalid quadrant), ``q_count``
    and optional ``r``, ``g``, ``b``, ``ir``, ``depth``; a missing channel
    mean is an absent field.
Vitals CSV
    Columns ``vital, time, value, confidence, flags``. Missing values and
    confidences are empty cells; ``flags`` is a ``;``-separated list.
Raster frame directory
    ``header.txt`` holds ``width height rate``, ``roi.txt`` holds
    ``x1 y1 x2 y2``; frame ``i`` is ``frame_{i:06d}.ppm`` (binary P6 RGB)
    plus optional ``frame_{i:06d}.depth`` and ``frame_{i:06d}.ir`` raw
    little-endian uint16 planes.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional

import numpy as np

from .core import FrameSummary, RoiGeometry, SampledSeries, Unit
from .frames import RasterFrame


class ContractError(ValueError):
    """Input violates a documented format or precondition."""


_CHANNEL_KEYS = (("r", "mean_r"), ("g", "mean_g"), ("b", "mean_b"), ("ir", "mean_ir"), ("depth", "mean_depth_mm"))


# ---------------------------------------------------------------------------
# Frame summaries
# ---------------------------------------------------------------------------

def summary_to_dict(f: FrameSummary) -> dict:
    out = {
        "timestamp": f.timestamp,
        "roi": [f.roi.x1, f.roi.y1, f.roi.x2, f.roi.y2],
        "q_depth": list(f.quadrant_depth_mm),
        "q_count": list(f.quadrant_valid_count),
    }
    for key, attr in _CHANNEL_KEYS:
        v = getattr(f, attr)
        if v is not None:
            out[key] = v
    return out


def summary_from_dict(d: dict, where: str = "") -> FrameSummary:
    try:
        roi = RoiGeometry(*(int(v) for v in d["roi"]))
        f = FrameSummary(
            timestamp=float(d["timestamp"]),
            roi=roi,
            quadrant_depth_mm=tuple(None if v is None else float(v) for v in d["q_depth"]),
            quadrant_valid_count=tuple(int(v) for v in d["q_count"]),
            **{attr: (None if d.get(key) is None else float(d[key])) for key, attr in _CHANNEL_KEYS},
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ContractError(f"{where}invalid frame summary: {exc}") from exc
    bad = f.violations()
    if bad:
        raise ContractError(f"{where}{bad[0]}")
    return f


def write_summaries(path, frames: Iterable[FrameSummary]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for f in frames:
            fh.write(json.dumps(summary_to_dict(f), separators=(",", ":")) + "\n")
            n += 1
    return n


def iter_summaries(path) -> Iterator[FrameSummary]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ContractError(f"line {lineno}: invalid JSON: {exc}") from exc
            yield summary_from_dict(d, f"line {lineno}: ")


def read_summaries(path) -> list[FrameSummary]:
    return list(iter_summaries(path))


# ---------------------------------------------------------------------------
# Vitals CSV
# ---------------------------------------------------------------------------

VITALS_HEADER = ("vital", "time", "value", "confidence", "flags")


@dataclass(frozen=True, eq=False)
class VitalTrack:
    """One output vital: value series plus optional per-sample confidence and flags."""

    name: str
    series: SampledSeries
    confidence: Optional[np.ndarray] = None
    flags: list = field(default_factory=list)

    def flag_at(self, i: int) -> list:
        out = ["missing"] if self.series.missing[i] else []
        if self.flags and self.flags[i]:
            out.extend(self.flags[i])
        return out


def _fmt(v) -> str:
    if v is None or not math.isfinite(v):
        return ""
    return repr(float(v))


def write_vitals(path, tracks: Iterable[VitalTrack]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(VITALS_HEADER)
        for tr in tracks:
            s = tr.series
            for i, (t, v) in enumerate(zip(s.times, s.values)):
                conf = None if tr.confidence is None else tr.confidence[i]
                w.writerow([tr.name, repr(float(t)), "" if s.missing[i] else _fmt(v), _fmt(conf),
                            ";".join(tr.flag_at(i))])


def _series_from_rows(times: list, values: list, unit: Unit = Unit.DIMENSIONLESS) -> SampledSeries:
    if not times:
        raise ContractError("series has no rows")
    t = np.asarray(times, dtype=float)
    if t.size > 1:
        dt = np.diff(t)
        step = float(np.median(dt))
        if not step > 0 or np.any(np.abs(dt - step) > 1e-6 * max(step, 1.0) + 1e-9):
            raise ContractError("series times must be uniformly spaced and increasing")
        rate = 1.0 / step
    else:
        rate = 1.0
    vals = np.array([np.nan if v is None else v for v in values], dtype=float)
    return SampledSeries(vals, rate, t[0], unit, ~np.isfinite(vals))


def _parse_cell(cell: str) -> Optional[float]:
    cell = cell.strip()
    if cell == "":
        return None
    try:
        return float(cell)
    except ValueError as exc:
        raise ContractError(f"non-numeric value {cell!r}") from exc


def read_series_csv(path, vital: Optional[str] = None) -> SampledSeries:
    """Read a ``time,value`` CSV or one vital of a vitals CSV."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        if "time" not in cols or "value" not in cols:
            raise ContractError(f"{path}: need 'time' and 'value' columns")
        times, values, names = [], [], set()
        for row in reader:
            name = row.get("vital")
            if name is not None:
                names.add(name)
                if vital is not None and name != vital:
                    continue
            t = _parse_cell(row["time"])
            if t is None:
                raise ContractError(f"{path}: empty time cell")
            times.append(t)
            values.append(_parse_cell(row["value"]))
    if "vital" in cols and vital is None and len(names) > 1:
        raise ContractError(f"{path}: several vitals present, choose one of {sorted(names)}")
    if not times:
        raise ContractError(f"{path}: no rows" + (f" for vital {vital!r}" if vital else ""))
    return _series_from_rows(times, values)


def write_series_csv(path, s: SampledSeries) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("time", "value"))
        for t, v, m in zip(s.times, s.values, s.missing):
            w.writerow([repr(float(t)), "" if m else repr(float(v))])


# ---------------------------------------------------------------------------
# Raster frames
# ---------------------------------------------------------------------------

def _write_ppm(path, rgb: np.ndarray) -> None:
    img = np.clip(np.rint(rgb), 0, 255).astype(np.uint8)
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def _read_token(data: bytes, pos: int) -> tuple[bytes, int]:
    while True:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while data[pos:pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        break
    start = pos
    while pos < len(data) and not data[pos:pos + 1].isspace():
        pos += 1
    return data[start:pos], pos


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    magic, pos = _read_token(data, 0)
    if magic != b"P6":
        raise ContractError(f"{path}: not a binary PPM (P6)")
    w, pos = _read_token(data, pos)
    h, pos = _read_token(data, pos)
    maxval, pos = _read_token(data, pos)
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval != 255:
        raise ContractError(f"{path}: only 8-bit PPM supported")
    pixels = data[pos + 1:pos + 1 + w * h * 3]
    if len(pixels) != w * h * 3:
        raise ContractError(f"{path}: truncated pixel data")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w, 3).astype(float)


def _read_plane(path, width: int, height: int) -> np.ndarray:
    raw = np.fromfile(path, dtype="<u2")
    if raw.size != width * height:
        raise ContractError(f"{path}: expected {width * height} uint16 samples, got {raw.size}")
    return raw.reshape(height, width).astype(float)


@dataclass(frozen=True)
class FrameDirHeader:
    width: int
    height: int
    rate: float
    roi: RoiGeometry


def write_frame_dir(directory, frames: Iterable[RasterFrame], rate: float, roi: RoiGeometry) -> int:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    n = 0
    width = height = None
    for i, fr in enumerate(frames):
        width, height = fr.width, fr.height
        stem = d / f"frame_{i:06d}"
        _write_ppm(stem.with_suffix(".ppm"), fr.rgb)
        if fr.depth is not None:
            np.clip(np.rint(fr.depth), 0, 65535).astype("<u2").tofile(stem.with_suffix(".depth"))
        if fr.ir is not None:
            np.clip(np.rint(fr.ir), 0, 65535).astype("<u2").tofile(stem.with_suffix(".ir"))
        n += 1
    if n == 0:
        raise ContractError("no frames to write")
    (d / "header.txt").write_text(f"{width} {height} {rate:g}\n")
    (d / "roi.txt").write_text(f"{roi.x1} {roi.y1} {roi.x2} {roi.y2}\n")
    return n


def read_frame_dir_header(directory) -> FrameDirHeader:
    d = Path(directory)
    try:
        w, h, rate = (d / "header.txt").read_text().split()
        roi = RoiGeometry(*(int(v) for v in (d / "roi.txt").read_text().split()))
        header = FrameDirHeader(int(w), int(h), float(rate), roi)
    except FileNotFoundError:
        raise
    except (ValueError, TypeError) as exc:
        raise ContractError(f"{d}: malformed header or roi: {exc}") from exc
    if not header.rate > 0:
        raise ContractError("frame rate must be > 0")
    if not roi.fits(header.width, header.height):
        raise ContractError("ROI outside frame bounds")
    return header


def iter_frame_dir(directory) -> Iterator[tuple[float, RasterFrame]]:
    """Yield ``(timestamp, frame)`` in index order."""
    d = Path(directory)
    header = read_frame_dir_header(d)
    for i, ppm in enumerate(sorted(d.glob("frame_*.ppm"))):
        rgb = read_ppm(ppm)
        if rgb.shape[:2] != (header.height, header.width):
            raise ContractError(f"{ppm}: dimensions differ from header")
        stem = ppm.with_suffix("")
        depth = _read_plane(stem.with_suffix(".depth"), header.width, header.height) \
            if os.path.exists(stem.with_suffix(".depth")) else None
        ir = _read_plane(stem.with_suffix(".ir"), header.width, header.height) \
            if os.path.exists(stem.with_suffix(".ir")) else None
        yield i / header.rate, RasterFrame(rgb, depth, ir)
