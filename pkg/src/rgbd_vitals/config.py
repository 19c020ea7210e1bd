"""Pipeline configuration as a tree of dataclasses, stored as JSON.

Every section is a frozen dataclass whose defaults are the pipeline's
defaults. Loading overlays a JSON object onto those defaults; unknown keys
are rejected. Tuples serialise as JSON arrays.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .frames import SkinThresholds
from .oximetry import ExtinctionTable, OximetryCalibration, YCgCrTransform
from .respiration import BreathRules, LoopRules, RespConfig


class ConfigError(ValueError):
    pass


# scenario fields that accept either a number or [[time, value], ...]
SCHEDULE_KEYS = {"rr_per_min", "tv_ml", "hr_bpm", "spo2_percent"}


@dataclass(frozen=True)
class FrameConfig:
    skin: SkinThresholds = SkinThresholds()
    depth_tol_mm: float = 25.0
    depth_bin_mm: float = 5.0


@dataclass(frozen=True)
class CameraConfig:
    fx: float = 605.0
    fy: float = 605.0
    px: float = 160.0
    py: float = 120.0


@dataclass(frozen=True)
class RespirationConfig:
    signal: RespConfig = RespConfig()
    prior_mean: float = 50.0
    prior_std: float = 15.0
    window_s: float = 60.0
    stride_s: float = 1.0
    adaptive: bool = True
    min_history: int = 10
    likelihood: str = "periodogram"
    rr_r_std: float = 20.0
    tv_r_std: float = 2.0
    breaths: BreathRules = BreathRules()
    loops: LoopRules = LoopRules()


@dataclass(frozen=True)
class CardioConfig:
    band: tuple = (90.0, 270.0)
    order: int = 7
    chrom_norm_window_s: float = 120.0
    pos_window_s: float = 1.6
    prior_mean: float = 155.0
    prior_std: float = 15.0
    window_s: float = 120.0
    stride_s: float = 1.0
    likelihood: str = "periodogram"
    r_std: float = 20.0


def _default_calibrations() -> dict:
    return {m: OximetryCalibration() for m in ("red_ir", "red_blue", "ycgcr")}


@dataclass(frozen=True)
class OximetryConfig:
    band: tuple = (60.0, 300.0)
    order: int = 7
    segment_s: float = 30.0
    bounds: tuple = (70.0, 100.0)
    r_std: float = 10.0
    calibrations: dict = field(default_factory=_default_calibrations)
    ycgcr: YCgCrTransform = YCgCrTransform()
    extinction: ExtinctionTable = ExtinctionTable()


def _default_thresholds() -> dict:
    return {"rr": ["10%", "20%"], "tv": ["10%", "20%"], "hr": ["5%", "10%"], "spo2": ["3", "6"]}


@dataclass(frozen=True)
class EvaluationConfig:
    thresholds: dict = field(default_factory=_default_thresholds)


@dataclass(frozen=True)
class PipelineConfig:
    frames: FrameConfig = FrameConfig()
    camera: CameraConfig = CameraConfig()
    respiration: RespirationConfig = RespirationConfig()
    cardio: CardioConfig = CardioConfig()
    oximetry: OximetryConfig = OximetryConfig()
    evaluation: EvaluationConfig = EvaluationConfig()
    hr_method: str = "combined"
    spo2_method: str = "red_ir"


def to_dict(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {k: to_dict(v) for k, v in obj.items()}
    if isinstance(obj, (tuple, list)):
        return [to_dict(v) for v in obj]
    return obj


def _to_tuple(v):
    return tuple(_to_tuple(x) for x in v) if isinstance(v, list) else v


def _overlay(template, data, path: str):
    """Rebuild ``template`` with values from ``data``, typed by the template."""
    if dataclasses.is_dataclass(template):
        if not isinstance(data, dict):
            raise ConfigError(f"{path or 'config'}: expected an object")
        fields = {f.name: f for f in dataclasses.fields(template)}
        unknown = sorted(set(data) - set(fields))
        if unknown:
            raise ConfigError(f"{path or 'config'}: unknown key {unknown[0]!r}")
        kwargs = {
            k: None if data[k] is None and "Optional" in str(fields[k].type)
            else _overlay(getattr(template, k), data[k], f"{path}.{k}" if path else k)
            for k in data
        }
        try:
            return dataclasses.replace(template, **kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{path or 'config'}: {exc}") from exc
    if isinstance(template, dict):
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected an object")
        proto = next(iter(template.values()), None)
        out = dict(template)
        for k, v in data.items():
            base = template.get(k, proto)
            out[k] = _overlay(base, v, f"{path}.{k}") if base is not None else v
        return out
    if isinstance(template, tuple):
        if not isinstance(data, list):
            raise ConfigError(f"{path}: expected an array")
        return _to_tuple(data)
    if isinstance(template, list):
        if not isinstance(data, list):
            raise ConfigError(f"{path}: expected an array")
        return list(data)
    if isinstance(template, bool):
        if not isinstance(data, bool):
            raise ConfigError(f"{path}: expected true/false")
        return data
    if isinstance(template, (int, float)):
        if path.rsplit(".", 1)[-1] in SCHEDULE_KEYS and isinstance(data, list):
            return [list(map(float, pair)) for pair in data]
        if isinstance(data, bool) or not isinstance(data, (int, float)):
            raise ConfigError(f"{path}: expected a number")
        if isinstance(template, int):
            if not float(data).is_integer():
                raise ConfigError(f"{path}: expected an integer")
            return int(data)
        return float(data)
    if isinstance(template, str):
        if not isinstance(data, str):
            raise ConfigError(f"{path}: expected a string")
        return data
    return data


def from_dict(data: dict, template=None):
    return _overlay(PipelineConfig() if template is None else template, data, "")


def dumps(cfg) -> str:
    return json.dumps(to_dict(cfg), indent=2, sort_keys=True) + "\n"


def loads(text: str, template=None):
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    return from_dict(data, template)


def load(path, template=None):
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read(), template)
