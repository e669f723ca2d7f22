"""Scenario files: JSON with built-in defaults, dotted override paths and validation.

Layering is defaults, then the file, then explicit overrides (command-line
flags).  Every error names the offending field as a dotted path such as
``camera.focal_length``.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .errors import ParseError, ValidationError

KINDS = ("indoor", "vehicle")

KMH = 1000.0 / 3600.0

# ── Defaults ─────────────────────────────────────────────────────────────────

CAMERA_DEFAULTS: dict[str, Any] = {
    "focal_length": 0.016,
    "pixel_pitch": 3.5e-6,
    "sensor_width": 0.036,
    "sensor_height": 0.024,
    "principal_point": None,
    "skew": 0.0,
    "fov_semi_angle": math.radians(45.0),
    "fps": 30.0,
    "exposure": 1e-3,
    # a scalar is read as megapixels (pitch follows from the sensor size);
    # a [width, height] pair fixes the pixel grid directly
    "resolution": None,
}

CHANNEL_DEFAULTS: dict[str, Any] = {
    "kappa": 0.54,
    "iota": 1.0,
    "noise_density": 1e-21,
    "bandwidth": 20e3,
    "optical_filter_gain": 1.0,
    "concentrator_gain": 1.0,
    "responsivity": 1.0,
    "alpha": 0.0,
    "beta": 1.0,
    "spatial_bandwidth": 1.0,
}

FIXTURE_DEFAULTS: dict[str, Any] = {
    "shape": "square",
    "size": [0.1, 0.1],
    "power": 1.0,
    "half_power_semi_angle": math.radians(60.0),
}

INDOOR_WORLD: dict[str, Any] = {
    "width": 12.0,
    "depth": 12.0,
    "ceiling_height": 3.0,
    "floor_height": 0.0,
    "grid_spacing": 1.2,
    "fixture": FIXTURE_DEFAULTS,
    # explicit [[id, x, y], ...] replaces the grid
    "fixtures": None,
    "camera_height": 1.2,
    "orientation": None,
    "waypoints": [[1.0, 1.0], [11.0, 1.0], [11.0, 11.0], [1.0, 11.0], [1.0, 1.0]],
    "walk_speed": 0.5,
    "latency": 0.0,
    "accel_psd": 0.01,
    "position_sigma": 10.0,
    "velocity_sigma": 2.0,
    "suspend_threshold": 5,
    "accuracy_tol": 0.1,
    "check_coverage": True,
}

VEHICLE_WORLD: dict[str, Any] = {
    "spacing": 25.0,
    "sl_height": 7.0,
    "cam_height": 1.0,
    "tail_height": 1.0,
    "lane_width": 10.0,
    "curvature_threshold": 0.05,
    "hv_speed": 50 * KMH,
    "hv_lateral": 5.0,
    "hv_start": 0.0,
    "fv_speed": 50 * KMH,
    "fv_lateral": 0.0,
    "fv_gap": 25.0,
    "fv_gap_window": [15.0, 40.0],
    "fv_id": 1000,
    "taillight_size": [0.15, 0.1],
    "taillight_separation": 1.2,
    "taillight_power": 2.0,
    "blocked_taillight": None,
    "sl_size": [0.6, 0.3],
    "sl_power": 5.0,
    "max_range": 150.0,
    "max_sl_rois": 4,
    "alarm_eta": 5000.0,
    "report_latency": 0.08,
    "accuracy_tol": 1.0,
    "fix_gain": 0.3,
}

INDOOR_NOISE: dict[str, Any] = {
    "eta_sigma": 0.02,
    "quantize": True,
    "subsamples": 1,
    "interferers": [],
}

VEHICLE_NOISE: dict[str, Any] = {
    "eta_sigma": 0.02,
    "quantize": True,
    "subsamples": 4,
    "odometry_sigma": 0.02,
    "jitter_rate": 0.02,
    "interferers": [],
}

RUN_DEFAULTS = {
    "indoor": {"dt": 1.0, "duration": 50.0, "seed": 0},
    "vehicle": {"dt": 0.1, "duration": 50.0, "seed": 0},
}

# fields that must be strictly positive when present (None allowed where the default is None)
_POSITIVE = {
    "camera": {"focal_length", "pixel_pitch", "sensor_width", "sensor_height", "fov_semi_angle", "fps", "exposure"},
    "channel": {"kappa", "noise_density", "bandwidth", "beta", "optical_filter_gain", "concentrator_gain"},
    "world": {
        "width", "depth", "ceiling_height", "grid_spacing", "camera_height", "accuracy_tol",
        "spacing", "sl_height", "cam_height", "tail_height", "lane_width", "max_range",
        "taillight_separation", "taillight_power", "sl_power", "alarm_eta", "curvature_threshold",
    },
    "world.fixture": {"power", "half_power_semi_angle"},
    "run": {"dt"},
}
_NON_NEGATIVE = {
    "channel": {"alpha", "iota", "responsivity", "spatial_bandwidth"},
    "world": {
        "walk_speed", "latency", "accel_psd", "position_sigma", "velocity_sigma", "floor_height",
        "hv_speed", "fv_speed", "hv_lateral", "report_latency", "max_sl_rois", "suspend_threshold",
    },
    "noise": {"eta_sigma", "odometry_sigma", "jitter_rate"},
    "run": {"duration"},
}


def defaults(kind: str) -> dict[str, Any]:
    if kind not in KINDS:
        raise ValidationError("kind", f"must be one of {KINDS}")
    return copy.deepcopy({
        "kind": kind,
        "camera": CAMERA_DEFAULTS,
        "channel": CHANNEL_DEFAULTS,
        "world": INDOOR_WORLD if kind == "indoor" else VEHICLE_WORLD,
        "noise": INDOOR_NOISE if kind == "indoor" else VEHICLE_NOISE,
        "run": RUN_DEFAULTS[kind],
        "sweep": None,
    })


# ── Config object ────────────────────────────────────────────────────────────


@dataclass
class ScenarioConfig:
    kind: str
    camera: dict[str, Any]
    channel: dict[str, Any]
    world: dict[str, Any]
    noise: dict[str, Any]
    run: dict[str, Any]
    sweep: dict[str, Any] | None = None
    source: str | None = None

    def as_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind, "camera": self.camera, "channel": self.channel, "world": self.world,
            "noise": self.noise, "run": self.run, "sweep": self.sweep,
        }

    def get(self, path: str) -> Any:
        node: Any = self.as_dict()
        for part in path.split("."):
            node = node[part]
        return node

    def with_value(self, path: str, value: Any) -> ScenarioConfig:
        """Copy with ``path`` set to ``value``, revalidated."""
        data = copy.deepcopy(self.as_dict())
        set_path(data, path, value)
        cfg = from_dict(data, strict_paths=False)
        cfg.source = self.source
        return cfg


def has_path(tree: dict[str, Any], path: str) -> bool:
    node: Any = tree
    for part in path.split("."):
        if not isinstance(node, dict) or part not in node:
            return False
        node = node[part]
    return True


def set_path(tree: dict[str, Any], path: str, value: Any) -> None:
    if not has_path(tree, path):
        raise ValidationError(path, "unknown configuration path")
    parts = path.split(".")
    node = tree
    for part in parts[:-1]:
        node = node[part]
    node[parts[-1]] = value


def _merge(base: dict[str, Any], update: dict[str, Any], prefix: str = "") -> None:
    for key, value in update.items():
        path = f"{prefix}{key}"
        if key not in base:
            raise ValidationError(path, "unknown field")
        if isinstance(base[key], dict) and value is not None:
            if not isinstance(value, dict):
                raise ValidationError(path, "expected an object")
            _merge(base[key], value, path + ".")
        else:
            base[key] = value


# ── Validation ───────────────────────────────────────────────────────────────


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)


def _check_numbers(section: str, tree: dict[str, Any], reference: dict[str, Any]) -> None:
    for key, ref in reference.items():
        path = f"{section}.{key}"
        value = tree[key]
        if isinstance(ref, dict):
            _check_numbers(path, value, ref)
            continue
        if isinstance(ref, bool):
            if not isinstance(value, bool):
                raise ValidationError(path, "expected true or false")
            continue
        if _is_number(ref):
            if not _is_number(value):
                raise ValidationError(path, "expected a finite number")
        if key in _POSITIVE.get(section, ()) and value is not None and not value > 0:
            raise ValidationError(path, "must be positive")
        if key in _NON_NEGATIVE.get(section, ()) and value is not None and value < 0:
            raise ValidationError(path, "must be non-negative")


def _check_pair(path: str, value: Any, positive: bool = True) -> None:
    if not (isinstance(value, (list, tuple)) and len(value) == 2 and all(_is_number(v) for v in value)):
        raise ValidationError(path, "expected a pair of numbers")
    if positive and not all(v > 0 for v in value):
        raise ValidationError(path, "must be positive")


def _validate(data: dict[str, Any], strict_paths: bool) -> None:
    kind = data["kind"]
    ref = defaults(kind)
    for section in ("camera", "channel", "world", "noise", "run"):
        _check_numbers(section, data[section], ref[section])

    cam = data["camera"]
    if not cam["fov_semi_angle"] < math.pi / 2:
        raise ValidationError("camera.fov_semi_angle", "must be below pi/2")
    res = cam["resolution"]
    if res is not None and not _is_number(res):
        _check_pair("camera.resolution", res)
    if cam["principal_point"] is not None:
        _check_pair("camera.principal_point", cam["principal_point"], positive=False)

    w = data["world"]
    if kind == "indoor":
        if not w["ceiling_height"] > w["floor_height"]:
            raise ValidationError("world.ceiling_height", "must be above world.floor_height")
        if not w["floor_height"] <= w["camera_height"] < w["ceiling_height"]:
            raise ValidationError("world.camera_height", "must lie between floor and ceiling")
        if w["fixture"]["shape"] not in ("square", "rectangle", "circle"):
            raise ValidationError("world.fixture.shape", "must be square, rectangle or circle")
        size = w["fixture"]["size"]
        if _is_number(size):
            size = [size, size]
        _check_pair("world.fixture.size", size)
        if not w["fixture"]["half_power_semi_angle"] < math.pi / 2:
            raise ValidationError("world.fixture.half_power_semi_angle", "must be below pi/2")
        if w["fixtures"] is not None:
            if not isinstance(w["fixtures"], list) or not w["fixtures"]:
                raise ValidationError("world.fixtures", "expected a non-empty list of [id, x, y]")
            for i, item in enumerate(w["fixtures"]):
                ok = isinstance(item, (list, tuple)) and len(item) == 3 and all(_is_number(v) for v in item)
                if not ok or int(item[0]) != item[0] or item[0] < 0:
                    raise ValidationError(f"world.fixtures[{i}]", "expected [id, x, y] with a non-negative integer id")
        wp = w["waypoints"]
        if not isinstance(wp, list) or not wp:
            raise ValidationError("world.waypoints", "expected a non-empty list of [x, y]")
        for i, item in enumerate(wp):
            _check_pair(f"world.waypoints[{i}]", item, positive=False)
        if w["orientation"] is not None:
            rot = w["orientation"]
            ok = isinstance(rot, list) and len(rot) == 3 and all(
                isinstance(r, list) and len(r) == 3 and all(_is_number(v) for v in r) for r in rot
            )
            if not ok:
                raise ValidationError("world.orientation", "expected a 3x3 matrix")
    else:
        if not w["sl_height"] > w["cam_height"]:
            raise ValidationError("world.sl_height", "must exceed world.cam_height")
        for key in ("taillight_size", "sl_size"):
            _check_pair(f"world.{key}", w[key])
        _check_pair("world.fv_gap_window", w["fv_gap_window"])
        lo, hi = w["fv_gap_window"]
        if not lo < hi:
            raise ValidationError("world.fv_gap_window", "lower edge must be below the upper edge")
        if w["blocked_taillight"] not in (None, "left", "right"):
            raise ValidationError("world.blocked_taillight", "must be null, 'left' or 'right'")
        if not 0 < w["fix_gain"] <= 1:
            raise ValidationError("world.fix_gain", "must lie in (0, 1]")
        if int(w["fv_id"]) != w["fv_id"] or not 0 <= w["fv_id"] < 1 << 16:
            raise ValidationError("world.fv_id", "must be a 16-bit unsigned integer")
        if int(w["max_sl_rois"]) != w["max_sl_rois"]:
            raise ValidationError("world.max_sl_rois", "must be an integer")

    noise = data["noise"]
    if int(noise["subsamples"]) != noise["subsamples"] or noise["subsamples"] < 1:
        raise ValidationError("noise.subsamples", "must be a positive integer")
    inter = noise["interferers"]
    if not isinstance(inter, list):
        raise ValidationError("noise.interferers", "expected a list of [power, gain] pairs")
    for i, item in enumerate(inter):
        _check_pair(f"noise.interferers[{i}]", item, positive=False)

    run = data["run"]
    if int(run["seed"]) != run["seed"] or run["seed"] < 0:
        raise ValidationError("run.seed", "must be a non-negative integer")

    sweep = data["sweep"]
    if sweep is not None:
        if not isinstance(sweep, dict) or set(sweep) != {"parameter", "values"}:
            raise ValidationError("sweep", "expected {\"parameter\": path, \"values\": [...]}")
        param = sweep["parameter"]
        if not isinstance(param, str) or param.split(".")[0] in ("kind", "sweep") or not has_path(ref, param):
            raise ValidationError("sweep.parameter", f"unknown configuration path {param!r}")
        if not isinstance(sweep["values"], list) or not sweep["values"]:
            raise ValidationError("sweep.values", "expected a non-empty list")
        if strict_paths:
            # each value must itself produce a valid scenario
            for i, value in enumerate(sweep["values"]):
                trial = copy.deepcopy(data)
                trial["sweep"] = None
                set_path(trial, param, value)
                try:
                    _validate(trial, strict_paths=False)
                except ValidationError as exc:
                    raise ValidationError(f"sweep.values[{i}]", str(exc)) from exc


def from_dict(data: dict[str, Any], overrides: dict[str, Any] | None = None, strict_paths: bool = True) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ValidationError("<root>", "scenario must be a JSON object")
    kind = data.get("kind", "indoor")
    merged = defaults(kind)
    body = {k: v for k, v in data.items() if k != "kind"}
    _merge(merged, body)
    for path, value in (overrides or {}).items():
        set_path(merged, path, value)
    _validate(merged, strict_paths)
    return ScenarioConfig(**merged)


def load_scenario(path: str | Path, overrides: dict[str, Any] | None = None) -> ScenarioConfig:
    path = Path(path)
    text = path.read_text()  # OSError carries the path
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(str(path), f"line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    cfg = from_dict(data, overrides)
    cfg.source = str(path)
    return cfg
