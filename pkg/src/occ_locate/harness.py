"""Build simulations from a scenario, run them and write CSV output.

Outputs depend only on (config, seed): every random draw comes from a
generator seeded per run, floats are written with ``repr`` and missing values
as empty cells, so repeated runs are byte-identical.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import camera as cam
from .camera import CameraIntrinsics
from .config import ScenarioConfig
from .errors import InsufficientBeacons, ValidationError
from .indoor import (
    INDOOR_COLUMNS,
    IndoorNoise,
    IndoorSim,
    Room,
    SmartphoneAgent,
    TrackerConfig,
    Trajectory,
    ceiling_fixture,
    check_coverage,
    grid_room,
    localization_possibility,
)
from .link import LedIdPacket, PacketKind
from .photometry import ChannelParams
from .vehicle import VEHICLE_COLUMNS, RoadGeometry, VehicleNoise, VehicleScenario, VehicleSim

AGGREGATE_COLUMNS = (
    "sweep_value", "rms_raw", "rms_tracked", "ber", "accuracy_pct", "mean_possibility",
    "median_raw", "median_tracked", "n_ticks",
)


# ── Building ─────────────────────────────────────────────────────────────────


def build_camera(cfg: ScenarioConfig) -> CameraIntrinsics:
    c = dict(cfg.camera)
    res = c.pop("resolution")
    pp = c.pop("principal_point")
    kwargs = {k: float(v) for k, v in c.items()}
    if pp is not None:
        kwargs["principal_point"] = tuple(pp)
    try:
        if res is None:
            return CameraIntrinsics(**kwargs)
        if isinstance(res, (int, float)):
            kwargs.pop("pixel_pitch")
            return CameraIntrinsics.from_megapixels(float(res), **kwargs)
        return CameraIntrinsics(resolution=(int(res[0]), int(res[1])), **kwargs)
    except ValueError as exc:
        raise ValidationError("camera", str(exc)) from exc


def build_channel(cfg: ScenarioConfig) -> ChannelParams:
    try:
        return ChannelParams(**{k: float(v) for k, v in cfg.channel.items()})
    except ValueError as exc:
        raise ValidationError("channel", str(exc)) from exc


def _shape(fixture: dict[str, Any]) -> cam.Shape:
    size = fixture["size"]
    a, b = (size, size) if isinstance(size, (int, float)) else size
    if fixture["shape"] == "circle":
        return cam.Circle(float(a) / 2)
    if fixture["shape"] == "square":
        return cam.Square(float(a))
    return cam.Rectangle(float(a), float(b))


def build_indoor(cfg: ScenarioConfig, seed: int) -> IndoorSim:
    w, n = cfg.world, cfg.noise
    intr = build_camera(cfg)
    fx = w["fixture"]
    shape = _shape(fx)
    beacon_kw = {"power": float(fx["power"]), "half_power_semi_angle": float(fx["half_power_semi_angle"])}
    ceiling = float(w["ceiling_height"])
    try:
        if w["fixtures"] is None:
            room = grid_room(
                float(w["width"]), float(w["depth"]), ceiling, float(w["grid_spacing"]), shape,
                floor_height=float(w["floor_height"]), **beacon_kw,
            )
        else:
            fixtures = [ceiling_fixture(int(i), float(x), float(y), ceiling, shape, **beacon_kw) for i, x, y in w["fixtures"]]
            room = Room(float(w["width"]), float(w["depth"]), ceiling, tuple(fixtures), None, float(w["floor_height"]))
    except ValueError as exc:
        raise ValidationError("world", str(exc)) from exc
    orientation = cam.UPWARD if w["orientation"] is None else np.asarray(w["orientation"], dtype=float)
    if w["fixtures"] is None and w["check_coverage"]:
        try:
            check_coverage(room, intr, float(w["camera_height"]), orientation)
        except InsufficientBeacons as exc:
            raise ValidationError("world.grid_spacing", f"fewer than three fixtures in view: {exc}") from exc
    try:
        traj = Trajectory(np.asarray(w["waypoints"], dtype=float), float(w["walk_speed"]), float(w["camera_height"]))
        agent = SmartphoneAgent(traj, intr, orientation, float(w["latency"]))
        agent.pose(0.0)
    except ValueError as exc:
        raise ValidationError("world.orientation", str(exc)) from exc
    noise = IndoorNoise(
        float(n["eta_sigma"]), bool(n["quantize"]), int(n["subsamples"]), tuple(tuple(map(float, p)) for p in n["interferers"])
    )
    tracker = TrackerConfig(float(w["accel_psd"]), float(w["position_sigma"]), float(w["velocity_sigma"]))
    return IndoorSim(room, agent, build_channel(cfg), noise, tracker, seed, int(w["suspend_threshold"]))


def build_vehicle(cfg: ScenarioConfig, seed: int) -> VehicleSim:
    w, n = cfg.world, cfg.noise
    road = RoadGeometry(
        float(w["spacing"]), float(w["sl_height"]), float(w["cam_height"]), float(w["tail_height"]), float(w["curvature_threshold"])
    )
    scenario = VehicleScenario(
        road=road,
        hv_speed=float(w["hv_speed"]),
        hv_lateral=float(w["hv_lateral"]),
        hv_start=float(w["hv_start"]),
        fv_speed=float(w["fv_speed"]),
        fv_lateral=float(w["fv_lateral"]),
        fv_gap=float(w["fv_gap"]),
        fv_gap_window=tuple(map(float, w["fv_gap_window"])),
        fv_id=int(w["fv_id"]),
        taillight_size=tuple(map(float, w["taillight_size"])),
        taillight_separation=float(w["taillight_separation"]),
        taillight_power=float(w["taillight_power"]),
        blocked_taillight=w["blocked_taillight"],
        sl_size=tuple(map(float, w["sl_size"])),
        sl_power=float(w["sl_power"]),
        max_range=float(w["max_range"]),
        max_sl_rois=int(w["max_sl_rois"]),
        alarm_eta=float(w["alarm_eta"]),
        report_latency=float(w["report_latency"]),
        accuracy_tol=float(w["accuracy_tol"]),
        fix_gain=float(w["fix_gain"]),
    )
    noise = VehicleNoise(
        eta_sigma=float(n["eta_sigma"]),
        quantize=bool(n["quantize"]),
        subsamples=int(n["subsamples"]),
        odometry_sigma=float(n["odometry_sigma"]),
        jitter_rate=float(n["jitter_rate"]),
        interferers=tuple(tuple(map(float, p)) for p in n["interferers"]),
    )
    return VehicleSim(scenario, build_camera(cfg), build_channel(cfg), noise, seed)


def columns_for(cfg: ScenarioConfig) -> tuple[str, ...]:
    return INDOOR_COLUMNS if cfg.kind == "indoor" else VEHICLE_COLUMNS


def n_ticks(cfg: ScenarioConfig) -> int:
    dt, duration = float(cfg.run["dt"]), float(cfg.run["duration"])
    # a hair of slack so 50 / 0.1 gives 500, not 499
    return int(math.floor(duration / dt + 1e-9))


# ── Summary ──────────────────────────────────────────────────────────────────


def _rms(values: Sequence[float]) -> float | None:
    return math.sqrt(sum(v * v for v in values) / len(values)) if values else None


def _median(values: Sequence[float]) -> float | None:
    return float(np.median(values)) if values else None


def _mean(values: Sequence[float]) -> float | None:
    return float(np.mean(values)) if values else None


def _ber(rows: list[dict], bits: int) -> tuple[float | None, float | None]:
    attempts = sum(int(r["decode_attempts"]) for r in rows)
    fails = sum(int(r["decode_fail"]) for r in rows)
    if attempts == 0:
        return None, None
    per = fails / attempts
    # packet error rate to an equivalent independent bit error rate
    return per, 1.0 - (1.0 - per) ** (1.0 / bits)


def _present(row: dict, *keys: str) -> bool:
    return all(row[k] is not None and row[k] != "" for k in keys)


def summarize(kind: str, rows: list[dict], world: dict[str, Any]) -> dict[str, Any]:
    """Summary metrics; a pure function of the rows so it can be recomputed from the CSV.

    ``raw`` and ``tracked`` errors are: indoor, horizontal error of the per-tick
    fix and of the filtered track; vehicle, FV range error and FV position error.
    """
    if not rows:
        return {"empty": True, "n_ticks": 0}
    tol = float(world["accuracy_tol"])
    if kind == "indoor":
        raw = [math.hypot(float(r["est_x"]) - float(r["true_x"]), float(r["est_y"]) - float(r["true_y"])) for r in rows if _present(r, "est_x")]
        trk = [math.hypot(float(r["kf_x"]) - float(r["true_x"]), float(r["kf_y"]) - float(r["true_y"])) for r in rows if _present(r, "kf_x")]
        accurate = sum(1 for e in raw if e <= tol)
        possibility = [float(r["possibility"]) for r in rows]
        per, ber = _ber(rows, LedIdPacket.bit_length(PacketKind.INDOOR))
        fixes = [r for r in rows if _present(r, "est_x")]
        position = None
        if fixes:
            position = [float(np.mean([float(r[k]) for r in fixes])) for k in ("est_x", "est_y", "est_z")]
        extra = {
            "mean_position": position,
            "ceiling_offset": None if position is None else float(world["ceiling_height"]) - position[2],
        }
    else:
        raw = [abs(float(r["range_m"]) - float(r["range_true_m"])) for r in rows if _present(r, "range_m")]
        trk = [math.hypot(float(r["fv_est_x"]) - float(r["fv_true_x"]), float(r["fv_est_y"]) - float(r["fv_true_y"])) for r in rows if _present(r, "fv_est_x")]
        accurate = sum(
            1 for r in rows
            if int(r["hv_fix"]) and math.hypot(float(r["hv_est_x"]) - float(r["hv_true_x"]), float(r["hv_est_y"]) - float(r["hv_true_y"])) <= tol
        )
        possibility = [localization_possibility(float(r["eta_tail"])) for r in rows]
        per, ber = _ber(rows, LedIdPacket.bit_length(PacketKind.STREET_LIGHT))
        extra = {"alarm_ticks": sum(int(r["alarm"]) for r in rows)}
    return {
        "empty": False,
        "n_ticks": len(rows),
        "rms_error_raw": _rms(raw),
        "rms_error_tracked": _rms(trk),
        "median_error_raw": _median(raw),
        "median_error_tracked": _median(trk),
        "mean_decode_failure_rate": per,
        "ber_empirical": ber,
        "accuracy_percent": 100.0 * accurate / len(rows),
        "mean_possibility": _mean(possibility),
        **extra,
    }


# ── CSV ──────────────────────────────────────────────────────────────────────


def format_cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def csv_text(columns: Sequence[str], rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_cell(row[c]) for c in columns])
    return buf.getvalue()


def read_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: (None if v == "" else v) for k, v in row.items()} for row in csv.DictReader(fh)]


# ── Run and sweep ────────────────────────────────────────────────────────────


@dataclass
class RunReport:
    rows: list[dict]
    summary: dict[str, Any]
    seed: int
    csv_path: Path | None = None
    extra_paths: list[Path] = field(default_factory=list)


def simulate(cfg: ScenarioConfig, seed: int | None = None) -> RunReport:
    seed = int(cfg.run["seed"] if seed is None else seed)
    ticks = n_ticks(cfg)
    build = build_indoor if cfg.kind == "indoor" else build_vehicle
    sim = build(cfg, seed)
    rows = sim.run(ticks, float(cfg.run["dt"])) if ticks else []
    return RunReport(rows, summarize(cfg.kind, rows, cfg.world), seed)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def run(cfg: ScenarioConfig, seed: int | None = None, out: str | Path | None = None, name: str = "run") -> RunReport:
    """Run one scenario; with ``out`` write ``<name>.csv`` and ``<name>_summary.json`` there."""
    report = simulate(cfg, seed)
    if out is not None:
        out = Path(out)
        report.csv_path = out / f"{name}.csv"
        _write(report.csv_path, csv_text(columns_for(cfg), report.rows))
        summary_path = out / f"{name}_summary.json"
        _write(summary_path, json.dumps(report.summary, indent=2, sort_keys=True) + "\n")
        report.extra_paths.append(summary_path)
    return report


def derive_seed(seed: int, index: int) -> int:
    """Per-sweep-point seed: the base seed XOR a 32-bit multiplicative hash of the index.

    The hash of index 0 is 0, so a one-point sweep reproduces a plain run.
    """
    return int(seed) ^ ((int(index) * 0x9E3779B1) & 0xFFFFFFFF)


def aggregate_row(value: Any, summary: dict[str, Any]) -> dict[str, Any]:
    return {
        "sweep_value": value if not isinstance(value, (list, tuple)) else "x".join(format_cell(v) for v in value),
        "rms_raw": summary.get("rms_error_raw"),
        "rms_tracked": summary.get("rms_error_tracked"),
        "ber": summary.get("ber_empirical"),
        "accuracy_pct": summary.get("accuracy_percent"),
        "mean_possibility": summary.get("mean_possibility"),
        "median_raw": summary.get("median_error_raw"),
        "median_tracked": summary.get("median_error_tracked"),
        "n_ticks": summary.get("n_ticks", 0),
    }


def sweep(cfg: ScenarioConfig, out: str | Path | None = None, seed: int | None = None) -> list[dict]:
    """Run every sweep value with its own derived seed; returns the aggregate rows.

    With ``out``, each point writes ``sweep_<i>.csv`` and the aggregate goes to
    ``aggregate.csv``.  A config without a sweep block runs as a single point.
    """
    base = int(cfg.run["seed"] if seed is None else seed)
    if cfg.sweep is None:
        param, values = None, [None]
    else:
        param, values = cfg.sweep["parameter"], cfg.sweep["values"]
    rows = []
    for i, value in enumerate(values):
        point = cfg if param is None else cfg.with_value(param, value)
        point.sweep = None
        report = run(point, derive_seed(base, i), out, name=f"sweep_{i:03d}")
        rows.append(aggregate_row(i if value is None else value, report.summary))
    if out is not None:
        _write(Path(out) / "aggregate.csv", csv_text(AGGREGATE_COLUMNS, rows))
    return rows
