"""Indoor positioning: ceiling LED grid, a smartphone walking below it, and the lighting server.

Each tick the phone captures the fixtures overhead, decodes their IDs,
ranges them from pixel area, and uploads the ranges.  The server solves for
the phone position and smooths it with a constant-velocity Kalman filter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import camera as cam
from .camera import Beacon, CameraIntrinsics, Pose
from .errors import (
    DecodeFailure,
    InsufficientBeacons,
    OccLocateError,
    RangeUnresolvable,
    SingularNormalEquations,
)
from .geolocation import (
    KalmanState,
    PositionEstimate,
    RangeMeasurement,
    choose_candidate,
    distance_from_pixels,
    kf_step,
    laterate,
    lateral_axis_for,
    make_tracker,
    multilaterate,
)
from .link import LedIdPacket, corrupt_and_decode, encode_ook_manchester, sample_frames
from .photometry import ChannelParams, beacon_snir, ber_from_snir

SUSPEND_THRESHOLD = 5
MIN_BEACONS = 3


@dataclass(frozen=True, eq=False)
class Room:
    width: float
    depth: float
    ceiling_height: float
    fixtures: tuple[Beacon, ...]
    grid_spacing: float | None = None
    floor_height: float = 0.0
    registry: dict[int, tuple[float, float, float]] = field(init=False)

    def __post_init__(self) -> None:
        if not (self.width > 0 and self.depth > 0):
            raise ValueError("room dimensions must be positive")
        if not self.ceiling_height > self.floor_height:
            raise ValueError("ceiling must be above the floor")
        ids = [b.id for b in self.fixtures]
        if len(set(ids)) != len(ids):
            raise ValueError("fixture ids must be unique")
        for b in self.fixtures:
            if abs(b.position[2] - self.ceiling_height) > 1e-9:
                raise ValueError(f"fixture {b.id} is not on the ceiling plane")
        object.__setattr__(self, "fixtures", tuple(self.fixtures))
        object.__setattr__(self, "registry", {b.id: tuple(float(v) for v in b.position) for b in self.fixtures})

    def beacon(self, beacon_id: int) -> Beacon:
        for b in self.fixtures:
            if b.id == beacon_id:
                return b
        raise KeyError(beacon_id)


def ceiling_fixture(beacon_id: int, x: float, y: float, ceiling: float, shape: cam.Shape, **kwargs) -> Beacon:
    return Beacon(beacon_id, Pose([x, y, ceiling], cam.DOWNWARD), shape, **kwargs)


def grid_room(
    width: float,
    depth: float,
    ceiling_height: float,
    spacing: float,
    shape: cam.Shape,
    floor_height: float = 0.0,
    **beacon_kwargs,
) -> Room:
    """Fixtures on a square grid inset by half a pitch from the walls."""
    xs = np.arange(spacing / 2, width, spacing)
    ys = np.arange(spacing / 2, depth, spacing)
    fixtures = []
    for j, y in enumerate(ys):
        for i, x in enumerate(xs):
            fixtures.append(ceiling_fixture(j * len(xs) + i + 1, x, y, ceiling_height, shape, **beacon_kwargs))
    return Room(width, depth, ceiling_height, tuple(fixtures), spacing, floor_height)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Piecewise-linear walk through ``waypoints`` at constant ``speed``, holding at the end.

    Negative times extrapolate backwards along the first leg: the walker is
    already moving when the clock starts.
    """

    waypoints: NDArray[np.float64]
    speed: float
    height: float

    def __post_init__(self) -> None:
        wp = np.asarray(self.waypoints, dtype=float).reshape(-1, 2)
        if len(wp) == 0:
            raise ValueError("trajectory needs at least one waypoint")
        if self.speed < 0:
            raise ValueError("speed must be non-negative")
        object.__setattr__(self, "waypoints", wp)

    def position(self, t: float) -> NDArray[np.float64]:
        wp = self.waypoints
        travelled = t * self.speed
        if travelled < 0 and len(wp) > 1:
            a, b = wp[0], wp[1]
            xy = a + (b - a) / np.linalg.norm(b - a) * travelled
            return np.array([xy[0], xy[1], self.height])
        travelled = max(travelled, 0.0)
        for a, b in zip(wp[:-1], wp[1:]):
            seg = float(np.linalg.norm(b - a))
            if travelled <= seg and seg > 0:
                xy = a + (b - a) * (travelled / seg)
                return np.array([xy[0], xy[1], self.height])
            travelled -= seg
        return np.array([wp[-1, 0], wp[-1, 1], self.height])


@dataclass(frozen=True, eq=False)
class SmartphoneAgent:
    trajectory: Trajectory
    camera: CameraIntrinsics
    orientation: NDArray[np.float64] = field(default_factory=lambda: cam.UPWARD.copy())
    latency: float = 0.0

    def pose(self, t: float) -> Pose:
        return Pose(self.trajectory.position(t), self.orientation)


@dataclass(frozen=True, eq=False)
class LightingServerState:
    registry: dict[int, tuple[float, float, float]]
    last_estimate: PositionEstimate | None = None
    tracker: KalmanState | None = None
    missed_ticks: int = 0
    broadcasting: bool = True
    suspend_threshold: int = SUSPEND_THRESHOLD


def suspend_if_absent(server: LightingServerState, decoded_count: int) -> LightingServerState:
    if decoded_count > 0:
        return replace(server, missed_ticks=0, broadcasting=True)
    missed = server.missed_ticks + 1
    return replace(server, missed_ticks=missed, broadcasting=server.broadcasting and missed < server.suspend_threshold)


def localization_possibility(eta: float) -> float:
    if eta < 1:
        return 0.0
    return min(1.0, eta / 4.0)


def visible_beacons(pose: Pose, room: Room, intr: CameraIntrinsics, strict: bool = False) -> list[Beacon]:
    """Fixtures inside the FOV cone whose whole image lands on the sensor, nearest the axis first.

    An image cut by the sensor edge under-reports its pixel area, so it is not
    usable for ranging.
    """
    found = []
    for b in room.fixtures:
        if not cam.in_fov(b.position, pose, intr):
            continue
        if not cam.image_on_sensor(b, pose, intr):
            continue
        found.append((cam.incidence_angle(b.position, pose), b.id, b))
    found.sort(key=lambda item: item[:2])
    visible = [b for _, _, b in found]
    if strict and len(visible) < MIN_BEACONS:
        raise InsufficientBeacons(f"{len(visible)} beacons visible")
    return visible


def check_coverage(room: Room, intr: CameraIntrinsics, height: float, orientation=cam.UPWARD, step: float | None = None) -> None:
    """Raise InsufficientBeacons if some point over the fixture grid sees fewer than three fixtures."""
    pts = np.array([b.position[:2] for b in room.fixtures])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    step = step or (room.grid_spacing or 0.5) / 4
    for x in np.arange(lo[0], hi[0] + 1e-9, step):
        for y in np.arange(lo[1], hi[1] + 1e-9, step):
            pose = Pose([x, y, height], orientation)
            n = len(visible_beacons(pose, room, intr))
            if n < MIN_BEACONS:
                raise InsufficientBeacons(f"only {n} fixtures visible at ({x:.2f}, {y:.2f})")


def image_incidence(pixel: ArrayLike, intr: CameraIntrinsics) -> float:
    """Angle off the optical axis of the ray through an image point."""
    ray = np.linalg.solve(intr.K, np.array([pixel[0], pixel[1], 1.0]))
    return math.atan(math.hypot(ray[0], ray[1]))


def line_bearing(pixel: ArrayLike, pose: Pose, intr: CameraIntrinsics, anchors: NDArray, lateral_axis: NDArray) -> float:
    """Bearing of the camera from the anchor line, signed towards ``lateral_axis``.

    The ray through the image of one anchor lies in the plane spanned by the
    line and the camera; its component across the line points from the camera
    to the line.
    """
    ray_cam = np.linalg.solve(intr.K, np.array([pixel[0], pixel[1], 1.0]))
    ray = pose.orientation.T @ ray_cam
    u = anchors[-1] - anchors[0]
    u = u / np.linalg.norm(u)
    across = ray - (ray @ u) * u
    across /= np.linalg.norm(across)
    return math.asin(float(np.clip(-across @ lateral_axis, -1.0, 1.0)))


def collinear(points: NDArray, tol: float = 1e-9) -> bool:
    centred = points - points.mean(axis=0)
    sv = np.linalg.svd(centred, compute_uv=False)
    return sv[1] <= tol * max(sv[0], 1.0)


def locate(
    measurements: Sequence[RangeMeasurement],
    ceiling_z: float,
    floor_z: float,
    tol: float = 1e-6,
    lateral_bearing: float = 0.0,
    lateral_axis: ArrayLike | None = None,
) -> tuple[PositionEstimate, NDArray[np.float64]]:
    """Solve and disambiguate: trilateration for three ranges, least squares beyond.

    Anchors sharing one plane make the least-squares normal matrix singular;
    those fall back to null-space lateration over all ranges.
    """
    if len(measurements) > 3:
        try:
            est = multilaterate(measurements)
            return est, est.position
        except SingularNormalEquations:
            pass
    est = laterate(measurements, tol, lateral_bearing, lateral_axis)
    return est, choose_candidate(est, ceiling_z, floor_z)


# ── Simulation ───────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class IndoorNoise:
    eta_sigma: float = 0.02
    quantize: bool = True
    subsamples: int = 1
    interferers: tuple[tuple[float, float], ...] = ()


@dataclass(frozen=True)
class TrackerConfig:
    accel_psd: float = 0.01
    position_sigma: float = 10.0
    velocity_sigma: float = 2.0


INDOOR_COLUMNS = (
    "tick", "t_s", "true_x", "true_y", "true_z", "est_x", "est_y", "est_z",
    "kf_x", "kf_y", "n_visible", "n_decoded", "min_eta", "possibility",
    "decode_attempts", "decode_fail",
)


class IndoorSim:
    """Sequential tick loop. Every random draw comes from one seeded generator."""

    def __init__(
        self,
        room: Room,
        agent: SmartphoneAgent,
        channel: ChannelParams | None = None,
        noise: IndoorNoise | None = None,
        tracker: TrackerConfig | None = None,
        seed: int = 0,
        suspend_threshold: int = SUSPEND_THRESHOLD,
    ) -> None:
        self.room = room
        self.agent = agent
        self.channel = channel or ChannelParams()
        self.noise = noise or IndoorNoise()
        self.tracker_cfg = tracker or TrackerConfig()
        self.rng = np.random.default_rng(seed)
        self.server = LightingServerState(room.registry, suspend_threshold=suspend_threshold)
        self.tick_index = 0
        self._frames: dict[int, object] = {}
        gap = room.ceiling_height - agent.trajectory.height
        # horizontal fix noise implied by multiplicative pixel-area noise
        self.measurement_sigma = 0.5 * self.noise.eta_sigma * gap

    def _frames_for(self, beacon: Beacon):
        if beacon.id not in self._frames:
            x, y, _ = beacon.position
            packet = LedIdPacket.indoor(beacon.id, int(round(x * 1000)) % 65536, int(round(y * 1000)) % 65536)
            intr = self.agent.camera
            stream = encode_ook_manchester(packet, clock=intr.fps)
            self._frames[beacon.id] = sample_frames(stream, intr.fps, intr.exposure, len(stream))
        return self._frames[beacon.id]

    def _pixel_area(self, beacon: Beacon, pose: Pose) -> float:
        intr = self.agent.camera
        if self.noise.quantize:
            return cam.rasterize_fixture(beacon, pose, intr, self.noise.subsamples)
        return cam.projected_area(beacon, pose, intr)

    def tick(self, dt: float) -> dict:
        if not dt > 0:
            raise ValueError("dt must be positive")
        k = self.tick_index
        t = k * dt
        intr = self.agent.camera
        latency = self.agent.latency
        truth = self.agent.trajectory.position(t)
        pose = self.agent.pose(t - latency)  # captured before the upload delay

        visible = visible_beacons(pose, self.room, intr)
        measurements: list[RangeMeasurement] = []
        pixels: list[NDArray] = []
        etas = []
        fails = 0
        for b in visible:
            eta = self._pixel_area(b, pose)
            etas.append(eta)
            p_e = ber_from_snir(beacon_snir(b, pose, intr, self.channel, self.noise.interferers))
            try:
                packet = corrupt_and_decode(self._frames_for(b), min(p_e, 0.5), self.rng)
            except DecodeFailure:
                fails += 1
                continue
            eta_meas = eta * (1.0 + self.noise.eta_sigma * self.rng.standard_normal())
            if packet.id not in self.server.registry or eta_meas <= 0:
                continue
            pixel = cam.project_point(b.position, pose, intr)
            try:
                d = distance_from_pixels(eta_meas, intr.focal_length, intr.pixel_pitch, b.area, image_incidence(pixel, intr))
            except RangeUnresolvable:
                continue
            measurements.append(RangeMeasurement(packet.id, self.server.registry[packet.id], d, eta_meas, t))
            pixels.append(pixel)

        n_decoded = len(measurements)
        self.server = suspend_if_absent(self.server, n_decoded if n_decoded >= MIN_BEACONS else 0)

        raw = None
        if n_decoded >= MIN_BEACONS:
            raw = self._solve(measurements, pixels, pose)

        tracker = self.server.tracker
        if tracker is None and raw is not None:
            # the first fix arrives with no prior knowledge of where the phone is
            centre = (self.room.width / 2, self.room.depth / 2)
            cfg = self.tracker_cfg
            tracker = make_tracker(centre, (0.0, 0.0), cfg.position_sigma, cfg.velocity_sigma, cfg.accel_psd, self.measurement_sigma)
        if tracker is not None:
            tracker = kf_step(tracker, dt, None if raw is None else raw[:2])
        self.server = replace(self.server, tracker=tracker)

        tracked = None
        if tracker is not None and self.server.broadcasting:
            tracked = tracker.state[:2] + tracker.state[2:] * latency

        min_eta = min(etas) if etas else 0.0
        self.tick_index += 1
        return {
            "tick": k,
            "t_s": t,
            "true_x": truth[0],
            "true_y": truth[1],
            "true_z": truth[2],
            "est_x": None if raw is None else raw[0],
            "est_y": None if raw is None else raw[1],
            "est_z": None if raw is None else raw[2],
            "kf_x": None if tracked is None else tracked[0],
            "kf_y": None if tracked is None else tracked[1],
            "n_visible": len(visible),
            "n_decoded": n_decoded,
            "min_eta": min_eta,
            "possibility": localization_possibility(min_eta) if etas else 0.0,
            "decode_attempts": len(visible),
            "decode_fail": fails,
        }

    def _solve(self, measurements, pixels, pose) -> NDArray[np.float64] | None:
        anchors = np.array([m.beacon_position for m in measurements])
        noisy = self.noise.eta_sigma > 0 or self.noise.quantize
        tol = math.inf if noisy else 1e-6
        bearing, axis = 0.0, None
        if collinear(anchors):
            axis = lateral_axis_for(anchors)
            bearing = line_bearing(pixels[0], pose, self.agent.camera, anchors, axis)
        try:
            est, chosen = locate(measurements, self.room.ceiling_height, self.room.floor_height, tol, bearing, axis)
        except OccLocateError:
            return None
        self.server = replace(self.server, last_estimate=est)
        return np.asarray(chosen, dtype=float)

    def run(self, n_ticks: int, dt: float) -> list[dict]:
        return [self.tick(dt) for _ in range(n_ticks)]
