"""Vehicle positioning from street lights and taillight OCC.

Road frame: x along the road, y to the left, z up.  Street lights stand on
the line y = 0 at x = n * spacing.  The host vehicle (HV) drives at lateral
offset h and locates itself from the two nearest decoded street lights, then
places each forwarding vehicle (FV) from its taillight pair.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from . import camera as cam
from .camera import Beacon, CameraIntrinsics, Pose
from .errors import (
    DecodeFailure,
    GeometryInconsistent,
    InsufficientStreetLights,
    RangeUnresolvable,
    TaillightOccluded,
)
from .geolocation import RangeMeasurement, distance_from_pixels
from .indoor import image_incidence
from .link import LedIdPacket, corrupt_and_decode, encode_s2psk, packet_symbols, sample_frames
from .photometry import ChannelParams, beacon_snir, ber_from_snir

KMH = 1000.0 / 3600.0


def _sqrt(x):
    """Square root that stays exact for perfect-square Fractions."""
    if isinstance(x, Fraction) and x >= 0:
        n, d = math.isqrt(x.numerator), math.isqrt(x.denominator)
        if n * n == x.numerator and d * d == x.denominator:
            return Fraction(n, d)
    return math.sqrt(x)


def sl_along_offset(a1, a2, spacing):
    """Along-road offset from the HV to the nearer light's foot (see :func:`sl_flat_offsets`)."""
    if not spacing > 0:
        raise GeometryInconsistent("spacing must be positive")
    if not a1 > 0:
        raise GeometryInconsistent("distances must be positive")
    c = ((a2 * a2 - a1 * a1) - spacing * spacing) / (2 * spacing)
    if c < 0:
        raise GeometryInconsistent(f"offset c = {float(c):.6g} is negative")
    return c


def sl_flat_offsets(a1, a2, spacing):
    """Along-road offset c to the nearer light's foot and lateral offset h.

    ``a1`` and ``a2`` are flat (ground-plane) distances to two street lights
    ``spacing`` apart, the first being the nearer.  Works on floats or
    Fractions; Fraction inputs give exact results.
    """
    c = sl_along_offset(a1, a2, spacing)
    rad = a1 * a1 - c * c
    if rad < 0:
        if rad < -1e-9:
            raise GeometryInconsistent("flat distance shorter than the along-road offset")
        rad = 0 * rad
    return c, _sqrt(rad)


def flat_distance_from_direct(D: float, sl_height: float, cam_height: float) -> float:
    dz = sl_height - cam_height
    if D <= abs(dz):
        raise GeometryInconsistent("direct distance does not exceed the height difference")
    return math.sqrt(D * D - dz * dz)


def angular_displacement(hd_pixels: float, intr: CameraIntrinsics) -> float:
    """Bearing of an image point ``hd_pixels`` off the centre column (positive to the left)."""
    return math.atan(hd_pixels * intr.pixel_pitch / intr.focal_length)


@dataclass(frozen=True)
class RoadGeometry:
    spacing: float = 25.0
    sl_height: float = 7.0
    cam_height: float = 1.0
    tail_height: float = 1.0
    curvature_threshold: float = 0.05

    def __post_init__(self) -> None:
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")
        if not self.sl_height > self.cam_height > 0:
            raise ValueError("street lights must stand above the camera")


@dataclass(frozen=True)
class HvVirtualPosition:
    """HV position as (nearest light behind, offset c past it, lateral offset h)."""

    c: float
    h: float
    nearest_sl_id: int
    theta_sl: float = 0.0
    timestamp: float = 0.0
    speed: float = 0.0
    delta_theta: float = 0.0
    dead_reckoned: bool = False
    curved: bool = False

    def x(self, spacing: float) -> float:
        return self.nearest_sl_id * spacing + self.c

    @classmethod
    def from_x(cls, x: float, h: float, spacing: float, **kwargs) -> HvVirtualPosition:
        n = math.floor(x / spacing)
        c = x - n * spacing
        if c >= spacing:  # float edge case
            n, c = n + 1, 0.0
        return cls(c=max(c, 0.0), h=h, nearest_sl_id=int(n), **kwargs)


def update_hv_virtual_position(
    prev: HvVirtualPosition | None,
    sl_measurements: Sequence[RangeMeasurement],
    dt: float,
    road: RoadGeometry,
    speed: float | None = None,
    bearings: dict[int, float] | None = None,
) -> HvVirtualPosition:
    """Fix the HV from the two nearest decoded lights, or dead-reckon.

    Street-light ``beacon_id`` is its index n along the road.  ``speed`` is the
    odometer reading used for dead reckoning (defaults to the previous speed).
    ``bearings`` maps a light id to its image bearing (positive to the left).
    The lights stand to the right of the HV, so with the nearer light's
    bearing available the lateral offset is taken as c * tan(-bearing), which
    is far better conditioned than the range-only value when h << a1.  The
    farther light's bearing is then compared with the straight-road
    prediction to flag curvature.
    """
    v = prev.speed if speed is None and prev is not None else (speed or 0.0)
    usable = [m for m in sl_measurements if m.pixel_count is None or m.pixel_count >= 1]
    t = (prev.timestamp + dt) if prev is not None else dt
    if len(usable) < 2:
        if prev is None:
            raise InsufficientStreetLights(f"{len(usable)} decodable street lights and no prior")
        x = prev.x(road.spacing) + v * dt
        return HvVirtualPosition.from_x(
            x, prev.h, road.spacing, theta_sl=prev.theta_sl, timestamp=t, speed=v, dead_reckoned=True
        )

    flat = sorted(
        ((flat_distance_from_direct(m.distance, road.sl_height, road.cam_height), m) for m in usable),
        key=lambda item: (item[0], item[1].beacon_id),
    )
    (a1, m1), (a2, m2) = flat[0], flat[1]
    gap = (m2.beacon_id - m1.beacon_id) * road.spacing
    if gap <= 0:
        raise GeometryInconsistent("the nearer light must precede the farther one")
    bearings = bearings or {}
    if m1.beacon_id in bearings:
        c_ahead = sl_along_offset(a1, a2, gap)
        h = c_ahead * math.tan(-bearings[m1.beacon_id])
    else:
        c_ahead, h = sl_flat_offsets(a1, a2, gap)
    x = m1.beacon_id * road.spacing - c_ahead
    theta = math.atan2(h, c_ahead)

    delta, curved = 0.0, False
    if m1.beacon_id in bearings and m2.beacon_id in bearings:
        delta = -bearings[m2.beacon_id] - math.atan2(h, c_ahead + gap)
        curved = abs(delta) > road.curvature_threshold
    return HvVirtualPosition.from_x(
        x, h, road.spacing, theta_sl=theta, timestamp=t, speed=v, delta_theta=delta, curved=curved
    )


@dataclass(frozen=True)
class FvEstimate:
    fv_id: int
    x: float
    y: float
    range: float
    theta: float
    range_rate: float | None = None


def localize_fv(
    hv: HvVirtualPosition,
    fv_meas: tuple[RangeMeasurement | None, RangeMeasurement | None, float],
    dt: float,
    road: RoadGeometry,
    intr: CameraIntrinsics,
    separation: float = 1.2,
    prev: FvEstimate | None = None,
) -> FvEstimate:
    """Place an FV from both taillight ranges and the image offset of their midpoint.

    ``fv_meas`` is (left, right, hd_pixels).  The range to the midpoint follows
    from the two taillight distances and their known ``separation`` (median
    length of the triangle they form with the camera).
    """
    left, right, hd_pixels = fv_meas
    if left is None or right is None:
        raise TaillightOccluded("both taillights are required")
    for m in (left, right):
        if m.pixel_count is not None and m.pixel_count < 1:
            raise RangeUnresolvable("taillight image below one pixel")
    r1, r2 = left.distance, right.distance
    mid2 = 0.5 * (r1 * r1 + r2 * r2) - 0.25 * separation**2
    dz = road.tail_height - road.cam_height
    rng = math.sqrt(max(mid2 - dz * dz, 0.0))
    theta = angular_displacement(hd_pixels, intr)
    hv_x = hv.x(road.spacing)
    rate = None if prev is None else (rng - prev.range) / dt
    return FvEstimate(left.beacon_id, hv_x + rng * math.cos(theta), hv.h + rng * math.sin(theta), rng, theta, rate)


# ── Simulation ───────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class VehicleNoise:
    eta_sigma: float = 0.02
    quantize: bool = True  # False measures the exact projected area
    subsamples: int = 4
    odometry_sigma: float = 0.02  # per-run odometer scale error
    jitter_rate: float = 0.02  # camera angular shake, rad/s
    interferers: tuple[tuple[float, float], ...] = ()


@dataclass(frozen=True)
class VehicleScenario:
    road: RoadGeometry = field(default_factory=RoadGeometry)
    hv_speed: float = 50 * KMH
    hv_lateral: float = 5.0
    hv_start: float = 0.0
    fv_speed: float = 50 * KMH
    fv_lateral: float = 0.0  # offset from the HV lane
    fv_gap: float = 25.0
    fv_gap_window: tuple[float, float] = (15.0, 40.0)
    fv_id: int = 1000
    taillight_size: tuple[float, float] = (0.15, 0.1)
    taillight_separation: float = 1.2
    taillight_power: float = 2.0
    blocked_taillight: str | None = None
    sl_size: tuple[float, float] = (0.6, 0.3)
    sl_power: float = 5.0
    max_range: float = 150.0
    max_sl_rois: int = 4
    alarm_eta: float = 5000.0
    report_latency: float = 0.08
    accuracy_tol: float = 1.0
    fix_gain: float = 0.3  # weight of a fresh street-light fix against dead reckoning


VEHICLE_COLUMNS = (
    "tick", "t_s", "hv_true_x", "hv_true_y", "hv_c", "hv_h", "fv_id", "fv_true_x", "fv_true_y",
    "fv_est_x", "fv_est_y", "range_m", "theta_rad", "eta_tail", "alarm", "decode_fail",
    "hv_est_x", "hv_est_y", "hv_fix", "range_true_m", "decode_attempts",
)


def wrap_gap(value: float, lo: float, hi: float) -> tuple[float, int]:
    """Wrap ``value`` into [lo, hi); also return how many windows were crossed."""
    span = hi - lo
    if span <= 0:
        return lo, 0
    k = math.floor((value - lo) / span)
    return value - k * span, k


class VehicleSim:
    def __init__(
        self,
        scenario: VehicleScenario,
        camera: CameraIntrinsics,
        channel: ChannelParams | None = None,
        noise: VehicleNoise | None = None,
        seed: int = 0,
    ) -> None:
        self.sc = scenario
        self.intr = camera
        self.channel = channel or ChannelParams()
        self.noise = noise or VehicleNoise()
        self.rng = np.random.default_rng(seed)
        self.odometer_scale = 1.0 + self.noise.odometry_sigma * self.rng.standard_normal()
        self.tick_index = 0
        self.hv: HvVirtualPosition | None = None
        self.fv_prev: FvEstimate | None = None
        self._fv_generation = 0
        self.decoded: set[int] = set()
        self._frames: dict[int, object] = {}
        self._accum: dict[int, float] = {}
        self._sl_shape = cam.Rectangle(*scenario.sl_size)
        self._tail_shape = cam.Rectangle(*scenario.taillight_size)
        self.road = scenario.road

    # scene state at time t
    def hv_x(self, t: float) -> float:
        return self.sc.hv_start + self.sc.hv_speed * t

    def gap(self, t: float) -> tuple[float, int]:
        """Gap to the FV and its generation.

        The FV drives at constant speed; when it leaves the gap window it is
        recycled to the opposite edge (a new generation) so it stays in view.
        """
        lo, hi = self.sc.fv_gap_window
        return wrap_gap(self.sc.fv_gap + (self.sc.fv_speed - self.sc.hv_speed) * t, lo, hi)

    def fv_xy(self, t: float) -> tuple[float, float]:
        return self.hv_x(t) + self.gap(t)[0], self.sc.hv_lateral + self.sc.fv_lateral

    def camera_pose(self, t: float) -> Pose:
        return Pose([self.hv_x(t), self.sc.hv_lateral, self.road.cam_height], cam.FORWARD)

    def street_light(self, n: int) -> Beacon:
        pose = Pose([n * self.road.spacing, 0.0, self.road.sl_height], cam.REARWARD)
        return Beacon(n, pose, self._sl_shape, power=self.sc.sl_power)

    def taillights(self, t: float, ahead: float = 0.0) -> tuple[Beacon, Beacon]:
        """Taillights of the FV seen at ``t``, advanced ``ahead`` seconds at its own speed."""
        x, y = self.fv_xy(t)
        x += self.sc.fv_speed * ahead
        half = self.sc.taillight_separation / 2
        mk = lambda dy: Beacon(
            self.sc.fv_id, Pose([x, y + dy, self.road.tail_height], cam.REARWARD), self._tail_shape, power=self.sc.taillight_power
        )
        return mk(half), mk(-half)

    # link layer
    def _frames_for(self, key: int, packet: LedIdPacket):
        if key not in self._frames:
            stream = encode_s2psk(packet, clock=self.intr.fps)
            self._frames[key] = sample_frames(stream, self.intr.fps, self.intr.exposure, len(stream))
        return self._frames[key]

    def _try_decode(self, key: int, packet: LedIdPacket, p_e: float, dt: float) -> tuple[bool, int]:
        """Accumulate frames for ``key``; attempt a decode once a full packet is in. Returns (decoded, failures)."""
        if key in self.decoded:
            return True, 0
        need = packet_symbols(packet.kind)
        self._accum[key] = self._accum.get(key, 0.0) + self.intr.fps * dt
        if self._accum[key] + 1e-9 < need:
            return False, 0
        self._accum[key] = 0.0
        try:
            corrupt_and_decode(self._frames_for(key, packet), min(p_e, 0.5), self.rng)
        except DecodeFailure:
            return False, 1
        self.decoded.add(key)
        return True, 0

    def _forget(self, key: int) -> None:
        self._accum.pop(key, None)
        self.decoded.discard(key)

    def _smear(self, beacon: Beacon, pose: Pose, pose_end: Pose, beacon_end: Beacon) -> NDArray[np.float64]:
        """Image displacement over the exposure from relative motion plus camera shake."""
        start = cam.project_point(beacon.position, pose, self.intr)
        end = cam.project_point(beacon_end.position, pose_end, self.intr)
        shake = self.intr.focal_px * self.noise.jitter_rate * self.intr.exposure
        ang = self.rng.uniform(0, 2 * math.pi)
        return end - start + shake * np.array([math.cos(ang), math.sin(ang)])

    def _measure(self, beacon: Beacon, pose: Pose, smear, t: float) -> RangeMeasurement | None:
        if self.noise.quantize:
            eta = cam.rasterize_fixture(beacon, pose, self.intr, self.noise.subsamples, smear)
        else:
            eta = cam.projected_area(beacon, pose, self.intr)
        eta_meas = eta * (1.0 + self.noise.eta_sigma * self.rng.standard_normal())
        if eta_meas < 1:
            return None
        pixel = cam.project_point(beacon.position, pose, self.intr)
        d = distance_from_pixels(
            eta_meas, self.intr.focal_length, self.intr.pixel_pitch, beacon.area, image_incidence(pixel, self.intr)
        )
        return RangeMeasurement(beacon.id, beacon.position, d, eta_meas, t)

    def _visible(self, beacon: Beacon, pose: Pose) -> bool:
        if np.linalg.norm(beacon.position - pose.position) > self.sc.max_range:
            return False
        if not cam.in_fov(beacon.position, pose, self.intr):
            return False
        return cam.on_sensor(cam.project_point(beacon.position, pose, self.intr), self.intr)

    def _blend(self, prev: HvVirtualPosition, fix: HvVirtualPosition, dt: float, odometer: float) -> HvVirtualPosition:
        g = self.sc.fix_gain
        pred_x = prev.x(self.road.spacing) + odometer * dt
        x = pred_x + g * (fix.x(self.road.spacing) - pred_x)
        h = prev.h + g * (fix.h - prev.h)
        return HvVirtualPosition.from_x(
            x, h, self.road.spacing, theta_sl=fix.theta_sl, timestamp=fix.timestamp, speed=odometer,
            delta_theta=fix.delta_theta, curved=fix.curved,
        )

    def tick(self, dt: float) -> dict:
        if not dt > 0:
            raise ValueError("dt must be positive")
        sc, road, intr = self.sc, self.road, self.intr
        k = self.tick_index
        t = k * dt
        pose = self.camera_pose(t)
        pose_end = self.camera_pose(t + intr.exposure)
        attempts = fails = 0

        # street lights: rank visible ones by image size and spend the ROI budget
        x_hv = self.hv_x(t)
        first = math.floor(x_hv / road.spacing) + 1
        last = math.floor((x_hv + sc.max_range) / road.spacing)
        candidates = []
        for n in range(first, last + 1):
            b = self.street_light(n)
            if self._visible(b, pose):
                candidates.append((-cam.projected_area(b, pose, intr), n, b))
        candidates.sort(key=lambda item: item[:2])
        rois = candidates[: sc.max_sl_rois]
        in_roi = {n for _, n, _ in rois}
        for key in [key for key in list(self._accum) + list(self.decoded) if 0 <= key < 1 << 16]:
            if key not in in_roi:
                self._forget(key)

        sl_meas, bearings = [], {}
        for _, n, b in rois:
            packet = LedIdPacket.street_light(n % (1 << 16), int(round(road.sl_height * 1000)), int(round(road.spacing * 1000)) % (1 << 16), 0)
            p_e = ber_from_snir(beacon_snir(b, pose, intr, self.channel, self.noise.interferers), "s2psk")
            before = n in self.decoded
            ok, failed = self._try_decode(n, packet, p_e, dt)
            if not before and (ok or failed):
                attempts += 1
            fails += failed
            if not ok:
                continue
            m = self._measure(b, pose, self._smear(b, pose, pose_end, b), t)
            if m is not None:
                sl_meas.append(m)
                u = cam.project_point(b.position, pose, intr)[0]
                bearings[n] = angular_displacement(intr.principal_point[0] - u, intr)

        odometer = sc.hv_speed * self.odometer_scale
        prev = self.hv
        try:
            fix = update_hv_virtual_position(prev, sl_meas, dt, road, odometer, bearings)
        except (InsufficientStreetLights, GeometryInconsistent):
            fix = None if prev is None else update_hv_virtual_position(prev, [], dt, road, odometer)
        if fix is not None and prev is not None and not fix.dead_reckoned:
            fix = self._blend(prev, fix, dt, odometer)
        self.hv = fix

        # forwarding vehicle
        tails = self.taillights(t)
        tails_end = self.taillights(t, intr.exposure)
        fv_key = 1 << 16 | sc.fv_id
        generation = self.gap(t)[1]
        if generation != self._fv_generation:
            # recycled into the window: same vehicle, but range history is void
            self._fv_generation = generation
            self.fv_prev = None
        blocked = {"left": 0, "right": 1}.get(sc.blocked_taillight or "", None)
        fv_est = None
        eta_tail = 0.0
        range_m = theta = None
        visible = [self._visible(b, pose) for b in tails]
        if all(visible):
            etas = [cam.projected_area(b, pose, intr) for b in tails]
            eta_tail = float(np.mean(etas))
            packet = LedIdPacket.vehicle(sc.fv_id, int(round(self._tail_shape.area * 1e6)) % (1 << 16), 0)
            snirs = [beacon_snir(b, pose, intr, self.channel, self.noise.interferers) for b in tails]
            p_e = ber_from_snir(min(snirs), "s2psk")
            decoded = False
            if blocked is None:
                before = fv_key in self.decoded
                decoded, failed = self._try_decode(fv_key, packet, p_e, dt)
                if not before and (decoded or failed):
                    attempts += 1
                fails += failed
            else:
                self._forget(fv_key)
            if decoded and self.hv is not None:
                meas = [self._measure(b, pose, self._smear(b, pose, pose_end, e), t) for b, e in zip(tails, tails_end)]
                mid = 0.5 * (cam.project_point(tails[0].position, pose, intr) + cam.project_point(tails[1].position, pose, intr))
                hd = intr.principal_point[0] - mid[0]
                try:
                    fv_est = localize_fv(self.hv, (meas[0], meas[1], hd), dt, road, intr, sc.taillight_separation, self.fv_prev)
                    self.fv_prev = fv_est
                    range_m, theta = fv_est.range, fv_est.theta
                except (TaillightOccluded, RangeUnresolvable):
                    fv_est = None
        else:
            self._forget(fv_key)

        cap_x, cap_y = self.fv_xy(t)
        fv_x, fv_y = cap_x + sc.fv_speed * sc.report_latency, cap_y
        self.tick_index += 1
        return {
            "tick": k,
            "t_s": t,
            "hv_true_x": x_hv,
            "hv_true_y": sc.hv_lateral,
            "hv_c": None if self.hv is None else self.hv.c,
            "hv_h": None if self.hv is None else self.hv.h,
            "fv_id": sc.fv_id,
            "fv_true_x": fv_x,
            "fv_true_y": fv_y,
            "fv_est_x": None if fv_est is None else fv_est.x,
            "fv_est_y": None if fv_est is None else fv_est.y,
            "range_m": range_m,
            "theta_rad": theta,
            "eta_tail": eta_tail,
            "alarm": int(eta_tail >= sc.alarm_eta),
            "decode_fail": fails,
            "hv_est_x": None if self.hv is None else self.hv.x(road.spacing),
            "hv_est_y": None if self.hv is None else self.hv.h,
            "hv_fix": int(self.hv is not None and not self.hv.dead_reckoned),
            "range_true_m": math.hypot(cap_x - x_hv, cap_y - sc.hv_lateral),
            "decode_attempts": attempts,
        }

    def run(self, n_ticks: int, dt: float) -> list[dict]:
        return [self.tick(dt) for _ in range(n_ticks)]
