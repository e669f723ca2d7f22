"""Pinhole camera geometry: projection, field-of-view tests and a fixture rasterizer.

World points map to pixels through ``x = K R (X - P_cam)``.  The rasterizer
projects a planar fixture outline onto the sensor and counts the pixel
centres that fall inside the silhouette, giving the pixel area ``eta`` that
photogrammetric ranging inverts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial import ConvexHull

from .errors import BehindCamera

# Below this many pixels the integer count is replaced by the exact projected area.
FRACTIONAL_LIMIT_PX = 4.0

_ORTHO_TOL = 1e-9
_ANGLE_TOL = 1e-12
_CIRCLE_VERTICES = 720


def _vec3(value: ArrayLike, name: str) -> NDArray[np.float64]:
    arr = np.asarray(value, dtype=float).reshape(-1)
    if arr.shape != (3,) or not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be a finite 3-vector")
    return arr


@dataclass(frozen=True)
class CameraIntrinsics:
    """Fixed receiver parameters. Lengths in metres, angles in radians."""

    focal_length: float = 0.016
    pixel_pitch: float = 3.5e-6
    sensor_width: float = 0.036
    sensor_height: float = 0.024
    principal_point: tuple[float, float] | None = None
    skew: float = 0.0
    fov_semi_angle: float = math.radians(45.0)
    fps: float = 30.0
    exposure: float = 1e-3
    resolution: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        if not self.focal_length > 0:
            raise ValueError("focal_length must be positive")
        if not self.pixel_pitch > 0:
            raise ValueError("pixel_pitch must be positive")
        if not (self.sensor_width > 0 and self.sensor_height > 0):
            raise ValueError("sensor dimensions must be positive")
        if not 0 < self.fov_semi_angle < math.pi / 2:
            raise ValueError("fov_semi_angle must lie in (0, pi/2)")
        if not self.fps > 0 or not self.exposure > 0:
            raise ValueError("fps and exposure must be positive")

        if self.resolution is None:
            # a hair of slack so 0.036 / 3.6e-6 does not round down to 9999
            res = (
                int(math.floor(self.sensor_width / self.pixel_pitch + 1e-9)),
                int(math.floor(self.sensor_height / self.pixel_pitch + 1e-9)),
            )
            object.__setattr__(self, "resolution", res)
        width_px, height_px = (int(v) for v in self.resolution)
        object.__setattr__(self, "resolution", (width_px, height_px))
        if width_px < 1 or height_px < 1:
            raise ValueError("resolution must be at least 1x1")
        slack = 1.0 + 1e-9
        if width_px * self.pixel_pitch > self.sensor_width * slack:
            raise ValueError("resolution width exceeds the sensor width")
        if height_px * self.pixel_pitch > self.sensor_height * slack:
            raise ValueError("resolution height exceeds the sensor height")

        if self.principal_point is None:
            object.__setattr__(self, "principal_point", (width_px / 2.0, height_px / 2.0))
        else:
            px, py = self.principal_point
            object.__setattr__(self, "principal_point", (float(px), float(py)))

    @classmethod
    def from_megapixels(cls, megapixels: float, **kwargs) -> CameraIntrinsics:
        """Camera whose pixel pitch is set so the full sensor holds ``megapixels``."""
        if not megapixels > 0:
            raise ValueError("megapixels must be positive")
        width = kwargs.get("sensor_width", cls.sensor_width)
        height = kwargs.get("sensor_height", cls.sensor_height)
        pitch = math.sqrt(width * height / (megapixels * 1e6))
        return cls(pixel_pitch=pitch, **kwargs)

    @property
    def sensor_area(self) -> float:
        return self.sensor_width * self.sensor_height

    @property
    def focal_px(self) -> float:
        """Focal length in pixel units (f / rho)."""
        return self.focal_length / self.pixel_pitch

    @property
    def K(self) -> NDArray[np.float64]:
        fx = self.focal_px
        px, py = self.principal_point
        return np.array([[fx, self.skew, px], [0.0, fx, py], [0.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid pose. ``orientation`` maps world axes into the body frame."""

    position: NDArray[np.float64] = field(default_factory=lambda: np.zeros(3))
    orientation: NDArray[np.float64] = field(default_factory=lambda: np.eye(3))

    def __post_init__(self) -> None:
        pos = _vec3(self.position, "position")
        rot = np.asarray(self.orientation, dtype=float)
        if rot.shape != (3, 3) or not np.all(np.isfinite(rot)):
            raise ValueError("orientation must be a finite 3x3 matrix")
        if np.max(np.abs(rot @ rot.T - np.eye(3))) > _ORTHO_TOL:
            raise ValueError("orientation must be orthonormal")
        if abs(np.linalg.det(rot) - 1.0) > _ORTHO_TOL:
            raise ValueError("orientation must have determinant +1")
        pos.setflags(write=False)
        rot = rot.copy()
        rot.setflags(write=False)
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "orientation", rot)

    @property
    def axis(self) -> NDArray[np.float64]:
        """Body z-axis expressed in the world frame (optical axis or surface normal)."""
        return self.orientation[2]

    def to_body(self, points: ArrayLike) -> NDArray[np.float64]:
        pts = np.asarray(points, dtype=float)
        return (pts - self.position) @ self.orientation.T

    def to_world(self, points: ArrayLike) -> NDArray[np.float64]:
        pts = np.asarray(points, dtype=float)
        return pts @ self.orientation + self.position

    def translated(self, offset: ArrayLike) -> Pose:
        return Pose(self.position + _vec3(offset, "offset"), self.orientation)


def rotation_z(angle: float) -> NDArray[np.float64]:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])


# Camera looking straight up (+z world). Rows are the camera axes in world coordinates.
UPWARD = np.eye(3)
# Facing down, for ceiling fixtures whose emitting side points at the floor.
DOWNWARD = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])
# Road frame (x forward, y left, z up): image x to the right, image y down, optical axis +x.
FORWARD = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
# Rear-facing emitter (normal along -x), e.g. a taillight seen by a follower.
REARWARD = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, 1.0], [-1.0, 0.0, 0.0]])


@dataclass(frozen=True)
class Circle:
    radius: float

    def __post_init__(self) -> None:
        if not self.radius > 0:
            raise ValueError("radius must be positive")

    @property
    def area(self) -> float:
        return math.pi * self.radius**2

    def outline(self) -> NDArray[np.float64]:
        n = _CIRCLE_VERTICES
        # radius scaled so the polygon has the disc's exact area
        r = self.radius * math.sqrt(2 * math.pi / (n * math.sin(2 * math.pi / n)))
        ang = np.arange(n) * (2 * math.pi / n)
        return np.column_stack([r * np.cos(ang), r * np.sin(ang)])


@dataclass(frozen=True)
class Rectangle:
    a: float
    b: float

    def __post_init__(self) -> None:
        if not (self.a > 0 and self.b > 0):
            raise ValueError("rectangle sides must be positive")

    @property
    def area(self) -> float:
        return self.a * self.b

    def outline(self) -> NDArray[np.float64]:
        ha, hb = self.a / 2, self.b / 2
        return np.array([[-ha, -hb], [ha, -hb], [ha, hb], [-ha, hb]])


@dataclass(frozen=True)
class Square:
    a: float

    def __post_init__(self) -> None:
        if not self.a > 0:
            raise ValueError("square side must be positive")

    @property
    def area(self) -> float:
        return self.a**2

    def outline(self) -> NDArray[np.float64]:
        return Rectangle(self.a, self.a).outline()


Shape = Circle | Rectangle | Square


@dataclass(frozen=True)
class Beacon:
    """Planar LED transmitter. The pose's body z-axis is the emitting normal."""

    id: int
    pose: Pose
    shape: Shape
    power: float = 1.0
    half_power_semi_angle: float = math.radians(60.0)
    clock: float = 125.0

    def __post_init__(self) -> None:
        if self.id < 0:
            raise ValueError("beacon id must be non-negative")
        if self.power < 0:
            raise ValueError("power must be non-negative")
        if not 0 < self.half_power_semi_angle < math.pi / 2:
            raise ValueError("half_power_semi_angle must lie in (0, pi/2)")
        if not self.clock > 0:
            raise ValueError("clock must be positive")

    @property
    def area(self) -> float:
        return self.shape.area

    @property
    def position(self) -> NDArray[np.float64]:
        return self.pose.position

    @property
    def normal(self) -> NDArray[np.float64]:
        return self.pose.axis

    def outline_world(self) -> NDArray[np.float64]:
        local = self.shape.outline()
        pts = np.column_stack([local, np.zeros(len(local))])
        return self.pose.to_world(pts)


# ── Projection ───────────────────────────────────────────────────────────────


def project_point(world_point: ArrayLike, camera: Pose, intr: CameraIntrinsics) -> NDArray[np.float64]:
    """Pixel coordinates of a world point; raises BehindCamera for depth <= 0."""
    xc, yc, zc = camera.to_body(_vec3(world_point, "world_point"))
    if zc <= 0:
        raise BehindCamera(f"depth {zc!r} is not positive")
    fx = intr.focal_px
    px, py = intr.principal_point
    return np.array([fx * xc / zc + intr.skew * yc / zc + px, fx * yc / zc + py])


def project_points(points: ArrayLike, camera: Pose, intr: CameraIntrinsics) -> NDArray[np.float64]:
    """Vectorised projection of an (N, 3) array. Raises BehindCamera if any depth <= 0."""
    body = camera.to_body(np.asarray(points, dtype=float).reshape(-1, 3))
    z = body[:, 2]
    if np.any(z <= 0):
        raise BehindCamera("point behind camera")
    fx = intr.focal_px
    px, py = intr.principal_point
    u = fx * body[:, 0] / z + intr.skew * body[:, 1] / z + px
    v = fx * body[:, 1] / z + py
    return np.column_stack([u, v])


def incidence_angle(world_point: ArrayLike, camera: Pose) -> float:
    """Angle between the optical axis and the ray to the point."""
    ray = _vec3(world_point, "world_point") - camera.position
    norm = np.linalg.norm(ray)
    if norm == 0:
        raise ValueError("point coincides with the camera centre")
    cos_t = float(np.dot(ray, camera.axis) / norm)
    return math.acos(max(-1.0, min(1.0, cos_t)))


def in_fov(world_point: ArrayLike, camera: Pose, intr: CameraIntrinsics) -> bool:
    depth = float(np.dot(_vec3(world_point, "world_point") - camera.position, camera.axis))
    if depth <= 0:
        return False
    return incidence_angle(world_point, camera) <= intr.fov_semi_angle + _ANGLE_TOL


def on_sensor(pixel: ArrayLike, intr: CameraIntrinsics) -> bool:
    u, v = np.asarray(pixel, dtype=float)
    w, h = intr.resolution
    return bool(0.0 <= u < w and 0.0 <= v < h)


# ── Rasterization ────────────────────────────────────────────────────────────


def polygon_area(poly: NDArray[np.float64]) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def _clip_to_rect(poly: NDArray[np.float64], width: float, height: float) -> NDArray[np.float64]:
    """Sutherland-Hodgman clip against [0, width] x [0, height]."""
    out = [tuple(p) for p in poly]
    for axis, bound, keep_below in ((0, 0.0, False), (0, width, True), (1, 0.0, False), (1, height, True)):
        if not out:
            break
        inside = (lambda p: p[axis] <= bound) if keep_below else (lambda p: p[axis] >= bound)
        src, out = out, []
        for i, cur in enumerate(src):
            prev = src[i - 1]
            if inside(cur):
                if not inside(prev):
                    out.append(_intersect(prev, cur, axis, bound))
                out.append(cur)
            elif inside(prev):
                out.append(_intersect(prev, cur, axis, bound))
    return np.array(out, dtype=float).reshape(-1, 2)


def _intersect(p, q, axis, bound):
    t = (bound - p[axis]) / (q[axis] - p[axis])
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def count_lattice_points(poly: NDArray[np.float64], width: int, height: int, subsamples: int = 1) -> int:
    """Number of sub-pixel centres inside a polygon, clipped to a width x height sensor.

    Centres sit at ``((k + 0.5) / s, (j + 0.5) / s)``.  Each row is handled with
    the even-odd rule on half-open edge spans, so a centre on a shared edge is
    counted once.
    """
    s = int(subsamples)
    if s < 1:
        raise ValueError("subsamples must be >= 1")
    n_cols, n_rows = width * s, height * s
    v_lo, v_hi = poly[:, 1].min(), poly[:, 1].max()
    j0 = max(0, math.ceil(v_lo * s - 0.5))
    j1 = min(n_rows - 1, math.ceil(v_hi * s - 0.5) - 1)
    if j1 < j0:
        return 0
    rows = (np.arange(j0, j1 + 1) + 0.5) / s

    p0, p1 = poly, np.roll(poly, -1, axis=0)
    y0, y1 = p0[:, 1][None, :], p1[:, 1][None, :]
    r = rows[:, None]
    crosses = ((y0 <= r) & (r < y1)) | ((y1 <= r) & (r < y0))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (r - y0) / (y1 - y0)
    xs = np.where(crosses, p0[:, 0][None, :] + t * (p1[:, 0] - p0[:, 0])[None, :], np.inf)
    xs.sort(axis=1)

    total = 0
    n_cross = crosses.sum(axis=1)
    for k in range(0, int(n_cross.max(initial=0)), 2):
        valid = n_cross > k + 1
        if not np.any(valid):
            break
        left = np.ceil(xs[valid, k] * s - 0.5)
        right = np.ceil(xs[valid, k + 1] * s - 0.5) - 1
        left = np.maximum(left, 0)
        right = np.minimum(right, n_cols - 1)
        total += int(np.clip(right - left + 1, 0, None).sum())
    return total


def silhouette(beacon: Beacon, camera: Pose, intr: CameraIntrinsics) -> NDArray[np.float64] | None:
    """Projected outline in pixel coordinates, or None if any part is behind the camera."""
    try:
        return project_points(beacon.outline_world(), camera, intr)
    except BehindCamera:
        return None


def image_on_sensor(beacon: Beacon, camera: Pose, intr: CameraIntrinsics) -> bool:
    """True when the whole silhouette lands on the sensor, so its area is untruncated."""
    poly = silhouette(beacon, camera, intr)
    if poly is None:
        return False
    w, h = intr.resolution
    return bool(np.all(poly >= 0.0) and np.all(poly[:, 0] <= w) and np.all(poly[:, 1] <= h))


def projected_area(beacon: Beacon, camera: Pose, intr: CameraIntrinsics) -> float:
    """Exact silhouette area in pixels, clipped to the sensor."""
    poly = silhouette(beacon, camera, intr)
    if poly is None:
        return 0.0
    clipped = _clip_to_rect(poly, *intr.resolution)
    return polygon_area(clipped) if len(clipped) >= 3 else 0.0


def rasterize_fixture(
    beacon: Beacon,
    camera: Pose,
    intr: CameraIntrinsics,
    subsamples: int = 1,
    smear: ArrayLike | None = None,
) -> float:
    """Pixel area eta covered by the fixture image.

    With ``subsamples = s`` each pixel is probed on an s x s lattice of centres and
    the count is divided by s^2.  ``smear`` is an image-plane displacement in
    pixels accumulated during the exposure; the silhouette becomes the convex
    hull of its start and end positions.  Images smaller than four pixels
    report their exact (sensor-clipped) area instead of an integer count.
    """
    poly = silhouette(beacon, camera, intr)
    if poly is None:
        return 0.0
    if smear is not None:
        shift = np.asarray(smear, dtype=float).reshape(2)
        if np.any(shift != 0):
            pts = np.vstack([poly, poly + shift])
            poly = pts[ConvexHull(pts).vertices]

    width, height = intr.resolution
    if polygon_area(poly) < FRACTIONAL_LIMIT_PX:
        clipped = _clip_to_rect(poly, width, height)
        return polygon_area(clipped) if len(clipped) >= 3 else 0.0

    s = int(subsamples)
    return count_lattice_points(poly, width, height, s) / (s * s)
