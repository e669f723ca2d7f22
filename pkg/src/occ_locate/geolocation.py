"""Position mathematics: pixel-area ranging, lateration and Kalman tracking.

Lateration works on the linearised sphere system

    [1, -2x_j, -2y_j, -2z_j] . [x0, x, y, z] = d_j^2 - |P_j|^2,   x0 = x^2 + y^2 + z^2

whose general solution is a particular solution plus a null-space
combination, pinned down by the quadratic constraint on x0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import (
    DegenerateBeacons,
    DomainError,
    NoRealSolution,
    NoValidCandidate,
    RangeUnresolvable,
    SingularInnovation,
    SingularNormalEquations,
)

SOLVER_TOL = 1e-6
COND_LIMIT = 1e12


# ── Ranging ──────────────────────────────────────────────────────────────────


def range_constant(f: float, rho: float, area: float) -> float:
    """tau = f sqrt(A) / rho, the range at which the image covers one pixel."""
    return f * math.sqrt(area) / rho


def distance_from_pixels(pixel_count: float, f: float, rho: float, area: float, incidence: float = 0.0) -> float:
    """Distance to a fixture of known ``area`` whose image covers ``pixel_count`` pixels.

    ``d = tau / sqrt(eta)`` is the depth along the optical axis for a fixture
    parallel to the image plane.  Passing the ray ``incidence`` angle converts
    that depth to the slant range.
    """
    if not pixel_count > 0:
        raise DomainError("pixel count must be positive")
    if pixel_count < 1:
        raise RangeUnresolvable(f"pixel count {pixel_count:.3g} is below one pixel")
    depth = range_constant(f, rho, area) / math.sqrt(pixel_count)
    return depth / math.cos(incidence)


@dataclass(frozen=True, eq=False)
class RangeMeasurement:
    beacon_id: int
    beacon_position: NDArray[np.float64]
    distance: float
    pixel_count: float | None = None
    timestamp: float = 0.0

    def __post_init__(self) -> None:
        pos = np.asarray(self.beacon_position, dtype=float).reshape(3)
        object.__setattr__(self, "beacon_position", pos)
        if not self.distance > 0:
            raise ValueError("distance must be positive")

    def consistent_with(self, f: float, rho: float, area: float, incidence: float = 0.0, tol: float = 1e-9) -> bool:
        if self.pixel_count is None:
            return True
        expected = distance_from_pixels(self.pixel_count, f, rho, area, incidence)
        return abs(expected - self.distance) <= tol * max(1.0, expected)


@dataclass(frozen=True, eq=False)
class PositionEstimate:
    position: NDArray[np.float64]
    candidates: tuple[NDArray[np.float64], ...] = ()
    residual: float = 0.0
    anchors: NDArray[np.float64] = field(default_factory=lambda: np.zeros((0, 3)))


def _unpack(measurements: Sequence[RangeMeasurement]) -> tuple[NDArray, NDArray]:
    anchors = np.array([m.beacon_position for m in measurements], dtype=float)
    dists = np.array([m.distance for m in measurements], dtype=float)
    return anchors, dists


def range_residual(point: ArrayLike, anchors: NDArray, dists: NDArray) -> float:
    """Largest absolute mismatch between measured and implied distances."""
    implied = np.linalg.norm(anchors - np.asarray(point, dtype=float), axis=1)
    return float(np.max(np.abs(implied - dists)))


def _design(anchors: NDArray, dists: NDArray) -> tuple[NDArray, NDArray]:
    A = np.column_stack([np.ones(len(anchors)), -2.0 * anchors])
    b = dists**2 - np.sum(anchors**2, axis=1)
    return A, b


def _solve_quadratic(xp: NDArray, n: NDArray, anchors: NDArray, dists: NDArray, tol: float) -> list[NDArray]:
    """Roots of x0 = |p|^2 along the line x = xp + e n in (x0, x, y, z) space."""
    a0, a = xp[0], xp[1:]
    n0, nv = n[0], n[1:]
    qa = float(nv @ nv)
    qb = float(2 * a @ nv - n0)
    qc = float(a @ a - a0)
    if qa == 0:
        raise NoRealSolution("constraint is degenerate")
    disc = qb * qb - 4 * qa * qc
    if disc >= 0:
        root = math.sqrt(disc)
        # numerically stable pair of roots
        q = -0.5 * (qb + math.copysign(root, qb)) if qb != 0 else 0.5 * root
        e1 = q / qa
        e2 = qc / q if q != 0 else -e1
        roots = sorted({e1, e2})
    else:
        roots = [-qb / (2 * qa)]
    points = [a + e * nv for e in roots]
    if disc < 0 and range_residual(points[0], anchors, dists) > tol:
        raise NoRealSolution("measured distances admit no common intersection")
    return points


def _check_distinct(anchors: NDArray) -> None:
    for i in range(len(anchors)):
        for j in range(i + 1, len(anchors)):
            if np.linalg.norm(anchors[i] - anchors[j]) < 1e-12:
                raise DegenerateBeacons(f"beacons {i} and {j} coincide")


def lateral_axis_for(anchors: NDArray, up: ArrayLike = (0.0, 0.0, 1.0)) -> NDArray[np.float64]:
    """Horizontal unit vector perpendicular to the line through collinear anchors."""
    u = anchors[-1] - anchors[0]
    u = u / np.linalg.norm(u)
    e = np.cross(np.asarray(up, dtype=float), u)
    if np.linalg.norm(e) < 1e-12:
        e = np.cross(np.array([1.0, 0.0, 0.0]), u)
    return e / np.linalg.norm(e)


def trilaterate(
    measurements: Sequence[RangeMeasurement],
    tol: float = SOLVER_TOL,
    lateral_bearing: float = 0.0,
    lateral_axis: ArrayLike | None = None,
) -> PositionEstimate:
    """Intersect three range spheres.

    Non-collinear anchors leave a one-dimensional null space and up to two
    mirror candidates across the anchor plane.  Collinear anchors leave a
    circle around the anchor line; the camera's bearing from that line,
    ``lateral_bearing``, measured towards ``lateral_axis`` (default: the
    horizontal perpendicular) selects two points on it.  ``tol`` bounds how far
    an inconsistent set may miss; pass ``math.inf`` for noisy inputs.
    """
    if len(measurements) != 3:
        raise ValueError("trilateration needs exactly three measurements")
    return laterate(measurements, tol, lateral_bearing, lateral_axis)


def laterate(
    measurements: Sequence[RangeMeasurement],
    tol: float = SOLVER_TOL,
    lateral_bearing: float = 0.0,
    lateral_axis: ArrayLike | None = None,
) -> PositionEstimate:
    """Null-space lateration over three or more ranges.

    With more than three anchors the particular solution is the least-squares
    one, so coplanar anchors (all on one ceiling) still yield the mirror pair.
    """
    if len(measurements) < 3:
        raise ValueError("lateration needs at least three measurements")
    anchors, dists = _unpack(measurements)
    _check_distinct(anchors)
    origin = anchors.mean(axis=0)
    local = anchors - origin
    A, b = _design(local, dists)

    _, sv, vt = np.linalg.svd(A)
    rank = int(np.sum(sv > sv[0] * 1e-10))
    xp = np.linalg.pinv(A, rcond=1e-10) @ b
    null = vt[rank:]

    if rank == 4:
        points = [xp[1:]]
    elif rank == 3:
        points = _solve_quadratic(xp, null[0], local, dists, tol)
    elif rank == 2:
        e_s = lateral_axis_for(anchors) if lateral_axis is None else np.asarray(lateral_axis, dtype=float)
        e_s = e_s / np.linalg.norm(e_s)
        W = null.T  # columns are null vectors in (x0, x, y, z)
        g = W[1:].T @ e_s
        if np.linalg.norm(g) < 1e-12:
            raise DegenerateBeacons("lateral axis is parallel to the anchor line")
        # radius of the circle of solutions around the anchor line
        u = local[-1] - local[0]
        u = u / np.linalg.norm(u)
        foot = _circle_centre(local, dists, u)
        radius2 = float(dists[0] ** 2 - np.sum((foot - local[0]) ** 2))
        lateral = math.sqrt(max(radius2, 0.0)) * math.sin(lateral_bearing)
        # shift along the null space until (p - anchor) . e_s equals the lateral offset
        offset = float((xp[1:] - local[0]) @ e_s)
        eps0 = g * (lateral - offset) / float(g @ g)
        direction = W @ np.array([-g[1], g[0]])
        points = _solve_quadratic(xp + W @ eps0, direction, local, dists, tol)
    else:
        raise DegenerateBeacons("anchor geometry has insufficient rank")

    cands = tuple(p + origin for p in points)
    res = max(range_residual(c, anchors, dists) for c in cands)
    return PositionEstimate(cands[0], cands, res, anchors)


def _circle_centre(local: NDArray, dists: NDArray, u: NDArray) -> NDArray:
    """Foot of the solution circle on the anchor line (least squares over anchors)."""
    s = local @ u
    # d_j^2 = r^2 + (s_j - t)^2  ->  linear in (r^2 + t^2, t)
    M = np.column_stack([np.ones_like(s), -2 * s])
    rhs = dists**2 - s**2
    sol, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    return local[0] + (sol[1] - s[0]) * u


def multilaterate(measurements: Sequence[RangeMeasurement], cond_limit: float = COND_LIMIT) -> PositionEstimate:
    """Linear least squares over four or more ranges."""
    if len(measurements) < 4:
        raise ValueError("multilateration needs at least four measurements")
    anchors, dists = _unpack(measurements)
    origin = anchors.mean(axis=0)
    Z, q = _design(anchors - origin, dists)
    ZtZ = Z.T @ Z
    if not np.isfinite(np.linalg.cond(ZtZ)) or np.linalg.cond(ZtZ) > cond_limit:
        raise SingularNormalEquations("normal matrix is ill-conditioned")
    xhat = np.linalg.solve(ZtZ, Z.T @ q)
    pos = xhat[1:] + origin
    implied = np.linalg.norm(anchors - pos, axis=1)
    residual = float(np.sqrt(np.mean((implied - dists) ** 2)))
    return PositionEstimate(pos, (pos,), residual, anchors)


def choose_candidate(estimate: PositionEstimate, ceiling_z: float, floor_z: float, slack: float = 1e-9) -> NDArray[np.float64]:
    """Keep candidates between floor and ceiling; prefer the one nearest the anchors."""
    if not estimate.candidates:
        raise NoValidCandidate("estimate carries no candidates")
    lo, hi = min(ceiling_z, floor_z) - slack, max(ceiling_z, floor_z) + slack
    valid = [c for c in estimate.candidates if lo <= c[2] <= hi]
    if not valid:
        raise NoValidCandidate("all candidates fall outside the floor/ceiling band")
    if len(valid) == 1:
        return valid[0]
    anchors = estimate.anchors

    def key(c):
        total = float(np.sum(np.linalg.norm(anchors - c, axis=1))) if len(anchors) else 0.0
        return (round(total, 9), c[2])

    return min(valid, key=key)


# ── Kalman tracking ──────────────────────────────────────────────────────────


def constant_velocity_transition(dt: float, dim: int = 2) -> NDArray[np.float64]:
    J = np.eye(2 * dim)
    J[:dim, dim:] = dt * np.eye(dim)
    return J


def constant_velocity_noise(dt: float, accel_psd: float, dim: int = 2) -> NDArray[np.float64]:
    return accel_psd * np.diag([dt**3 / 3] * dim + [dt] * dim)


@dataclass(frozen=True, eq=False)
class KalmanState:
    """Filter state ``(x, y, vx, vy)`` with its covariance and model matrices."""

    state: NDArray[np.float64]
    covariance: NDArray[np.float64]
    transition: NDArray[np.float64]
    process_noise: NDArray[np.float64]
    measurement_matrix: NDArray[np.float64]
    measurement_noise: NDArray[np.float64]
    last_gain: NDArray[np.float64] | None = None
    accel_psd: float = 0.01

    def __post_init__(self) -> None:
        for name in ("state", "covariance", "transition", "process_noise", "measurement_matrix", "measurement_noise"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        n = self.state.shape[0]
        for name in ("covariance", "transition", "process_noise"):
            object.__setattr__(self, name, getattr(self, name).reshape(n, n))
        H = np.atleast_2d(self.measurement_matrix)
        object.__setattr__(self, "measurement_matrix", H)
        object.__setattr__(self, "measurement_noise", self.measurement_noise.reshape(H.shape[0], H.shape[0]))

    @property
    def position(self) -> NDArray[np.float64]:
        return self.state[: self.measurement_matrix.shape[0]]


def make_tracker(
    position: ArrayLike,
    velocity: ArrayLike = (0.0, 0.0),
    position_sigma: float = 10.0,
    velocity_sigma: float = 2.0,
    accel_psd: float = 0.01,
    measurement_sigma: float = 0.1,
) -> KalmanState:
    pos = np.asarray(position, dtype=float).reshape(2)
    vel = np.asarray(velocity, dtype=float).reshape(2)
    H = np.hstack([np.eye(2), np.zeros((2, 2))])
    return KalmanState(
        state=np.concatenate([pos, vel]),
        covariance=np.diag([position_sigma**2] * 2 + [velocity_sigma**2] * 2),
        transition=np.eye(4),
        process_noise=np.zeros((4, 4)),
        measurement_matrix=H,
        measurement_noise=measurement_sigma**2 * np.eye(2),
        accel_psd=accel_psd,
    )


def kf_predict(ks: KalmanState, dt: float) -> KalmanState:
    if not dt > 0:
        raise DomainError("dt must be positive")
    dim = ks.state.shape[0] // 2
    J = constant_velocity_transition(dt, dim)
    Q = constant_velocity_noise(dt, ks.accel_psd, dim)
    P = J @ ks.covariance @ J.T + Q
    return replace(ks, state=J @ ks.state, covariance=0.5 * (P + P.T), transition=J, process_noise=Q)


def kf_gain(P_pred: ArrayLike, measurement_matrix: ArrayLike, O_error: ArrayLike) -> NDArray[np.float64]:
    P = np.atleast_2d(np.asarray(P_pred, dtype=float))
    V = np.atleast_2d(np.asarray(measurement_matrix, dtype=float))
    O = np.atleast_2d(np.asarray(O_error, dtype=float))
    S = V @ P @ V.T + O
    if not np.all(np.isfinite(S)) or np.linalg.cond(S) > COND_LIMIT:
        raise SingularInnovation("innovation covariance is singular")
    # K = P V^T S^-1, solved rather than inverted
    return np.linalg.solve(S.T, (P @ V.T).T).T


def kf_update(predicted: KalmanState, K_g: ArrayLike, Y_k: ArrayLike) -> KalmanState:
    K = np.atleast_2d(np.asarray(K_g, dtype=float))
    V = predicted.measurement_matrix
    y = np.atleast_1d(np.asarray(Y_k, dtype=float))
    x = predicted.state + K @ (y - V @ predicted.state)
    P = (np.eye(len(x)) - K @ V) @ predicted.covariance
    return replace(predicted, state=x, covariance=0.5 * (P + P.T), last_gain=K)


def kf_step(ks: KalmanState, dt: float, measurement: ArrayLike | None) -> KalmanState:
    """Predict, then update when a measurement is available."""
    pred = kf_predict(ks, dt)
    if measurement is None:
        return pred
    K = kf_gain(pred.covariance, pred.measurement_matrix, pred.measurement_noise)
    return kf_update(pred, K, measurement)
