"""Optical link budget: Lambertian emission, DC gain, SNIR, capacity and bit error."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np
from scipy.special import erfc

from .camera import Beacon, CameraIntrinsics, Pose
from .errors import DomainError


class Scheme(str, Enum):
    OOK = "ook"
    S2PSK = "s2psk"


@dataclass(frozen=True)
class ChannelParams:
    kappa: float = 0.54
    iota: float = 1.0
    noise_density: float = 1e-21
    bandwidth: float = 20e3
    optical_filter_gain: float = 1.0
    concentrator_gain: float = 1.0
    responsivity: float = 1.0
    alpha: float = 0.0
    beta: float = 1.0
    spatial_bandwidth: float = 1.0

    def __post_init__(self) -> None:
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if not self.noise_density > 0:
            raise ValueError("noise_density must be positive")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if not self.beta > 0:
            raise ValueError("beta must be positive")


@dataclass(frozen=True)
class LinkGeometry:
    distance: float
    irradiation_angle: float
    incidence_angle: float
    lambertian_order: float

    def __post_init__(self) -> None:
        if not self.distance > 0:
            raise ValueError("distance must be positive")
        for name in ("irradiation_angle", "incidence_angle"):
            val = getattr(self, name)
            if not 0.0 <= val <= math.pi / 2:
                raise ValueError(f"{name} must lie in [0, pi/2]")
        if self.lambertian_order < 0:
            raise ValueError("lambertian_order must be non-negative")


def lambertian_order(half_power_semi_angle: float) -> float:
    if not 0.0 < half_power_semi_angle < math.pi / 2:
        raise DomainError("half-power semi-angle must lie in (0, pi/2)")
    return -math.log(2.0) / math.log(math.cos(half_power_semi_angle))


def radiant_intensity(center_intensity: float, m: float, phi: float) -> float:
    if m < 0:
        raise DomainError("Lambertian order must be non-negative")
    return center_intensity * max(math.cos(phi), 0.0) ** m


def channel_dc_gain(geom: LinkGeometry, sensor_area: float, fov_semi_angle: float, params: ChannelParams) -> float:
    if geom.incidence_angle > fov_semi_angle:
        return 0.0
    m = geom.lambertian_order
    return (
        (m + 1) * sensor_area / (2 * math.pi * geom.distance**2)
        * params.concentrator_gain
        * params.optical_filter_gain
        * math.cos(geom.irradiation_angle) ** m
        * math.cos(geom.incidence_angle)
    )


def received_power(center_intensity: float, m: float, phi: float, psi: float, d: float) -> float:
    if not d > 0:
        raise DomainError("distance must be positive")
    return center_intensity * math.cos(phi) ** m * math.cos(psi) / d**2


def snir(
    params: ChannelParams,
    signal_power: float,
    H: float,
    interferers: Iterable[tuple[float, float]] = (),
) -> float:
    signal = (params.kappa * signal_power * H) ** 2
    if signal == 0:
        return 0.0
    interference = sum((params.kappa * p * h) ** 2 for p, h in interferers)
    return signal / (params.iota**2 * params.noise_density * params.bandwidth + interference)


def pixel_ebn0(signal_amplitude: float, exposure: float, alpha: float, beta: float) -> float:
    if not exposure > 0 or not beta > 0:
        raise DomainError("exposure and beta must be positive")
    s = signal_amplitude
    return s * s * exposure / (alpha * s * exposure + beta)


def channel_capacity(fps: float, spatial_bw: float, snir_value: float) -> float:
    return fps * spatial_bw * math.log2(1.0 + snir_value)


def mimo_superpose(
    transmitters: Sequence[tuple[float, float]], responsivity: float, noise_sample: float = 0.0
) -> float:
    if not transmitters:
        raise ValueError("at least one transmitter is required")
    return responsivity * sum(h * u for u, h in transmitters) + noise_sample


def q_function(x):
    """Gaussian tail probability P(Z > x)."""
    return 0.5 * erfc(np.asarray(x, dtype=float) / math.sqrt(2.0))


def ber_from_snir(snir_value: float, scheme: Scheme | str = Scheme.OOK) -> float:
    """Per-state error probability Q(sqrt(SNIR)).

    For S2-PSK this is the error of a single LED state; the bit error of the
    XOR pair follows from :func:`occ_locate.link.s2psk_ber`.
    """
    Scheme(scheme)
    if snir_value < 0:
        raise DomainError("SNIR must be non-negative")
    return float(q_function(math.sqrt(snir_value)))


# ── Geometry helpers ─────────────────────────────────────────────────────────


def link_geometry(beacon: Beacon, camera: Pose) -> LinkGeometry:
    """Distance and angles between a beacon and a camera.

    Angles beyond 90 degrees (emitter facing away, or target behind the
    camera) are clipped to 90 degrees, which zeroes the cosine terms.
    """
    ray = camera.position - beacon.position
    d = float(np.linalg.norm(ray))
    if d == 0:
        raise DomainError("camera coincides with the beacon")
    phi = math.acos(float(np.clip(np.dot(ray, beacon.normal) / d, -1.0, 1.0)))
    theta = math.acos(float(np.clip(np.dot(-ray, camera.axis) / d, -1.0, 1.0)))
    return LinkGeometry(
        distance=d,
        irradiation_angle=min(phi, math.pi / 2),
        incidence_angle=min(theta, math.pi / 2),
        lambertian_order=lambertian_order(beacon.half_power_semi_angle),
    )


def beacon_gain(beacon: Beacon, camera: Pose, intr: CameraIntrinsics, params: ChannelParams) -> float:
    return channel_dc_gain(link_geometry(beacon, camera), intr.sensor_area, intr.fov_semi_angle, params)


def beacon_snir(
    beacon: Beacon,
    camera: Pose,
    intr: CameraIntrinsics,
    params: ChannelParams,
    interferers: Iterable[tuple[float, float]] = (),
) -> float:
    return snir(params, beacon.power, beacon_gain(beacon, camera, intr, params), interferers)
