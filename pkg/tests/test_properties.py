"""Property-based checks of the invariants the modules promise."""

import math
from fractions import Fraction

import numpy as np
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from occ_locate import camera as cam
from occ_locate import geolocation as geo
from occ_locate import indoor, link, vehicle
from occ_locate.camera import CameraIntrinsics, Pose
from occ_locate.errors import DecodeFailure
from occ_locate.link import LedIdPacket
from oracles import rational_sl_scene

# ── Strategies ───────────────────────────────────────────────────────────────

coord = st.floats(-20, 20, allow_nan=False)
u16 = st.integers(0, (1 << 16) - 1)

packets = st.one_of(
    st.builds(LedIdPacket.indoor, u16, u16, u16),
    st.builds(LedIdPacket.street_light, u16, u16, u16, st.integers(0, 255)),
    st.builds(LedIdPacket.vehicle, u16, u16, st.integers(0, 255)),
)


def point(xs):
    return np.array(xs, dtype=float)


# ── Geometry ─────────────────────────────────────────────────────────────────


@given(
    st.fractions(Fraction(1, 10), 200),
    st.fractions(Fraction(1, 50), Fraction(49, 50)),
    st.fractions(Fraction(1, 100), Fraction(99, 100)),
)
def test_flat_offsets_invert_synthesis_exactly(a1, t, u):
    scene = rational_sl_scene(a1, t, u)
    assume(scene is not None)
    a1, a2, gap, c, h = scene
    assert vehicle.sl_flat_offsets(a1, a2, gap) == (c, h)


@given(st.lists(st.tuples(coord, coord, st.floats(2, 8)), min_size=3, max_size=3), st.tuples(coord, coord, st.floats(-1, 1.5)))
@settings(max_examples=200)
def test_trilateration_recovers_truth(anchors, truth):
    A = np.array(anchors)
    area = np.linalg.norm(np.cross(A[1] - A[0], A[2] - A[0]))
    assume(area > 1.0)
    truth = point(truth)
    ms = [geo.RangeMeasurement(i, a, float(np.linalg.norm(a - truth))) for i, a in enumerate(A)]
    est = geo.trilaterate(ms, tol=math.inf)
    assert min(np.linalg.norm(c - truth) for c in est.candidates) < 1e-5


@given(st.tuples(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.5, 30)))
def test_projection_matches_pinhole(xyz):
    intr = CameraIntrinsics()
    u, v = cam.project_point(xyz, Pose(), intr)
    x, y, z = xyz
    assert math.isclose(u, intr.principal_point[0] + intr.focal_px * x / z, rel_tol=1e-12, abs_tol=1e-6)
    assert math.isclose(v, intr.principal_point[1] + intr.focal_px * y / z, rel_tol=1e-12, abs_tol=1e-6)


# ── Link ─────────────────────────────────────────────────────────────────────


@given(st.lists(st.integers(0, 1), max_size=64))
def test_manchester_roundtrip(bits):
    assert link.manchester_decode(link.manchester(bits)) == bits


@given(packets)
def test_packet_roundtrip(packet):
    assert LedIdPacket.from_bits(packet.to_bits()) == packet
    assert link.decode_chips(list(link.encode_ook_manchester(packet).symbols)) == packet


@given(packets, st.data())
def test_crc_catches_every_single_bit_error(packet, data):
    bits = packet.to_bits()
    i = data.draw(st.integers(2, len(bits) - 1))
    bits[i] ^= 1
    try:
        LedIdPacket.from_bits(bits)
    except DecodeFailure:
        return
    raise AssertionError(f"flip at {i} went undetected")


@given(st.floats(0, 1), st.floats(0, 0.5))
def test_s2psk_ber_bounded(delta, p_e):
    ber = link.s2psk_ber(delta, p_e)
    assert 0.0 <= ber <= 0.5 + 1e-12


# ── Tracking and scoring ─────────────────────────────────────────────────────


@given(st.lists(st.tuples(coord, coord), min_size=1, max_size=15), st.floats(0.05, 2.0))
@settings(max_examples=60)
def test_kalman_covariance_stays_symmetric_psd(measurements, dt):
    ks = geo.make_tracker([0.0, 0.0])
    for z in measurements:
        ks = geo.kf_step(ks, dt, z)
        P = ks.covariance
        assert np.allclose(P, P.T)
        assert np.min(np.linalg.eigvalsh(P)) > -1e-9


@given(st.floats(0, 1e6), st.floats(0, 1e6))
def test_possibility_monotone(a, b):
    lo, hi = sorted((a, b))
    assert indoor.localization_possibility(lo) <= indoor.localization_possibility(hi)
    assert 0.0 <= indoor.localization_possibility(hi) <= 1.0


@given(st.floats(-1e4, 1e4), st.floats(-100, 100), st.floats(0.1, 100))
def test_wrap_gap_inside_window(value, lo, span):
    gap, k = vehicle.wrap_gap(value, lo, lo + span)
    assert lo - 1e-9 <= gap <= lo + span + 1e-9
    assert math.isclose(gap + k * span, value, abs_tol=1e-6)
