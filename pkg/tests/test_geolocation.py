import math

import numpy as np
import pytest

from occ_locate import geolocation as geo
from occ_locate.errors import (
    DegenerateBeacons,
    DomainError,
    NoRealSolution,
    NoValidCandidate,
    RangeUnresolvable,
    SingularInnovation,
    SingularNormalEquations,
)
from occ_locate.geolocation import RangeMeasurement

# ── Helpers ──────────────────────────────────────────────────────────────────


def ranges(anchors, point):
    point = np.asarray(point, dtype=float)
    return [RangeMeasurement(i, a, float(np.linalg.norm(np.asarray(a) - point))) for i, a in enumerate(anchors)]


CEILING = [[1.0, 2.0, 5.0], [2.0, 2.0, 5.0], [3.0, 2.5, 5.0]]
GENERAL = [[0.0, 0.0, 3.0], [4.0, 0.0, 2.5], [0.0, 4.0, 2.0], [4.0, 4.0, 3.5]]


# ── Ranging ──────────────────────────────────────────────────────────────────


def test_range_constant_and_distance():
    tau = geo.range_constant(0.016, 3.5e-6, 0.01)
    assert tau == pytest.approx(0.016 * 0.1 / 3.5e-6)
    assert geo.distance_from_pixels(4.0, 0.016, 3.5e-6, 0.01) == pytest.approx(tau / 2)


def test_distance_incidence_correction():
    d0 = geo.distance_from_pixels(100.0, 0.016, 3.5e-6, 0.01)
    d = geo.distance_from_pixels(100.0, 0.016, 3.5e-6, 0.01, incidence=math.pi / 3)
    assert d == pytest.approx(2 * d0)


def test_distance_domain():
    with pytest.raises(DomainError):
        geo.distance_from_pixels(0.0, 0.016, 3.5e-6, 0.01)
    with pytest.raises(RangeUnresolvable):
        geo.distance_from_pixels(0.5, 0.016, 3.5e-6, 0.01)


def test_measurement_consistency():
    d = geo.distance_from_pixels(400.0, 0.016, 3.5e-6, 0.01)
    m = RangeMeasurement(1, [0, 0, 0], d, pixel_count=400.0)
    assert m.consistent_with(0.016, 3.5e-6, 0.01)
    assert not RangeMeasurement(1, [0, 0, 0], d * 1.01, pixel_count=400.0).consistent_with(0.016, 3.5e-6, 0.01)
    with pytest.raises(ValueError):
        RangeMeasurement(1, [0, 0, 0], 0.0)


# ── Lateration ───────────────────────────────────────────────────────────────


def test_trilaterate_mirror_candidates():
    truth = np.array([2.0, 0.4, 1.825])
    est = geo.trilaterate(ranges(CEILING, truth))
    assert len(est.candidates) == 2
    zs = sorted(c[2] for c in est.candidates)
    assert zs[0] == pytest.approx(1.825, abs=1e-9)
    assert zs[1] == pytest.approx(2 * 5.0 - 1.825, abs=1e-9)
    assert est.residual < 1e-9


def test_choose_candidate_below_ceiling():
    truth = np.array([2.0, 0.4, 1.825])
    est = geo.trilaterate(ranges(CEILING, truth))
    assert np.allclose(geo.choose_candidate(est, 5.0, 0.0), truth, atol=1e-9)
    with pytest.raises(NoValidCandidate):
        geo.choose_candidate(est, 1.0, 0.0)


def test_trilaterate_general_position():
    truth = [1.0, 2.0, 0.5]
    est = geo.trilaterate(ranges(GENERAL[:3], truth))
    assert min(np.linalg.norm(c - truth) for c in est.candidates) < 1e-9


def test_collinear_anchors_use_bearing():
    anchors = [[0.0, 0.0, 3.0], [1.0, 0.0, 3.0], [2.5, 0.0, 3.0]]
    truth = np.array([0.7, 1.2, 1.0])
    # lateral axis is +y; bearing from the anchor line towards it
    bearing = math.atan2(truth[1], 3.0 - truth[2])
    est = geo.trilaterate(ranges(anchors, truth), lateral_bearing=bearing, lateral_axis=[0, 1, 0])
    assert min(np.linalg.norm(c - truth) for c in est.candidates) < 1e-6


def test_inconsistent_ranges_have_no_solution():
    bad = [RangeMeasurement(i, a, 0.1) for i, a in enumerate(CEILING)]
    with pytest.raises(NoRealSolution):
        geo.trilaterate(bad)


def test_coincident_anchors_rejected():
    anchors = [[0.0, 0.0, 3.0], [0.0, 0.0, 3.0], [1.0, 0.0, 3.0]]
    with pytest.raises(DegenerateBeacons):
        geo.trilaterate(ranges(anchors, [0.5, 0.5, 1.0]))


def test_trilaterate_arity():
    with pytest.raises(ValueError):
        geo.trilaterate(ranges(GENERAL, [1, 1, 1]))


def test_laterate_coplanar_many_anchors():
    anchors = [[x, y, 3.0] for x in (0.0, 1.2, 2.4) for y in (0.0, 1.2)]
    truth = np.array([1.0, 0.5, 1.2])
    est = geo.laterate(ranges(anchors, truth))
    assert np.allclose(geo.choose_candidate(est, 3.0, 0.0), truth, atol=1e-9)


def test_multilaterate_exact():
    truth = [1.5, 2.5, 1.0]
    est = geo.multilaterate(ranges(GENERAL, truth))
    assert np.allclose(est.position, truth, atol=1e-9)
    assert est.residual < 1e-9


def test_multilaterate_coplanar_is_singular():
    anchors = [[0.0, 0.0, 3.0], [2.0, 0.0, 3.0], [0.0, 2.0, 3.0], [2.0, 2.0, 3.0]]
    with pytest.raises(SingularNormalEquations):
        geo.multilaterate(ranges(anchors, [1.0, 1.0, 1.0]))


def test_multilaterate_arity():
    with pytest.raises(ValueError):
        geo.multilaterate(ranges(GENERAL[:3], [1, 1, 1]))


def test_range_residual():
    anchors = np.array([[0.0, 0.0, 0.0], [3.0, 0.0, 0.0]])
    assert geo.range_residual([0, 4, 0], anchors, np.array([4.0, 5.5])) == pytest.approx(0.5)


# ── Kalman tracking ──────────────────────────────────────────────────────────


def test_transition_matrix():
    J = geo.constant_velocity_transition(0.5)
    assert np.allclose(J @ [1.0, 2.0, 2.0, -2.0], [2.0, 1.0, 2.0, -2.0])


def test_gain_matches_explicit_inverse():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(4, 4))
    P = A @ A.T + np.eye(4)
    V = np.hstack([np.eye(2), np.zeros((2, 2))])
    O = 0.04 * np.eye(2)
    expected = P @ V.T @ np.linalg.inv(V @ P @ V.T + O)
    assert np.allclose(geo.kf_gain(P, V, O), expected, atol=1e-12)


def test_singular_innovation():
    V = np.hstack([np.eye(2), np.zeros((2, 2))])
    with pytest.raises(SingularInnovation):
        geo.kf_gain(np.zeros((4, 4)), V, np.zeros((2, 2)))


def test_update_pulls_toward_measurement_and_shrinks_covariance():
    ks = geo.make_tracker([0.0, 0.0])
    step = geo.kf_step(ks, 1.0, [1.0, 1.0])
    assert 0.9 < step.position[0] <= 1.0
    assert np.trace(step.covariance) < np.trace(geo.kf_predict(ks, 1.0).covariance)
    assert step.last_gain.shape == (4, 2)


def test_predict_only_without_measurement():
    ks = geo.make_tracker([0.0, 0.0], velocity=[1.0, 0.0])
    step = geo.kf_step(ks, 2.0, None)
    assert np.allclose(step.position, [2.0, 0.0])
    with pytest.raises(DomainError):
        geo.kf_predict(ks, 0.0)


def test_tracker_converges_on_constant_velocity():
    rng = np.random.default_rng(0)
    ks = geo.make_tracker([0.0, 0.0], measurement_sigma=0.05, accel_psd=1e-4)
    for k in range(1, 60):
        truth = np.array([0.3 * k, -0.1 * k])
        ks = geo.kf_step(ks, 1.0, truth + rng.normal(0, 0.05, 2))
    assert np.allclose(ks.state[2:], [0.3, -0.1], atol=0.02)
