import math

import numpy as np
import pytest

from crossrisk import synth
from crossrisk.geometry import Calibration
from crossrisk.ingest import ObjectClass
from crossrisk.tracker import (
    TrackerParams,
    Trajectory,
    assign,
    kalman_predict,
    kalman_update,
    new_track,
    summarize_validations,
    track_scene,
    validate_trajectories,
)

from oracles import make_detection, make_traj

PARAMS = TrackerParams()
FLAT = Calibration(pixels_per_meter=1.0, seconds_per_step=1.0,
                   homography=np.eye(3))


def test_default_gates_match_validated_thresholds():
    assert PARAMS.gate_threshold_vehicle == 60.0
    assert PARAMS.gate_threshold_pedestrian == 20.0


def test_predict_constant_velocity():
    state = new_track("t", ObjectClass.VEHICLE, 0, (0.0, 0.0), PARAMS)
    state.state_mean = np.array([0.0, 0.0, 1.0, 0.0])
    out = kalman_predict(state, process_noise=0.0)
    assert np.allclose(out.state_mean, [1.0, 0.0, 1.0, 0.0])


def test_predict_zero_velocity_keeps_position():
    state = new_track("t", ObjectClass.VEHICLE, 0, (7.0, 9.0), PARAMS)
    out = kalman_predict(state, process_noise=0.0)
    assert out.position == pytest.approx((7.0, 9.0))


def test_predict_grows_covariance_trace():
    state = new_track("t", ObjectClass.VEHICLE, 0, (0.0, 0.0), PARAMS)
    out = kalman_predict(state, process_noise=1.0)
    assert np.trace(out.state_covariance) > np.trace(state.state_covariance)


def test_update_zero_innovation_keeps_mean():
    state = new_track("t", ObjectClass.VEHICLE, 0, (5.0, 5.0), PARAMS)
    state = kalman_predict(state, 1.0)
    before = state.state_mean.copy()
    out = kalman_update(state, tuple(before[:2]), measurement_noise=2.0)
    assert np.allclose(out.state_mean, before)
    assert np.trace(out.state_covariance) <= np.trace(state.state_covariance) + 1e-12


def test_update_limits():
    state = new_track("t", ObjectClass.VEHICLE, 0, (0.0, 0.0), PARAMS)
    state = kalman_predict(state, 1.0)
    huge = kalman_update(state, (50.0, 50.0), measurement_noise=1e15)
    assert np.allclose(huge.state_mean, state.state_mean, atol=1e-6)
    tiny = kalman_update(state, (50.0, 50.0), measurement_noise=1e-12)
    assert tiny.position == pytest.approx((50.0, 50.0), abs=1e-6)


def test_velocity_converges_on_clean_input():
    state = new_track("t", ObjectClass.VEHICLE, 0, (0.0, 0.0), PARAMS)
    for k in range(1, 21):
        state = kalman_predict(state, PARAMS.process_noise)
        state = kalman_update(state, (3.0 * k, 2.0 * k), PARAMS.measurement_noise)
    assert state.velocity == pytest.approx((3.0, 2.0), abs=1e-6)


def _track_with_velocity(tid, pos, vel, cls=ObjectClass.VEHICLE):
    state = new_track(tid, cls, 0, pos, PARAMS)
    state.state_mean = np.array([pos[0], pos[1], vel[0], vel[1]])
    state.points = [(0, pos)]
    return state


def test_assign_prefers_prediction_over_last_position():
    # Two crossing tracks. By last position, A would grab B's detection;
    # the predictions sort it out with no swap.
    a = _track_with_velocity("a", (20.0, 0.0), (10.0, 0.0))
    b = _track_with_velocity("b", (28.0, 4.0), (-10.0, 0.0))
    tracks = {"a": a, "b": b}
    predicted = {tid: kalman_predict(t, 0.0) for tid, t in tracks.items()}
    det_c = make_detection(1, ObjectClass.VEHICLE, 30.0, 0.0, "c")
    det_d = make_detection(1, ObjectClass.VEHICLE, 18.0, 4.0, "d")
    assert math.dist(a.points[-1][1], det_d.contact_point_px) < \
        math.dist(a.points[-1][1], det_c.contact_point_px)

    result = assign(tracks, predicted, [det_c, det_d], PARAMS)
    assert result.matches["a"].detection_id == "c"
    assert result.matches["b"].detection_id == "d"

    nn = TrackerParams(use_prediction=False)
    swapped = assign(tracks, predicted, [det_c, det_d], nn)
    assert swapped.matches["a"].detection_id == "d"


def test_assign_single_in_gate_detection():
    a = _track_with_velocity("a", (100.0, 100.0), (0.0, 0.0))
    predicted = {"a": kalman_predict(a, 0.0)}
    det = make_detection(1, ObjectClass.VEHICLE, 110.0, 100.0, "d0")
    result = assign({"a": a}, predicted, [det], PARAMS)
    assert result.matches["a"].detection_id == "d0"
    assert not result.unmatched_detections


def test_assign_beyond_gate_spawns_new_track():
    a = _track_with_velocity("a", (100.0, 100.0), (0.0, 0.0))
    predicted = {"a": kalman_predict(a, 0.0)}
    det = make_detection(1, ObjectClass.VEHICLE,
                         100.0 + PARAMS.gate_threshold_vehicle + 1.0, 100.0, "d0")
    result = assign({"a": a}, predicted, [det], PARAMS)
    assert not result.matches
    assert result.unmatched_detections == [det]
    assert result.unmatched_tracks == ["a"]


def test_assign_classes_never_mix():
    a = _track_with_velocity("a", (100.0, 100.0), (0.0, 0.0),
                             cls=ObjectClass.PEDESTRIAN)
    predicted = {"a": kalman_predict(a, 0.0)}
    det = make_detection(1, ObjectClass.VEHICLE, 101.0, 100.0, "d0")
    result = assign({"a": a}, predicted, [det], PARAMS)
    assert not result.matches


def test_assignment_invariant_under_detection_permutation():
    rng = np.random.default_rng(4)
    for _ in range(25):
        tracks = {}
        predicted = {}
        for k in range(4):
            t = _track_with_velocity(f"t{k}", tuple(rng.uniform(0, 500, 2)),
                                     tuple(rng.uniform(-5, 5, 2)))
            tracks[t.object_id] = t
            predicted[t.object_id] = kalman_predict(t, 0.0)
        dets = [make_detection(1, ObjectClass.VEHICLE, *rng.uniform(0, 500, 2),
                               det_id=f"d{k}") for k in range(5)]
        base = assign(tracks, predicted, dets, PARAMS)
        perm = list(dets)
        rng.shuffle(perm)
        again = assign(tracks, predicted, perm, PARAMS)
        assert {t: d.detection_id for t, d in base.matches.items()} == \
            {t: d.detection_id for t, d in again.matches.items()}
        # No detection is consumed twice.
        used = [d.detection_id for d in base.matches.values()]
        assert len(used) == len(set(used))


def test_track_scene_single_object():
    dets = [make_detection(f, ObjectClass.VEHICLE, 100.0 + 10 * f, 200.0, "v0")
            for f in range(10)]
    trajs = track_scene(dets, PARAMS, FLAT, fps=1.0, frame_stride=1)
    assert len(trajs) == 1
    assert len(trajs[0]) == 10
    assert trajs[0].object_class is ObjectClass.VEHICLE


def test_track_scene_parallel_objects_no_swap():
    dets = []
    for f in range(12):
        dets.append(make_detection(f, ObjectClass.VEHICLE, 100.0 + 10 * f, 100.0, "v0"))
        dets.append(make_detection(f, ObjectClass.VEHICLE, 100.0 + 10 * f, 300.0, "v1"))
    trajs = track_scene(dets, PARAMS, FLAT, fps=1.0, frame_stride=1)
    assert len(trajs) == 2
    for traj in trajs:
        assert len({p.detection_id for p in traj.points}) == 1
        assert len(traj) == 12


def test_track_scene_coasts_through_short_gap():
    frames = [f for f in range(12) if f not in (5, 6)]
    dets = [make_detection(f, ObjectClass.VEHICLE, 100.0 + 10 * f, 200.0, "v0")
            for f in frames]
    trajs = track_scene(dets, PARAMS, FLAT, fps=1.0, frame_stride=1)
    assert len(trajs) == 1
    assert len(trajs[0]) == len(frames)


def test_track_scene_splits_after_max_coast():
    frames = [f for f in range(16) if not 5 <= f <= 9]    # 5 missing > 3
    dets = [make_detection(f, ObjectClass.VEHICLE, 100.0 + 10 * f, 200.0, "v0")
            for f in frames]
    trajs = track_scene(dets, PARAMS, FLAT, fps=1.0, frame_stride=1)
    assert len(trajs) == 2


def test_crossing_scene_prediction_beats_nearest_neighbor():
    # One randomized noisy crossing where memoryless nearest-neighbor
    # provably swaps identities and prediction does not.
    spec = synth.random_crossing_spec(0, seed=42, noise_sigma=2.0)
    records, truth = synth.generate(spec)
    calib = spec.config.build_calibration()
    stride = spec.config.frame_skip

    kalman = track_scene(records, PARAMS, calib, fps=spec.config.fps,
                         frame_stride=stride)
    v_k = validate_trajectories(kalman, truth=truth.provenance, params=PARAMS,
                                frame_stride=stride)
    nn_params = TrackerParams(use_prediction=False)
    nn = track_scene(records, nn_params, calib, fps=spec.config.fps,
                     frame_stride=stride)
    v_n = validate_trajectories(nn, truth=truth.provenance, params=nn_params,
                                frame_stride=stride)
    assert v_k.crossing + v_k.directivity == 0
    assert v_n.crossing + v_n.directivity > 0


def test_validate_clean_scene():
    truth = {(f, "a"): "a" for f in range(10)}
    traj = make_traj("t0", ObjectClass.VEHICLE, range(10),
                     [(f, 0) for f in range(10)], det_ids=["a"] * 10)
    v = validate_trajectories([traj], truth=truth)
    assert v.clean
    report = summarize_validations([v])
    assert report.accuracy == 1.0


def test_validate_identity_swap_is_one_crossing():
    truth = {}
    for f in range(10):
        truth[(f, "a")] = "a"
        truth[(f, "b")] = "b"
    # Both tracks change agents halfway: a mutual exchange.
    t1 = make_traj("t0", ObjectClass.VEHICLE, range(10),
                   [(f, 0) for f in range(10)],
                   det_ids=["a"] * 5 + ["b"] * 5)
    t2 = make_traj("t1", ObjectClass.VEHICLE, range(10),
                   [(f, 1) for f in range(10)],
                   det_ids=["b"] * 5 + ["a"] * 5)
    v = validate_trajectories([t1, t2], truth=truth)
    assert v.crossing == 1
    assert v.directivity == 2      # both tracks contain two true objects


def test_validate_split_with_gap_is_one_connectivity():
    truth = {(f, "a"): "a" for f in range(20)}
    t1 = make_traj("t0", ObjectClass.VEHICLE, range(0, 5),
                   [(f, 0) for f in range(0, 5)], det_ids=["a"] * 5)
    t2 = make_traj("t1", ObjectClass.VEHICLE, range(10, 15),
                   [(f, 0) for f in range(10, 15)], det_ids=["a"] * 5)
    v = validate_trajectories([t1, t2], truth=truth, frame_stride=1)
    assert v.connectivity == 1
    assert v.crossing == 0


def test_validate_heuristics_without_truth():
    # A sharp about-face mid-track trips the heading-reversal flag.
    world = [(f, 0.0) for f in range(5)] + [(4 - f, 0.05 * f) for f in range(1, 5)]
    zigzag = make_traj("t0", ObjectClass.VEHICLE, range(9), world)
    v = validate_trajectories([zigzag], truth=None)
    assert v.directivity >= 1

    straight = make_traj("t1", ObjectClass.VEHICLE, range(9),
                         [(f, 0.0) for f in range(9)])
    assert validate_trajectories([straight], truth=None).clean


def test_optimal_assignment_mode():
    params = TrackerParams(assignment="optimal")
    a = _track_with_velocity("a", (0.0, 0.0), (0.0, 0.0))
    b = _track_with_velocity("b", (30.0, 0.0), (0.0, 0.0))
    predicted = {t.object_id: kalman_predict(t, 0.0) for t in (a, b)}
    # Greedy would give d0 to a (distance 12 < 18); the optimal split
    # (a->d1, b->d0) has lower total cost.
    d0 = make_detection(1, ObjectClass.VEHICLE, 12.0, 0.0, "d0")
    d1 = make_detection(1, ObjectClass.VEHICLE, 1.0, 0.0, "d1")
    result = assign({"a": a, "b": b}, predicted, [d0, d1], params)
    assert result.matches["a"].detection_id == "d1"
    assert result.matches["b"].detection_id == "d0"
