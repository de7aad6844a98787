import numpy as np
import pytest

from crossrisk.errors import DimensionMismatch
from crossrisk.ingest import GrayFrame, ObjectClass
from crossrisk.motion_gate import (
    MotionParams,
    detect_motion,
    frame_diff,
    motion_flags_from_frames,
    segment_scenes,
)

from oracles import make_detection


def _frame(value, shape=(40, 60), index=0):
    return GrayFrame(frame_index=index, pixels=np.full(shape, value, np.uint8))


def test_identical_frames_give_zero_diff():
    assert not frame_diff(_frame(77), _frame(77)).any()


def test_constant_offset():
    diff = frame_diff(_frame(10), _frame(25))
    assert (diff == 15).all()


def test_single_changed_pixel():
    a = _frame(0)
    b = _frame(0)
    b.pixels[7, 9] = 200
    diff = frame_diff(a, b)
    assert diff[7, 9] == 200
    assert diff.sum() == 200


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        frame_diff(_frame(0, (10, 10)), _frame(0, (10, 11)))


def test_frame_diff_symmetric():
    rng = np.random.default_rng(3)
    a = GrayFrame(0, rng.integers(0, 256, (30, 30), dtype=np.uint8))
    b = GrayFrame(1, rng.integers(0, 256, (30, 30), dtype=np.uint8))
    assert np.array_equal(frame_diff(a, b), frame_diff(b, a))


def test_no_change_is_no_motion():
    assert not detect_motion(np.zeros((100, 100)), MotionParams())


def test_motion_fraction_thresholds():
    # 1% of pixels at delta 100: count them the dumb way first.
    diff = np.zeros((100, 100))
    diff[:10, :10] = 100.0
    exceeding = sum(1 for v in diff.ravel() if v > 30)
    assert exceeding / diff.size == pytest.approx(0.01)
    assert detect_motion(diff, MotionParams(pixel_threshold=30,
                                            active_fraction=0.005))
    assert not detect_motion(diff, MotionParams(pixel_threshold=30,
                                                active_fraction=0.02))


def _vehicle_run(det_id, frames):
    return [make_detection(f, ObjectClass.VEHICLE, 500, 500, det_id)
            for f in frames]


def _ped_run(det_id, frames):
    return [make_detection(f, ObjectClass.PEDESTRIAN, 600, 600, det_id)
            for f in frames]


def _merge(*runs):
    return sorted((r for run in runs for r in run),
                  key=lambda r: (r.frame_index, r.detection_id))


def test_single_vehicle_with_pedestrian_overlap():
    dets = _merge(_vehicle_run("v0", range(10, 41)),
                  _ped_run("p0", range(20, 31)))
    spans = segment_scenes(dets, params=MotionParams(hangover_frames=2))
    assert len(spans) == 1
    span = spans[0]
    assert (span.frame_start, span.frame_end) == (10, 40)
    assert span.interactive


def test_two_overlapping_vehicles_two_scenes():
    dets = _merge(_vehicle_run("v0", range(0, 30)),
                  _vehicle_run("v1", range(10, 50)))
    spans = segment_scenes(dets)
    assert len(spans) == 2
    by_hint = {s.vehicle_track_hint: s for s in spans}
    assert (by_hint["v0"].frame_start, by_hint["v0"].frame_end) == (0, 29)
    assert (by_hint["v1"].frame_start, by_hint["v1"].frame_end) == (10, 49)


def test_pedestrian_only_yields_no_scene():
    assert segment_scenes(_ped_run("p0", range(5, 20))) == []


def test_gap_longer_than_hangover_splits_scene():
    frames = list(range(0, 10)) + list(range(15, 25))   # 5 missing frames
    spans = segment_scenes(_vehicle_run("v0", frames),
                           params=MotionParams(hangover_frames=2))
    assert [(s.frame_start, s.frame_end) for s in spans] == [(0, 9), (15, 24)]


def test_gap_within_hangover_is_bridged():
    frames = list(range(0, 10)) + list(range(12, 20))   # 2 missing frames
    spans = segment_scenes(_vehicle_run("v0", frames),
                           params=MotionParams(hangover_frames=2))
    assert [(s.frame_start, s.frame_end) for s in spans] == [(0, 19)]


def test_spans_cover_and_never_overlap():
    rng = np.random.default_rng(9)
    for _ in range(30):
        frames = sorted(rng.choice(200, size=60, replace=False))
        dets = _vehicle_run("v0", frames)
        params = MotionParams(hangover_frames=int(rng.integers(0, 5)))
        spans = segment_scenes(dets, params=params)
        for a, b in zip(spans, spans[1:]):
            assert a.frame_end < b.frame_start
        assert all(any(s.contains(f) for s in spans) for f in frames)


def test_pedestrian_flips_only_interactive():
    vehicle = _vehicle_run("v0", range(0, 30))
    before = segment_scenes(vehicle)
    after = segment_scenes(_merge(vehicle, _ped_run("p0", [12])))
    assert len(before) == len(after) == 1
    assert not before[0].interactive and after[0].interactive
    assert (before[0].frame_start, before[0].frame_end) == \
        (after[0].frame_start, after[0].frame_end)


def test_motionless_frames_contribute_no_detections():
    dets = _vehicle_run("v0", range(0, 20))
    flags = {f: f < 10 for f in range(20)}
    spans = segment_scenes(dets, motion_flags=flags,
                           params=MotionParams(hangover_frames=2))
    assert [(s.frame_start, s.frame_end) for s in spans] == [(0, 9)]


def test_motion_flags_from_rendered_frames():
    # A 20 px square sliding across a static background must register
    # motion on every consecutive pair.
    frames = []
    for k in range(5):
        pixels = np.full((80, 120), 30, np.uint8)
        x = 10 + 20 * k
        pixels[30:50, x:x + 20] = 220
        frames.append(GrayFrame(frame_index=k, pixels=pixels))
    flags = motion_flags_from_frames(frames, MotionParams(active_fraction=0.01))
    assert all(flags[k] for k in range(5))
    still = [GrayFrame(frame_index=k, pixels=frames[0].pixels) for k in range(3)]
    assert not any(motion_flags_from_frames(still, MotionParams()).values())
