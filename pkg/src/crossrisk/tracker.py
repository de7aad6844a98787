"""Kalman-filter object tracking, indexing, and trajectory validation.

Each object keeps a constant-velocity filter over its pixel contact point.
Per frame the tracker predicts every live track one step ahead, then pairs
predictions with same-class detections greedily by smallest distance,
discarding pairs beyond a per-class pixel gate. Unmatched detections spawn
tracks; unmatched tracks coast a few steps before closing.

Association against the prediction (rather than the last seen position) is
what keeps identities apart when paths cross: the prediction carries the
object's momentum through the crossing. A nearest-neighbor mode without
prediction is kept for comparison, as is an optimal (Hungarian) assignment
mode behind a flag.

Validation counts three kinds of trajectory defects against ground truth:
breaks in one object's coverage (connectivity), mutual identity exchanges
between two tracks (crossing), and tracks containing points from several
true objects (directivity).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Calibration
from .ingest import DetectionRecord, ObjectClass

# Constant-velocity transition over one sampled step and the position-only
# measurement matrix.
_F = np.array([[1.0, 0.0, 1.0, 0.0],
               [0.0, 1.0, 0.0, 1.0],
               [0.0, 0.0, 1.0, 0.0],
               [0.0, 0.0, 0.0, 1.0]])
_H = np.array([[1.0, 0.0, 0.0, 0.0],
               [0.0, 1.0, 0.0, 0.0]])
_I4 = np.eye(4)

# Fresh tracks know their position to measurement accuracy but nothing
# about velocity; a huge velocity variance lets the first updates lock it.
_INITIAL_VELOCITY_VAR = 1e6


@dataclass(frozen=True)
class TrackerParams:
    gate_threshold_vehicle: float = 60.0
    gate_threshold_pedestrian: float = 20.0
    process_noise: float = 1.0
    measurement_noise: float = 2.0
    max_coast_frames: int = 3
    use_prediction: bool = True      # False: associate on last seen position
    assignment: str = "greedy"       # or "optimal" (Hungarian)

    def __post_init__(self):
        if self.gate_threshold_vehicle <= 0 or self.gate_threshold_pedestrian <= 0:
            raise ValueError("gate thresholds must be > 0")
        if self.assignment not in ("greedy", "optimal"):
            raise ValueError(f"unknown assignment mode {self.assignment!r}")

    def gate_for(self, cls: ObjectClass) -> float:
        return (self.gate_threshold_vehicle if cls is ObjectClass.VEHICLE
                else self.gate_threshold_pedestrian)


@dataclass
class TrackState:
    """One live track: filter state plus the points it has consumed."""

    object_id: str
    object_class: ObjectClass
    state_mean: np.ndarray            # (x, y, vx, vy), pixels and px/step
    state_covariance: np.ndarray      # 4x4
    last_frame: int
    points: list[tuple[int, tuple[float, float]]] = field(default_factory=list)
    misses: int = 0

    @property
    def position(self) -> tuple[float, float]:
        return (float(self.state_mean[0]), float(self.state_mean[1]))

    @property
    def velocity(self) -> tuple[float, float]:
        return (float(self.state_mean[2]), float(self.state_mean[3]))


def new_track(object_id: str, cls: ObjectClass, frame: int,
              point: tuple[float, float], params: TrackerParams) -> TrackState:
    mean = np.array([point[0], point[1], 0.0, 0.0])
    cov = np.diag([params.measurement_noise, params.measurement_noise,
                   _INITIAL_VELOCITY_VAR, _INITIAL_VELOCITY_VAR])
    return TrackState(object_id=object_id, object_class=cls, state_mean=mean,
                      state_covariance=cov, last_frame=frame,
                      points=[(frame, (float(point[0]), float(point[1])))])


def kalman_predict(state: TrackState, process_noise: float = 1.0) -> TrackState:
    """Propagate one step with the constant-velocity model."""
    mean = _F @ state.state_mean
    cov = _F @ state.state_covariance @ _F.T + process_noise * _I4
    return TrackState(object_id=state.object_id, object_class=state.object_class,
                      state_mean=mean, state_covariance=cov,
                      last_frame=state.last_frame, points=state.points,
                      misses=state.misses)


def kalman_update(state: TrackState, measurement: tuple[float, float],
                  measurement_noise: float = 2.0) -> TrackState:
    """Fold a position measurement into a predicted state (Joseph form)."""
    z = np.asarray(measurement, dtype=float)
    cov = state.state_covariance
    innovation = z - _H @ state.state_mean
    s = _H @ cov @ _H.T + measurement_noise * np.eye(2)
    # 2x2 inverse, hand-rolled: this runs once per detection.
    det = s[0, 0] * s[1, 1] - s[0, 1] * s[1, 0]
    s_inv = np.array([[s[1, 1], -s[0, 1]], [-s[1, 0], s[0, 0]]]) / det
    gain = cov @ _H.T @ s_inv
    mean = state.state_mean + gain @ innovation
    ikh = _I4 - gain @ _H
    cov = ikh @ cov @ ikh.T + measurement_noise * (gain @ gain.T)
    cov = (cov + cov.T) / 2.0
    return TrackState(object_id=state.object_id, object_class=state.object_class,
                      state_mean=mean, state_covariance=cov,
                      last_frame=state.last_frame, points=state.points,
                      misses=state.misses)


@dataclass
class Assignment:
    """Result of matching one frame's detections to live tracks."""

    matches: dict[str, DetectionRecord]     # track id -> detection
    unmatched_detections: list[DetectionRecord]
    unmatched_tracks: list[str]


def _reference_point(track: TrackState, predicted: TrackState,
                     params: TrackerParams) -> tuple[float, float]:
    if params.use_prediction:
        return predicted.position
    return track.points[-1][1] if track.points else track.position


def assign(tracks: dict[str, TrackState], predicted: dict[str, TrackState],
           detections: list[DetectionRecord], params: TrackerParams) -> Assignment:
    """Match same-class detections to tracks by smallest gated distance.

    Greedy mode sorts every in-gate (track, detection) pair by distance and
    consumes them first-come; ties break on detection id then track id so
    the result is independent of input order. Optimal mode solves the
    assignment problem per class instead.
    """
    candidates = []
    for tid, track in tracks.items():
        ref = _reference_point(track, predicted[tid], params)
        gate = params.gate_for(track.object_class)
        for det in detections:
            if det.object_class is not track.object_class:
                continue
            d = math.dist(ref, det.contact_point_px)
            if d <= gate:
                candidates.append((d, det.detection_id, tid, det))

    matches: dict[str, DetectionRecord] = {}
    used_dets: set[str] = set()
    if params.assignment == "optimal" and candidates:
        matches = _optimal_matches(tracks, predicted, detections, params)
        used_dets = {d.detection_id for d in matches.values()}
    else:
        for d, det_id, tid, det in sorted(
                candidates, key=lambda c: (c[0], c[1], c[2])):
            if tid in matches or det_id in used_dets:
                continue
            matches[tid] = det
            used_dets.add(det_id)

    unmatched_dets = [d for d in detections if d.detection_id not in used_dets]
    unmatched_tracks = [tid for tid in tracks if tid not in matches]
    return Assignment(matches, unmatched_dets, unmatched_tracks)


def _optimal_matches(tracks, predicted, detections, params):
    from scipy.optimize import linear_sum_assignment

    matches: dict[str, DetectionRecord] = {}
    for cls in ObjectClass:
        tids = sorted(t for t, tr in tracks.items() if tr.object_class is cls)
        dets = sorted((d for d in detections if d.object_class is cls),
                      key=lambda d: d.detection_id)
        if not tids or not dets:
            continue
        gate = params.gate_for(cls)
        big = 1e9
        cost = np.full((len(tids), len(dets)), big)
        for i, tid in enumerate(tids):
            ref = _reference_point(tracks[tid], predicted[tid], params)
            for j, det in enumerate(dets):
                d = math.dist(ref, det.contact_point_px)
                if d <= gate:
                    cost[i, j] = d
        rows, cols = linear_sum_assignment(cost)
        for i, j in zip(rows, cols):
            if cost[i, j] < big:
                matches[tids[i]] = dets[j]
    return matches


@dataclass(frozen=True)
class TrackPoint:
    """One trajectory sample: raw and smoothed pixels plus world meters."""

    frame: int
    t: float
    raw_px: tuple[float, float]
    smooth_px: tuple[float, float]
    world: tuple[float, float]
    detection_id: str


@dataclass
class Trajectory:
    """An indexed object's ordered track through one scene."""

    object_id: str
    object_class: ObjectClass
    points: list[TrackPoint]

    def __len__(self):
        return len(self.points)

    @property
    def frames(self) -> list[int]:
        return [p.frame for p in self.points]

    def world_array(self) -> np.ndarray:
        return np.array([p.world for p in self.points])

    def times(self) -> np.ndarray:
        return np.array([p.t for p in self.points])


def track_scene(detections, params: TrackerParams, calib: Calibration,
                fps: float, frame_stride: int = 1) -> list[Trajectory]:
    """Run the full predict/assign/update loop over one scene.

    detections: frame-ordered DetectionRecord sequence (one scene's worth).
    Frames are walked at the sampling stride from the first to the last
    detected frame; a stride with no detections coasts every live track.
    Returns one Trajectory per object identity, world-projected, with both
    the raw contact points and the Kalman-smoothed ones.
    """
    records = list(detections)
    if not records:
        return []
    by_frame: dict[int, list[DetectionRecord]] = {}
    for rec in records:
        by_frame.setdefault(rec.frame_index, []).append(rec)
    first, last = records[0].frame_index, records[-1].frame_index

    live: dict[str, TrackState] = {}
    finished: list[TrackState] = []
    smoothed: dict[str, list[tuple[float, float]]] = {}
    consumed: dict[str, list[str]] = {}
    counter = 0

    for frame in range(first, last + 1, frame_stride):
        dets = sorted(by_frame.get(frame, ()), key=lambda d: d.detection_id)
        predicted = {tid: kalman_predict(t, params.process_noise)
                     for tid, t in live.items()}
        result = assign(live, predicted, dets, params)

        for tid, det in result.matches.items():
            state = kalman_update(predicted[tid], det.contact_point_px,
                                  params.measurement_noise)
            state.last_frame = frame
            state.misses = 0
            state.points.append((frame, det.contact_point_px))
            smoothed[tid].append((float(state.state_mean[0]),
                                  float(state.state_mean[1])))
            consumed[tid].append(det.detection_id)
            live[tid] = state

        for tid in result.unmatched_tracks:
            state = predicted[tid]
            state.misses += 1
            if state.misses > params.max_coast_frames:
                finished.append(state)
                del live[tid]
            else:
                live[tid] = state

        for det in result.unmatched_detections:
            tid = f"t{counter:04d}"
            counter += 1
            live[tid] = new_track(tid, det.object_class, frame,
                                  det.contact_point_px, params)
            smoothed[tid] = [det.contact_point_px]
            consumed[tid] = [det.detection_id]

    finished.extend(live.values())

    trajectories = []
    for state in sorted(finished, key=lambda s: s.object_id):
        raw = state.points
        tid = state.object_id
        raw_arr = np.array([p for _, p in raw])
        world = calib.to_world_many(raw_arr)
        pts = []
        for k, (frame, point) in enumerate(raw):
            pts.append(TrackPoint(
                frame=frame,
                t=frame / fps,
                raw_px=point,
                smooth_px=smoothed[tid][k],
                world=(float(world[k, 0]), float(world[k, 1])),
                detection_id=consumed[tid][k],
            ))
        trajectories.append(Trajectory(object_id=tid,
                                       object_class=state.object_class,
                                       points=pts))
    return trajectories


# --- validation -------------------------------------------------------------


@dataclass
class SceneValidation:
    """Violation counts for one scene."""

    connectivity: int = 0
    crossing: int = 0
    directivity: int = 0

    @property
    def clean(self) -> bool:
        return self.connectivity == 0 and self.crossing == 0 and self.directivity == 0

    @property
    def total(self) -> int:
        return self.connectivity + self.crossing + self.directivity


@dataclass
class TrajectoryReport:
    """Corpus-level validation summary in the shape of a results table."""

    scenes_total: int
    connectivity: int
    crossing: int
    directivity: int
    violating_scenes: int

    @property
    def accuracy(self) -> float:
        if self.scenes_total == 0:
            return 1.0
        return 1.0 - self.violating_scenes / self.scenes_total


def _dominant_sequence(traj: Trajectory, truth: dict) -> list[str]:
    """Per-point true identities for a track, via detection provenance."""
    out = []
    for p in traj.points:
        agent = truth.get((p.frame, p.detection_id))
        if agent is not None:
            out.append(agent)
    return out


def validate_trajectories(trajectories: list[Trajectory],
                          truth: dict | None = None,
                          params: TrackerParams | None = None,
                          frame_stride: int = 1) -> SceneValidation:
    """Count connectivity/crossing/directivity violations for one scene.

    truth maps (frame_index, detection_id) to the true object identity.
    Without it, heuristic flags are used instead: suspicious track splits,
    path intersections with simultaneous proximity, and per-step heading
    reversals beyond 120 degrees. frame_stride converts raw frame gaps
    into sampled steps for the connectivity check.
    """
    params = params or TrackerParams()
    if truth is not None:
        return _validate_against_truth(trajectories, truth, params, frame_stride)
    return _validate_heuristic(trajectories, params)


def _validate_against_truth(trajectories, truth, params,
                            frame_stride: int = 1) -> SceneValidation:
    result = SceneValidation()

    # Directivity: a track containing points of two or more true objects.
    ids_per_track = {}
    for traj in trajectories:
        seq = _dominant_sequence(traj, truth)
        ids_per_track[traj.object_id] = seq
        if len(set(seq)) >= 2:
            result.directivity += 1

    # Crossing: a pair of tracks that exchanged a pair of true identities.
    tids = sorted(ids_per_track)
    counted = set()
    for i in range(len(tids)):
        for j in range(i + 1, len(tids)):
            a, b = ids_per_track[tids[i]], ids_per_track[tids[j]]
            if not a or not b:
                continue
            pair = frozenset((a[0], b[0]))
            if (len(pair) == 2 and a[-1] != a[0] and b[-1] != b[0]
                    and a[-1] == b[0] and b[-1] == a[0]
                    and pair not in counted):
                result.crossing += 1
                counted.add(pair)

    # Connectivity: one true object's coverage split across several track
    # ids with a gap longer than the coast allowance between the pieces.
    coverage: dict[str, list[tuple[int, str]]] = {}
    for traj in trajectories:
        for p in traj.points:
            agent = truth.get((p.frame, p.detection_id))
            if agent is not None:
                coverage.setdefault(agent, []).append((p.frame, traj.object_id))
    for agent, hits in coverage.items():
        hits.sort()
        split = False
        for (f0, t0), (f1, t1) in zip(hits, hits[1:]):
            missing_steps = (f1 - f0) // frame_stride - 1
            if t0 != t1 and missing_steps > params.max_coast_frames:
                split = True
        if split:
            result.connectivity += 1
    return result


def _heading_reversals(traj: Trajectory, limit_deg: float = 120.0) -> int:
    pts = traj.world_array()
    if len(pts) < 3:
        return 0
    v = np.diff(pts, axis=0)
    norms = np.linalg.norm(v, axis=1)
    count = 0
    for k in range(len(v) - 1):
        if norms[k] < 1e-9 or norms[k + 1] < 1e-9:
            continue
        cosang = np.dot(v[k], v[k + 1]) / (norms[k] * norms[k + 1])
        if math.degrees(math.acos(max(-1.0, min(1.0, cosang)))) > limit_deg:
            count += 1
    return count


def _segments_intersect(p1, p2, p3, p4) -> bool:
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return 0 if abs(v) < 1e-12 else (1 if v > 0 else -1)

    return (orient(p1, p2, p3) * orient(p1, p2, p4) < 0
            and orient(p3, p4, p1) * orient(p3, p4, p2) < 0)


def _validate_heuristic(trajectories, params) -> SceneValidation:
    result = SceneValidation()

    for traj in trajectories:
        frames = traj.frames
        if len(frames) >= 2:
            stride = min(b - a for a, b in zip(frames, frames[1:]))
            if any(b - a > stride * (params.max_coast_frames + 1)
                   for a, b in zip(frames, frames[1:])):
                result.connectivity += 1
        if _heading_reversals(traj) > 0:
            result.directivity += 1

    # Pairwise: same-class tracks whose pixel paths intersect while the two
    # objects were simultaneously close are crossing suspects.
    for i in range(len(trajectories)):
        for j in range(i + 1, len(trajectories)):
            a, b = trajectories[i], trajectories[j]
            if a.object_class is not b.object_class:
                continue
            common = sorted(set(a.frames) & set(b.frames))
            if not common:
                continue
            pa = {p.frame: p.raw_px for p in a.points}
            pb = {p.frame: p.raw_px for p in b.points}
            gate = params.gate_for(a.object_class)
            close = any(math.dist(pa[f], pb[f]) < gate for f in common)
            if not close:
                continue
            crossed = False
            apts = [p.raw_px for p in a.points]
            bpts = [p.raw_px for p in b.points]
            for k in range(len(apts) - 1):
                for m in range(len(bpts) - 1):
                    if _segments_intersect(apts[k], apts[k + 1],
                                           bpts[m], bpts[m + 1]):
                        crossed = True
                        break
                if crossed:
                    break
            if crossed:
                result.crossing += 1
    return result


def summarize_validations(validations: list[SceneValidation]) -> TrajectoryReport:
    """Aggregate per-scene counts into the corpus-level report."""
    return TrajectoryReport(
        scenes_total=len(validations),
        connectivity=sum(v.connectivity for v in validations),
        crossing=sum(v.crossing for v in validations),
        directivity=sum(v.directivity for v in validations),
        violating_scenes=sum(0 if v.clean else 1 for v in validations),
    )
