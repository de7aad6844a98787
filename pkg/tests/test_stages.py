import json

import pytest

from crossrisk.analytics import spot_speed_stats
from crossrisk.errors import MalformedRecord
from crossrisk.features import SceneFeatures, VehicleZone
from crossrisk.ingest import ObjectClass
from crossrisk.stages import (
    features_to_record,
    read_features,
    read_jsonl,
    record_to_features,
    scene_vehicle,
    write_jsonl,
)

from oracles import make_traj


def _bundle(scene_id="s0", interactive=False, speeds=(10.0, 12.0)):
    return SceneFeatures(
        scene_id=scene_id, spot_id="A", frame_start=0, frame_end=10,
        interactive=interactive, vehicle_id="t0",
        vehicle_speeds_kmh=list(speeds),
        vehicle_zones=[VehicleZone.BEFORE, VehicleZone.ON, VehicleZone.AFTER],
        vehicle_accelerations=["acc", "nc"],
        vehicle_acceleration_runs=["acc", "nc"],
        crosswalk_distances_m=[4.1, 0.0, 3.3],
        stopped=True, stop_distance_m=4.0,
        pedestrian_speeds_kmh={"t1": [2.3, 2.0]},
        pedestrian_zones={},
        distances_m=[5.0, 3.0], relative_positions=["Front", "Behind"],
        psm_seconds=3.2, psm_seconds_refined=3.17,
        ped_in_crossing_area=True)


def test_feature_record_uses_paper_vocabulary():
    record = features_to_record(_bundle())
    assert record["vehicle_position_list"] == [
        "before crosswalk", "on crosswalk", "after crosswalk"]
    assert record["vehicle_acceleration_list"] == ["acc", "nc"]
    assert record["car_stop_before_crosswalk"] == "stop"
    assert record["relative_position_list"] == ["Front", "Behind"]
    assert record["psm_seconds"] == 3.2


def test_feature_record_round_trip():
    bundle = _bundle()
    assert record_to_features(features_to_record(bundle)) == bundle


def test_scene_type_proportions_replay_from_file(tmp_path):
    # A feature file encoding the busiest spot's split (2,681 car-only,
    # 1,540 interactive) replays to exactly those counts.
    rows = [features_to_record(_bundle(scene_id=f"c{k:05d}"))
            for k in range(2681)]
    rows += [features_to_record(_bundle(scene_id=f"i{k:05d}", interactive=True))
             for k in range(1540)]
    spot_dir = tmp_path
    write_jsonl(spot_dir / "features.jsonl", "features", rows)
    bundles = read_features(spot_dir)
    stats = spot_speed_stats("A", bundles)
    assert stats.scenes_car_only == 2681
    assert stats.scenes_interactive == 1540


def test_read_jsonl_rejects_wrong_schema(tmp_path):
    path = tmp_path / "scenes.jsonl"
    path.write_text(json.dumps({"schema": "crossrisk/other/v9"}) + "\n")
    with pytest.raises(MalformedRecord):
        read_jsonl(path, "scenes")


def test_scene_vehicle_prefers_hinted_track():
    hinted = make_traj("t1", ObjectClass.VEHICLE, range(4),
                       [(k, 0) for k in range(4)], det_ids=["v7"] * 4)
    other = make_traj("t0", ObjectClass.VEHICLE, range(8),
                      [(k, 5) for k in range(8)], det_ids=["v8"] * 8)
    ped = make_traj("t2", ObjectClass.PEDESTRIAN, range(4),
                    [(k, 9) for k in range(4)], det_ids=["p0"] * 4)
    assert scene_vehicle([other, hinted, ped], "v7").object_id == "t1"
    # Unknown hint: fall back to the longest vehicle track.
    assert scene_vehicle([other, hinted, ped], "zz").object_id == "t0"
    assert scene_vehicle([ped], "v7") is None
