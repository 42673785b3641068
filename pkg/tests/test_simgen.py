import hashlib
import math

import numpy as np
import pytest
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import cdist

from semslam.core import BUILDING, POLE, ROAD, Pose3, Twist6
from semslam.io_kitti import read_poses_kitti, read_scan
from semslam.simgen import (
    LoopPreset,
    SensorModel,
    World,
    WorldSpec,
    generate_loop_trajectory,
    generate_world,
    simulate_scan,
    write_kitti_sequence,
)

SMALL = SensorModel(rays=360, channels=16, azimuth_jitter=False)


def _digest(*arrays):
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


def test_world_is_deterministic():
    a, b = generate_world(3), generate_world(3)
    assert _digest(a.panels, a.cylinders, a.boxes) == _digest(b.panels, b.cylinders, b.boxes)
    assert _digest(a.panels) != _digest(generate_world(4).panels)


def test_scan_is_deterministic():
    w = generate_world(3)
    pose = Pose3.from_translation((0, 0, 1.73))
    s1 = simulate_scan(w, pose, SensorModel(rays=360, channels=16), 0.02, 0.1, seed=5)
    s2 = simulate_scan(w, pose, SensorModel(rays=360, channels=16), 0.02, 0.1, seed=5)
    assert _digest(s1.positions, s1.labels, s1.confidences, s1.time_offsets) == _digest(
        s2.positions, s2.labels, s2.confidences, s2.time_offsets
    )


def test_zero_counts_give_ground_only():
    w = generate_world(1, WorldSpec(0, 0, 0, 0))
    assert w.labels() == {ROAD}
    assert set(w.sample_points().labels.tolist()) == {ROAD}


def test_two_poles_form_two_clusters():
    w = generate_world(9, WorldSpec(walls=0, poles=2, signs=0, parked_cars=0))
    pts = w.sample_points(density=20.0)
    poles = pts.positions[pts.labels == POLE]
    adj = cdist(poles[:, :2], poles[:, :2]) < 1.0
    assert connected_components(adj, directed=False)[0] == 2


def test_empty_world_gives_empty_scan():
    w = World(50.0, ground=False)
    assert len(simulate_scan(w, Pose3.from_translation((0, 0, 1.7)), SMALL)) == 0


def test_single_wall_exact_intersection():
    w = World(50.0, ground=False, panels=np.array([[10.0, -40, 10.0, 40, -20, 20, BUILDING]]))
    s = simulate_scan(w, Pose3.identity(), SMALL)
    assert len(s) > 0 and set(s.labels.tolist()) == {BUILDING}
    assert np.abs(s.positions[:, 0] - 10.0).max() < 1e-9
    head_on = np.argmin(np.abs(s.positions[:, 1]) + np.abs(s.positions[:, 2]))
    assert np.linalg.norm(s.positions[head_on]) == pytest.approx(10.0, abs=0.2)


def test_zero_noise_points_lie_on_surfaces():
    w = generate_world(2)
    pose = Pose3.from_yaw(0.3, (1.0, 2.0, 1.73))
    s = simulate_scan(w, pose, SensorModel(rays=512, channels=32))
    assert len(s) > 1000
    assert w.distance_to_surface(pose.transform(s.positions)).max() < 1e-9


def test_label_noise():
    w = generate_world(2)
    pose = Pose3.from_translation((0, 0, 1.73))
    clean = simulate_scan(w, pose, SMALL)
    assert np.all(clean.confidences == 1.0)
    noisy = simulate_scan(w, pose, SMALL, label_noise=0.2, seed=1)
    assert np.all(noisy.confidences == pytest.approx(0.8))
    flipped = np.mean(noisy.labels != clean.labels)
    assert 0.15 < flipped < 0.25


def test_loop_without_drift_matches_truth():
    truth, odom = generate_loop_trajectory(100.0, 50)
    assert len(truth) == 200
    assert all(a.allclose(b, atol=1e-9) for a, b in zip(truth, odom))
    assert np.linalg.norm(truth[0].translation - truth[-1].translation) < 1e-9


def test_rounded_loop_closes_with_heading():
    truth, _ = generate_loop_trajectory(100.0, 50, corner_radius=15.0, ramp_scans=10)
    assert truth[0].allclose(truth[-1], atol=1e-9)


def test_yaw_bias_accumulates_linearly():
    b = 0.001
    truth, odom = generate_loop_trajectory(100.0, 50, Twist6((0.0, 0.0, b), (0.0, 0.0, 0.0)))
    err = odom[-1].yaw() - truth[-1].yaw()
    assert math.remainder(err, 2 * math.pi) == pytest.approx((len(truth) - 1) * b, abs=1e-9)


def test_write_kitti_sequence(tmp_path):
    w = generate_world(2)
    poses = [Pose3.from_translation((k, 0.5, 1.73)) for k in range(3)]
    scans = [simulate_scan(w, p, SMALL, index=k) for k, p in enumerate(poses)]
    out = write_kitti_sequence(tmp_path / "seq", scans, poses)
    back = read_poses_kitti(out / "poses.txt")
    assert back[0].allclose(Pose3.identity()) and back[2].allclose(Pose3.from_translation((2, 0, 0)), atol=1e-8)
    s = read_scan(out / "velodyne" / "000001.bin", out / "labels" / "000001.label")
    assert np.allclose(s.positions, scans[1].positions, atol=1e-5)
    assert np.array_equal(s.labels, scans[1].labels)


def test_loop_preset_overrides_parse():
    from semslam.config import PipelineConfig

    cfg = PipelineConfig.parse("", LoopPreset().pipeline_overrides())
    assert cfg.loop_min_score == 0.25
