import numpy as np
import pytest

from semslam.core import CAR, Pose3, Scan
from semslam.map_post import (
    aggregate_map,
    export_csv,
    export_ply,
    filter_ply,
    labels_from_names,
    read_ply,
)


def _parse_ascii_ply(path):
    """Independent minimal reader: header lines until end_header, then whitespace rows."""
    lines = path.read_text().splitlines()
    end = lines.index("end_header")
    count = next(int(l.split()[2]) for l in lines[:end] if l.startswith("element vertex"))
    props = [l.split()[-1] for l in lines[:end] if l.startswith("property")]
    rows = [l.split() for l in lines[end + 1 :]]
    assert len(rows) == count
    return props, np.array(rows, dtype=float).reshape(count, len(props))


def _scan(rng, n, labels):
    return Scan(rng.uniform(-5, 5, (n, 3)), labels, rng.uniform(0.5, 1.0, n))


def test_aggregate_single_scan_identity(rng):
    s = _scan(rng, 50, np.full(50, 40))
    out = aggregate_map([s], [Pose3.identity()], voxel=0.0)
    assert np.array_equal(out.positions, s.positions)
    deduped = aggregate_map([s], [Pose3.identity()], voxel=1.0)
    keys = np.floor(s.positions / 1.0)
    assert len(deduped) == len(np.unique(keys, axis=0))


def test_aggregate_excludes_cars(rng):
    labels = np.array([CAR] * 10 + [40] * 90)
    s = _scan(rng, 100, labels)
    out = aggregate_map([s], [Pose3.identity()], voxel=0.0, exclude={CAR})
    assert len(out) == 90 and CAR not in out.labels


def test_aggregate_exclude_everything(rng):
    s = _scan(rng, 20, np.array([40] * 10 + [50] * 10))
    assert len(aggregate_map([s], [Pose3.identity()], exclude={40, 50})) == 0


def test_aggregate_length_mismatch(rng):
    with pytest.raises(ValueError):
        aggregate_map([_scan(rng, 3, None)], [])


def test_aggregate_transforms_and_keeps_first_per_voxel():
    a = Scan(np.array([[0.01, 0.01, 0.01]]), [40])
    b = Scan(np.array([[0.02, 0.02, 0.02]]), [50])
    out = aggregate_map([a, b], [Pose3.from_translation((1, 0, 0))] * 2, voxel=0.05)
    assert len(out) == 1 and out.labels[0] == 40
    assert np.allclose(out.positions[0], [1.01, 0.01, 0.01])


def test_filter_commutes_with_aggregation(rng):
    scans = [_scan(rng, 200, rng.choice([10, 40, 50], 200)) for _ in range(3)]
    poses = [Pose3.from_yaw(0.1 * k, (k, 0, 0)) for k in range(3)]
    first = aggregate_map(scans, poses, voxel=0.0, exclude={10})
    after = aggregate_map(scans, poses, voxel=0.0)
    after = after.select(after.labels != 10)
    assert {tuple(p) for p in first.positions} == {tuple(p) for p in after.positions}


def test_labels_from_names():
    assert labels_from_names(["car", " truck", "40", ""]) == {10, 18, 40}


def test_export_empty_ply(tmp_path):
    export_ply(Scan(np.zeros((0, 3))), tmp_path / "e.ply")
    props, rows = _parse_ascii_ply(tmp_path / "e.ply")
    assert props == ["x", "y", "z", "label", "confidence"] and rows.shape == (0, 5)
    assert "element vertex 0" in (tmp_path / "e.ply").read_text()


def test_export_one_point(tmp_path):
    export_ply(Scan(np.array([[1.5, -2.0, 0.25]]), [80], [0.5]), tmp_path / "o.ply")
    _, rows = _parse_ascii_ply(tmp_path / "o.ply")
    assert rows.tolist() == [[1.5, -2.0, 0.25, 80, 0.5]]


def test_ply_round_trip(rng, tmp_path):
    s = Scan(rng.uniform(-100, 100, (500, 3)), rng.integers(0, 260, 500), rng.uniform(0, 1, 500))
    export_ply(s, tmp_path / "m.ply")
    _, rows = _parse_ascii_ply(tmp_path / "m.ply")
    assert np.allclose(rows[:, :3], s.positions, atol=1e-5)
    assert np.array_equal(rows[:, 3].astype(int), s.labels)
    back = read_ply(tmp_path / "m.ply")
    assert np.allclose(back.positions, s.positions, atol=1e-5)
    export_ply(s, tmp_path / "b.ply", binary=True)
    back = read_ply(tmp_path / "b.ply")
    assert np.allclose(back.positions, s.positions, atol=1e-5) and np.array_equal(back.labels, s.labels)


def test_filter_ply(rng, tmp_path):
    s = Scan(rng.uniform(-5, 5, (30, 3)), [CAR] * 10 + [18] * 5 + [40] * 15)
    export_ply(s, tmp_path / "in.ply")
    assert filter_ply(tmp_path / "in.ply", {CAR, 18}, tmp_path / "out.ply") == 15
    _, rows = _parse_ascii_ply(tmp_path / "out.ply")
    assert set(rows[:, 3].astype(int)) == {40}


def test_export_csv(tmp_path):
    export_csv(Scan(np.array([[1.0, 2.0, 3.0]]), [40]), tmp_path / "m.csv")
    assert (tmp_path / "m.csv").read_text().splitlines() == ["x,y,z,label", "1,2,3,40"]
