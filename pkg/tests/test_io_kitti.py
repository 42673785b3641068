import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_pose
from semslam.core import FormatError, Pose3, Scan
from semslam.io_kitti import (
    SequencePaths,
    azimuth_time_offsets,
    decode_labels,
    encode_labels,
    read_calib,
    read_poses_kitti,
    read_poses_tum,
    read_scan,
    read_trajectory,
    write_poses_kitti,
    write_poses_tum,
    write_scan,
)


def _bin(tmp_path, values, name="000000.bin"):
    p = tmp_path / name
    p.write_bytes(struct.pack(f"<{len(values)}f", *values))
    return p


def test_minimal_scan_without_labels(tmp_path):
    s = read_scan(_bin(tmp_path, [1.0, 2.0, 3.0, 0.5]))
    assert len(s) == 1
    assert s.positions.tolist() == [[1.0, 2.0, 3.0]]
    assert s.labels.tolist() == [0] and s.confidences.tolist() == [1.0]


def test_label_bit_layout(tmp_path):
    lab = tmp_path / "000000.label"
    lab.write_bytes(bytes([0x28, 0x00, 0x01, 0x00]))  # 0x00010028 little-endian
    s = read_scan(_bin(tmp_path, [1.0, 2.0, 3.0, 0.5]), lab)
    assert s.labels.tolist() == [40]
    sem, inst = decode_labels(np.frombuffer(lab.read_bytes(), "<u4"))
    assert sem.tolist() == [40] and inst.tolist() == [1]


def test_truncated_scan(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"\0" * 20)
    with pytest.raises(FormatError, match="malformed scan"):
        read_scan(p)


def test_label_count_mismatch(tmp_path):
    lab = tmp_path / "x.label"
    lab.write_bytes(b"\0" * 8)
    with pytest.raises(FormatError, match="label/scan length mismatch"):
        read_scan(_bin(tmp_path, [0.0] * 4), lab)


def test_label_decode_exhaustive():
    sem = np.arange(1 << 16, dtype=np.uint32)
    inst = (sem * 7919) & 0xFFFF
    raw = sem | (inst << 16)
    s, i = decode_labels(raw)
    assert np.array_equal(s, sem) and np.array_equal(i, inst)
    assert np.array_equal(encode_labels(s, i), raw)


def test_time_offsets_follow_azimuth():
    pts = np.array([[-1.0, 1e-12, 0], [0, 1, 0], [1, 0, 0], [0, -1, 0], [-1, -1e-12, 0]])
    t = azimuth_time_offsets(pts)
    assert np.allclose(t, [0.0, 0.25, 0.5, 0.75, 1.0], atol=1e-9)
    assert np.all(np.diff(t) > 0)


def test_scan_write_read_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    s = Scan(rng.normal(size=(50, 3)).astype(np.float32), rng.integers(0, 300, 50))
    write_scan(s, tmp_path / "a.bin", tmp_path / "a.label")
    back = read_scan(tmp_path / "a.bin", tmp_path / "a.label")
    assert np.array_equal(back.positions, s.positions) and np.array_equal(back.labels, s.labels)


def test_pose_lines(tmp_path):
    p = tmp_path / "poses.txt"
    p.write_text("1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 1 0 1 0 2 0 0 1 3\n")
    a, b = read_poses_kitti(p)
    assert a.allclose(Pose3.identity(), 0.0)
    assert np.array_equal(b.translation, [1, 2, 3])


def test_malformed_pose_line(tmp_path):
    p = tmp_path / "poses.txt"
    p.write_text("1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 0 0 1\n")
    with pytest.raises(FormatError, match="malformed pose line 2"):
        read_poses_kitti(p)


def test_non_rotation_rejected(tmp_path):
    p = tmp_path / "poses.txt"
    p.write_text("1.1 0 0 0 0 1 0 0 0 0 1 0\n")
    with pytest.raises(FormatError, match="malformed pose line 1"):
        read_poses_kitti(p)


def test_slightly_off_rotation_is_reorthonormalized(tmp_path):
    p = tmp_path / "poses.txt"
    p.write_text("1.0004 0 0 0 0 1 0 0 0 0 1 0\n")
    (pose,) = read_poses_kitti(p)
    R = pose.rotation
    assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)


def test_write_read_round_trip_100(tmp_path, rng):
    traj = [random_pose(rng, 3.0, 100.0) for _ in range(100)]
    path = tmp_path / "t.txt"
    write_poses_kitti(traj, path)
    back = read_poses_kitti(path)
    assert len(back) == 100
    for a, b in zip(traj, back):
        assert np.abs(a.matrix() - b.matrix()).max() < 1e-6


def test_write_edge_cases(tmp_path):
    path = tmp_path / "t.txt"
    write_poses_kitti([], path)
    assert path.read_text() == ""
    write_poses_kitti([Pose3.identity()], path)
    assert path.read_text() == "1 0 0 0 0 1 0 0 0 0 1 0\n"
    write_poses_kitti([Pose3.identity()] * 2, path)
    assert len(path.read_text().splitlines()) == 2


def test_tum_round_trip_and_autodetect(tmp_path, rng):
    traj = [random_pose(rng) for _ in range(10)]
    path = tmp_path / "t.tum"
    write_poses_tum(traj, path)
    stamps, back = read_poses_tum(path)
    assert np.allclose(stamps, np.arange(10) * 0.1)
    for a, b in zip(traj, read_trajectory(path)):
        assert a.allclose(b, 1e-6)


def test_calibration(tmp_path):
    p = tmp_path / "calib.txt"
    p.write_text("P0: 1 0 0 0 0 1 0 0 0 0 1 0\nTr: 0 -1 0 0.1 0 0 -1 0.2 1 0 0 0.3\n")
    tr = read_calib(p)
    assert np.allclose(tr.translation, [0.1, 0.2, 0.3])
    assert np.allclose(tr.rotation, [[0, -1, 0], [0, 0, -1], [1, 0, 0]])


def test_sequence_paths(tmp_path):
    (tmp_path / "velodyne").mkdir()
    for i in (0, 1):
        _bin(tmp_path / "velodyne", [0.0] * 4, f"{i:06d}.bin")
    paths = SequencePaths.from_sequence_dir(tmp_path)
    assert [b.name for b, _ in paths.scan_files()] == ["000000.bin", "000001.bin"]
    _bin(tmp_path / "velodyne", [0.0] * 4, "000003.bin")
    with pytest.raises(FormatError, match="consecutive"):
        paths.scan_files()
    with pytest.raises(FileNotFoundError):
        SequencePaths.from_sequence_dir(tmp_path / "missing")


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 0xFFFFFFFF), max_size=20))
def test_label_encode_decode_property(raw):
    raw = np.array(raw, dtype=np.uint32)
    s, i = decode_labels(raw)
    assert np.array_equal(encode_labels(s, i), raw)
