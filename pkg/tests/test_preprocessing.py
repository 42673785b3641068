import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_pose
from semslam.core import ConfigError, Pose3, Scan, SemanticConfig, interpolate
from semslam.preprocessing import (
    adaptive_voxel_downsample,
    deskew,
    filter_dynamic,
    registration_downsample,
)

CFG = SemanticConfig()


def _scan(positions, labels=None, times=None):
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    return Scan(positions, labels, None, times)


def _rows(scan):
    return {(tuple(p), int(l)) for p, l in zip(scan.positions, scan.labels)}


def test_filter_dynamic_counts():
    labels = [252] * 4 + [40] * 6
    s = _scan(np.arange(30).reshape(10, 3), labels)
    out = filter_dynamic(s, CFG)
    assert len(out) == 6 and set(out.labels.tolist()) == {40}
    assert np.array_equal(out.positions, s.positions[4:])


def test_filter_dynamic_empty_set_and_all_dynamic():
    s = _scan(np.zeros((3, 3)), [252, 253, 254])
    assert filter_dynamic(s, SemanticConfig(dynamic_labels=set())) is s
    assert len(filter_dynamic(s, CFG)) == 0


def test_filter_dynamic_idempotent(rng):
    s = _scan(rng.normal(size=(100, 3)), rng.choice([40, 50, 252, 258], 100))
    once = filter_dynamic(s, CFG)
    assert np.array_equal(filter_dynamic(once, CFG).positions, once.positions)


def test_deskew_identity_is_noop(rng):
    s = _scan(rng.normal(size=(20, 3)), times=rng.random(20))
    assert np.array_equal(deskew(s, Pose3.identity()).positions, s.positions)


def test_deskew_half_translation():
    s = _scan([[5.0, 1.0, 0.0], [5.0, 1.0, 0.0]], times=[0.5, 1.0])
    out = deskew(s, Pose3.from_translation((1.0, 0.0, 0.0)))
    assert np.allclose(out.positions[0], [5.5, 1.0, 0.0], atol=1e-12)
    assert np.allclose(out.positions[1], [6.0, 1.0, 0.0], atol=1e-12)


def test_deskew_matches_per_point_interpolation(rng):
    motion = random_pose(rng, 0.2, 1.0)
    s = _scan(rng.uniform(-30, 30, (200, 3)), rng.integers(0, 100, 200), rng.random(200))
    out = deskew(s, motion)
    for i in range(len(s)):
        expect = interpolate(motion, s.time_offsets[i]).transform(s.positions[i])
        assert np.allclose(out.positions[i], expect, atol=1e-9)
    assert np.array_equal(out.labels, s.labels)


def test_adaptive_cap_keeps_first_in_order():
    pts = np.array([[0.1 * i, 0.1, 0.1] for i in range(5)])
    out = adaptive_voxel_downsample(_scan(pts, [40] * 5), 1.0, 3, CFG)
    assert np.array_equal(out.positions, pts[:3])


def test_adaptive_critical_past_cap():
    pts = np.array([[0.1 * i, 0.1, 0.1] for i in range(5)])
    out = adaptive_voxel_downsample(_scan(pts, [40, 40, 40, 80, 81]), 1.0, 3, CFG)
    assert len(out) == 5


def test_adaptive_cap_above_count_is_identity(rng):
    s = _scan(rng.uniform(-5, 5, (50, 3)), rng.integers(0, 100, 50))
    out = adaptive_voxel_downsample(s, 1.0, 50, CFG)
    assert _rows(out) == _rows(s)


def test_adaptive_bad_voxel():
    with pytest.raises(ConfigError):
        adaptive_voxel_downsample(_scan(np.zeros((1, 3))), 0.0, 3, CFG)


def _bucket_oracle(scan, v, cap, cfg):
    counts = {}
    keep = []
    for i, (p, lab) in enumerate(zip(scan.positions, scan.labels)):
        key = tuple(np.floor(p / v).astype(int))
        if lab in cfg.critical_labels:
            keep.append(i)
            continue
        counts[key] = counts.get(key, 0) + 1
        if counts[key] <= cap:
            keep.append(i)
    return keep


def test_adaptive_matches_bucketing_oracle(rng):
    for _ in range(20):
        n = 300
        s = _scan(rng.uniform(-3, 3, (n, 3)), rng.choice([40, 50, 80, 81], n))
        out = adaptive_voxel_downsample(s, 1.0, 4, CFG)
        assert np.array_equal(out.positions, s.positions[_bucket_oracle(s, 1.0, 4, CFG)])


def test_registration_downsample_rules():
    distinct = _scan([[0.1, 0.1, 0.1], [5.0, 5.0, 5.0]], [40, 40])
    assert len(registration_downsample(distinct, 1.0, CFG)) == 2
    same = _scan([[0.1, 0.1, 0.1], [0.2, 0.2, 0.2]], [40, 50])
    out = registration_downsample(same, 1.0, CFG)
    assert len(out) == 1 and out.labels[0] == 40
    crit = _scan([[0.1, 0.1, 0.1], [0.2, 0.2, 0.2]], [40, 80])
    assert len(registration_downsample(crit, 1.0, CFG)) == 2


def test_registration_downsample_uses_alpha():
    s = _scan([[0.1, 0.1, 0.1], [1.2, 0.1, 0.1]], [40, 40])
    assert len(registration_downsample(s, 1.0, CFG, alpha=1.0)) == 2
    assert len(registration_downsample(s, 1.0, CFG, alpha=1.5)) == 1


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6), st.floats(0.3, 2.0))
def test_downsample_subset_and_critical_retention(seed, cap, v):
    rng = np.random.default_rng(seed)
    n = 200
    s = _scan(rng.uniform(-4, 4, (n, 3)), rng.choice([40, 50, 70, 80, 81], n))
    a = adaptive_voxel_downsample(s, v, cap, CFG)
    b = registration_downsample(a, v, CFG)
    assert _rows(b) <= _rows(a) <= _rows(s)
    crit_in = {r for r in _rows(s) if r[1] in CFG.critical_labels}
    assert crit_in <= _rows(b)
