import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semslam.core import SE2, FormatError, Pose3, Scan, UsageError
from semslam.submaps import (
    Cell,
    SemanticGrid,
    Submap,
    bresenham,
    dominant_label,
    export_dominant_png,
    finalize_submap,
    insert_scan_into_submap,
    load_submap,
    save_submap,
    submap_from_bytes,
    submap_to_bytes,
)


def _grid():
    return SemanticGrid(resolution=1.0)


def test_ray_within_one_cell():
    g = _grid()
    g.insert_ray((0.2, 0.2), (0.7, 0.6), 40)
    assert g.total_hits() == 1 and g.misses.sum() == 0
    assert g.cell_at((0.5, 0.5)) == Cell({40: 1}, 0)


def test_axis_aligned_ray_across_five_cells():
    g = _grid()
    g.insert_ray((0.5, 0.5), (4.5, 0.5), 50)
    assert g.cell_at((4.5, 0.5)) == Cell({50: 1}, 0)
    for x in range(4):
        assert g.cell_at((x + 0.5, 0.5)) == Cell({}, 1)
    assert g.misses.sum() == 4 and g.total_hits() == 1


def test_two_labels_on_one_endpoint_tie_to_smaller_id():
    g = _grid()
    g.insert_ray((0.5, 0.5), (3.5, 2.5), 70)
    g.insert_ray((0.5, 0.5), (3.5, 2.5), 50)
    c = g.cell_at((3.5, 2.5))
    assert c.hits == {70: 1, 50: 1}
    assert dominant_label(c)[0] == 50
    assert g.dominant_labels()[tuple(g.cell_index(np.array([[3.5, 2.5]]))[0])] == 50


def test_bresenham_trace_matches_oracle():
    # oracle: one cell per major-axis step, minor coordinate rounded
    for x1, y1 in [(7, 3), (-5, 2), (3, -8), (0, 6), (-4, -4)]:
        n = max(abs(x1), abs(y1))
        expected = [(round_half_away(k * x1 / n), round_half_away(k * y1 / n)) for k in range(n + 1)]
        assert bresenham(0, 0, x1, y1) == expected


def round_half_away(v: float) -> int:
    return int(np.sign(v) * np.floor(abs(v) + 0.5))


def test_rays_match_cell_oracle(rng):
    g = SemanticGrid(0.5)
    origin = np.array([0.1, -0.2])
    ends = rng.uniform(-8, 8, (200, 2))
    labels = rng.integers(1, 4, 200)
    g.insert_rays(origin, ends, labels)
    hits, misses = {}, {}
    o = tuple(np.floor(origin / 0.5).astype(int))
    for e, lab in zip(ends, labels):
        c = tuple(np.floor(e / 0.5).astype(int))
        hits[(c, lab)] = hits.get((c, lab), 0) + 1
        for cell in bresenham(*o, *c)[:-1]:
            misses[cell] = misses.get(cell, 0) + 1
    for (c, lab), n in hits.items():
        assert g.cell_at((np.array(c) + 0.5) * 0.5).hits[lab] == n
    for c, n in misses.items():
        assert g.cell_at((np.array(c) + 0.5) * 0.5).misses == n
    assert g.total_hits() == 200 and g.misses.sum() == sum(misses.values())


def test_dominant_label_examples():
    assert dominant_label(Cell({10: 3, 40: 1}, 0)) == (10, 0.75)
    assert dominant_label(Cell({}, 0)) == (0, 0.0)
    assert dominant_label(Cell({}, 5)) == (0, 0.0)
    assert dominant_label(Cell({50: 2, 48: 2}, 0))[0] == 48
    assert dominant_label(Cell({50: 2}, 2)) == (50, 0.5)


@settings(max_examples=100)
@given(st.dictionaries(st.integers(1, 300), st.integers(1, 50), min_size=1, max_size=5), st.integers(2, 7))
def test_dominant_label_scale_invariant(hits, k):
    scaled = Cell({l: k * n for l, n in hits.items()}, 0)
    assert dominant_label(Cell(hits, 0))[0] == dominant_label(scaled)[0]


def _scan(points, labels, index=0):
    return Scan(np.asarray(points, float).reshape(-1, 3), labels, None, None, index)


def test_empty_scan_leaves_grid_unchanged():
    s = Submap.create(Pose3.identity())
    insert_scan_into_submap(s, _scan(np.zeros((0, 3)), None), Pose3.identity())
    assert s.grid.total_hits() == 0 and s.grid.misses.sum() == 0


def test_single_point_scan():
    s = Submap.create(Pose3.identity())
    insert_scan_into_submap(s, _scan([[3.0, 1.0, -1.0]], [40], index=4), Pose3.identity())
    assert s.grid.total_hits() == 1
    assert s.scan_range == (4, 4)


def test_height_band_and_ground_kept():
    s = Submap.create(Pose3.identity(), resolution=0.2)
    pts = [[2.0, 0, -1.7], [2.0, 1, 0.5], [2.0, 2, 1.5], [2.0, 3, -3.5]]
    insert_scan_into_submap(s, _scan(pts, [40, 50, 50, 40]), Pose3.from_translation((0, 0, 1.7)))
    assert s.grid.total_hits() == 2
    assert s.grid.cell_at((2.1, 0.1)).hits == {40: 1}


def test_room_footprint_within_one_cell(rng):
    res = 0.1
    half = 4.0
    n = 20000
    side = rng.integers(0, 4, n)
    t = rng.uniform(-half, half, n)
    xy = np.where(
        side[:, None] == 0,
        np.column_stack([np.full(n, half), t]),
        np.where(
            side[:, None] == 1,
            np.column_stack([np.full(n, -half), t]),
            np.where(side[:, None] == 2, np.column_stack([t, np.full(n, half)]), np.column_stack([t, np.full(n, -half)])),
        ),
    )
    z = rng.uniform(-1.5, 0.8, n)
    sensor = Pose3.from_translation((1.0, -0.5, 1.7))
    grid_pose = Pose3.from_yaw(0.3, (1.0, -0.5, 1.7))
    s = Submap.create(grid_pose, resolution=res)
    # the sensor sits at the room center; points are given in its frame
    insert_scan_into_submap(s, _scan(np.column_stack([xy, z]), np.full(n, 50)), sensor)
    g = s.grid
    occ = np.argwhere(g.occupied())
    centers_grid = g.origin + (occ + 0.5) * res
    centers_world = s.grid.local_pose.transform(np.column_stack([centers_grid, np.zeros(len(occ))]))[:, :2]
    local = centers_world - [1.0, -0.5]
    # distance from each occupied cell center to the square outline
    d = np.abs(np.maximum(np.abs(local[:, 0]), np.abs(local[:, 1])) - half)
    assert np.all(d <= res * np.sqrt(2))
    # and every wall sample lands on or next to an occupied cell
    probe = np.linspace(-half + 0.05, half - 0.05, 200)
    outline = np.concatenate([
        np.column_stack([np.full(200, half), probe]),
        np.column_stack([np.full(200, -half), probe]),
        np.column_stack([probe, np.full(200, half)]),
        np.column_stack([probe, np.full(200, -half)]),
    ]) + [1.0, -0.5]
    grid_xy = grid_pose.inverse().transform(np.column_stack([outline, np.full(len(outline), 1.7)]))[:, :2]
    idx = g.cell_index(grid_xy)
    occupied = g.occupied()
    for i, j in idx:
        window = occupied[max(i - 1, 0) : i + 2, max(j - 1, 0) : j + 2]
        assert window.any()


def test_total_hits_equals_points_and_monotone(rng):
    s = Submap.create(Pose3.identity(), resolution=0.3)
    total = 0
    prev_hits, prev_miss = 0, 0
    for k in range(5):
        pts = np.column_stack([rng.uniform(-10, 10, (300, 2)), rng.uniform(-1, 0.5, 300)])
        total += insert_scan_into_submap(s, _scan(pts, rng.integers(1, 5, 300), k), Pose3.from_translation((k * 0.5, 0, 0)))
        assert s.grid.total_hits() == total == 300 * (k + 1)
        assert s.grid.misses.sum() >= prev_miss
        prev_miss = s.grid.misses.sum()
    assert s.scan_range == (0, 4)


def test_finalize_idempotent_and_blocks_insert():
    s = Submap.create(Pose3.identity())
    assert finalize_submap(finalize_submap(s)).finished
    assert not s.grid.occupied().any()
    with pytest.raises(UsageError):
        insert_scan_into_submap(s, _scan([[1.0, 0, 0]], [40]), Pose3.identity())


def test_serialization_round_trip(rng, tmp_path):
    s = Submap.create(Pose3.from_yaw(0.4, (3.0, -2.0, 1.0)), resolution=0.2)
    for k in range(3):
        pts = np.column_stack([rng.uniform(-6, 6, (100, 2)), rng.uniform(-1, 0.5, 100)])
        insert_scan_into_submap(s, _scan(pts, rng.integers(1, 100, 100), k + 10), Pose3.from_yaw(0.4 + k * 0.01, (3.0 + k, -2.0, 1.0)))
    finalize_submap(s)
    path = tmp_path / "a.smap"
    save_submap(s, path)
    back = load_submap(path)
    assert back.finished and back.scan_range == (10, 12)
    assert back.grid.layer_labels == s.grid.layer_labels
    assert np.array_equal(back.grid.hits, s.grid.hits)
    assert np.array_equal(back.grid.misses, s.grid.misses)
    assert np.array_equal(back.grid.origin, s.grid.origin)
    assert back.grid.local_pose.allclose(s.grid.local_pose, atol=0)
    assert (back.anchor.x, back.anchor.y, back.anchor.theta) == (s.anchor.x, s.anchor.y, s.anchor.theta)


def test_serialization_rejects_garbage():
    with pytest.raises(FormatError):
        submap_from_bytes(b"nope")
    with pytest.raises(FormatError):
        submap_from_bytes(b"X" * 200)
    blob = submap_to_bytes(Submap.create(Pose3.identity()))
    assert submap_from_bytes(blob).scan_range is None


def test_png_export(tmp_path):
    from PIL import Image

    s = Submap.create(Pose3.identity(), resolution=0.5)
    insert_scan_into_submap(s, _scan([[3.0, 0, 0], [0, 3.0, 0]], [40, 50]), Pose3.identity())
    export_dominant_png(s, tmp_path / "d.png")
    img = Image.open(tmp_path / "d.png")
    assert img.size == s.grid.shape
