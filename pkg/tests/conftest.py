import numpy as np
import pytest

from semslam.core import Pose3, Twist6, se3_exp


def random_pose(rng: np.random.Generator, max_angle: float = 3.0, max_t: float = 10.0) -> Pose3:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    omega = axis * rng.uniform(0, max_angle)
    return se3_exp(Twist6(tuple(omega), tuple(rng.uniform(-max_t, max_t, 3))))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def structured_scene(rng: np.random.Generator, n: int = 2000) -> tuple[np.ndarray, np.ndarray]:
    """Three walls, four poles and a ground patch; returns (positions, labels)."""
    n_wall, n_pole = int(0.55 * n), int(0.15 * n)
    n_ground = n - n_wall - n_pole
    parts, labels = [], []
    walls = [((12.0, -10.0), (12.0, 10.0)), ((-8.0, 9.0), (12.0, 9.0)), ((-8.0, -9.0), (6.0, -12.0))]
    for k, (a, b) in enumerate(walls):
        m = n_wall // 3 + (1 if k < n_wall % 3 else 0)
        t = rng.uniform(0, 1, m)[:, None]
        xy = np.asarray(a) + t * (np.asarray(b) - np.asarray(a))
        parts.append(np.column_stack([xy, rng.uniform(0.0, 4.0, m)]))
        labels.append(np.full(m, 50))
    poles = np.array([[4.0, 3.0], [-3.0, 5.0], [7.0, -6.0], [-5.0, -4.0]])
    which = rng.integers(0, 4, n_pole)
    ang = rng.uniform(0, 2 * np.pi, n_pole)
    xy = poles[which] + 0.15 * np.column_stack([np.cos(ang), np.sin(ang)])
    parts.append(np.column_stack([xy, rng.uniform(0.0, 3.0, n_pole)]))
    labels.append(np.full(n_pole, 80))
    g = np.column_stack([rng.uniform(-8, 12, n_ground), rng.uniform(-9, 9, n_ground)])
    parts.append(np.column_stack([g, 0.02 * np.sin(g[:, 0]) * np.cos(0.7 * g[:, 1])]))
    labels.append(np.full(n_ground, 40))
    return np.concatenate(parts), np.concatenate(labels)


def distractor_instance(seed: int, n: int = 2000, shift: float = 0.6):
    """Scene plus a 20% cluster that is labeled car in the scan but vegetation in the map.

    The map copy of the cluster is displaced by ``shift`` meters, so matching it
    geometrically biases the estimate. Returns (map_pts, map_labels, src_pts,
    src_labels, src_conf, true_pose) with ``src = true_pose^-1 * world``.
    """
    rng = np.random.default_rng(seed)
    pts, lab = structured_scene(rng, n)
    m = n // 5
    cluster = np.array([2.0, -2.0, 1.0]) + rng.normal(scale=[1.0, 1.0, 0.5], size=(m, 3))
    direction = rng.normal(size=2)
    direction /= np.linalg.norm(direction)
    moved = cluster + shift * np.array([direction[0], direction[1], 0.0])
    map_pts = np.concatenate([pts, moved])
    map_labels = np.concatenate([lab, np.full(m, 70)])
    true_pose = random_pose(rng, np.radians(3.0), 0.3)
    src = true_pose.inverse().transform(np.concatenate([pts, cluster]))
    src_labels = np.concatenate([lab, np.full(m, 10)])
    src_conf = np.full(len(src), 0.95)
    return map_pts, map_labels, src, src_labels, src_conf, true_pose


def room_points(rng: np.random.Generator, n: int = 1500, half: float = 6.05) -> tuple[np.ndarray, np.ndarray]:
    """2D points on a square room outline (label 50) plus two poles (label 80)."""
    n_pole = n // 10
    n_wall = n - n_pole
    side = rng.integers(0, 4, n_wall)
    t = rng.uniform(-half, half, n_wall)
    xy = np.empty((n_wall, 2))
    xy[side == 0] = np.column_stack([np.full((side == 0).sum(), half), t[side == 0]])
    xy[side == 1] = np.column_stack([np.full((side == 1).sum(), -half), t[side == 1]])
    xy[side == 2] = np.column_stack([t[side == 2], np.full((side == 2).sum(), half)])
    xy[side == 3] = np.column_stack([t[side == 3], np.full((side == 3).sum(), -half * 0.6)])
    poles = np.array([[2.0, 1.5], [-3.0, 2.5]])[rng.integers(0, 2, n_pole)] + rng.normal(scale=0.05, size=(n_pole, 2))
    return np.concatenate([xy, poles]), np.concatenate([np.full(n_wall, 50), np.full(n_pole, 80)])


_ACCEPTANCE: list[str] = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line per acceptance criterion, then assert it."""

    def _report(criterion: int, ok: bool, detail: str) -> None:
        line = f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        _ACCEPTANCE.append(line)
        assert ok, line

    return _report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
