"""Deterministic synthetic worlds, trajectories and LiDAR scans.

Worlds are collections of analytic primitives (ground plane, wall panels,
poles, sign plates, boxes). Scans are produced by exact ray casting against
those primitives, so noise-free returns lie on the surfaces up to float
rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import BUILDING, CAR, POLE, ROAD, TRAFFIC_SIGN, TRUNK, VEGETATION, Pose3, Scan, Twist6, se3_exp, se3_log
from .io_kitti import write_poses_kitti, write_scan
from .preprocessing import exp_apply_scaled

MOVING_CAR = 252


@dataclass(frozen=True)
class WorldSpec:
    walls: int = 8
    poles: int = 10
    signs: int = 4
    parked_cars: int = 4
    moving_cars: int = 0


@dataclass(frozen=True)
class SensorModel:
    rays: int = 1024
    channels: int = 64
    min_elevation: float = math.radians(-15.0)
    max_elevation: float = math.radians(15.0)
    max_range: float = 100.0
    min_range: float = 0.5
    # firing azimuths are not phase-locked between revolutions on a real spinning sensor
    azimuth_jitter: bool = True


@dataclass
class World:
    """Analytic scene. Panels are vertical rectangles ``(x0, y0, x1, y1, z0, z1, label)``;
    cylinders ``(x, y, radius, z0, z1, label)``; boxes ``(x, y, yaw, length, width, height, label)``."""

    extent: float
    ground: bool = True
    ground_label: int = ROAD
    panels: np.ndarray = field(default_factory=lambda: np.zeros((0, 7)))
    cylinders: np.ndarray = field(default_factory=lambda: np.zeros((0, 6)))
    boxes: np.ndarray = field(default_factory=lambda: np.zeros((0, 7)))

    def labels(self) -> set[int]:
        out = {self.ground_label} if self.ground else set()
        for arr in (self.panels, self.cylinders, self.boxes):
            out.update(int(v) for v in arr[:, -1])
        return out

    def sample_points(self, density: float = 4.0, seed: int = 0) -> Scan:
        """Labeled surface samples, ``density`` points per square meter (ground at a quarter of it)."""
        rng = np.random.default_rng(seed)
        chunks = []

        def add(pts, label):
            if len(pts):
                chunks.append((pts, np.full(len(pts), label, np.uint16)))

        if self.ground:
            n = int(density / 4 * (2 * self.extent) ** 2)
            xy = rng.uniform(-self.extent, self.extent, size=(n, 2))
            add(np.c_[xy, np.zeros(n)], self.ground_label)
        for x0, y0, x1, y1, z0, z1, lab in self.panels:
            length = math.hypot(x1 - x0, y1 - y0)
            n = max(1, int(density * length * (z1 - z0)))
            u = rng.uniform(0, 1, n)
            add(np.c_[x0 + u * (x1 - x0), y0 + u * (y1 - y0), rng.uniform(z0, z1, n)], lab)
        for x, y, r, z0, z1, lab in self.cylinders:
            n = max(8, int(density * 2 * math.pi * r * (z1 - z0) * 20))
            a = rng.uniform(0, 2 * math.pi, n)
            add(np.c_[x + r * np.cos(a), y + r * np.sin(a), rng.uniform(z0, z1, n)], lab)
        for x, y, yaw, length, width, height, lab in self.boxes:
            n = max(8, int(density * 2 * (length + width) * height))
            t = rng.uniform(0, 2 * (length + width), n)
            lx = np.where(t < length, t, np.where(t < length + width, length, np.where(t < 2 * length + width, 2 * length + width - t, 0.0)))
            ly = np.where(t < length, 0.0, np.where(t < length + width, t - length, np.where(t < 2 * length + width, width, 2 * (length + width) - t)))
            lx, ly = lx - length / 2, ly - width / 2
            c, s = math.cos(yaw), math.sin(yaw)
            add(np.c_[x + c * lx - s * ly, y + s * lx + c * ly, rng.uniform(0, height, n)], lab)
        if not chunks:
            return Scan(np.zeros((0, 3)))
        return Scan(np.concatenate([c[0] for c in chunks]), np.concatenate([c[1] for c in chunks]))

    def distance_to_surface(self, points: np.ndarray, labels: np.ndarray | None = None) -> np.ndarray:
        """Distance from each point to the closest primitive surface."""
        points = np.asarray(points, dtype=float)
        best = np.full(len(points), np.inf)
        if self.ground:
            best = np.minimum(best, np.abs(points[:, 2]))
        for x0, y0, x1, y1, z0, z1, _ in self.panels:
            a, b = np.array([x0, y0]), np.array([x1, y1])
            ab = b - a
            u = np.clip(((points[:, :2] - a) @ ab) / (ab @ ab), 0, 1)
            d_xy = np.linalg.norm(points[:, :2] - (a + u[:, None] * ab), axis=1)
            dz = np.maximum(0, np.maximum(z0 - points[:, 2], points[:, 2] - z1))
            best = np.minimum(best, np.hypot(d_xy, dz))
        for x, y, r, z0, z1, _ in self.cylinders:
            d_xy = np.abs(np.hypot(points[:, 0] - x, points[:, 1] - y) - r)
            dz = np.maximum(0, np.maximum(z0 - points[:, 2], points[:, 2] - z1))
            best = np.minimum(best, np.hypot(d_xy, dz))
        for x, y, yaw, length, width, height, _ in self.boxes:
            c, s = math.cos(yaw), math.sin(yaw)
            dx, dy = points[:, 0] - x, points[:, 1] - y
            lx, ly, lz = c * dx + s * dy, -s * dx + c * dy, points[:, 2] - height / 2
            q = np.abs(np.c_[lx, ly, lz]) - np.array([length / 2, width / 2, height / 2])
            outside = np.linalg.norm(np.maximum(q, 0), axis=1)
            inside = np.minimum(q.max(axis=1), 0)
            best = np.minimum(best, np.abs(outside + inside))
        return best


def _panel(x0, y0, x1, y1, z0, z1, label):
    return [x0, y0, x1, y1, z0, z1, label]


def generate_world(seed: int, spec: WorldSpec = WorldSpec(), extent: float = 50.0) -> World:
    """Random scene inside ``[-extent, extent]^2``; identical for identical seeds."""
    rng = np.random.default_rng(seed)
    panels, cylinders, boxes = [], [], []
    for _ in range(spec.walls):
        cx, cy = rng.uniform(-0.8 * extent, 0.8 * extent, 2)
        length = rng.uniform(8.0, 25.0)
        yaw = rng.uniform(0, math.pi)
        dx, dy = 0.5 * length * math.cos(yaw), 0.5 * length * math.sin(yaw)
        panels.append(_panel(cx - dx, cy - dy, cx + dx, cy + dy, 0.0, rng.uniform(4.0, 10.0), BUILDING))
    # poles and signs keep 3 m apart from one another so they stay separate clusters
    placed: list[np.ndarray] = []

    def free_spot():
        for _ in range(1000):
            p = rng.uniform(-0.9 * extent, 0.9 * extent, 2)
            if all(np.linalg.norm(p - q) > 3.0 for q in placed):
                placed.append(p)
                return p
        raise RuntimeError("world too crowded")

    for _ in range(spec.poles):
        x, y = free_spot()
        cylinders.append([x, y, rng.uniform(0.08, 0.2), 0.0, rng.uniform(4.0, 8.0), POLE])
    for _ in range(spec.signs):
        x, y = free_spot()
        yaw = rng.uniform(0, math.pi)
        w = 0.4
        dx, dy = w * math.cos(yaw), w * math.sin(yaw)
        z0 = rng.uniform(2.0, 3.0)
        panels.append(_panel(x - dx, y - dy, x + dx, y + dy, z0, z0 + 0.8, TRAFFIC_SIGN))
    for label, count in ((CAR, spec.parked_cars), (MOVING_CAR, spec.moving_cars)):
        for _ in range(count):
            x, y = free_spot()
            boxes.append([x, y, rng.uniform(0, math.pi), 4.5, 1.8, 1.5, label])
    return World(
        extent,
        True,
        ROAD,
        np.array(panels, dtype=float).reshape(-1, 7),
        np.array(cylinders, dtype=float).reshape(-1, 6),
        np.array(boxes, dtype=float).reshape(-1, 7),
    )


# --------------------------------------------------------------------------
# ray casting
# --------------------------------------------------------------------------


def _cast_panels(o, d, panels, best, lab):
    for x0, y0, x1, y1, z0, z1, label in panels:
        ex, ey = x1 - x0, y1 - y0
        denom = d[:, 0] * ey - d[:, 1] * ex
        with np.errstate(divide="ignore", invalid="ignore"):
            wx, wy = x0 - o[:, 0], y0 - o[:, 1]
            t = (wx * ey - wy * ex) / denom
            u = (wx * d[:, 1] - wy * d[:, 0]) / denom
        z = o[:, 2] + t * d[:, 2]
        ok = (np.abs(denom) > 1e-12) & (t > 1e-9) & (u >= 0) & (u <= 1) & (z >= z0) & (z <= z1) & (t < best)
        best[ok] = t[ok]
        lab[ok] = label


def _cast_cylinders(o, d, cylinders, best, lab):
    a = d[:, 0] ** 2 + d[:, 1] ** 2
    for x, y, r, z0, z1, label in cylinders:
        px, py = o[:, 0] - x, o[:, 1] - y
        b = 2 * (px * d[:, 0] + py * d[:, 1])
        c = px * px + py * py - r * r
        disc = b * b - 4 * a * c
        with np.errstate(invalid="ignore", divide="ignore"):
            t = (-b - np.sqrt(disc)) / (2 * a)
        z = o[:, 2] + t * d[:, 2]
        ok = (disc >= 0) & (a > 1e-12) & (t > 1e-9) & (z >= z0) & (z <= z1) & (t < best)
        best[ok] = t[ok]
        lab[ok] = label


def _cast_boxes(o, d, boxes, best, lab):
    for x, y, yaw, length, width, height, label in boxes:
        c, s = math.cos(yaw), math.sin(yaw)
        ox, oy = o[:, 0] - x, o[:, 1] - y
        lo = np.c_[c * ox + s * oy, -s * ox + c * oy, o[:, 2]]
        ld = np.c_[c * d[:, 0] + s * d[:, 1], -s * d[:, 0] + c * d[:, 1], d[:, 2]]
        bmin = np.array([-length / 2, -width / 2, 0.0])
        bmax = np.array([length / 2, width / 2, height])
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (bmin - lo) / ld
            t2 = (bmax - lo) / ld
        tmin = np.nanmax(np.minimum(t1, t2), axis=1)
        tmax = np.nanmin(np.maximum(t1, t2), axis=1)
        ok = (tmax >= tmin) & (tmin > 1e-9) & (tmin < best)
        best[ok] = tmin[ok]
        lab[ok] = label


def _segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    L2 = np.maximum((ab * ab).sum(axis=1), 1e-18)
    u = np.clip(((p - a) * ab).sum(axis=1) / L2, 0.0, 1.0)
    return np.linalg.norm(a + u[:, None] * ab - p, axis=1)


def _cull(world: World, center: np.ndarray, reach: float):
    """Primitives that may be hit from within ``reach`` of ``center`` (planar distance)."""
    c = center[:2]
    panels, cylinders, boxes = world.panels, world.cylinders, world.boxes
    if len(panels):
        panels = panels[_segment_distance(c, panels[:, 0:2], panels[:, 2:4]) <= reach]
    if len(cylinders):
        cylinders = cylinders[np.linalg.norm(cylinders[:, :2] - c, axis=1) - cylinders[:, 2] <= reach]
    if len(boxes):
        half_diag = 0.5 * np.hypot(boxes[:, 3], boxes[:, 4])
        boxes = boxes[np.linalg.norm(boxes[:, :2] - c, axis=1) - half_diag <= reach]
    return panels, cylinders, boxes


def cast_rays(
    world: World, origins: np.ndarray, directions: np.ndarray, max_range: float = np.inf
) -> tuple[np.ndarray, np.ndarray]:
    """Nearest hit distance (inf for a miss) and hit label for each unit-direction ray.

    With a finite ``max_range`` primitives out of reach of every origin are skipped.
    """
    n = len(directions)
    best = np.full(n, np.inf)
    lab = np.zeros(n, np.uint16)
    if world.ground:
        with np.errstate(divide="ignore", invalid="ignore"):
            t = -origins[:, 2] / directions[:, 2]
        hit = (directions[:, 2] < -1e-12) & (t > 1e-9)
        xy = origins[:, :2] + t[:, None] * directions[:, :2]
        hit &= np.all(np.abs(xy) <= world.extent, axis=1)
        best[hit] = t[hit]
        lab[hit] = world.ground_label
    panels, cylinders, boxes = world.panels, world.cylinders, world.boxes
    if np.isfinite(max_range) and n:
        lo, hi = origins.min(axis=0), origins.max(axis=0)
        center = 0.5 * (lo + hi)
        panels, cylinders, boxes = _cull(world, center, max_range + float(np.linalg.norm(hi - lo)))
    _cast_panels(origins, directions, panels, best, lab)
    _cast_cylinders(origins, directions, cylinders, best, lab)
    _cast_boxes(origins, directions, boxes, best, lab)
    return best, lab


def sensor_directions(model: SensorModel, phase: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Unit ray directions in the sensor frame and their normalized sweep times.

    The sweep starts facing backwards (azimuth pi) and turns clockwise, so
    the time of a ray equals the azimuth-derived time used for KITTI files.
    ``phase`` in [0, 1) offsets the firing azimuths by a fraction of one step.
    """
    t_az = (np.arange(model.rays) + phase) / model.rays
    az = math.pi * (1.0 - 2.0 * t_az)
    el = np.linspace(model.min_elevation, model.max_elevation, model.channels)
    AZ, EL = np.meshgrid(az, el, indexing="ij")
    T = np.repeat(t_az, model.channels)
    d = np.c_[(np.cos(EL) * np.cos(AZ)).ravel(), (np.cos(EL) * np.sin(AZ)).ravel(), np.sin(EL).ravel()]
    return d, T


def simulate_scan(
    world: World,
    pose: Pose3,
    model: SensorModel = SensorModel(),
    noise_sigma: float = 0.0,
    label_noise: float = 0.0,
    seed: int = 0,
    sweep_motion: Pose3 | None = None,
    index: int = 0,
    duration: float = 0.1,
) -> Scan:
    """Ray-cast one sweep from ``pose`` (world-from-sensor at sweep start).

    With ``sweep_motion`` the sensor keeps moving during the sweep along
    ``exp(t * log(sweep_motion))`` and each return is expressed in the sensor
    frame at its own firing time, like a real spinning LiDAR.
    """
    rng = np.random.default_rng(seed)
    phase = rng.random() if model.azimuth_jitter else 0.5
    d_local, times = sensor_directions(model, phase)
    n = len(d_local)
    if sweep_motion is None:
        R, t = pose.rotation, pose.translation
        origins = np.repeat(t[None, :], n, axis=0)
        dirs = d_local @ R.T
    else:
        xi = se3_log(sweep_motion).as_vector()
        # pose(t) = pose * exp(t xi): origin = pose(exp(t xi) 0), direction via the rotation part
        zero = np.zeros((n, 3))
        origins = pose.transform(exp_apply_scaled(xi, times, zero))
        tips = pose.transform(exp_apply_scaled(xi, times, d_local))
        dirs = tips - origins
    rng_ranges, labels = cast_rays(world, origins, dirs, model.max_range)
    ok = np.isfinite(rng_ranges) & (rng_ranges <= model.max_range) & (rng_ranges >= model.min_range)
    ranges = rng_ranges[ok]
    if noise_sigma > 0:
        ranges = ranges + rng.normal(0.0, noise_sigma, len(ranges))
    points = d_local[ok] * ranges[:, None]
    labels = labels[ok]
    conf = np.ones(len(points))
    if label_noise > 0 and len(points):
        pool = np.array(sorted(world.labels()), dtype=np.uint16)
        flip = rng.random(len(points)) < label_noise
        if len(pool) > 1:
            # skip over the true label so a flip always changes the class
            orig = labels[flip]
            pos_orig = np.searchsorted(pool, orig)
            idx = rng.integers(0, len(pool) - 1, flip.sum())
            idx = idx + (idx >= pos_orig)
            labels = labels.copy()
            labels[flip] = pool[idx]
        conf = np.full(len(points), 1.0 - label_noise)
    return Scan(points, labels, conf, times[ok], index=index, duration=duration)


# --------------------------------------------------------------------------
# trajectories
# --------------------------------------------------------------------------


def _square_path(side: float, corner_radius: float):
    """Arc-length parametrization of a rounded square starting at (r, 0) heading +x."""
    r = corner_radius
    straight = side - 2 * r
    arc = 0.5 * math.pi * r
    segs = []
    corners = [(r, 0.0), (side, r), (side - r, side), (0.0, side - r)]
    for k, (sx, sy) in enumerate(corners):
        yaw = 0.5 * math.pi * k
        segs.append(("line", straight, sx, sy, yaw))
        if r > 0:
            ex, ey = sx + straight * math.cos(yaw), sy + straight * math.sin(yaw)
            cx, cy = ex - r * math.sin(yaw), ey + r * math.cos(yaw)
            segs.append(("arc", arc, cx, cy, yaw))
    total = sum(s[1] for s in segs)

    def at(s: float):
        s = min(max(s, 0.0), total)
        for kind, length, a, b, yaw in segs:
            if s <= length + 1e-12 or (kind, length, a, b, yaw) == segs[-1]:
                if kind == "line":
                    return a + s * math.cos(yaw), b + s * math.sin(yaw), yaw
                phi = s / r
                h = yaw + phi
                return a + r * math.sin(h), b - r * math.cos(h), h
            s -= length
        raise AssertionError

    return total, at


def generate_loop_trajectory(
    side: float = 100.0,
    scans_per_side: int = 50,
    drift: Twist6 | None = None,
    corner_radius: float = 0.0,
    height: float = 1.73,
    ramp_scans: int = 0,
) -> tuple[list[Pose3], list[Pose3]]:
    """Square loop of ``4 * scans_per_side`` poses whose last pose returns to the first.

    Returns ``(truth, odometry)`` where odometry composes every true relative
    motion with the constant per-scan bias ``exp(drift)``. With ``ramp_scans``
    the vehicle starts at rest and accelerates uniformly over that many scans.
    """
    n = 4 * scans_per_side
    total, at = _square_path(side, corner_radius)
    arc = _ramped_arclength(n, ramp_scans) * total
    truth = []
    for i in range(n):
        x, y, yaw = at(float(arc[i]))
        truth.append(Pose3.from_yaw(yaw, (x, y, height)))
    bias = se3_exp(drift) if drift is not None else Pose3.identity()
    odom = [truth[0]]
    for i in range(1, n):
        rel = truth[i - 1].inverse().compose(truth[i])
        odom.append(odom[-1].compose(rel).compose(bias))
    return truth, odom


def _ramped_arclength(n: int, ramp: int) -> np.ndarray:
    """Normalized arc length per scan: constant acceleration for ``ramp`` scans, then constant speed."""
    i = np.arange(n, dtype=float)
    if ramp <= 0:
        g = i
    else:
        g = np.where(i <= ramp, i * i / (2.0 * ramp), i - 0.5 * ramp)
    return g / g[-1] if n > 1 else g


def straight_trajectory(n: int, step: float, height: float = 1.73) -> list[Pose3]:
    return [Pose3.from_translation((i * step, 0.0, height)) for i in range(n)]


# --------------------------------------------------------------------------
# presets
# --------------------------------------------------------------------------


def generate_loop_world(seed: int, side: float = 100.0, corner_radius: float = 15.0, street_half_width: float = 9.0) -> World:
    """Buildings, poles, signs and parked cars lining a rounded square street."""
    rng = np.random.default_rng(seed)
    total, at = _square_path(side, corner_radius)
    panels, cylinders, boxes = [], [], []
    s = 0.0
    # facades on both sides, broken into blocks with gaps and varying setback
    while s < total:
        length = rng.uniform(6.0, 16.0)
        for sign in (-1.0, 1.0):
            if rng.random() < 0.2:
                continue
            off = sign * (street_half_width + rng.uniform(0.0, 4.0))
            x0, y0, h0 = at(s)
            x1, y1, h1 = at(min(s + length, total))
            n0 = np.array([-math.sin(h0), math.cos(h0)])
            n1 = np.array([-math.sin(h1), math.cos(h1)])
            a = np.array([x0, y0]) + off * n0
            b = np.array([x1, y1]) + off * n1
            height = rng.uniform(5.0, 14.0)
            panels.append(_panel(a[0], a[1], b[0], b[1], 0.0, height, BUILDING))
            # pillars and recesses: short fins sticking out of the facade toward the street
            seg = b - a
            seg_len = float(np.linalg.norm(seg))
            inward = -sign * (n0 + n1) / max(np.linalg.norm(n0 + n1), 1e-9)
            u = rng.uniform(0.5, 3.0)
            while u < seg_len:
                p = a + seg * (u / seg_len)
                q = p + inward * rng.uniform(0.3, 0.8)
                panels.append(_panel(p[0], p[1], q[0], q[1], 0.0, height, BUILDING))
                u += rng.uniform(2.5, 5.0)
        s += length + rng.uniform(1.0, 5.0)
    s = rng.uniform(0, 10)
    while s < total:
        x, y, h = at(s)
        sign = rng.choice([-1.0, 1.0])
        off = sign * rng.uniform(4.5, 7.0)
        px, py = x - off * math.sin(h), y + off * math.cos(h)
        cylinders.append([px, py, rng.uniform(0.1, 0.2), 0.0, rng.uniform(5.0, 8.0), POLE])
        if rng.random() < 0.3:
            z0 = rng.uniform(2.2, 3.0)
            panels.append(_panel(px + 0.3, py + 0.2, px + 1.1, py + 0.2, z0, z0 + 0.7, TRAFFIC_SIGN))
        s += rng.uniform(8.0, 20.0)
    s = rng.uniform(0, 10)
    while s < total:
        x, y, h = at(s)
        sign = rng.choice([-1.0, 1.0])
        off = sign * rng.uniform(5.5, 6.5)
        boxes.append([x - off * math.sin(h), y + off * math.cos(h), h + rng.normal(0, 0.05), 4.4, 1.8, 1.5, CAR])
        s += rng.uniform(10.0, 30.0)
    # trees and bushes between the curb and the facades
    s = rng.uniform(0, 5)
    while s < total:
        x, y, h = at(s)
        off = rng.choice([-1.0, 1.0]) * rng.uniform(7.3, 8.3)
        px, py = x - off * math.sin(h), y + off * math.cos(h)
        if rng.random() < 0.5:
            cylinders.append([px, py, rng.uniform(0.15, 0.3), 0.0, rng.uniform(2.5, 4.0), TRUNK])
        else:
            size = rng.uniform(0.8, 1.8)
            boxes.append([px, py, rng.uniform(0, math.pi), size, size, rng.uniform(0.6, 1.5), VEGETATION])
        s += rng.uniform(4.0, 10.0)
    extent = side + 60.0
    world = World(
        extent,
        True,
        ROAD,
        np.array(panels, dtype=float).reshape(-1, 7),
        np.array(cylinders, dtype=float).reshape(-1, 6),
        np.array(boxes, dtype=float).reshape(-1, 7),
    )
    return world


@dataclass(frozen=True)
class LoopPreset:
    seed: int = 7
    side: float = 100.0
    scans_per_side: int = 50
    corner_radius: float = 15.0
    noise_sigma: float = 0.0
    label_noise: float = 0.0
    sensor: SensorModel = SensorModel(rays=720, channels=32, max_range=60.0)
    # per-scan odometry bias injected by the pipeline, as a yaw rate in rad/scan
    drift_yaw: float = 0.0006
    motion_during_sweep: bool = True
    ramp_scans: int = 10

    def pipeline_overrides(self) -> dict[str, str]:
        """Config keys that suit this preset (``key -> value`` text)."""
        # ground stays in the height band, which caps a correct match near 0.4
        return {
            "drift_yaw": repr(self.drift_yaw),
            "submap_resolution": "0.2",
            "submap_max_range": "40",
            "loop_min_score": "0.25",
        }


def simulate_sequence(world: World, poses: list[Pose3], sensor: SensorModel, noise_sigma: float = 0.0,
                      label_noise: float = 0.0, seed: int = 0, motion_during_sweep: bool = True) -> list[Scan]:
    scans = []
    for i, p in enumerate(poses):
        motion = None
        if motion_during_sweep and len(poses) > 1:
            # the last sweep keeps the previous velocity
            k = min(i, len(poses) - 2)
            motion = poses[k].inverse().compose(poses[k + 1])
        scans.append(simulate_scan(world, p, sensor, noise_sigma, label_noise, seed=seed * 100003 + i,
                                   sweep_motion=motion, index=i))
    return scans


def loop_dataset(preset: LoopPreset = LoopPreset()) -> tuple[World, list[Pose3], list[Scan]]:
    world = generate_loop_world(preset.seed, preset.side, preset.corner_radius)
    truth, _ = generate_loop_trajectory(
        preset.side, preset.scans_per_side, None, preset.corner_radius, ramp_scans=preset.ramp_scans
    )
    scans = simulate_sequence(world, truth, preset.sensor, preset.noise_sigma, preset.label_noise, preset.seed,
                              preset.motion_during_sweep)
    return world, truth, scans


def straight_dataset(seed: int = 7, n: int = 40, step: float = 1.0,
                     sensor: SensorModel = LoopPreset().sensor) -> tuple[World, list[Pose3], list[Scan]]:
    """Constant-velocity drive down the first street of the loop world."""
    world = generate_loop_world(seed)
    truth = [Pose3.from_translation((15.0, 0.0, 0.0)).compose(p) for p in straight_trajectory(n, step)]
    return world, truth, simulate_sequence(world, truth, sensor, seed=seed)


def write_kitti_sequence(out_dir: str | Path, scans: list[Scan], poses: list[Pose3]) -> Path:
    """Write ``velodyne/``, ``labels/``, ``poses.txt``, ``calib.txt`` and ``times.txt``.

    Poses are sensor-frame and relative to the first one, as in KITTI.
    """
    out = Path(out_dir)
    (out / "velodyne").mkdir(parents=True, exist_ok=True)
    (out / "labels").mkdir(exist_ok=True)
    for i, scan in enumerate(scans):
        write_scan(scan, out / "velodyne" / f"{i:06d}.bin", out / "labels" / f"{i:06d}.label")
    first = poses[0].inverse() if poses else Pose3.identity()
    write_poses_kitti([first.compose(p) for p in poses], out / "poses.txt")
    (out / "calib.txt").write_text("Tr: 1 0 0 0 0 1 0 0 0 0 1 0\n")
    (out / "times.txt").write_text("".join(f"{i * 0.1:.6e}\n" for i in range(len(scans))))
    return out


__all__ = [
    "World",
    "WorldSpec",
    "SensorModel",
    "LoopPreset",
    "generate_world",
    "generate_loop_world",
    "simulate_scan",
    "simulate_sequence",
    "generate_loop_trajectory",
    "loop_dataset",
    "straight_dataset",
    "write_kitti_sequence",
]
