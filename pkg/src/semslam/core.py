"""Geometric primitives shared by every stage of the pipeline.

Poses are SE(3) values backed by a unit quaternion (w, x, y, z) plus a
translation. Scans are stored column-wise (one numpy array per attribute)
so the hot loops stay vectorized; :class:`LabeledPoint` is the per-point
view used at API boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.spatial.transform import Rotation

_SMALL_ANGLE = 1e-8
_SERIES_ANGLE = 1e-3  # Taylor series for the V coefficients below this angle


class SemslamError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(SemslamError, ValueError):
    pass


class FormatError(SemslamError, ValueError):
    """A file on disk does not match its declared format."""


class UsageError(SemslamError, RuntimeError):
    pass


class LogSingularityError(SemslamError, ValueError):
    pass


# --------------------------------------------------------------------------
# quaternion helpers, (w, x, y, z) order
# --------------------------------------------------------------------------


def _quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n == 0.0:
        raise ValueError("zero quaternion")
    q = q / n
    # canonical hemisphere keeps log() on the principal branch
    return -q if q[0] < 0 else q


def _quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def _quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def _matrix_to_quat(R: np.ndarray) -> np.ndarray:
    x, y, z, w = Rotation.from_matrix(R).as_quat()
    return np.array([w, x, y, z])


def skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


# --------------------------------------------------------------------------
# SE(3)
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Pose3:
    """Rigid transform ``x -> R x + t``; ``quat`` is (w, x, y, z)."""

    quat: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "quat", _readonly(_quat_normalize(self.quat)))
        t = np.asarray(self.translation, dtype=float).reshape(3)
        object.__setattr__(self, "translation", _readonly(t))

    @classmethod
    def identity(cls) -> "Pose3":
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @classmethod
    def from_rt(cls, rotation: np.ndarray, translation=(0.0, 0.0, 0.0)) -> "Pose3":
        return cls(_matrix_to_quat(np.asarray(rotation, dtype=float)), translation)

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> "Pose3":
        T = np.asarray(T, dtype=float)
        return cls.from_rt(T[:3, :3], T[:3, 3])

    @classmethod
    def from_translation(cls, t) -> "Pose3":
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), t)

    @classmethod
    def from_yaw(cls, yaw: float, translation=(0.0, 0.0, 0.0)) -> "Pose3":
        h = 0.5 * yaw
        return cls(np.array([math.cos(h), 0.0, 0.0, math.sin(h)]), translation)

    @cached_property
    def rotation(self) -> np.ndarray:
        return _readonly(_quat_to_matrix(self.quat))

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def compose(self, other: "Pose3") -> "Pose3":
        q = _quat_mul(self.quat, other.quat)
        t = self.rotation @ other.translation + self.translation
        return Pose3(q, t)

    __matmul__ = compose

    def inverse(self) -> "Pose3":
        qi = self.quat * np.array([1.0, -1.0, -1.0, -1.0])
        return Pose3(qi, -(self.rotation.T @ self.translation))

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Apply to a single 3-vector or an (N, 3) array."""
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def angle(self) -> float:
        """Rotation angle in radians, in [0, pi]."""
        return 2.0 * math.atan2(np.linalg.norm(self.quat[1:]), abs(self.quat[0]))

    def yaw(self) -> float:
        R = self.rotation
        return math.atan2(R[1, 0], R[0, 0])

    def allclose(self, other: "Pose3", atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, atol=atol)
            and np.allclose(self.translation, other.translation, atol=atol)
        )

    def __repr__(self) -> str:
        return f"Pose3(quat={np.round(self.quat, 9).tolist()}, translation={np.round(self.translation, 9).tolist()})"


@dataclass(frozen=True, eq=False)
class Twist6:
    """Element of se(3): rotational part in radians, translational in meters."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", _readonly(np.asarray(self.rotation, float).reshape(3)))
        object.__setattr__(self, "translation", _readonly(np.asarray(self.translation, float).reshape(3)))

    @classmethod
    def zero(cls) -> "Twist6":
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_vector(cls, xi) -> "Twist6":
        xi = np.asarray(xi, dtype=float)
        return cls(xi[:3], xi[3:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.rotation, self.translation])

    def __mul__(self, s: float) -> "Twist6":
        return Twist6(self.rotation * s, self.translation * s)

    __rmul__ = __mul__


def so3_exp(omega: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(omega))
    W = skew(omega)
    if theta < _SMALL_ANGLE:
        return np.eye(3) + W + 0.5 * W @ W
    return np.eye(3) + math.sin(theta) / theta * W + (1 - math.cos(theta)) / theta**2 * W @ W


def _exp_coefficients(theta: float) -> tuple[float, float]:
    """``(1 - cos t) / t^2`` and ``(t - sin t) / t^3``, by series near zero."""
    if theta < _SERIES_ANGLE:
        t2 = theta * theta
        return 0.5 - t2 / 24.0 + t2 * t2 / 720.0, 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    return (1 - math.cos(theta)) / theta**2, (theta - math.sin(theta)) / theta**3


def _log_coefficient(theta: float) -> float:
    """``(1 - (t/2) cot(t/2)) / t^2``, the W^2 factor of V^-1."""
    if theta < _SERIES_ANGLE:
        t2 = theta * theta
        return 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    h = 0.5 * theta
    return (1.0 - h * math.cos(h) / math.sin(h)) / theta**2


def se3_exp(xi: Twist6) -> Pose3:
    omega, v = xi.rotation, xi.translation
    theta = float(np.linalg.norm(omega))
    W = skew(omega)
    W2 = W @ W
    b, c = _exp_coefficients(theta)
    V = np.eye(3) + b * W + c * W2
    if theta < _SMALL_ANGLE:
        q = np.concatenate([[1.0], 0.5 * omega])
    else:
        q = np.concatenate([[math.cos(0.5 * theta)], math.sin(0.5 * theta) / theta * omega])
    return Pose3(q, V @ v)


def se3_log(p: Pose3) -> Twist6:
    q = p.quat
    s = float(np.linalg.norm(q[1:]))
    theta = 2.0 * math.atan2(s, q[0])
    if theta >= math.pi - 1e-12:
        raise LogSingularityError("log branch singularity")
    omega = 2.0 * q[1:] if s < 0.5 * _SMALL_ANGLE else theta / s * q[1:]
    W = skew(omega)
    V_inv = np.eye(3) - 0.5 * W + _log_coefficient(theta) * W @ W
    return Twist6(omega, V_inv @ p.translation)


def transform_point(p: Pose3, x) -> np.ndarray:
    return p.transform(x)


def compose(a: Pose3, b: Pose3) -> Pose3:
    return a.compose(b)


def inverse(p: Pose3) -> Pose3:
    return p.inverse()


def interpolate(motion: Pose3, fraction: float) -> Pose3:
    """``exp(fraction * log(motion))``; constant-velocity sub-motion."""
    return se3_exp(se3_log(motion) * fraction)


# --------------------------------------------------------------------------
# SE(2), used by the 2D submaps and the pose graph
# --------------------------------------------------------------------------


def wrap_angle(a):
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi


@dataclass(frozen=True)
class SE2:
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    @classmethod
    def from_pose3(cls, p: Pose3) -> "SE2":
        return cls(float(p.translation[0]), float(p.translation[1]), p.yaw())

    def compose(self, o: "SE2") -> "SE2":
        c, s = math.cos(self.theta), math.sin(self.theta)
        return SE2(
            self.x + c * o.x - s * o.y,
            self.y + s * o.x + c * o.y,
            float(wrap_angle(self.theta + o.theta)),
        )

    __matmul__ = compose

    def inverse(self) -> "SE2":
        c, s = math.cos(self.theta), math.sin(self.theta)
        return SE2(-c * self.x - s * self.y, s * self.x - c * self.y, -self.theta)

    def transform(self, pts: np.ndarray) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        pts = np.asarray(pts, dtype=float)
        return pts @ np.array([[c, s], [-s, c]]) + np.array([self.x, self.y])

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])


def split_yaw(p: Pose3) -> tuple[float, np.ndarray]:
    """Split ``R = Rz(yaw) @ R_tilt``; returns (yaw, R_tilt)."""
    yaw = p.yaw()
    c, s = math.cos(yaw), math.sin(yaw)
    Rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return yaw, Rz.T @ p.rotation


def with_planar(p: Pose3, planar: SE2) -> Pose3:
    """Replace x, y, yaw of ``p`` and keep z, roll and pitch."""
    _, tilt = split_yaw(p)
    c, s = math.cos(planar.theta), math.sin(planar.theta)
    Rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return Pose3.from_rt(Rz @ tilt, (planar.x, planar.y, p.translation[2]))


# --------------------------------------------------------------------------
# points and scans
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LabeledPoint:
    position: tuple[float, float, float]
    label: int = 0
    confidence: float = 1.0
    time_offset: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "position", tuple(float(v) for v in self.position))
        if not 0 <= self.label <= 0xFFFF:
            raise ValueError(f"label {self.label} outside uint16")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        if not 0.0 <= self.time_offset <= 1.0:
            raise ValueError(f"time_offset {self.time_offset} outside [0, 1]")


@dataclass(eq=False)
class Scan:
    """A LiDAR sweep stored column-wise.

    ``positions`` is (N, 3) in the sensor frame; ``labels`` uint16,
    ``confidences`` and ``time_offsets`` float64 in [0, 1].
    """

    positions: np.ndarray
    labels: np.ndarray | None = None
    confidences: np.ndarray | None = None
    time_offsets: np.ndarray | None = None
    index: int = 0
    duration: float = 0.1

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        n = len(self.positions)
        self.labels = (
            np.zeros(n, np.uint16) if self.labels is None else np.asarray(self.labels).astype(np.uint16)
        )
        self.confidences = (
            np.ones(n) if self.confidences is None else np.asarray(self.confidences, dtype=float)
        )
        self.time_offsets = (
            np.zeros(n) if self.time_offsets is None else np.asarray(self.time_offsets, dtype=float)
        )
        if not (len(self.labels) == len(self.confidences) == len(self.time_offsets) == n):
            raise ValueError("scan columns have different lengths")

    def __len__(self) -> int:
        return len(self.positions)

    @classmethod
    def from_points(cls, points: Iterable[LabeledPoint], index: int = 0, duration: float = 0.1) -> "Scan":
        points = list(points)
        if not points:
            return cls(np.zeros((0, 3)), index=index, duration=duration)
        return cls(
            np.array([p.position for p in points]),
            np.array([p.label for p in points]),
            np.array([p.confidence for p in points]),
            np.array([p.time_offset for p in points]),
            index=index,
            duration=duration,
        )

    def point(self, i: int) -> LabeledPoint:
        return LabeledPoint(
            tuple(self.positions[i]), int(self.labels[i]), float(self.confidences[i]), float(self.time_offsets[i])
        )

    def points(self) -> list[LabeledPoint]:
        return [self.point(i) for i in range(len(self))]

    def select(self, idx) -> "Scan":
        return Scan(
            self.positions[idx],
            self.labels[idx],
            self.confidences[idx],
            self.time_offsets[idx],
            index=self.index,
            duration=self.duration,
        )

    def with_positions(self, positions: np.ndarray) -> "Scan":
        return Scan(positions, self.labels, self.confidences, self.time_offsets, self.index, self.duration)

    def transformed(self, pose: Pose3) -> "Scan":
        return self.with_positions(pose.transform(self.positions))

    @staticmethod
    def concatenate(scans: Sequence["Scan"], index: int = 0) -> "Scan":
        if not scans:
            return Scan(np.zeros((0, 3)), index=index)
        return Scan(
            np.concatenate([s.positions for s in scans]),
            np.concatenate([s.labels for s in scans]),
            np.concatenate([s.confidences for s in scans]),
            np.concatenate([s.time_offsets for s in scans]),
            index=index,
            duration=scans[0].duration,
        )


# SemanticKITTI class ids
SEMANTIC_KITTI_LABELS: dict[int, str] = {
    0: "unlabeled",
    1: "outlier",
    10: "car",
    11: "bicycle",
    13: "bus",
    15: "motorcycle",
    16: "on-rails",
    18: "truck",
    20: "other-vehicle",
    30: "person",
    31: "bicyclist",
    32: "motorcyclist",
    40: "road",
    44: "parking",
    48: "sidewalk",
    49: "other-ground",
    50: "building",
    51: "fence",
    52: "other-structure",
    60: "lane-marking",
    70: "vegetation",
    71: "trunk",
    72: "terrain",
    80: "pole",
    81: "traffic-sign",
    99: "other-object",
    252: "moving-car",
    253: "moving-bicyclist",
    254: "moving-person",
    255: "moving-motorcyclist",
    256: "moving-on-rails",
    257: "moving-bus",
    258: "moving-truck",
    259: "moving-other-vehicle",
}

UNLABELED = 0
CAR, ROAD, BUILDING, VEGETATION, TRUNK, POLE, TRAFFIC_SIGN = 10, 40, 50, 70, 71, 80, 81


@dataclass(frozen=True)
class SemanticConfig:
    dynamic_labels: frozenset[int] = frozenset(range(252, 260))
    critical_labels: frozenset[int] = frozenset({POLE, TRAFFIC_SIGN})
    kappa_neutral: float = 1.0
    confidence_clamp: tuple[float, float] = (0.05, 0.95)
    label_names: Mapping[int, str] = field(default_factory=lambda: dict(SEMANTIC_KITTI_LABELS))

    def __post_init__(self):
        object.__setattr__(self, "dynamic_labels", frozenset(int(v) for v in self.dynamic_labels))
        object.__setattr__(self, "critical_labels", frozenset(int(v) for v in self.critical_labels))
        p_min, p_max = self.confidence_clamp
        if not 0.0 < p_min < p_max < 1.0:
            raise ConfigError(f"confidence_clamp must satisfy 0 < p_min < p_max < 1, got {self.confidence_clamp}")
        if not 0.0 <= self.kappa_neutral <= 1.0:
            raise ConfigError(f"kappa_neutral must lie in [0, 1], got {self.kappa_neutral}")
        overlap = self.dynamic_labels & self.critical_labels
        if overlap:
            raise ConfigError(f"labels {sorted(overlap)} are both dynamic and critical")

    def label_id(self, name_or_id: str | int) -> int:
        """Resolve a class name such as ``"car"`` or a numeric id."""
        if isinstance(name_or_id, int) or str(name_or_id).strip().isdigit():
            return int(name_or_id)
        name = str(name_or_id).strip()
        for k, v in self.label_names.items():
            if v == name:
                return int(k)
        raise ConfigError(f"unknown label name {name!r}")

    def critical_mask(self, labels: np.ndarray) -> np.ndarray:
        if not self.critical_labels:
            return np.zeros(len(labels), bool)
        return np.isin(labels, np.fromiter(self.critical_labels, dtype=np.int64))
