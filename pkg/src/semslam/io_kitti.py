"""Readers and writers for KITTI / SemanticKITTI files and trajectory text formats."""

from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import FormatError, Pose3, Scan


@dataclass
class SequencePaths:
    velodyne_dir: Path
    labels_dir: Path | None = None
    calib_file: Path | None = None
    poses_file: Path | None = None

    @classmethod
    def from_sequence_dir(cls, seq: str | os.PathLike, labels: str | os.PathLike | None = None) -> "SequencePaths":
        """Resolve the usual ``<seq>/velodyne``, ``<seq>/labels``, ``calib.txt``, ``poses.txt`` layout."""
        seq = Path(seq)
        if not seq.is_dir():
            raise FileNotFoundError(2, "sequence directory not found", str(seq))
        if labels is not None and not Path(labels).is_dir():
            raise FileNotFoundError(2, "label directory not found", str(labels))
        velodyne = seq / "velodyne" if (seq / "velodyne").is_dir() else seq
        if labels is None and (seq / "labels").is_dir():
            labels = seq / "labels"
        calib = seq / "calib.txt"
        poses = seq / "poses.txt"
        return cls(
            velodyne,
            Path(labels) if labels is not None else None,
            calib if calib.is_file() else None,
            poses if poses.is_file() else None,
        )

    def scan_files(self) -> list[tuple[Path, Path | None]]:
        bins = sorted(self.velodyne_dir.glob("*.bin"))
        out = []
        for expect, b in enumerate(bins):
            if not re.fullmatch(r"\d{6}", b.stem):
                raise FormatError(f"scan file {b.name} is not a zero-padded 6-digit index")
            if int(b.stem) != expect:
                raise FormatError(f"scan indices are not consecutive at {b.name}")
            label = None
            if self.labels_dir is not None:
                label = self.labels_dir / f"{b.stem}.label"
                if not label.is_file():
                    raise FormatError(f"missing label file {label}")
            out.append((b, label))
        return out


def azimuth_time_offsets(positions: np.ndarray) -> np.ndarray:
    """Normalized sweep time from azimuth; the sweep starts facing backwards and turns clockwise."""
    if len(positions) == 0:
        return np.zeros(0)
    az = np.arctan2(positions[:, 1], positions[:, 0])
    return np.clip(0.5 * (1.0 - az / math.pi), 0.0, 1.0)


def decode_labels(raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    raw = np.asarray(raw, dtype=np.uint32)
    return (raw & 0xFFFF).astype(np.uint16), (raw >> 16).astype(np.uint16)


def encode_labels(semantic: np.ndarray, instance: np.ndarray | None = None) -> np.ndarray:
    semantic = np.asarray(semantic, dtype=np.uint32) & 0xFFFF
    if instance is None:
        return semantic
    return semantic | (np.asarray(instance, dtype=np.uint32) << 16)


def read_scan(
    bin_path: str | os.PathLike,
    label_path: str | os.PathLike | None = None,
    index: int = 0,
    confidence_path: str | os.PathLike | None = None,
) -> Scan:
    """Read a velodyne ``.bin`` scan and, optionally, its SemanticKITTI ``.label``.

    ``confidence_path`` may point at a float32 file with one probability per
    point; without it every point gets confidence 1.0.
    """
    data = Path(bin_path).read_bytes()
    if len(data) % 16:
        raise FormatError("malformed scan")
    xyzi = np.frombuffer(data, dtype="<f4").reshape(-1, 4)
    positions = xyzi[:, :3].astype(float)
    n = len(positions)

    labels = None
    if label_path is not None:
        raw = Path(label_path).read_bytes()
        if len(raw) % 4:
            raise FormatError("malformed scan")
        if len(raw) // 4 != n:
            raise FormatError("label/scan length mismatch")
        labels, _ = decode_labels(np.frombuffer(raw, dtype="<u4"))

    confidences = None
    if confidence_path is not None:
        conf = np.frombuffer(Path(confidence_path).read_bytes(), dtype="<f4").astype(float)
        if len(conf) != n:
            raise FormatError("confidence/scan length mismatch")
        confidences = np.clip(conf, 0.0, 1.0)

    return Scan(positions, labels, confidences, azimuth_time_offsets(positions), index=index)


def read_instances(label_path: str | os.PathLike) -> np.ndarray:
    return decode_labels(np.fromfile(label_path, dtype="<u4"))[1]


def write_scan(scan: Scan, bin_path: str | os.PathLike, label_path: str | os.PathLike | None = None,
               intensity: np.ndarray | None = None) -> None:
    xyzi = np.zeros((len(scan), 4), dtype="<f4")
    xyzi[:, :3] = scan.positions
    if intensity is not None:
        xyzi[:, 3] = intensity
    Path(bin_path).write_bytes(xyzi.tobytes())
    if label_path is not None:
        Path(label_path).write_bytes(encode_labels(scan.labels).astype("<u4").tobytes())


def _pose_from_row(values: Sequence[float], lineno: int) -> Pose3:
    M = np.asarray(values, dtype=float).reshape(3, 4)
    R = M[:, :3]
    # project onto SO(3); reject matrices that are not close to a rotation
    U, _, Vt = np.linalg.svd(R)
    R_ortho = U @ Vt
    if np.linalg.det(R_ortho) < 0:
        raise FormatError(f"malformed pose line {lineno}: improper rotation")
    if np.max(np.abs(R - R_ortho)) >= 1e-3:
        raise FormatError(f"malformed pose line {lineno}: rotation not orthonormal")
    return Pose3.from_rt(R_ortho, M[:, 3])


def read_poses_kitti(path: str | os.PathLike) -> list[Pose3]:
    poses = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) != 12:
                raise FormatError(f"malformed pose line {lineno}")
            try:
                values = [float(t) for t in tokens]
            except ValueError:
                raise FormatError(f"malformed pose line {lineno}") from None
            poses.append(_pose_from_row(values, lineno))
    return poses


def _fmt(v: float) -> str:
    s = f"{v:.9g}"
    return "0" if s == "-0" else s


def write_poses_kitti(trajectory: Sequence[Pose3], path: str | os.PathLike) -> None:
    with open(path, "w") as f:
        for p in trajectory:
            M = p.matrix()[:3, :].reshape(-1)
            f.write(" ".join(_fmt(v) for v in M) + "\n")


def write_poses_tum(trajectory: Sequence[Pose3], path: str | os.PathLike, timestamps: Sequence[float] | None = None,
                    period: float = 0.1) -> None:
    """TUM format: ``timestamp tx ty tz qx qy qz qw``."""
    with open(path, "w") as f:
        for i, p in enumerate(trajectory):
            ts = timestamps[i] if timestamps is not None else i * period
            w, x, y, z = p.quat
            vals = [*p.translation, x, y, z, w]
            f.write(f"{ts:.6f} " + " ".join(_fmt(v) for v in vals) + "\n")


def read_poses_tum(path: str | os.PathLike) -> tuple[list[float], list[Pose3]]:
    stamps, poses = [], []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            tokens = line.split()
            if not tokens or tokens[0].startswith("#"):
                continue
            if len(tokens) != 8:
                raise FormatError(f"malformed pose line {lineno}")
            ts, tx, ty, tz, qx, qy, qz, qw = (float(t) for t in tokens)
            stamps.append(ts)
            poses.append(Pose3(np.array([qw, qx, qy, qz]), (tx, ty, tz)))
    return stamps, poses


def read_trajectory(path: str | os.PathLike) -> list[Pose3]:
    """Read either KITTI (12 columns) or TUM (8 columns) trajectories."""
    with open(path) as f:
        for line in f:
            tokens = line.split()
            if tokens and not tokens[0].startswith("#"):
                if len(tokens) == 8:
                    return read_poses_tum(path)[1]
                break
    return read_poses_kitti(path)


def read_calib(path: str | os.PathLike) -> Pose3:
    """Velodyne-to-camera transform ``Tr`` from a KITTI ``calib.txt``."""
    with open(path) as f:
        for line in f:
            key, _, rest = line.partition(":")
            if key.strip() in ("Tr", "Tr_velo_to_cam"):
                values = [float(v) for v in rest.split()]
                if len(values) != 12:
                    raise FormatError(f"malformed calibration entry {key.strip()}")
                return _pose_from_row(values, 0)
    raise FormatError(f"no Tr entry in {path}")
