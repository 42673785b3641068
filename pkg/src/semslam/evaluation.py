"""Trajectory metrics: Umeyama alignment, ATE (3D/2D), KITTI segment RTE, per-axis error."""

from __future__ import annotations

import os
from collections.abc import Sequence

import numpy as np

from .core import Pose3, SemslamError

SEGMENT_LENGTHS = (100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0)


class DegenerateAlignmentError(SemslamError, ValueError):
    pass


def _positions(traj) -> np.ndarray:
    if len(traj) and isinstance(traj[0], Pose3):
        return np.array([p.translation for p in traj], dtype=float)
    return np.asarray(traj, dtype=float)


def umeyama_align(est, gt, with_scale: bool = False) -> tuple[Pose3 | np.ndarray, float]:
    """Least-squares ``gt ~ s R est + t``.

    Works for 2D or 3D positions; returns ``(transform, scale)`` where the
    transform is a Pose3 in 3D and a 3x3 homogeneous matrix in 2D.
    """
    x = _positions(est)
    y = _positions(gt)
    if x.shape != y.shape:
        raise ValueError("trajectory length mismatch")
    n, d = x.shape
    if n < 3:
        raise DegenerateAlignmentError("alignment needs at least 3 positions")
    mx, my = x.mean(axis=0), y.mean(axis=0)
    xc, yc = x - mx, y - my
    cov = yc.T @ xc / n
    if np.linalg.matrix_rank(cov, tol=1e-12 * max(1.0, np.abs(cov).max())) < 2:
        raise DegenerateAlignmentError("degenerate covariance in alignment (collinear positions); evaluate without alignment")
    U, D, Vt = np.linalg.svd(cov)
    S = np.eye(d)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[-1, -1] = -1.0
    R = U @ S @ Vt
    s = float(np.trace(np.diag(D) @ S) / (xc * xc).sum() * n) if with_scale else 1.0
    t = my - s * R @ mx
    if d == 3:
        return Pose3.from_rt(R, t), s
    T = np.eye(d + 1)
    T[:d, :d], T[:d, d] = R, t
    return T, s


def apply_alignment(positions: np.ndarray, transform, scale: float) -> np.ndarray:
    if isinstance(transform, Pose3):
        return scale * positions @ transform.rotation.T + transform.translation
    d = positions.shape[1]
    return scale * positions @ transform[:d, :d].T + transform[:d, d]


def _project(p: np.ndarray, mode: str) -> np.ndarray:
    if mode == "3d":
        return p
    if mode == "2d":
        return p[:, :2]
    raise ValueError(f"unknown ATE mode {mode!r}")


def aligned_positions(est, gt, mode: str = "3d", align: bool = True, with_scale: bool = False):
    x = _project(_positions(est), mode)
    y = _project(_positions(gt), mode)
    if x.shape != y.shape:
        raise ValueError(f"trajectory length mismatch: {len(x)} vs {len(y)}")
    if align:
        T, s = umeyama_align(x, y, with_scale)
        x = apply_alignment(x, T, s)
    return x, y


def ape(est, gt, mode: str = "3d", align: bool = True, with_scale: bool = False) -> np.ndarray:
    """Per-pose position error after optional alignment."""
    x, y = aligned_positions(est, gt, mode, align, with_scale)
    return np.linalg.norm(x - y, axis=1)


def ate(est, gt, mode: str = "3d", align: bool = True, with_scale: bool = False) -> float:
    """RMSE of index-wise position distances; ``2d`` drops z before aligning."""
    e = ape(est, gt, mode, align, with_scale)
    if len(e) == 0:
        return 0.0
    return float(np.sqrt(np.mean(e * e)))


def per_axis_error(est, gt, aligned: bool = False) -> np.ndarray:
    x, y = aligned_positions(est, gt, "3d", aligned)
    return np.sqrt(np.mean((x - y) ** 2, axis=0))


def path_lengths(traj: Sequence[Pose3]) -> np.ndarray:
    p = _positions(traj)
    if len(p) == 0:
        return np.zeros(0)
    return np.r_[0.0, np.cumsum(np.linalg.norm(np.diff(p, axis=0), axis=1))]


def rte_segments(est: Sequence[Pose3], gt: Sequence[Pose3], lengths=SEGMENT_LENGTHS) -> list[tuple[int, float, float, float]]:
    """Every (start, L, translation error / L, rotation error / L) over valid segments."""
    if len(est) != len(gt):
        raise ValueError("trajectory length mismatch")
    dist = path_lengths(gt)
    out = []
    for L in lengths:
        # first pose strictly farther than L along the path
        ends = np.searchsorted(dist, dist + L, side="right")
        for i in range(len(gt)):
            j = int(ends[i])
            if j >= len(gt):
                break
            gt_rel = gt[i].inverse().compose(gt[j])
            est_rel = est[i].inverse().compose(est[j])
            E = gt_rel.inverse().compose(est_rel)
            out.append((i, L, float(np.linalg.norm(E.translation)) / L, E.angle() / L))
    return out


def rte_kitti(est: Sequence[Pose3], gt: Sequence[Pose3], lengths=SEGMENT_LENGTHS) -> tuple[float, float]:
    """Mean KITTI relative error: (translation percent, rotation degrees per meter)."""
    segs = rte_segments(est, gt, lengths)
    if not segs:
        raise ValueError("no valid segments")
    arr = np.array([(s[2], s[3]) for s in segs])
    return float(100.0 * arr[:, 0].mean()), float(np.degrees(arr[:, 1].mean()))


def change_frame(traj: Sequence[Pose3], calib: Pose3) -> list[Pose3]:
    """Re-express camera-frame poses in the LiDAR frame: ``Tr^-1 P Tr``."""
    inv = calib.inverse()
    return [inv.compose(p).compose(calib) for p in traj]


def write_ape_csv(errors: np.ndarray, path: str | os.PathLike) -> None:
    with open(path, "w") as f:
        f.write("index,ape\n")
        for i, e in enumerate(errors):
            f.write(f"{i},{e:.9g}\n")


def evaluate(est, gt, metrics: Sequence[str] = ("ate2d", "ate3d", "rte"), align: bool = True) -> dict[str, float]:
    out = {}
    for m in metrics:
        if m == "ate3d":
            out[m] = ate(est, gt, "3d", align)
        elif m == "ate2d":
            out[m] = ate(est, gt, "2d", align)
        elif m == "rte":
            t, r = rte_kitti(est, gt)
            out["rte_trans_pct"] = t
            out["rte_rot_deg_per_m"] = r
        else:
            raise ValueError(f"unknown metric {m!r}")
    return out
