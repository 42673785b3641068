"""Per-scan preprocessing: dynamic-class removal, deskewing and label-aware voxel downsampling."""

from __future__ import annotations

import numpy as np

from .core import ConfigError, Pose3, Scan, SemanticConfig, se3_log

DEFAULT_VOXEL_SIZE = 1.0
DEFAULT_MAX_PER_VOXEL = 20
DEFAULT_ALPHA = 1.5


def filter_dynamic(scan: Scan, cfg: SemanticConfig) -> Scan:
    if not cfg.dynamic_labels:
        return scan
    keep = ~np.isin(scan.labels, np.fromiter(cfg.dynamic_labels, dtype=np.int64))
    return scan.select(keep)


def exp_apply_scaled(xi: np.ndarray, fractions: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Apply ``exp(f_i * xi)`` to ``points[i]`` for every i, vectorized."""
    omega, v = xi[:3], xi[3:]
    theta = np.linalg.norm(omega)
    f = fractions[:, None]
    if theta < 1e-8:
        # first-order series; the second-order term is below float resolution here
        wxp = np.cross(omega, points)
        return points + f * wxp + f * v
    k = omega / theta
    th = fractions * theta
    c, s = np.cos(th)[:, None], np.sin(th)[:, None]
    kxp = np.cross(k, points)
    kdp = points @ k
    rotated = points * c + kxp * s + np.outer(kdp, k) * (1 - c)
    # V(f*omega) @ (f*v) expressed with the unit axis k
    kxv = np.cross(k, v)
    kxkxv = np.cross(k, kxv)
    th_ = th[:, None]
    with np.errstate(invalid="ignore", divide="ignore"):
        a = np.where(th_ > 0, (1 - c) / th_, 0.0)
        b = np.where(th_ > 0, (th_ - s) / th_, 0.0)
    trans = f * v + f * (a * kxv + b * kxkxv)
    return rotated + trans


def deskew(scan: Scan, relative_motion: Pose3) -> Scan:
    """Undo ego-motion during the sweep.

    ``relative_motion`` is the sensor motion from sweep start to sweep end.
    A point stamped ``t`` is mapped through ``exp(t * log(relative_motion))``,
    which expresses every point in the sensor frame at the start of the sweep.
    """
    if len(scan) == 0:
        return scan
    xi = se3_log(relative_motion).as_vector()
    if not np.any(xi):
        return scan
    return scan.with_positions(exp_apply_scaled(xi, scan.time_offsets, scan.positions))


def voxel_keys(positions: np.ndarray, voxel_size: float) -> np.ndarray:
    return np.floor(positions / voxel_size).astype(np.int64)


def _rank_in_group(group: np.ndarray) -> np.ndarray:
    """0-based arrival rank of every element within its group id."""
    order = np.argsort(group, kind="stable")
    g = group[order]
    starts = np.r_[0, np.flatnonzero(g[1:] != g[:-1]) + 1]
    run_start = np.repeat(starts, np.diff(np.r_[starts, len(g)]))
    ranks = np.empty(len(group), dtype=np.int64)
    ranks[order] = np.arange(len(g)) - run_start
    return ranks


def _capped_voxel_mask(scan: Scan, v: float, cap: int, cfg: SemanticConfig) -> np.ndarray:
    n = len(scan)
    if n == 0:
        return np.zeros(0, bool)
    critical = cfg.critical_mask(scan.labels)
    keep = critical.copy()
    normal = np.flatnonzero(~critical)
    if len(normal):
        _, group = np.unique(voxel_keys(scan.positions[normal], v), axis=0, return_inverse=True)
        ranks = _rank_in_group(group.reshape(-1))
        keep[normal[ranks < cap]] = True
    return keep


def adaptive_voxel_downsample(
    scan: Scan,
    v: float = DEFAULT_VOXEL_SIZE,
    max_per_voxel: int = DEFAULT_MAX_PER_VOXEL,
    cfg: SemanticConfig | None = None,
) -> Scan:
    """Keep the first ``max_per_voxel`` non-critical points of each voxel plus every critical point.

    Original coordinates are kept and scan order is preserved.
    """
    if v <= 0:
        raise ConfigError(f"voxel size must be positive, got {v}")
    if max_per_voxel < 1:
        raise ConfigError(f"max_per_voxel must be >= 1, got {max_per_voxel}")
    cfg = cfg or SemanticConfig()
    return scan.select(_capped_voxel_mask(scan, v, max_per_voxel, cfg))


def registration_downsample(
    scan: Scan, v: float = DEFAULT_VOXEL_SIZE, cfg: SemanticConfig | None = None, alpha: float = DEFAULT_ALPHA
) -> Scan:
    """Coarse pass at ``alpha * v``: one point per voxel, critical points always kept."""
    if v <= 0 or alpha <= 0:
        raise ConfigError(f"voxel size must be positive, got {v} * {alpha}")
    cfg = cfg or SemanticConfig()
    return scan.select(_capped_voxel_mask(scan, alpha * v, 1, cfg))
