"""Hash-grid local map of labeled points, the registration target."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import LabeledPoint, Pose3, Scan, SemanticConfig
from .preprocessing import _rank_in_group, voxel_keys

_BIAS = 1 << 20
_MASK = (1 << 21) - 1
DEDUP_DISTANCE = 1e-6


def pack_keys(keys: np.ndarray) -> np.ndarray:
    """Pack integer (N, 3) voxel coordinates into one int64 each (21 bits per axis)."""
    k = keys.astype(np.int64) + _BIAS
    return (k[:, 0] << 42) | (k[:, 1] << 21) | k[:, 2]


def unpack_keys(packed: np.ndarray) -> np.ndarray:
    packed = np.asarray(packed, dtype=np.int64)
    return np.stack([(packed >> 42) & _MASK, (packed >> 21) & _MASK, packed & _MASK], axis=1) - _BIAS


@dataclass
class _Index:
    keys: np.ndarray  # sorted unique packed cell keys
    starts: np.ndarray  # first slot of each cell in ``order``
    counts: np.ndarray
    order: np.ndarray  # point ids grouped by cell
    sorted_pos: np.ndarray  # positions[order]


def _shell_offsets(d: int) -> np.ndarray:
    r = np.arange(-d, d + 1)
    g = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 3)
    return g[np.abs(g).max(axis=1) == d]


class SemanticVoxelMap:
    """Points in world frame bucketed by ``floor(p / voxel_size)``.

    Each cell holds at most ``max_points_per_voxel`` non-critical points;
    critical-label points are admitted past that cap up to their own, larger
    ``max_critical_per_voxel`` so thin landmarks cannot grow without bound.
    """

    def __init__(
        self,
        voxel_size: float = 1.0,
        max_points_per_voxel: int = 20,
        max_range: float = 100.0,
        cfg: SemanticConfig | None = None,
        max_critical_per_voxel: int = 100,
    ):
        if voxel_size <= 0:
            raise ValueError("voxel_size must be positive")
        self.voxel_size = float(voxel_size)
        self.max_points_per_voxel = int(max_points_per_voxel)
        self.max_range = float(max_range)
        self.max_critical_per_voxel = int(max_critical_per_voxel)
        self.cfg = cfg or SemanticConfig()
        self.positions = np.zeros((0, 3))
        self.labels = np.zeros(0, np.uint16)
        self.confidences = np.zeros(0)
        self._packed = np.zeros(0, np.int64)
        self._critical = np.zeros(0, bool)
        self._index: _Index | None = None

    def __len__(self) -> int:
        return len(self.positions)

    def empty(self) -> bool:
        return len(self.positions) == 0

    def copy(self) -> "SemanticVoxelMap":
        m = SemanticVoxelMap(
            self.voxel_size, self.max_points_per_voxel, self.max_range, self.cfg, self.max_critical_per_voxel
        )
        for name in ("positions", "labels", "confidences", "_packed", "_critical"):
            setattr(m, name, getattr(self, name).copy())
        return m

    def cells(self) -> dict[tuple[int, int, int], np.ndarray]:
        """Cell key -> indices of the points stored there."""
        out: dict[tuple[int, int, int], np.ndarray] = {}
        if self.empty():
            return out
        uk, inv = np.unique(self._packed, return_inverse=True)
        coords = unpack_keys(uk)
        order = np.argsort(inv, kind="stable")
        splits = np.split(order, np.flatnonzero(np.diff(inv[order])) + 1)
        for c, idx in zip(coords, splits):
            out[tuple(int(v) for v in c)] = idx
        return out

    def points_as_scan(self) -> Scan:
        return Scan(self.positions.copy(), self.labels.copy(), self.confidences.copy())

    # ------------------------------------------------------------------ update

    def insert_points(self, positions: np.ndarray, labels: np.ndarray, confidences: np.ndarray) -> int:
        """Insert world-frame points; returns how many were stored."""
        positions = np.asarray(positions, dtype=float).reshape(-1, 3)
        if len(positions) == 0:
            return 0
        labels = np.asarray(labels).astype(np.uint16)
        confidences = np.asarray(confidences, dtype=float)

        # drop points within DEDUP_DISTANCE of one already stored, then batch-internal repeats
        if not self.empty():
            _, dist = self.nearest(positions, DEDUP_DISTANCE)
            fresh = ~np.isfinite(dist)
        else:
            fresh = np.ones(len(positions), bool)
        quant = np.round(positions / DEDUP_DISTANCE).astype(np.int64)
        _, first = np.unique(quant, axis=0, return_index=True)
        unique_mask = np.zeros(len(positions), bool)
        unique_mask[first] = True
        sel = np.flatnonzero(fresh & unique_mask)
        if len(sel) == 0:
            return 0
        positions, labels, confidences = positions[sel], labels[sel], confidences[sel]

        packed = pack_keys(voxel_keys(positions, self.voxel_size))
        critical = self.cfg.critical_mask(labels)
        accept = np.zeros(len(positions), bool)
        for is_crit, cap in ((False, self.max_points_per_voxel), (True, self.max_critical_per_voxel)):
            members = np.flatnonzero(critical == is_crit)
            if len(members) == 0:
                continue
            pk = packed[members]
            existing_keys, existing_counts = np.unique(self._packed[self._critical == is_crit], return_counts=True)
            have = np.zeros(len(pk), dtype=np.int64)
            if len(existing_keys):
                pos = np.minimum(np.searchsorted(existing_keys, pk), len(existing_keys) - 1)
                have = np.where(existing_keys[pos] == pk, existing_counts[pos], 0)
            _, group = np.unique(pk, return_inverse=True)
            rank = _rank_in_group(group.reshape(-1))
            accept[members[have + rank < cap]] = True

        if not accept.any():
            return 0
        self.positions = np.concatenate([self.positions, positions[accept]])
        self.labels = np.concatenate([self.labels, labels[accept]])
        self.confidences = np.concatenate([self.confidences, confidences[accept]])
        self._packed = np.concatenate([self._packed, packed[accept]])
        self._critical = np.concatenate([self._critical, critical[accept]])
        self._index = None
        return int(accept.sum())

    def insert_scan(self, scan: Scan, pose: Pose3) -> int:
        return self.insert_points(pose.transform(scan.positions), scan.labels, scan.confidences)

    def prune_far(self, center) -> None:
        """Drop every cell whose center lies farther than ``max_range`` from ``center``."""
        if self.empty():
            return
        centers = (unpack_keys(self._packed) + 0.5) * self.voxel_size
        keep = np.linalg.norm(centers - np.asarray(center, dtype=float), axis=1) <= self.max_range
        if keep.all():
            return
        for name in ("positions", "labels", "confidences", "_packed", "_critical"):
            setattr(self, name, getattr(self, name)[keep])
        self._index = None

    # ------------------------------------------------------------------ query

    def _build_index(self) -> _Index:
        order = np.argsort(self._packed, kind="stable")
        pk = self._packed[order]
        starts = np.r_[0, np.flatnonzero(pk[1:] != pk[:-1]) + 1]
        counts = np.diff(np.r_[starts, len(pk)])
        return _Index(pk[starts], starts, counts, order, self.positions[order])

    def nearest(self, queries: np.ndarray, max_dist: float) -> tuple[np.ndarray, np.ndarray]:
        """Exact nearest stored point for each query, restricted to ``distance < max_dist``.

        Returns ``(indices, distances)``; misses have index -1 and distance inf.
        Voxel shells are searched outward and a query stops as soon as its best
        distance is no larger than the distance to the first unsearched shell.
        """
        if max_dist <= 0:
            raise ValueError("max_dist must be positive")
        queries = np.asarray(queries, dtype=float).reshape(-1, 3)
        nq = len(queries)
        best_d = np.full(nq, np.inf)
        best_i = np.full(nq, -1, dtype=np.int64)
        if nq == 0 or self.empty():
            return best_i, best_d
        if self._index is None:
            self._index = self._build_index()
        index = self._index
        v = self.voxel_size
        qkeys = voxel_keys(queries, v)
        lo_gap = queries - qkeys * v
        hi_gap = (qkeys + 1) * v - queries
        max_shell = int(math.ceil(max_dist / v))

        active = np.arange(nq)
        for d in range(max_shell + 1):
            if len(active) == 0:
                break
            offsets = _shell_offsets(d)
            cand = pack_keys((qkeys[active][:, None, :] + offsets[None, :, :]).reshape(-1, 3))
            pos = np.searchsorted(index.keys, cand)
            pos = np.minimum(pos, len(index.keys) - 1)
            hit = index.keys[pos] == cand
            cells = np.where(hit, pos, -1).reshape(len(active), len(offsets))
            # expand every (query, occupied cell) pair into its points, CSR style
            qi, oi = np.nonzero(cells >= 0)
            if len(qi):
                c = cells[qi, oi]
                cnt = index.counts[c]
                pair = np.repeat(np.arange(len(qi)), cnt)
                slot = np.arange(len(pair)) - np.repeat(np.cumsum(cnt) - cnt, cnt) + index.starts[c][pair]
                q_of = qi[pair]  # position within ``active``; nondecreasing
                diff = index.sorted_pos[slot] - queries[active[q_of]]
                dist = np.sqrt(np.einsum("kj,kj->k", diff, diff))
                pid = index.order[slot]
                seg = np.r_[0, np.flatnonzero(q_of[1:] != q_of[:-1]) + 1]
                q_sel = active[q_of[seg]]
                d_sel = np.minimum.reduceat(dist, seg)
                tie = dist == np.repeat(d_sel, np.diff(np.r_[seg, len(dist)]))
                i_sel = np.minimum.reduceat(np.where(tie, pid, np.iinfo(np.int64).max), seg)
                better = (d_sel < best_d[q_sel]) | ((d_sel == best_d[q_sel]) & (i_sel < best_i[q_sel]))
                best_d[q_sel[better]] = d_sel[better]
                best_i[q_sel[better]] = i_sel[better]
            boundary = np.minimum(lo_gap[active], hi_gap[active]).min(axis=1) + d * v
            done = (best_d[active] < boundary) | (boundary >= max_dist)
            active = active[~done]

        miss = ~(best_d < max_dist)
        best_d[miss] = np.inf
        best_i[miss] = -1
        return best_i, best_d

    def nearest_neighbor(self, query, max_dist: float):
        """Single-query form: ``(LabeledPoint, distance)`` or ``None``."""
        idx, dist = self.nearest(np.asarray(query, dtype=float).reshape(1, 3), max_dist)
        if idx[0] < 0:
            return None
        i = int(idx[0])
        return LabeledPoint(tuple(self.positions[i]), int(self.labels[i]), float(self.confidences[i])), float(dist[0])


def insert_scan(m: SemanticVoxelMap, scan: Scan, pose: Pose3) -> None:
    m.insert_scan(scan, pose)


def nearest_neighbor(m: SemanticVoxelMap, query, max_dist: float):
    return m.nearest_neighbor(query, max_dist)


def prune_far(m: SemanticVoxelMap, center) -> None:
    m.prune_far(center)
