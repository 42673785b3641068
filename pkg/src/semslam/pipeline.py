"""Per-scan odometry plus submap building, background loop search and graph optimization."""

from __future__ import annotations

import logging
import os
from collections import OrderedDict
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .config import PipelineConfig
from .core import SE2, Pose3, Scan, Twist6, UsageError, interpolate, se3_exp, with_planar
from .io_kitti import SequencePaths, read_calib, read_scan, write_poses_kitti, write_poses_tum
from .local_map import SemanticVoxelMap
from .loop_closure import (
    LoopCandidate,
    LoopSearchConfig,
    apply_match,
    loop_candidates,
    match_candidate,
    release_pyramid,
    scan_to_2d,
)
from .map_post import aggregate_map, export_ply
from .pose_graph import PoseGraph
from .preprocessing import adaptive_voxel_downsample, deskew, filter_dynamic, registration_downsample
from .registration import AdaptiveThreshold, register_scan
from .submaps import Submap, export_dominant_png, finalize_submap, insert_scan_into_submap, save_submap

log = logging.getLogger(__name__)

MODES = ("odometry", "slam")


@dataclass
class ScanResult:
    index: int
    pose: Pose3  # odometry output
    finished_submap: Submap | None = None
    degraded: bool = False  # nothing left to register; pose is the prediction
    iterations: int = 0


@dataclass
class _ActiveSubmap:
    submap: Submap
    record: int
    anchor_local: SE2  # anchor estimate at creation, the grid frame


@dataclass
class PipelineState:
    config: PipelineConfig
    mode: str = "odometry"
    local_map: SemanticVoxelMap = None
    threshold: AdaptiveThreshold = None
    internal: list[Pose3] = field(default_factory=list)  # mid-sweep poses in the clean ICP frame
    last_start: Pose3 | None = None
    odometry: list[Pose3] = field(default_factory=list)  # output frame (bias applied)
    graph: PoseGraph = field(default_factory=PoseGraph)
    active: list[_ActiveSubmap] = field(default_factory=list)
    submaps: list[Submap] = field(default_factory=list)
    degraded: list[int] = field(default_factory=list)
    optimized: bool = False
    scans_seen: int = 0
    executor: ThreadPoolExecutor | None = None
    pending: list[tuple[LoopCandidate, Future]] = field(default_factory=list)
    pyramid_lru: OrderedDict = field(default_factory=OrderedDict)
    keep_scans: bool = False
    kept_scans: list[Scan] = field(default_factory=list)
    first_loop_at: int | None = None
    _first: Scan | None = None  # filtered first scan, kept until a velocity is known

    def __post_init__(self):
        if self.mode not in MODES:
            raise UsageError(f"unknown mode {self.mode!r}")
        c = self.config
        if self.local_map is None:
            self.local_map = SemanticVoxelMap(c.voxel_size, c.map_max_points_per_voxel, c.map_max_range, c.semantic_config)
        if self.threshold is None:
            self.threshold = AdaptiveThreshold(c.initial_threshold, c.min_motion, c.max_range)
        self._bias = se3_exp(Twist6((0.0, 0.0, c.drift_yaw), (c.drift_x, c.drift_y, 0.0)))
        self._loop_cfg = LoopSearchConfig(
            c.loop_search_radius, c.loop_window, c.loop_min_score, c.loop_adjacency, c.loop_weights
        )

    # ------------------------------------------------------------ loop search

    def _submit(self, cands: Iterable[LoopCandidate]) -> None:
        for cand in cands:
            rec = self.graph.submaps[cand.submap_id]
            scan2d = self.graph.scans_2d[cand.node]
            if self.executor is None:
                fut: Future = Future()
                fut.set_result(match_candidate(rec.submap, scan2d, cand, self._loop_cfg))
            else:
                fut = self.executor.submit(match_candidate, rec.submap, scan2d, cand, self._loop_cfg)
            self.pending.append((cand, fut))
            self._touch_pyramid(rec.submap)

    def _touch_pyramid(self, submap: Submap) -> None:
        key = id(submap)
        self.pyramid_lru[key] = submap
        self.pyramid_lru.move_to_end(key)
        while len(self.pyramid_lru) > self.config.pyramid_cache:
            _, old = self.pyramid_lru.popitem(last=False)
            # only drop the cache once no queued job still needs it
            if any(rec.submap is old for rec in (self.graph.submaps[c.submap_id] for c, _ in self.pending)):
                self.pyramid_lru[id(old)] = old
                break
            release_pyramid(old)

    def apply_pending(self) -> int:
        """Collect queued matches in submission order; optimize if any loop was added."""
        added = 0
        for cand, fut in self.pending:
            if apply_match(self.graph, cand, fut.result(), self._loop_cfg):
                added += 1
        self.pending.clear()
        if added:
            if self.first_loop_at is None:
                self.first_loop_at = self.scans_seen - 1
            self.graph.optimize()
            self.optimized = True
        return added

    # ------------------------------------------------------------ trajectory

    def trajectory(self) -> list[Pose3]:
        if self.mode == "slam" and self.optimized:
            return self.graph.trajectory()
        return list(self.odometry)


def _crop(scan: Scan, cfg: PipelineConfig) -> Scan:
    r = np.linalg.norm(scan.positions, axis=1)
    keep = (r <= cfg.max_range) & (r >= cfg.min_range)
    return scan if keep.all() else scan.select(keep)


def _prepare(filtered: Scan, rel_pred: Pose3, cfg: PipelineConfig):
    """Deskew and downsample; returns (deskewed, map frame, registration source, half motion).

    Registration happens in the mid-sweep frame: a wrong velocity then
    distorts the scan symmetrically and does not bias the next prediction.
    """
    sem = cfg.semantic_config
    deskewed = deskew(filtered, rel_pred) if cfg.deskew else filtered
    frame = adaptive_voxel_downsample(deskewed, cfg.voxel_size, cfg.max_points_per_voxel, sem)
    half = interpolate(rel_pred, 0.5) if cfg.deskew else Pose3.identity()
    frame = frame.transformed(half.inverse())
    source = registration_downsample(frame, cfg.voxel_size, sem, cfg.alpha)
    return deskewed, frame, source, half


def _register(state: PipelineState, source: Scan, predicted: Pose3):
    cfg = state.config
    return register_scan(
        source, state.local_map, predicted, state.threshold.tau, cfg.semantic_config, cfg.semantic,
        cfg.max_icp_iterations, cfg.icp_convergence,
    )


def _bootstrap(state: PipelineState, first: Scan, second: Scan, pose: Pose3, rounds: int = 2):
    """Redo the first two scans once a velocity is known.

    Both were deskewed with zero motion, so a sensor that is already moving
    leaves a smeared map behind. Returns the refreshed state of the second scan.
    """
    cfg = state.config
    motion = pose
    for _ in range(rounds):
        _, frame0, _, half = _prepare(first, motion, cfg)
        state.local_map = SemanticVoxelMap(
            cfg.voxel_size, cfg.map_max_points_per_voxel, cfg.map_max_range, cfg.semantic_config
        )
        if len(frame0):
            state.local_map.insert_scan(frame0, half)
        deskewed, frame, source, _ = _prepare(second, motion, cfg)
        if len(source) == 0 or state.local_map.empty():
            break
        res = _register(state, source, half.compose(motion))
        if res.final_correspondences == 0:
            break
        pose = res.pose
        motion = half.inverse().compose(pose)
    state.internal[0] = half
    return deskewed, frame, source, half, pose


def process_scan(state: PipelineState, scan: Scan) -> ScanResult:
    """Odometry for one scan, then graph and submap bookkeeping."""
    cfg = state.config
    sem = cfg.semantic_config
    k = state.scans_seen
    state.scans_seen += 1

    # predict from the last inter-scan motion (constant velocity)
    if len(state.internal) >= 2:
        rel_pred = state.internal[-2].inverse().compose(state.internal[-1])
    else:
        rel_pred = Pose3.identity()
    last = state.internal[-1] if state.internal else Pose3.identity()
    predicted = last.compose(rel_pred)

    filtered = _crop(filter_dynamic(scan, sem), cfg)
    deskewed, frame, source, half = _prepare(filtered, rel_pred, cfg)

    degraded = False
    iterations = 0
    if not state.internal:
        pose = Pose3.identity()
        state._first = filtered
    elif len(source) == 0:
        pose, degraded = predicted, True
    elif state.local_map.empty():
        pose = predicted
    else:
        res = _register(state, source, predicted)
        pose, iterations = res.pose, res.iterations
        if res.final_correspondences == 0:
            degraded = True
        if len(state.internal) >= 2:
            state.threshold.update(predicted, pose)
        elif not degraded and cfg.deskew and state._first is not None:
            # no velocity existed to predict with, so this deviation says nothing about the model
            deskewed, frame, source, half, pose = _bootstrap(state, state._first, filtered, pose)
    if len(state.internal) >= 1:
        state._first = None

    if len(frame):
        state.local_map.insert_scan(frame, pose)
    state.local_map.prune_far(pose.translation)

    # sweep-start pose; the output odometry also carries the optional bias
    start = pose.compose(half.inverse())
    if state.odometry:
        step = state.last_start.inverse().compose(start).compose(state._bias)
        out = state.odometry[-1].compose(step)
    else:
        out = start
    state.internal.append(pose)
    state.last_start = start
    state.odometry.append(out)
    if degraded:
        state.degraded.append(k)

    finished = _update_graph_and_submaps(state, k, out, deskewed, source.transformed(half))
    if state.keep_scans:
        state.kept_scans.append(deskewed)
    return ScanResult(k, out, finished, degraded, iterations)


def _update_graph_and_submaps(state: PipelineState, k: int, out: Pose3, deskewed: Scan, source: Scan):
    cfg = state.config
    g = state.graph
    if k == 0 or not state.optimized:
        est = SE2.from_pose3(out)
    else:
        rel = SE2.from_pose3(state.odometry[-2]).inverse().compose(SE2.from_pose3(out))
        est = g.node(k - 1).compose(rel)
    node = g.add_node(out, est)
    if node > 0:
        rel = SE2.from_pose3(state.odometry[-2]).inverse().compose(SE2.from_pose3(out))
        g.add_odometry(node - 1, node, rel, cfg.odometry_weights)

    # a new submap every half length; each runs for submap_scans scans
    half = max(1, cfg.submap_scans // 2)
    if node % half == 0:
        sm = Submap.create(out, cfg.submap_resolution)
        sm.anchor = est
        rec = g.add_submap(node, sm, node)
        state.active.append(_ActiveSubmap(sm, rec, SE2.from_pose3(sm.grid.local_pose)))
        state.submaps.append(sm)

    finished = None
    node_est = g.node(node)
    for act in list(state.active):
        anchor_est = g.node(g.submaps[act.record].anchor_node)
        local = act.anchor_local.compose(anchor_est.inverse().compose(node_est))
        insert_scan_into_submap(
            act.submap, deskewed, with_planar(out, local),
            cfg.submap_height_above, cfg.submap_height_below, cfg.submap_max_range,
        )
        g.submaps[act.record].last_node = node
        if node - g.submaps[act.record].anchor_node + 1 >= cfg.submap_scans:
            finalize_submap(act.submap)
            state.active.remove(act)
            finished = act.submap

    if state.mode == "slam":
        if node % cfg.loop_node_stride == 0 and len(source):
            g.scans_2d[node] = scan_to_2d(
                source, out, cfg.submap_height_above, cfg.submap_height_below, cfg.submap_max_range
            )
            state._submit(loop_candidates(g, node, state._loop_cfg))
        if finished is not None:
            state._submit(loop_candidates(g, finished, state._loop_cfg))
        if (node + 1) % cfg.loop_apply_interval == 0:
            state.apply_pending()
    return finished


# --------------------------------------------------------------------------
# sequences
# --------------------------------------------------------------------------


@dataclass
class RunResult:
    trajectory: list[Pose3]
    odometry: list[Pose3]
    submaps: list[Submap]
    graph: PoseGraph
    degraded: list[int]
    first_loop_at: int | None = None
    scans: list[Scan] | None = None


def iter_sequence(paths: SequencePaths, labels_dir: str | os.PathLike | None = None) -> Iterator[Scan]:
    if labels_dir is not None:
        paths = SequencePaths(paths.velodyne_dir, Path(labels_dir), paths.calib_file, paths.poses_file)
    for i, (bin_path, label_path) in enumerate(paths.scan_files()):
        yield read_scan(bin_path, label_path, index=i)


def run_sequence(
    source: SequencePaths | str | os.PathLike | Sequence[Scan],
    config: PipelineConfig | None = None,
    mode: str = "odometry",
    labels_dir: str | os.PathLike | None = None,
    keep_scans: bool = False,
) -> RunResult:
    """Run the pipeline over a KITTI-layout directory or an in-memory list of scans."""
    config = config or PipelineConfig()
    if isinstance(source, (str, os.PathLike)):
        source = SequencePaths.from_sequence_dir(source)
    scans = iter_sequence(source, labels_dir) if isinstance(source, SequencePaths) else iter(source)

    state = PipelineState(config, mode, keep_scans=keep_scans or config.export_map)
    workers = config.worker_count()
    if mode == "slam" and workers > 1:
        state.executor = ThreadPoolExecutor(max_workers=workers - 1 or 1, thread_name_prefix="semslam-loop")
    try:
        for scan in scans:
            process_scan(state, scan)
        if mode == "slam":
            # any submap still open closes at the end of the run
            for act in state.active:
                finalize_submap(act.submap)
                state._submit(loop_candidates(state.graph, act.submap, state._loop_cfg))
            state.active.clear()
            state.apply_pending()
            if state.graph.loop_constraints():
                state.graph.optimize()
                state.optimized = True
        else:
            for act in state.active:
                finalize_submap(act.submap)
            state.active.clear()
    finally:
        if state.executor is not None:
            state.executor.shutdown(wait=True)
    for sm in state.submaps:
        release_pyramid(sm)
    return RunResult(
        state.trajectory(), list(state.odometry), state.submaps, state.graph, state.degraded, state.first_loop_at,
        state.kept_scans if state.keep_scans else None,
    )


def write_outputs(result: RunResult, out_dir: str | os.PathLike, config: PipelineConfig | None = None,
                  calib: Pose3 | None = None) -> dict[str, Path]:
    """Trajectory (KITTI + TUM), pose graph, submaps and optionally the map."""
    config = config or PipelineConfig()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    traj = result.trajectory
    if calib is not None:
        # report in the calibration (camera) frame like the KITTI ground truth
        inv = calib.inverse()
        traj = [calib.compose(p).compose(inv) for p in traj]
    files["kitti"] = out / "poses.txt"
    write_poses_kitti(traj, files["kitti"])
    files["tum"] = out / "poses_tum.txt"
    write_poses_tum(traj, files["tum"], [0.1 * i for i in range(len(traj))])
    files["graph"] = out / "pose_graph.txt"
    result.graph.save(files["graph"])
    if config.export_submaps and result.submaps:
        sdir = out / "submaps"
        sdir.mkdir(exist_ok=True)
        for i, sm in enumerate(result.submaps):
            save_submap(sm, sdir / f"{i:04d}.smap")
            export_dominant_png(sm, sdir / f"{i:04d}.png")
        files["submaps"] = sdir
    if config.export_map and result.scans is not None:
        pts = aggregate_map(result.scans, result.trajectory, config.export_voxel, config.dynamic_labels)
        files["map"] = out / "map.ply"
        export_ply(pts, files["map"])
    return files


def sequence_calibration(seq_dir: str | os.PathLike) -> Pose3 | None:
    calib = Path(seq_dir) / "calib.txt"
    return read_calib(calib) if calib.exists() else None
